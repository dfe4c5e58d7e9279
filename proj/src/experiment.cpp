#include "lire/experiment.hpp"

#include <algorithm>
#include <fstream>
#include <set>

#include "lire/errors.hpp"
#include "lire/metrics.hpp"

namespace lire {

using json = nlohmann::json;
namespace fs = std::filesystem;

namespace {

template <class F>
auto in_stage(const char* stage, F&& f) -> decltype(f()) {
    try {
        return f();
    } catch (const StageError&) {
        throw;
    } catch (const std::exception& e) {
        throw StageError(stage, e.what());
    }
}

fs::path resolve(const fs::path& base, const std::string& p) {
    const fs::path path(p);
    return path.is_absolute() || base.empty() ? path : base / path;
}

template <class T>
void read_opt(const json& j, const char* key, T& out) {
    if (j.contains(key) && !j.at(key).is_null()) {
        out = j.at(key).get<T>();
    }
}

}  // namespace

nlohmann::ordered_json MetricsReport::to_json() const {
    nlohmann::ordered_json prr = nlohmann::ordered_json::object();
    for (const auto& [k, v] : prr_at_k) {
        prr[std::to_string(k)] = v;
    }
    nlohmann::ordered_json j;
    j["n_questions"] = n_questions;
    j["em_mean"] = em_mean;
    j["vqa_mean"] = vqa_mean;
    j["retrieval_trigger_rate"] = retrieval_trigger_rate;
    j["prr_at_k"] = prr;
    return j;
}

MetricsReport MetricsReport::from_json(const json& j) {
    try {
        MetricsReport r;
        r.n_questions = j.at("n_questions").get<std::size_t>();
        r.em_mean = j.at("em_mean").get<double>();
        r.vqa_mean = j.at("vqa_mean").get<double>();
        r.retrieval_trigger_rate = j.at("retrieval_trigger_rate").get<double>();
        for (const auto& [k, v] : j.at("prr_at_k").items()) {
            r.prr_at_k[std::stoul(k)] = v.get<double>();
        }
        return r;
    } catch (const std::exception& e) {
        throw FormatError(std::string("bad metrics report: ") + e.what(), 0);
    }
}

void ExperimentConfig::validate() const {
    if (dataset.empty() || knowledge_base.empty()) {
        throw ConfigError("dataset and knowledge_base paths are required");
    }
    if (output_dir.empty()) {
        throw ConfigError("output_dir is required");
    }
    if (query_embeddings.has_value() != doc_embeddings.has_value()) {
        throw ConfigError("query_embeddings and doc_embeddings must be given together");
    }
    if (!query_embeddings) {
        encoder.validate();
    }
    if (head_checkpoint && head_train) {
        throw ConfigError("head.checkpoint and head.train are mutually exclusive");
    }
    if (!index_dir) {
        index.validate();
    }
    if (k < 1) {
        throw ConfigError("k must be at least 1");
    }
    if (!(threshold >= 0.0 && threshold <= 1.0)) {
        throw ConfigError("threshold must be in [0, 1]");
    }
    if (!(temperature > 0.0)) {
        throw ConfigError("temperature must be positive");
    }
    if (mock_table.has_value() == remote.has_value()) {
        throw ConfigError("exactly one of generator.mock_table and generator.remote is required");
    }
    if (remote) {
        remote->validate();
    }
    if (prr_ks.empty() || std::find(prr_ks.begin(), prr_ks.end(), 0u) != prr_ks.end()) {
        throw ConfigError("prr_ks must be a non-empty list of positive integers");
    }
}

ExperimentConfig ExperimentConfig::from_json(const json& j, const fs::path& base_dir) {
    ExperimentConfig c;
    try {
        if (!j.is_object()) {
            throw ConfigError("experiment config must be a JSON object");
        }
        auto path_opt = [&](const json& obj, const char* key) -> std::optional<fs::path> {
            if (obj.contains(key) && !obj.at(key).is_null()) {
                return resolve(base_dir, obj.at(key).get<std::string>());
            }
            return std::nullopt;
        };
        if (auto p = path_opt(j, "dataset")) {
            c.dataset = *p;
        }
        if (auto p = path_opt(j, "knowledge_base")) {
            c.knowledge_base = *p;
        }
        if (auto p = path_opt(j, "output_dir")) {
            c.output_dir = *p;
        }
        c.query_embeddings = path_opt(j, "query_embeddings");
        c.doc_embeddings = path_opt(j, "doc_embeddings");

        if (j.contains("encoder")) {
            const auto& e = j.at("encoder");
            read_opt(e, "dim", c.encoder.dim);
            read_opt(e, "tokens_per_word", c.encoder.tokens_per_word);
            read_opt(e, "seed", c.encoder.seed);
            read_opt(e, "salt", c.encoder.salt);
        }
        if (j.contains("head")) {
            const auto& h = j.at("head");
            c.head_checkpoint = path_opt(h, "checkpoint");
            read_opt(h, "seed", c.head_seed);
            if (h.contains("train") && !h.at("train").is_null()) {
                const auto& t = h.at("train");
                TrainConfig tc;
                read_opt(t, "steps", tc.steps);
                read_opt(t, "batch_size", tc.batch_size);
                read_opt(t, "learning_rate", tc.learning_rate);
                read_opt(t, "seed", tc.seed);
                read_opt(t, "hidden_dim", tc.hidden_dim);
                read_opt(t, "out_dim", tc.out_dim);
                read_opt(t, "normalize_output", tc.normalize_output);
                c.head_train = tc;
            }
        }
        if (j.contains("index")) {
            const auto& x = j.at("index");
            c.index_dir = path_opt(x, "dir");
            read_opt(x, "num_centroids", c.index.num_centroids);
            read_opt(x, "kmeans_iters", c.index.kmeans_iters);
            read_opt(x, "n_probe", c.index.n_probe);
            read_opt(x, "seed", c.index.seed);
        }
        read_opt(j, "k", c.k);
        read_opt(j, "threshold", c.threshold);
        read_opt(j, "temperature", c.temperature);
        if (j.contains("generator")) {
            const auto& g = j.at("generator");
            c.mock_table = path_opt(g, "mock_table");
            if (g.contains("remote") && !g.at("remote").is_null()) {
                const auto& r = g.at("remote");
                RemoteGeneratorConfig rc;
                rc.endpoint = r.at("endpoint").get<std::string>();
                read_opt(r, "timeout_ms", rc.timeout_ms);
                read_opt(r, "retries", rc.retries);
                read_opt(r, "max_in_flight", rc.max_in_flight);
                if (r.contains("auth_token") && !r.at("auth_token").is_null()) {
                    rc.auth_token = r.at("auth_token").get<std::string>();
                }
                c.remote = rc;
            }
        }
        read_opt(j, "prr_ks", c.prr_ks);
    } catch (const json::exception& e) {
        throw ConfigError(std::string("bad experiment config: ") + e.what());
    }
    return c;
}

ExperimentConfig ExperimentConfig::from_file(const fs::path& path) {
    std::ifstream in(path);
    if (!in) {
        throw ConfigError("cannot open config " + path.string());
    }
    json j;
    try {
        j = json::parse(in);
    } catch (const json::parse_error& e) {
        throw ConfigError("config " + path.string() + " is not valid JSON: " + e.what());
    }
    return from_json(j, path.parent_path());
}

namespace {

std::map<std::string, Mat, std::less<>> by_id(std::vector<TokenSequence> seqs, const char* what) {
    std::map<std::string, Mat, std::less<>> out;
    for (auto& s : seqs) {
        if (!out.emplace(s.id, std::move(s.tokens)).second) {
            throw ContractError(std::string("duplicate ") + what + " id " + s.id);
        }
    }
    return out;
}

}  // namespace

Pipeline prepare_pipeline(const ExperimentConfig& config) {
    in_stage("config", [&] { config.validate(); });

    Pipeline p;
    p.gate = {config.k, config.threshold, config.temperature};

    std::vector<KbDocument> kb;
    in_stage("dataset", [&] {
        p.examples = read_dataset(config.dataset);
        kb = read_knowledge_base(config.knowledge_base);
        if (p.examples.empty()) {
            throw ContractError("dataset has no questions");
        }
        if (kb.empty()) {
            throw ContractError("knowledge base has no documents");
        }
        for (const auto& d : kb) {
            p.documents.emplace(d.doc_id, d.text);
        }
    });

    std::vector<DocumentEmbedding> doc_embs;
    in_stage("embeddings", [&] {
        if (config.query_embeddings) {
            auto qmap = by_id(read_embedding_file(*config.query_embeddings), "query");
            auto dmap = by_id(read_embedding_file(*config.doc_embeddings), "document");
            for (const auto& ex : p.examples) {
                auto it = qmap.find(ex.query_id);
                if (it == qmap.end()) {
                    throw ContractError("no embedding for query " + ex.query_id);
                }
                p.query_tokens.emplace(ex.query_id, std::move(it->second));
            }
            for (const auto& d : kb) {
                auto it = dmap.find(d.doc_id);
                if (it == dmap.end()) {
                    throw ContractError("no embedding for document " + d.doc_id);
                }
                doc_embs.push_back(build_document_embedding(std::move(it->second), d.doc_id));
            }
        } else {
            for (const auto& ex : p.examples) {
                p.query_tokens.emplace(ex.query_id,
                                       toy_encode_query(ex.question, ex.image, ex.query_id, config.encoder).tokens);
            }
            for (const auto& d : kb) {
                doc_embs.push_back(toy_encode_document(d.text, d.doc_id, config.encoder));
            }
        }
        const std::size_t h = doc_embs.front().dim();
        for (const auto& [id, m] : p.query_tokens) {
            if (m.cols() != h) {
                throw DimensionError("query " + id + " has width " + std::to_string(m.cols()) + ", documents have " +
                                     std::to_string(h));
            }
        }
    });
    const std::size_t h = doc_embs.front().dim();

    in_stage("head", [&] {
        if (config.head_checkpoint) {
            p.head = load_head(*config.head_checkpoint);
        } else if (config.head_train) {
            std::map<std::string_view, const DocumentEmbedding*> docs;
            for (const auto& d : doc_embs) {
                docs.emplace(d.doc_id, &d);
            }
            std::vector<TrainingPair> pairs;
            for (const auto& ex : p.examples) {
                for (const auto& g : ex.gold_doc_ids) {
                    if (auto it = docs.find(g); it != docs.end()) {
                        const Mat& q = p.query_tokens.at(ex.query_id);
                        pairs.emplace_back(build_query_embedding(Mat(0, q.cols()), q, ex.query_id), *it->second);
                        break;
                    }
                }
            }
            auto trained = train_head(pairs, *config.head_train);
            p.head = std::move(trained.head);
            p.train_loss_trace = std::move(trained.loss_trace);
        } else {
            p.head = make_head(h, 0, 0, config.head_seed);
        }
        if (p.head.in_dim() != h) {
            throw DimensionError("head expects width " + std::to_string(p.head.in_dim()) + ", embeddings have " +
                                 std::to_string(h));
        }
    });

    in_stage("index", [&] {
        if (config.index_dir && fs::exists(*config.index_dir / "meta.json")) {
            p.index = CentroidIndex::load(*config.index_dir);
            if (p.index.dim() != p.head.out_dim()) {
                throw DimensionError("index width " + std::to_string(p.index.dim()) + " does not match head output " +
                                     std::to_string(p.head.out_dim()));
            }
            for (const auto& d : p.index.docs()) {
                if (!p.documents.contains(d.doc_id)) {
                    throw ContractError("indexed document " + d.doc_id + " is not in the knowledge base");
                }
            }
        } else {
            std::vector<DocumentEmbedding> compressed;
            compressed.reserve(doc_embs.size());
            for (const auto& d : doc_embs) {
                compressed.push_back({compress(p.head, d.tokens), d.doc_id});
            }
            p.index = CentroidIndex::build(compressed, config.index);
        }
    });

    in_stage("generator", [&] {
        if (config.mock_table) {
            p.generator = std::make_unique<MockGenerator>(MockGenerator::from_file(*config.mock_table));
        } else {
            p.generator = std::make_unique<RemoteGenerator>(*config.remote);
        }
    });
    return p;
}

ReflectiveTrace answer_question(const Pipeline& pipeline, const QaExample& example) {
    const auto it = pipeline.query_tokens.find(example.query_id);
    if (it == pipeline.query_tokens.end()) {
        throw StageError("embeddings", "no tokens for query " + example.query_id);
    }
    ReflectiveQuery q{{example.query_id, example.question, example.image, std::nullopt, std::nullopt}, it->second};
    return reflective_answer(*pipeline.generator, pipeline.head, pipeline.index, pipeline.documents, q, pipeline.gate);
}

ExperimentResult evaluate_pipeline(const Pipeline& pipeline, const std::vector<std::size_t>& prr_ks) {
    std::vector<const QaExample*> order;
    for (const auto& ex : pipeline.examples) {
        order.push_back(&ex);
    }
    std::sort(order.begin(), order.end(), [](const auto* a, const auto* b) { return a->query_id < b->query_id; });
    const std::size_t max_k = *std::max_element(prr_ks.begin(), prr_ks.end());

    ExperimentResult result;
    double em = 0.0;
    double vqa = 0.0;
    std::size_t triggered = 0;
    std::map<std::size_t, std::size_t> prr_hits;
    for (const auto* ex : order) {
        ReflectiveTrace t = answer_question(pipeline, *ex);
        em += exact_match(t.final_answer, ex->answers);
        vqa += vqa_score(t.final_answer, ex->answers);
        triggered += t.retrieval_triggered ? 1 : 0;

        const auto ranked = in_stage("retrieval", [&] {
            return pipeline.index.retrieve_topk(compress(pipeline.head, pipeline.query_tokens.at(ex->query_id)),
                                                max_k, ex->query_id);
        });
        std::vector<std::string> texts;
        for (const auto& r : ranked) {
            texts.push_back(pipeline.documents.at(r.doc_id));
        }
        for (std::size_t k : prr_ks) {
            const std::size_t n = std::min(k, texts.size());
            prr_hits[k] += static_cast<std::size_t>(prr_at_k(std::span(texts).first(n), ex->answers));
        }
        result.traces.push_back(std::move(t));
    }
    const double n = static_cast<double>(order.size());
    auto& r = result.report;
    r.n_questions = order.size();
    r.em_mean = em / n;
    r.vqa_mean = vqa / n;
    r.retrieval_trigger_rate = static_cast<double>(triggered) / n;
    for (const auto& [k, hits] : prr_hits) {
        r.prr_at_k[k] = static_cast<double>(hits) / n;
    }
    return result;
}

MetricsReport run_experiment(const ExperimentConfig& config) {
    const fs::path metrics_path = config.output_dir / "metrics.json";
    const fs::path traces_path = config.output_dir / "traces.jsonl";
    const bool dir_existed = !config.output_dir.empty() && fs::exists(config.output_dir);
    auto cleanup = [&] {
        std::error_code ec;
        fs::remove(metrics_path, ec);
        fs::remove(traces_path, ec);
        if (!dir_existed && !config.output_dir.empty()) {
            fs::remove(config.output_dir, ec);  // only if still empty
        }
    };
    try {
        const Pipeline pipeline = prepare_pipeline(config);
        const ExperimentResult result = evaluate_pipeline(pipeline, config.prr_ks);
        in_stage("output", [&] {
            fs::create_directories(config.output_dir);
            std::ofstream traces(traces_path, std::ios::binary);
            for (const auto& t : result.traces) {
                traces << t.to_json().dump() << '\n';
            }
            traces.close();
            std::ofstream metrics(metrics_path, std::ios::binary);
            metrics << result.report.to_json().dump(2) << '\n';
            metrics.close();
            if (!traces || !metrics) {
                throw FormatError("failed writing outputs under " + config.output_dir.string(), 0);
            }
        });
        return result.report;
    } catch (...) {
        cleanup();
        throw;
    }
}

}  // namespace lire
