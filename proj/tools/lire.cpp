#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"
#include "lire/dataset.hpp"
#include "lire/embeddings.hpp"
#include "lire/errors.hpp"
#include "lire/experiment.hpp"
#include "lire/index.hpp"
#include "lire/retrieval.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct EncoderFlags {
    std::size_t dim = 32;
    std::size_t tokens_per_word = 1;
    std::uint64_t seed = 0;
    std::uint64_t salt = 0;

    void add(CLI::App* app) {
        app->add_option("--dim", dim, "Toy encoder width");
        app->add_option("--tokens-per-word", tokens_per_word, "Toy encoder rows per word");
        app->add_option("--encoder-seed", seed, "Toy encoder seed");
        app->add_option("--salt", salt, "Toy encoder salt");
    }
    lire::ToyEncoderConfig config() const { return {dim, tokens_per_word, seed, salt}; }
};

struct ExperimentFlags {
    std::string config;
    std::optional<std::string> output_dir, mock_table, endpoint, head, index_dir;
    std::optional<std::size_t> k;
    std::optional<double> threshold;
    std::optional<int> timeout_ms, retries;

    void add(CLI::App* app) {
        app->add_option("--config", config, "Experiment config (JSON)")->required()->check(CLI::ExistingFile);
        app->add_option("--output-dir", output_dir, "Override output_dir");
        app->add_option("--mock-table", mock_table, "Use a mock generator table");
        app->add_option("--endpoint", endpoint, "Use a remote generator at this URL");
        app->add_option("--timeout-ms", timeout_ms, "Remote generator timeout");
        app->add_option("--retries", retries, "Remote generator retries");
        app->add_option("--head", head, "Override head checkpoint");
        app->add_option("--index-dir", index_dir, "Override index directory");
        app->add_option("-k,--k", k, "Documents retrieved when the gate opens");
        app->add_option("--threshold", threshold, "Reflection gate threshold");
    }

    lire::ExperimentConfig load() const {
        auto c = lire::ExperimentConfig::from_file(config);
        if (output_dir) {
            c.output_dir = *output_dir;
        }
        if (mock_table) {
            c.mock_table = *mock_table;
            c.remote.reset();
        }
        if (endpoint) {
            c.remote = lire::RemoteGeneratorConfig{};
            c.remote->endpoint = *endpoint;
            c.mock_table.reset();
        }
        if (c.remote && timeout_ms) {
            c.remote->timeout_ms = *timeout_ms;
        }
        if (c.remote && retries) {
            c.remote->retries = *retries;
        }
        if (head) {
            c.head_checkpoint = *head;
            c.head_train.reset();
        }
        if (index_dir) {
            c.index_dir = *index_dir;
        }
        if (k) {
            c.k = *k;
        }
        if (threshold) {
            c.threshold = *threshold;
        }
        return c;
    }
};

std::map<std::string, lire::Mat> read_by_id(const fs::path& path) {
    std::map<std::string, lire::Mat> out;
    for (auto& s : lire::read_embedding_file(path)) {
        out.emplace(s.id, std::move(s.tokens));
    }
    return out;
}

void write_text(const fs::path& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary);
    out << text;
    if (!out) {
        throw lire::FormatError("cannot write " + path.string(), 0);
    }
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"lire: late-interaction retrieval with reflective answering"};
    app.require_subcommand(1);
    std::string stage;

    // encode
    auto* encode = app.add_subcommand("encode", "Encode a dataset and knowledge base with the toy encoder");
    std::string enc_dataset, enc_kb, enc_qout, enc_dout;
    EncoderFlags enc_flags;
    encode->add_option("--dataset", enc_dataset)->required();
    encode->add_option("--kb", enc_kb)->required();
    encode->add_option("--queries-out", enc_qout)->required();
    encode->add_option("--docs-out", enc_dout)->required();
    enc_flags.add(encode);
    encode->callback([&] {
        stage = "encode";
        const auto cfg = enc_flags.config();
        std::vector<lire::TokenSequence> qs, ds;
        for (const auto& ex : lire::read_dataset(enc_dataset)) {
            qs.push_back({ex.query_id, lire::toy_encode_query(ex.question, ex.image, ex.query_id, cfg).tokens});
        }
        for (const auto& d : lire::read_knowledge_base(enc_kb)) {
            ds.push_back({d.doc_id, lire::toy_encode_document(d.text, d.doc_id, cfg).tokens});
        }
        lire::write_embedding_file(enc_qout, qs);
        lire::write_embedding_file(enc_dout, ds);
        std::cout << "encoded " << qs.size() << " queries and " << ds.size() << " documents\n";
    });

    // train-retriever
    auto* train = app.add_subcommand("train-retriever", "Train the compression head on query/gold-document pairs");
    std::string tr_queries, tr_docs, tr_dataset, tr_out, tr_csv;
    lire::TrainConfig tc;
    bool tr_no_norm = false;
    train->add_option("--queries", tr_queries)->required();
    train->add_option("--docs", tr_docs)->required();
    train->add_option("--dataset", tr_dataset, "Supplies gold_doc_ids")->required();
    train->add_option("--out", tr_out, "Head checkpoint path")->required();
    train->add_option("--loss-csv", tr_csv, "Per-step loss trace");
    train->add_option("--steps", tc.steps);
    train->add_option("--batch-size", tc.batch_size);
    train->add_option("--lr", tc.learning_rate);
    train->add_option("--seed", tc.seed);
    train->add_option("--hidden-dim", tc.hidden_dim);
    train->add_option("--out-dim", tc.out_dim);
    train->add_flag("--no-normalize", tr_no_norm);
    train->callback([&] {
        stage = "train-retriever";
        tc.normalize_output = !tr_no_norm;
        const auto qs = read_by_id(tr_queries);
        const auto ds = read_by_id(tr_docs);
        std::vector<lire::TrainingPair> pairs;
        for (const auto& ex : lire::read_dataset(tr_dataset)) {
            const auto q = qs.find(ex.query_id);
            if (q == qs.end()) {
                continue;
            }
            for (const auto& g : ex.gold_doc_ids) {
                if (const auto d = ds.find(g); d != ds.end()) {
                    pairs.emplace_back(lire::build_query_embedding(lire::Mat(0, q->second.cols()), q->second, q->first),
                                       lire::build_document_embedding(d->second, d->first));
                    break;
                }
            }
        }
        const auto result = lire::train_head(pairs, tc);
        lire::save_head(tr_out, result.head);
        if (!tr_csv.empty()) {
            std::string csv = "step,loss\n";
            char buf[64];
            for (std::size_t i = 0; i < result.loss_trace.size(); ++i) {
                std::snprintf(buf, sizeof buf, "%zu,%.17g\n", i + 1, result.loss_trace[i]);
                csv += buf;
            }
            write_text(tr_csv, csv);
        }
        std::cout << "trained on " << pairs.size() << " pairs; loss " << result.loss_trace.front() << " -> "
                  << result.loss_trace.back() << "\n";
    });

    // index
    auto* index = app.add_subcommand("index", "Compress documents and build a centroid index");
    std::string ix_docs, ix_head, ix_out;
    lire::IndexConfig ic;
    index->add_option("--docs", ix_docs)->required();
    index->add_option("--head", ix_head)->required();
    index->add_option("--out", ix_out, "Index directory")->required();
    index->add_option("--centroids", ic.num_centroids);
    index->add_option("--iters", ic.kmeans_iters);
    index->add_option("--probe", ic.n_probe);
    index->add_option("--seed", ic.seed);
    index->callback([&] {
        stage = "index";
        const auto head = lire::load_head(ix_head);
        std::vector<lire::DocumentEmbedding> docs;
        for (auto& s : lire::read_embedding_file(ix_docs)) {
            docs.push_back({lire::compress(head, s.tokens), s.id});
        }
        lire::CentroidIndex::build(docs, ic).save(ix_out);
        std::cout << "indexed " << docs.size() << " documents into " << ix_out << "\n";
    });

    // retrieve
    auto* retrieve = app.add_subcommand("retrieve", "Rank indexed documents for one query");
    std::string rt_index, rt_head, rt_queries, rt_qid, rt_question, rt_image;
    std::size_t rt_k = 5;
    std::optional<std::size_t> rt_probe;
    bool rt_json = false;
    EncoderFlags rt_enc;
    retrieve->add_option("--index", rt_index)->required();
    retrieve->add_option("--head", rt_head)->required();
    retrieve->add_option("--queries", rt_queries, "Embedding file holding the query");
    retrieve->add_option("--query-id", rt_qid);
    retrieve->add_option("--question", rt_question, "Encode this question with the toy encoder");
    retrieve->add_option("--image", rt_image);
    retrieve->add_option("-k,--k", rt_k);
    retrieve->add_option("--probe", rt_probe);
    retrieve->add_flag("--json", rt_json);
    rt_enc.add(retrieve);
    retrieve->callback([&] {
        stage = "retrieve";
        const auto head = lire::load_head(rt_head);
        const auto idx = lire::CentroidIndex::load(rt_index);
        lire::Mat tokens;
        if (!rt_queries.empty()) {
            const auto qs = read_by_id(rt_queries);
            const auto it = qs.find(rt_qid);
            if (it == qs.end()) {
                throw lire::ContractError("query '" + rt_qid + "' not in " + rt_queries);
            }
            tokens = it->second;
        } else if (!rt_question.empty()) {
            tokens = lire::toy_encode_query(rt_question, rt_image, rt_qid, rt_enc.config()).tokens;
        } else {
            throw lire::ContractError("give --queries with --query-id, or --question");
        }
        const auto q = lire::compress(head, tokens);
        const auto hits = idx.retrieve_topk(q, rt_k, rt_probe.value_or(idx.config().n_probe), rt_qid);
        if (rt_json) {
            json arr = json::array();
            for (std::size_t i = 0; i < hits.size(); ++i) {
                arr.push_back({{"rank", i + 1}, {"doc_id", hits[i].doc_id}, {"score", hits[i].value}});
            }
            std::cout << json{{"query_id", rt_qid}, {"results", arr}}.dump(2) << "\n";
        } else {
            std::printf("%-6s %-24s %s\n", "rank", "doc_id", "score");
            for (std::size_t i = 0; i < hits.size(); ++i) {
                std::printf("%-6zu %-24s %.6f\n", i + 1, hits[i].doc_id.c_str(), hits[i].value);
            }
        }
    });

    // answer
    auto* answer = app.add_subcommand("answer", "Answer one dataset question and print its trace");
    ExperimentFlags an_flags;
    std::string an_qid;
    an_flags.add(answer);
    answer->add_option("--query-id", an_qid)->required();
    answer->callback([&] {
        stage = "answer";
        const auto cfg = an_flags.load();
        const auto pipeline = lire::prepare_pipeline(cfg);
        for (const auto& ex : pipeline.examples) {
            if (ex.query_id == an_qid) {
                std::cout << lire::answer_question(pipeline, ex).to_json().dump(2) << "\n";
                return;
            }
        }
        throw lire::StageError("dataset", "no question with id " + an_qid);
    });

    // evaluate
    auto* evaluate = app.add_subcommand("evaluate", "Run reflective answering over a dataset and report metrics");
    ExperimentFlags ev_flags;
    ev_flags.add(evaluate);
    evaluate->callback([&] {
        stage = "evaluate";
        const auto report = lire::run_experiment(ev_flags.load());
        std::cout << report.to_json().dump(2) << "\n";
    });

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        return app.exit(e);
    } catch (const lire::StageError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    } catch (const std::exception& e) {
        std::cerr << "error: " << (stage.empty() ? "cli" : stage) << ": " << e.what() << "\n";
        return 1;
    }
    return 0;
}
