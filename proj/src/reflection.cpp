#include "lire/reflection.hpp"

#include <algorithm>
#include <array>
#include <cfloat>
#include <cmath>

#include "lire/errors.hpp"
#include "lire/metrics.hpp"

namespace lire {

using json = nlohmann::json;

std::string_view to_string(ReflectionLabel label) {
    return label == ReflectionLabel::Correct ? "correct" : "incorrect";
}

ReflectionLabel parse_reflection_label(std::string_view s) {
    if (s == "correct") {
        return ReflectionLabel::Correct;
    }
    if (s == "incorrect") {
        return ReflectionLabel::Incorrect;
    }
    throw FormatError("unknown reflection label '" + std::string(s) + "'", 0);
}

ReflectionLabel make_reflection_label(std::string_view predicted, std::span<const std::string> answers) {
    if (answers.empty()) {
        throw ContractError("answer set is empty");
    }
    return answer_count(predicted, answers) > 0 ? ReflectionLabel::Correct : ReflectionLabel::Incorrect;
}

ReflectiveTrainConfig ReflectiveTrainConfig::with_default_join(std::size_t total_steps, std::uint64_t seed) {
    return {total_steps, (total_steps + 1) / 2, seed};
}

void ReflectiveTrainConfig::validate() const {
    if (total_steps == 0) {
        throw ConfigError("total_steps must be at least 1");
    }
    // join_step > total_steps is accepted and means the reflection term never joins.
}

double reflection_bce(double correct_prob, ReflectionLabel label) {
    if (!(correct_prob >= 0.0 && correct_prob <= 1.0)) {
        throw NumericError("correct probability outside [0, 1]");
    }
    if (label == ReflectionLabel::Correct) {
        return -std::log(std::max(correct_prob, DBL_MIN));
    }
    if (correct_prob == 1.0) {
        return -std::log(DBL_MIN);
    }
    return -std::log1p(-correct_prob);
}

ReflectiveLosses reflective_losses(const Generator& gen, const GenerationContext& query,
                                   std::span<const std::string> answers, std::size_t step,
                                   const ReflectiveTrainConfig& config) {
    config.validate();
    if (step < 1 || step > config.total_steps) {
        throw ContractError("step " + std::to_string(step) + " outside [1, " + std::to_string(config.total_steps) +
                            "]");
    }
    if (answers.empty()) {
        throw ContractError("answer set is empty");
    }
    const GenerationContext bare = query.without_document();

    const std::array<std::uint64_t, 2> salt{config.seed, static_cast<std::uint64_t>(step)};
    const std::uint64_t qh = fnv1a64(
        {reinterpret_cast<const unsigned char*>(query.query_id.data()), query.query_id.size()});
    const std::uint64_t seed = fnv1a64(
        {reinterpret_cast<const unsigned char*>(salt.data()), sizeof(salt)}, qh);

    ReflectiveLosses out;
    out.target = sample_target_answer(answers, seed);
    out.generation = -gen.score_answer(bare, out.target);
    out.self_reflective = out.generation;
    if (step >= config.join_step) {
        out.self_answer = gen.generate(bare).answer;
        out.label = make_reflection_label(out.self_answer, answers);
        out.reflection = reflection_bce(gen.reflect(bare, out.self_answer), *out.label);
        out.self_reflective += *out.reflection;
    }
    return out;
}

double joint_loss(double retrieval_loss, double rag_loss, double self_reflective_loss) {
    std::array<double, 3> parts{retrieval_loss, rag_loss, self_reflective_loss};
    for (double p : parts) {
        if (!std::isfinite(p)) {
            throw NumericError("joint loss component is not finite");
        }
    }
    // Fixed summation order keeps the result independent of argument order.
    std::sort(parts.begin(), parts.end(), [](double a, double b) {
        const double ma = std::fabs(a);
        const double mb = std::fabs(b);
        return ma != mb ? ma < mb : a < b;
    });
    return (parts[0] + parts[1]) + parts[2];
}

json ReflectiveTrace::to_json() const {
    json cands = json::array();
    for (const auto& c : candidates) {
        cands.push_back({{"answer", c.answer},
                         {"doc_id", c.doc_id ? json(*c.doc_id) : json(nullptr)},
                         {"retrieval_log_prob", c.retrieval_log_prob},
                         {"generation_log_prob", c.generation_log_prob},
                         {"joint_log_prob", c.joint_log_prob()}});
    }
    return {{"query_id", query_id},
            {"self_answer", self_answer},
            {"predicted_label", to_string(predicted_label)},
            {"correct_prob", correct_prob},
            {"retrieval_triggered", retrieval_triggered},
            {"final_answer", final_answer},
            {"retrieved_doc_ids", retrieved_doc_ids},
            {"candidates", cands}};
}

ReflectiveTrace ReflectiveTrace::from_json(const json& j) {
    try {
        ReflectiveTrace t;
        t.query_id = j.at("query_id").get<std::string>();
        t.self_answer = j.at("self_answer").get<std::string>();
        t.predicted_label = parse_reflection_label(j.at("predicted_label").get<std::string>());
        t.correct_prob = j.at("correct_prob").get<double>();
        t.retrieval_triggered = j.at("retrieval_triggered").get<bool>();
        t.final_answer = j.at("final_answer").get<std::string>();
        t.retrieved_doc_ids = j.at("retrieved_doc_ids").get<std::vector<std::string>>();
        for (const auto& c : j.at("candidates")) {
            AnswerCandidate a;
            a.answer = c.at("answer").get<std::string>();
            if (!c.at("doc_id").is_null()) {
                a.doc_id = c.at("doc_id").get<std::string>();
            }
            a.retrieval_log_prob = c.at("retrieval_log_prob").get<double>();
            a.generation_log_prob = c.at("generation_log_prob").get<double>();
            t.candidates.push_back(std::move(a));
        }
        return t;
    } catch (const json::exception& e) {
        throw FormatError(std::string("bad trace record: ") + e.what(), 0);
    }
}

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

std::vector<double> log_softmax(std::span<const double> scores, double temperature) {
    if (!(temperature > 0.0)) {
        throw ContractError("temperature must be positive");
    }
    std::vector<double> out(scores.size());
    if (scores.empty()) {
        return out;
    }
    double m = -INFINITY;
    for (double s : scores) {
        m = std::max(m, s / temperature);
    }
    double z = 0.0;
    for (double s : scores) {
        z += std::exp(s / temperature - m);
    }
    const double lz = m + std::log(z);
    for (std::size_t i = 0; i < scores.size(); ++i) {
        out[i] = scores[i] / temperature - lz;
    }
    return out;
}

}  // namespace

ReflectiveTrace reflective_answer(const Generator& gen, const CompressionHead& head, const Retriever& retriever,
                                  const DocumentTexts& documents, const ReflectiveQuery& query,
                                  const GateConfig& gate) {
    if (gate.k < 1) {
        throw ContractError("k must be at least 1");
    }
    const GenerationContext bare = query.context.without_document();

    ReflectiveTrace trace;
    trace.query_id = bare.query_id;
    in_stage("self-answer", [&] {
        trace.self_answer = gen.generate(bare).answer;
        trace.correct_prob = gen.reflect(bare, trace.self_answer);
    });
    trace.predicted_label = trace.correct_prob >= gate.threshold ? ReflectionLabel::Correct : ReflectionLabel::Incorrect;
    trace.retrieval_triggered = trace.predicted_label == ReflectionLabel::Incorrect;
    trace.final_answer = trace.self_answer;
    if (!trace.retrieval_triggered) {
        return trace;
    }

    const auto hits = in_stage("retrieval", [&] {
        return retriever.retrieve_topk(compress(head, query.tokens), gate.k, bare.query_id);
    });
    if (hits.empty()) {
        return trace;
    }

    in_stage("rerank", [&] {
        std::vector<double> scores;
        for (const auto& h : hits) {
            scores.push_back(h.value);
            trace.retrieved_doc_ids.push_back(h.doc_id);
        }
        const auto logp = log_softmax(scores, gate.temperature);
        for (std::size_t i = 0; i < hits.size(); ++i) {
            const auto it = documents.find(hits[i].doc_id);
            if (it == documents.end()) {
                throw ContractError("no text for retrieved document " + hits[i].doc_id);
            }
            GenerationContext ctx = bare;
            ctx.doc_id = hits[i].doc_id;
            ctx.document = it->second;
            const Generation g = gen.generate(ctx);
            trace.candidates.push_back({g.answer, hits[i].doc_id, logp[i], g.log_prob});
        }
        trace.final_answer = select_answer(trace.candidates).answer;
    });
    return trace;
}

}  // namespace lire
