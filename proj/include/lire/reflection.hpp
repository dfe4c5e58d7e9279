#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"
#include "lire/generation.hpp"
#include "lire/index.hpp"
#include "lire/retrieval.hpp"

namespace lire {

enum class ReflectionLabel { Correct, Incorrect };

std::string_view to_string(ReflectionLabel label);
ReflectionLabel parse_reflection_label(std::string_view s);

// Correct iff the normalized prediction is among the normalized answers.
ReflectionLabel make_reflection_label(std::string_view predicted, std::span<const std::string> answers);

struct ReflectiveTrainConfig {
    std::size_t total_steps = 1;
    std::size_t join_step = 1;
    std::uint64_t seed = 0;

    // join_step = ceil(total_steps / 2).
    static ReflectiveTrainConfig with_default_join(std::size_t total_steps, std::uint64_t seed = 0);
    void validate() const;
};

// -log p for Correct, -log(1 - p) for Incorrect. Exactly 0 when p equals the
// label indicator; a zero-probability miss is capped near 708.
double reflection_bce(double correct_prob, ReflectionLabel label);

struct ReflectiveLosses {
    double self_reflective = 0.0;      // L_gen (+ L_reflect once joined)
    double generation = 0.0;           // L_gen
    std::optional<double> reflection;  // L_reflect, present iff step >= join_step
    std::string target;                // sampled target answer
    std::string self_answer;
    std::optional<ReflectionLabel> label;
};

// Self-answering losses for one query at training step `step` (1-based).
ReflectiveLosses reflective_losses(const Generator& gen, const GenerationContext& query,
                                   std::span<const std::string> answers, std::size_t step,
                                   const ReflectiveTrainConfig& config);

// Retrieval + generation + self-reflection, summed without weights.
double joint_loss(double retrieval_loss, double rag_loss, double self_reflective_loss);

struct ReflectiveTrace {
    std::string query_id;
    std::string self_answer;
    ReflectionLabel predicted_label = ReflectionLabel::Correct;
    double correct_prob = 1.0;
    bool retrieval_triggered = false;
    std::string final_answer;
    std::vector<std::string> retrieved_doc_ids;
    std::vector<AnswerCandidate> candidates;

    nlohmann::json to_json() const;
    static ReflectiveTrace from_json(const nlohmann::json& j);
};

// A question as seen at inference: generator context plus raw query tokens.
struct ReflectiveQuery {
    GenerationContext context;  // doc fields ignored
    Mat tokens;                 // uncompressed, width = head input
};

using DocumentTexts = std::map<std::string, std::string, std::less<>>;

struct GateConfig {
    std::size_t k = 5;
    double threshold = 0.5;
    double temperature = 1.0;
};

// Answer without documents first; only when reflect() falls below the
// threshold, retrieve top-k, generate one answer per document, and keep the
// candidate with the highest joint log-probability. Errors are rethrown as
// StageError tagged "self-answer", "retrieval", or "rerank".
ReflectiveTrace reflective_answer(const Generator& gen, const CompressionHead& head, const Retriever& retriever,
                                  const DocumentTexts& documents, const ReflectiveQuery& query,
                                  const GateConfig& gate);

}  // namespace lire
