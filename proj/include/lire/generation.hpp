#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <tuple>
#include <vector>

namespace lire {

// Everything a generator sees for one call. A context without a document is
// the self-answering (no retrieval) setting.
struct GenerationContext {
    std::string query_id;
    std::string question;
    std::string image;
    std::optional<std::string> doc_id;
    std::optional<std::string> document;

    GenerationContext without_document() const {
        return {query_id, question, image, std::nullopt, std::nullopt};
    }
};

struct Generation {
    std::string answer;
    double log_prob = 0.0;  // total over answer tokens, <= 0
};

// The answer-generation model behind the engine. Implementations must be
// deterministic for a fixed state, return log-probabilities <= 0, and
// correctness probabilities in [0, 1].
class Generator {
public:
    virtual ~Generator() = default;

    virtual Generation generate(const GenerationContext& context) const = 0;
    // Sum of per-token log-probabilities of `answer`.
    virtual double score_answer(const GenerationContext& context, const std::string& answer) const = 0;
    // Probability that `answer` is correct for the context.
    virtual double reflect(const GenerationContext& context, const std::string& answer) const = 0;
};

// Table-driven generator for tests and offline runs.
//
// generate() looks up (query_id, doc_id); missing keys yield an empty answer
// at default_log_prob. score_answer() prefers an explicit score entry, then
// the generate entry when its answer matches, then default_log_prob.
// reflect() returns the per-query probability or default_correct_prob.
class MockGenerator : public Generator {
public:
    using AnswerKey = std::pair<std::string, std::optional<std::string>>;
    using ScoreKey = std::tuple<std::string, std::optional<std::string>, std::string>;

    explicit MockGenerator(double default_log_prob = -20.0, double default_correct_prob = 0.5);

    MockGenerator& set_answer(const std::string& query_id, std::optional<std::string> doc_id, std::string answer,
                              double log_prob);
    MockGenerator& set_score(const std::string& query_id, std::optional<std::string> doc_id,
                             const std::string& answer, double log_prob);
    MockGenerator& set_reflect(const std::string& query_id, double correct_prob);

    Generation generate(const GenerationContext& context) const override;
    double score_answer(const GenerationContext& context, const std::string& answer) const override;
    double reflect(const GenerationContext& context, const std::string& answer) const override;

    // JSON table:
    // {"default_log_prob": -20, "default_correct_prob": 0.5,
    //  "answers": [{"query_id", "doc_id" (string|null), "answer", "log_prob"}],
    //  "scores":  [{"query_id", "doc_id", "answer", "log_prob"}],
    //  "reflect": {"<query_id>": p}}
    static MockGenerator from_file(const std::filesystem::path& path);
    void save(const std::filesystem::path& path) const;

private:
    double default_log_prob_;
    double default_correct_prob_;
    std::map<AnswerKey, Generation> answers_;
    std::map<ScoreKey, double> scores_;
    std::map<std::string, double> reflect_;
};

// Negative log-likelihood of the target answer given query and positive document.
double rag_loss(const Generator& gen, const GenerationContext& context, const std::string& target);

// Retrieval loss plus generation loss.
double joint_rag_loss(double retrieval_loss, double rag_loss);

// Uniform over the distinct strings of `answers`, in first-occurrence order.
std::string sample_target_answer(std::span<const std::string> answers, std::uint64_t seed);

struct AnswerCandidate {
    std::string answer;
    std::optional<std::string> doc_id;
    double retrieval_log_prob = 0.0;
    double generation_log_prob = 0.0;

    double joint_log_prob() const { return retrieval_log_prob + generation_log_prob; }
    bool operator==(const AnswerCandidate&) const = default;
};

struct Selection {
    std::string answer;
    AnswerCandidate winner;
};

// Highest joint log-probability; ties go to the smallest answer, then the
// smallest doc_id (a missing doc_id sorts first).
Selection select_answer(std::span<const AnswerCandidate> candidates);

}  // namespace lire
