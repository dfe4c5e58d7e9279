#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "lire/dataset.hpp"
#include "lire/embeddings.hpp"
#include "lire/generation.hpp"
#include "lire/index.hpp"
#include "lire/reflection.hpp"
#include "lire/remote_generator.hpp"
#include "lire/retrieval.hpp"

namespace lire {

struct MetricsReport {
    double em_mean = 0.0;
    double vqa_mean = 0.0;
    std::map<std::size_t, double> prr_at_k;
    std::size_t n_questions = 0;
    double retrieval_trigger_rate = 0.0;

    nlohmann::ordered_json to_json() const;
    static MetricsReport from_json(const nlohmann::json& j);
    bool operator==(const MetricsReport&) const = default;
};

// JSON layout, all keys optional except dataset, knowledge_base, output_dir
// and one generator source:
// {
//   "dataset": "qa.jsonl", "knowledge_base": "kb.jsonl",
//   "query_embeddings": "q.lire", "doc_embeddings": "d.lire",
//   "encoder": {"dim": 32, "tokens_per_word": 1, "seed": 0, "salt": 0},
//   "head": {"checkpoint": "head.lirh", "seed": 0,
//            "train": {"steps", "batch_size", "learning_rate", "seed",
//                      "hidden_dim", "out_dim", "normalize_output"}},
//   "index": {"dir": "idx", "num_centroids", "kmeans_iters", "n_probe", "seed"},
//   "k": 5, "threshold": 0.5, "temperature": 1.0,
//   "generator": {"mock_table": "mock.json"} | {"remote": {"endpoint", "timeout_ms", "retries"}},
//   "prr_ks": [1, ..., 10],
//   "output_dir": "out"
// }
// Relative paths resolve against the config file's directory.
struct ExperimentConfig {
    std::filesystem::path dataset;
    std::filesystem::path knowledge_base;
    std::optional<std::filesystem::path> query_embeddings;
    std::optional<std::filesystem::path> doc_embeddings;
    ToyEncoderConfig encoder;

    std::optional<std::filesystem::path> head_checkpoint;
    std::optional<TrainConfig> head_train;
    std::uint64_t head_seed = 0;

    std::optional<std::filesystem::path> index_dir;
    IndexConfig index;

    std::size_t k = 5;
    double threshold = 0.5;
    double temperature = 1.0;

    std::optional<std::filesystem::path> mock_table;
    std::optional<RemoteGeneratorConfig> remote;

    std::vector<std::size_t> prr_ks{1, 2, 3, 4, 5, 6, 7, 8, 9, 10};
    std::filesystem::path output_dir;

    void validate() const;

    static ExperimentConfig from_json(const nlohmann::json& j, const std::filesystem::path& base_dir);
    static ExperimentConfig from_file(const std::filesystem::path& path);
};

// Everything loaded and built for a run, ready to answer questions.
struct Pipeline {
    std::vector<QaExample> examples;
    DocumentTexts documents;
    std::map<std::string, Mat, std::less<>> query_tokens;  // uncompressed
    CompressionHead head;
    CentroidIndex index;
    std::unique_ptr<Generator> generator;
    GateConfig gate;
    std::vector<double> train_loss_trace;
};

// Failures are raised as StageError naming "config", "dataset", "embeddings",
// "head", "index", or "generator".
Pipeline prepare_pipeline(const ExperimentConfig& config);

ReflectiveTrace answer_question(const Pipeline& pipeline, const QaExample& example);

struct ExperimentResult {
    MetricsReport report;
    std::vector<ReflectiveTrace> traces;  // ordered by query_id
};

// Runs reflective answering over the whole dataset and computes the metrics.
ExperimentResult evaluate_pipeline(const Pipeline& pipeline, const std::vector<std::size_t>& prr_ks);

// prepare + evaluate, then writes <output_dir>/metrics.json and
// <output_dir>/traces.jsonl. On any failure the partial outputs are removed
// and the StageError is rethrown.
MetricsReport run_experiment(const ExperimentConfig& config);

}  // namespace lire
