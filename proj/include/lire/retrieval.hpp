#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "lire/embeddings.hpp"
#include "lire/numerics.hpp"

namespace lire {

// Trainable projection h -> h' (h' < h) applied to every token before scoring.
struct CompressionHead {
    MlpParams params;
    bool normalize_output = true;

    std::size_t in_dim() const noexcept { return params.in_dim(); }
    std::size_t out_dim() const noexcept { return params.out_dim(); }

    // Throws DimensionError unless h' < h and the shapes agree.
    void validate() const;

    bool operator==(const CompressionHead&) const = default;
};

// hidden_dim = 0 selects h, out_dim = 0 selects h / 2. Parameters are
// rounded through single precision so a checkpoint reproduces them exactly.
CompressionHead make_head(std::size_t in_dim, std::size_t hidden_dim, std::size_t out_dim, std::uint64_t seed,
                          bool normalize_output = true);

Mat compress(const CompressionHead& head, const Mat& tokens);

struct RelevanceScore {
    double value = 0.0;
    std::string query_id;
    std::string doc_id;
};

// Sum over query tokens of the best inner product against any document token.
// Throws ContractError on an empty query or document, DimensionError on a width mismatch.
double max_sim(const Mat& query, const Mat& doc);

// Index of the best document token for each query token; ties go to the lowest index.
std::vector<std::size_t> max_sim_argmax(const Mat& query, const Mat& doc);

struct QueryScores {
    std::vector<double> scores;
    std::size_t positive = 0;
};

// -log softmax(scores)[positive], max-subtracted.
double contrastive_loss(std::span<const double> scores, std::size_t positive);
// Summed over queries.
double contrastive_loss(std::span<const QueryScores> batch);

struct TrainBatch {
    std::vector<QueryEmbedding> queries;
    std::vector<DocumentEmbedding> positives;

    // At least two aligned pairs with distinct positive doc ids.
    void validate() const;
};

struct ContrastiveResult {
    double loss = 0.0;
    GradBundle grads;
};

// In-batch contrastive loss (each query against every positive in the batch)
// and its exact gradient with respect to the head parameters.
ContrastiveResult contrastive_grad(const TrainBatch& batch, const CompressionHead& head);

// Loss only; shares the scoring path with contrastive_grad.
double contrastive_batch_loss(const TrainBatch& batch, const CompressionHead& head);

using TrainingPair = std::pair<QueryEmbedding, DocumentEmbedding>;

struct TrainConfig {
    std::size_t steps = 200;
    std::size_t batch_size = 8;
    double learning_rate = 0.1;
    std::uint64_t seed = 0;
    std::size_t hidden_dim = 0;  // 0: same as input
    std::size_t out_dim = 0;     // 0: half the input
    bool normalize_output = true;
};

struct TrainResult {
    CompressionHead head;
    std::vector<double> loss_trace;  // mean per-query loss at each step, before its update
};

TrainResult train_head(std::span<const TrainingPair> dataset, const TrainConfig& config);
TrainResult train_head(std::span<const TrainingPair> dataset, const TrainConfig& config, CompressionHead initial);

// Fraction of queries whose own positive wins by MaxSim within consecutive
// batches of `batch_size` pairs taken in dataset order.
double in_batch_accuracy(const CompressionHead& head, std::span<const TrainingPair> dataset, std::size_t batch_size);

// Checkpoint layout (little-endian):
//   "LIRH" u16 version=1  u32 h  u32 m  u32 h'  u8 normalize
//   W1 (h*m f32)  b1 (m f32)  W2 (m*h' f32)  b2 (h' f32)
inline constexpr std::string_view kHeadMagic = "LIRH";
inline constexpr std::uint16_t kHeadVersion = 1;

void save_head(const std::filesystem::path& path, const CompressionHead& head);
CompressionHead load_head(const std::filesystem::path& path);

}  // namespace lire
