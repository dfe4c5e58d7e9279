#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "lire/embeddings.hpp"
#include "lire/numerics.hpp"
#include "lire/retrieval.hpp"

namespace lire {

// Anything that can rank stored documents for a compressed query.
class Retriever {
public:
    virtual ~Retriever() = default;

    // Ranked by descending score, ties by ascending doc_id; at most k entries.
    virtual std::vector<RelevanceScore> retrieve_topk(const Mat& query, std::size_t k,
                                                      std::string_view query_id = {}) const = 0;
};

struct IndexConfig {
    std::size_t num_centroids = 16;
    std::size_t kmeans_iters = 10;
    std::size_t n_probe = 4;
    std::uint64_t seed = 0;

    void validate() const;
    bool operator==(const IndexConfig&) const = default;
};

struct Posting {
    std::uint32_t doc = 0;    // position in the doc store
    std::uint32_t token = 0;  // row within that document
    bool operator==(const Posting&) const = default;
};

// Token-level inverted file over k-means centroids. Candidates come from the
// n_probe nearest centroids of each query token; every candidate is then
// re-scored with exact MaxSim against its stored tokens.
//
// Stored tokens and centroids are rounded through single precision at build
// time, so an index read back from disk is identical to the one written.
class CentroidIndex : public Retriever {
public:
    CentroidIndex() = default;

    // Documents must already be compressed, share a width, have distinct ids,
    // and hold at least num_centroids tokens in total.
    static CentroidIndex build(std::span<const DocumentEmbedding> docs, const IndexConfig& config);

    std::vector<RelevanceScore> retrieve_topk(const Mat& query, std::size_t k,
                                              std::string_view query_id = {}) const override;
    std::vector<RelevanceScore> retrieve_topk(const Mat& query, std::size_t k, std::size_t n_probe,
                                              std::string_view query_id) const;

    // Doc-store positions owning a token in any probed centroid, ascending.
    std::vector<std::uint32_t> candidates(const Mat& query, std::size_t n_probe) const;

    // Directory layout: meta.json, centroids.bin, postings.bin, docs.bin.
    void save(const std::filesystem::path& dir) const;
    static CentroidIndex load(const std::filesystem::path& dir);

    const IndexConfig& config() const noexcept { return config_; }
    const Mat& centroids() const noexcept { return centroids_; }
    const std::vector<std::vector<Posting>>& postings() const noexcept { return postings_; }
    const std::vector<DocumentEmbedding>& docs() const noexcept { return docs_; }
    std::size_t dim() const noexcept { return centroids_.cols(); }
    bool empty() const noexcept { return docs_.empty(); }

    // Position of a document in the store, or -1.
    std::ptrdiff_t find(std::string_view doc_id) const;

    bool operator==(const CentroidIndex&) const;

private:
    IndexConfig config_;
    Mat centroids_;
    std::vector<std::vector<Posting>> postings_;
    std::vector<DocumentEmbedding> docs_;
};

inline constexpr std::uint16_t kIndexVersion = 1;

// Softmax over the retained top-k scores.
std::vector<double> retrieval_probabilities(std::span<const double> scores, double temperature = 1.0);

}  // namespace lire
