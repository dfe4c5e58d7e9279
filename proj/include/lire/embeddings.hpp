#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "lire/numerics.hpp"

namespace lire {

// Query token matrix: image tokens occupy the leading rows, text tokens follow.
struct QueryEmbedding {
    Mat tokens;
    std::size_t image_token_count = 0;
    std::size_t text_token_count = 0;
    std::string query_id;

    std::size_t length() const noexcept { return tokens.rows(); }
    std::size_t dim() const noexcept { return tokens.cols(); }
};

struct DocumentEmbedding {
    Mat tokens;
    std::string doc_id;

    std::size_t length() const noexcept { return tokens.rows(); }
    std::size_t dim() const noexcept { return tokens.cols(); }
};

// Throws DimensionError when the image and text parts disagree on h,
// ContractError when both are empty.
QueryEmbedding build_query_embedding(const Mat& image_tokens, const Mat& text_tokens, std::string query_id);

// Throws ContractError on an empty token matrix.
DocumentEmbedding build_document_embedding(Mat tokens, std::string doc_id);

struct ToyEncoderConfig {
    std::size_t dim = 32;
    std::size_t tokens_per_word = 1;
    std::uint64_t seed = 0;
    std::uint64_t salt = 0;

    void validate() const;
};

inline constexpr std::size_t kImageTokensPerUnit = 4;

// One unit row per whitespace-separated word (times tokens_per_word). Words
// are lowercased and stripped of surrounding ASCII punctuation before
// hashing, so "Paris," and "paris" share a token.
Mat toy_encode_text(std::string_view text, const ToyEncoderConfig& config);

// kImageTokensPerUnit * tokens_per_word unit rows derived from the descriptor.
Mat toy_encode_image(std::string_view image_descriptor, const ToyEncoderConfig& config);

QueryEmbedding toy_encode_query(std::string_view question, std::string_view image_descriptor,
                                std::string query_id, const ToyEncoderConfig& config);

DocumentEmbedding toy_encode_document(std::string_view text, std::string doc_id, const ToyEncoderConfig& config);

// One record of an embedding file.
struct TokenSequence {
    std::string id;
    Mat tokens;

    bool operator==(const TokenSequence&) const = default;
};

// Embedding file layout (little-endian):
//   "LIRE"  u16 version=1  u32 h  u32 count
//   count x { u32 id_len, id bytes, u32 token_count, token_count*h f32 }
inline constexpr std::string_view kEmbeddingMagic = "LIRE";
inline constexpr std::uint16_t kEmbeddingVersion = 1;

void write_embedding_file(const std::filesystem::path& path, std::span<const TokenSequence> sequences);
std::vector<TokenSequence> read_embedding_file(const std::filesystem::path& path);

// In-memory variants used by the file functions and the index store.
std::vector<unsigned char> encode_embeddings(std::span<const TokenSequence> sequences);
std::vector<TokenSequence> decode_embeddings(std::vector<unsigned char> bytes);

// Rounds every entry through single precision, as a write/read cycle does.
Mat quantize_f32(const Mat& m);

}  // namespace lire
