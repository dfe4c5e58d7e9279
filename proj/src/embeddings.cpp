#include "lire/embeddings.hpp"

#include <cctype>
#include <cmath>

#include "lire/binary_io.hpp"
#include "lire/errors.hpp"

namespace lire {

namespace {

std::uint64_t mix(std::uint64_t h, std::uint64_t v) {
    unsigned char le[8];
    for (int i = 0; i < 8; ++i) {
        le[i] = static_cast<unsigned char>((v >> (8 * i)) & 0xff);
    }
    return fnv1a64(le, h);
}

std::uint64_t hash_text(std::string_view tag, std::string_view s) {
    std::uint64_t h = fnv1a64({reinterpret_cast<const unsigned char*>(tag.data()), tag.size()});
    h = mix(h, s.size());
    return fnv1a64({reinterpret_cast<const unsigned char*>(s.data()), s.size()}, h);
}

void fill_unit_row(std::span<double> row, std::uint64_t key) {
    Rng rng(key);
    double norm2 = 0.0;
    while (norm2 == 0.0) {
        norm2 = 0.0;
        for (double& v : row) {
            v = rng.uniform(-1.0, 1.0);
            norm2 += v * v;
        }
    }
    const double norm = std::sqrt(norm2);
    for (double& v : row) {
        v /= norm;
    }
}

std::string canonical_word(std::string_view word) {
    std::size_t b = 0;
    std::size_t e = word.size();
    while (b < e && std::ispunct(static_cast<unsigned char>(word[b]))) {
        ++b;
    }
    while (e > b && std::ispunct(static_cast<unsigned char>(word[e - 1]))) {
        --e;
    }
    std::string_view core = b == e ? word : word.substr(b, e - b);
    std::string out(core);
    for (char& c : out) {
        c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
    }
    return out;
}

std::vector<std::string_view> split_words(std::string_view text) {
    std::vector<std::string_view> words;
    std::size_t i = 0;
    while (i < text.size()) {
        while (i < text.size() && std::isspace(static_cast<unsigned char>(text[i]))) {
            ++i;
        }
        const std::size_t start = i;
        while (i < text.size() && !std::isspace(static_cast<unsigned char>(text[i]))) {
            ++i;
        }
        if (i > start) {
            words.push_back(text.substr(start, i - start));
        }
    }
    return words;
}

}  // namespace

QueryEmbedding build_query_embedding(const Mat& image_tokens, const Mat& text_tokens, std::string query_id) {
    if (image_tokens.rows() == 0 && text_tokens.rows() == 0) {
        throw ContractError("query " + query_id + " has neither image nor text tokens");
    }
    if (image_tokens.rows() > 0 && text_tokens.rows() > 0 && image_tokens.cols() != text_tokens.cols()) {
        throw DimensionError("image tokens have h=" + std::to_string(image_tokens.cols()) + " but text tokens h=" +
                             std::to_string(text_tokens.cols()));
    }
    QueryEmbedding q;
    q.tokens = image_tokens.rows() > 0 ? image_tokens : Mat(0, text_tokens.cols());
    q.tokens.append_rows(text_tokens);
    q.image_token_count = image_tokens.rows();
    q.text_token_count = text_tokens.rows();
    q.query_id = std::move(query_id);
    return q;
}

DocumentEmbedding build_document_embedding(Mat tokens, std::string doc_id) {
    if (tokens.rows() == 0) {
        throw ContractError("document " + doc_id + " has no tokens");
    }
    return {std::move(tokens), std::move(doc_id)};
}

void ToyEncoderConfig::validate() const {
    if (dim < 2) {
        throw ConfigError("toy encoder dimension must be at least 2");
    }
    if (tokens_per_word == 0) {
        throw ConfigError("tokens_per_word must be positive");
    }
}

Mat toy_encode_text(std::string_view text, const ToyEncoderConfig& config) {
    config.validate();
    const auto words = split_words(text);
    Mat out(words.size() * config.tokens_per_word, config.dim);
    std::size_t r = 0;
    for (auto w : words) {
        const std::uint64_t base = mix(mix(hash_text("txt", canonical_word(w)), config.salt), config.seed);
        for (std::size_t s = 0; s < config.tokens_per_word; ++s) {
            fill_unit_row(out.row(r++), mix(base, s));
        }
    }
    return out;
}

Mat toy_encode_image(std::string_view image_descriptor, const ToyEncoderConfig& config) {
    config.validate();
    const std::size_t n = kImageTokensPerUnit * config.tokens_per_word;
    Mat out(n, config.dim);
    const std::uint64_t base = mix(mix(hash_text("img", image_descriptor), config.salt), config.seed);
    for (std::size_t r = 0; r < n; ++r) {
        fill_unit_row(out.row(r), mix(base, r));
    }
    return out;
}

QueryEmbedding toy_encode_query(std::string_view question, std::string_view image_descriptor,
                                std::string query_id, const ToyEncoderConfig& config) {
    return build_query_embedding(toy_encode_image(image_descriptor, config), toy_encode_text(question, config),
                                 std::move(query_id));
}

DocumentEmbedding toy_encode_document(std::string_view text, std::string doc_id, const ToyEncoderConfig& config) {
    return build_document_embedding(toy_encode_text(text, config), std::move(doc_id));
}

std::vector<unsigned char> encode_embeddings(std::span<const TokenSequence> sequences) {
    const std::size_t h = sequences.empty() ? 0 : sequences.front().tokens.cols();
    for (const auto& s : sequences) {
        if (s.tokens.rows() > 0 && s.tokens.cols() != h) {
            throw DimensionError("sequence " + s.id + " has h=" + std::to_string(s.tokens.cols()) +
                                 ", file h=" + std::to_string(h));
        }
    }
    ByteWriter w;
    w.put_bytes(kEmbeddingMagic);
    w.put_u16(kEmbeddingVersion);
    w.put_u32(static_cast<std::uint32_t>(h));
    w.put_u32(static_cast<std::uint32_t>(sequences.size()));
    for (const auto& s : sequences) {
        w.put_string(s.id);
        w.put_u32(static_cast<std::uint32_t>(s.tokens.rows()));
        for (double v : s.tokens.values()) {
            w.put_f32(static_cast<float>(v));
        }
    }
    return w.bytes();
}

std::vector<TokenSequence> decode_embeddings(std::vector<unsigned char> bytes) {
    ByteReader r(std::move(bytes));
    r.expect_header(kEmbeddingMagic, kEmbeddingVersion);
    const std::uint32_t h = r.take_u32("dimension");
    const std::uint32_t count = r.take_u32("sequence count");
    std::vector<TokenSequence> out;
    out.reserve(count);
    for (std::uint32_t i = 0; i < count; ++i) {
        TokenSequence s;
        s.id = r.take_string("sequence id");
        const std::uint32_t n = r.take_u32("token count");
        const std::size_t values_at = r.offset();
        if (static_cast<std::uint64_t>(n) * h * 4 > r.remaining()) {
            throw FormatError("truncated payload for sequence " + s.id, values_at);
        }
        std::vector<double> values(static_cast<std::size_t>(n) * h);
        for (double& v : values) {
            const std::size_t at = r.offset();
            const float f = r.take_f32("token value");
            if (!std::isfinite(f)) {
                throw FormatError("non-finite token value", at);
            }
            v = f;
        }
        s.tokens = Mat(n, h, std::move(values));
        out.push_back(std::move(s));
    }
    r.expect_end();
    return out;
}

void write_embedding_file(const std::filesystem::path& path, std::span<const TokenSequence> sequences) {
    write_file_bytes(path, encode_embeddings(sequences));
}

std::vector<TokenSequence> read_embedding_file(const std::filesystem::path& path) {
    return decode_embeddings(read_file_bytes(path));
}

Mat quantize_f32(const Mat& m) {
    Mat out = m;
    for (double& v : out.values()) {
        v = static_cast<float>(v);
    }
    return out;
}

}  // namespace lire
