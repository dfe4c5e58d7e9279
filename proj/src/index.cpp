#include "lire/index.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <numeric>
#include <set>
#include <sstream>

#include "json.hpp"
#include "lire/binary_io.hpp"
#include "lire/errors.hpp"

namespace lire {

namespace {

using json = nlohmann::json;

constexpr std::string_view kCentroidMagic = "LIRC";
constexpr std::string_view kPostingMagic = "LIRP";

double squared_distance(std::span<const double> a, std::span<const double> b) {
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        const double d = a[i] - b[i];
        s += d * d;
    }
    return s;
}

std::size_t nearest(const Mat& centroids, std::span<const double> point) {
    std::size_t best = 0;
    double top = std::numeric_limits<double>::infinity();
    for (std::size_t c = 0; c < centroids.rows(); ++c) {
        const double d = squared_distance(centroids.row(c), point);
        if (d < top) {
            top = d;
            best = c;
        }
    }
    return best;
}

Mat kmeans_pp_seed(const Mat& points, std::size_t k, Rng& rng) {
    const std::size_t n = points.rows();
    Mat centroids(k, points.cols());
    std::vector<double> d2(n, std::numeric_limits<double>::infinity());
    std::size_t pick = rng.uniform_index(n);
    for (std::size_t c = 0; c < k; ++c) {
        std::copy(points.row(pick).begin(), points.row(pick).end(), centroids.row(c).begin());
        double total = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            d2[i] = std::min(d2[i], squared_distance(points.row(i), centroids.row(c)));
            total += d2[i];
        }
        if (c + 1 == k) {
            break;
        }
        if (total > 0.0) {
            const double target = rng.uniform01() * total;
            double acc = 0.0;
            std::size_t last_positive = 0;
            bool found = false;
            for (std::size_t i = 0; i < n; ++i) {
                if (d2[i] <= 0.0) {
                    continue;
                }
                last_positive = i;
                acc += d2[i];
                if (acc > target) {
                    pick = i;
                    found = true;
                    break;
                }
            }
            if (!found) {
                pick = last_positive;
            }
        } else {
            pick = rng.uniform_index(n);
        }
    }
    return centroids;
}

Mat run_kmeans(const Mat& points, const IndexConfig& config) {
    Rng rng(config.seed);
    Mat centroids = kmeans_pp_seed(points, config.num_centroids, rng);
    const std::size_t k = centroids.rows();
    const std::size_t dim = points.cols();
    std::vector<std::size_t> assign(points.rows());
    for (std::size_t iter = 0; iter < config.kmeans_iters; ++iter) {
        for (std::size_t i = 0; i < points.rows(); ++i) {
            assign[i] = nearest(centroids, points.row(i));
        }
        Mat sums(k, dim);
        std::vector<std::size_t> counts(k, 0);
        for (std::size_t i = 0; i < points.rows(); ++i) {
            auto dst = sums.row(assign[i]);
            auto src = points.row(i);
            for (std::size_t c = 0; c < dim; ++c) {
                dst[c] += src[c];
            }
            ++counts[assign[i]];
        }
        for (std::size_t c = 0; c < k; ++c) {
            if (counts[c] == 0) {
                continue;  // empty clusters keep their position
            }
            auto dst = centroids.row(c);
            auto src = sums.row(c);
            for (std::size_t j = 0; j < dim; ++j) {
                dst[j] = src[j] / static_cast<double>(counts[c]);
            }
        }
    }
    return quantize_f32(centroids);
}

json config_to_json(const IndexConfig& c) {
    return {{"num_centroids", c.num_centroids},
            {"kmeans_iters", c.kmeans_iters},
            {"n_probe", c.n_probe},
            {"seed", c.seed}};
}

void write_text(const std::filesystem::path& path, const std::string& text) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) {
        throw Error("cannot open " + path.string() + " for writing");
    }
    out << text;
}

}  // namespace

void IndexConfig::validate() const {
    if (num_centroids == 0) {
        throw ConfigError("index needs at least one centroid");
    }
    if (n_probe == 0 || n_probe > num_centroids) {
        throw ConfigError("n_probe must be in [1, " + std::to_string(num_centroids) + "], got " +
                          std::to_string(n_probe));
    }
}

CentroidIndex CentroidIndex::build(std::span<const DocumentEmbedding> docs, const IndexConfig& config) {
    config.validate();
    CentroidIndex index;
    index.config_ = config;
    std::set<std::string> ids;
    std::size_t total = 0;
    const std::size_t dim = docs.empty() ? 0 : docs.front().dim();
    for (const auto& d : docs) {
        if (d.length() == 0) {
            throw ContractError("document " + d.doc_id + " has no tokens");
        }
        if (d.dim() != dim) {
            throw DimensionError("document " + d.doc_id + " has width " + std::to_string(d.dim()) +
                                 ", expected " + std::to_string(dim));
        }
        if (!ids.insert(d.doc_id).second) {
            throw ContractError("duplicate doc_id " + d.doc_id);
        }
        total += d.length();
    }
    if (total < config.num_centroids) {
        throw ConfigError("corpus has " + std::to_string(total) + " tokens, fewer than " +
                          std::to_string(config.num_centroids) + " centroids");
    }

    Mat points(0, dim);
    index.docs_.reserve(docs.size());
    for (const auto& d : docs) {
        index.docs_.push_back({quantize_f32(d.tokens), d.doc_id});
        points.append_rows(index.docs_.back().tokens);
    }
    index.centroids_ = run_kmeans(points, config);
    index.postings_.assign(config.num_centroids, {});
    for (std::size_t di = 0; di < index.docs_.size(); ++di) {
        const Mat& t = index.docs_[di].tokens;
        for (std::size_t r = 0; r < t.rows(); ++r) {
            index.postings_[nearest(index.centroids_, t.row(r))].push_back(
                {static_cast<std::uint32_t>(di), static_cast<std::uint32_t>(r)});
        }
    }
    return index;
}

std::vector<std::uint32_t> CentroidIndex::candidates(const Mat& query, std::size_t n_probe) const {
    if (empty()) {
        return {};
    }
    if (query.rows() > 0 && query.cols() != dim()) {
        throw DimensionError("query width " + std::to_string(query.cols()) + " != index width " +
                             std::to_string(dim()));
    }
    const std::size_t k = centroids_.rows();
    n_probe = std::min(n_probe, k);
    std::vector<char> hit(docs_.size(), 0);
    std::vector<std::pair<double, std::size_t>> order(k);
    for (std::size_t t = 0; t < query.rows(); ++t) {
        for (std::size_t c = 0; c < k; ++c) {
            order[c] = {squared_distance(centroids_.row(c), query.row(t)), c};
        }
        std::partial_sort(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(n_probe), order.end());
        for (std::size_t p = 0; p < n_probe; ++p) {
            for (const auto& posting : postings_[order[p].second]) {
                hit[posting.doc] = 1;
            }
        }
    }
    std::vector<std::uint32_t> out;
    for (std::size_t d = 0; d < hit.size(); ++d) {
        if (hit[d]) {
            out.push_back(static_cast<std::uint32_t>(d));
        }
    }
    return out;
}

std::vector<RelevanceScore> CentroidIndex::retrieve_topk(const Mat& query, std::size_t k,
                                                         std::string_view query_id) const {
    return retrieve_topk(query, k, config_.n_probe, query_id);
}

std::vector<RelevanceScore> CentroidIndex::retrieve_topk(const Mat& query, std::size_t k, std::size_t n_probe,
                                                         std::string_view query_id) const {
    if (k == 0) {
        throw ContractError("k must be at least 1");
    }
    if (empty()) {
        return {};
    }
    std::vector<RelevanceScore> scored;
    for (std::uint32_t d : candidates(query, n_probe)) {
        scored.push_back({max_sim(query, docs_[d].tokens), std::string(query_id), docs_[d].doc_id});
    }
    const std::size_t keep = std::min(k, scored.size());
    std::partial_sort(scored.begin(), scored.begin() + static_cast<std::ptrdiff_t>(keep), scored.end(),
                      [](const RelevanceScore& a, const RelevanceScore& b) {
                          if (a.value != b.value) {
                              return a.value > b.value;
                          }
                          return a.doc_id < b.doc_id;
                      });
    scored.resize(keep);
    return scored;
}

std::ptrdiff_t CentroidIndex::find(std::string_view doc_id) const {
    for (std::size_t i = 0; i < docs_.size(); ++i) {
        if (docs_[i].doc_id == doc_id) {
            return static_cast<std::ptrdiff_t>(i);
        }
    }
    return -1;
}

bool CentroidIndex::operator==(const CentroidIndex& other) const {
    if (!(config_ == other.config_) || !(centroids_ == other.centroids_) || postings_ != other.postings_ ||
        docs_.size() != other.docs_.size()) {
        return false;
    }
    for (std::size_t i = 0; i < docs_.size(); ++i) {
        if (docs_[i].doc_id != other.docs_[i].doc_id || !(docs_[i].tokens == other.docs_[i].tokens)) {
            return false;
        }
    }
    return true;
}

void CentroidIndex::save(const std::filesystem::path& dir) const {
    std::filesystem::create_directories(dir);
    std::size_t posting_count = 0;
    for (const auto& p : postings_) {
        posting_count += p.size();
    }
    const json meta = {{"format", "lire-index"},
                       {"version", kIndexVersion},
                       {"config", config_to_json(config_)},
                       {"num_centroids", centroids_.rows()},
                       {"dim", centroids_.cols()},
                       {"num_docs", docs_.size()},
                       {"num_postings", posting_count}};
    write_text(dir / "meta.json", meta.dump(2) + "\n");

    ByteWriter c;
    c.put_bytes(kCentroidMagic);
    c.put_u16(kIndexVersion);
    c.put_u32(static_cast<std::uint32_t>(centroids_.rows()));
    c.put_u32(static_cast<std::uint32_t>(centroids_.cols()));
    for (double v : centroids_.values()) {
        c.put_f32(static_cast<float>(v));
    }
    c.save(dir / "centroids.bin");

    ByteWriter p;
    p.put_bytes(kPostingMagic);
    p.put_u16(kIndexVersion);
    p.put_u32(static_cast<std::uint32_t>(postings_.size()));
    for (const auto& list : postings_) {
        p.put_u32(static_cast<std::uint32_t>(list.size()));
        for (const auto& e : list) {
            p.put_u32(e.doc);
            p.put_u32(e.token);
        }
    }
    p.save(dir / "postings.bin");

    std::vector<TokenSequence> seqs;
    seqs.reserve(docs_.size());
    for (const auto& d : docs_) {
        seqs.push_back({d.doc_id, d.tokens});
    }
    write_embedding_file(dir / "docs.bin", seqs);
}

CentroidIndex CentroidIndex::load(const std::filesystem::path& dir) {
    std::ifstream in(dir / "meta.json");
    if (!in) {
        throw Error("cannot open " + (dir / "meta.json").string());
    }
    std::stringstream buf;
    buf << in.rdbuf();
    json meta;
    try {
        meta = json::parse(buf.str());
    } catch (const json::parse_error& e) {
        throw FormatError(std::string("meta.json: ") + e.what(), e.byte);
    }
    CentroidIndex index;
    std::size_t num_docs = 0;
    try {
        if (meta.at("format").get<std::string>() != "lire-index") {
            throw FormatError("meta.json: not a lire index", 0);
        }
        const auto version = meta.at("version").get<int>();
        if (version != kIndexVersion) {
            throw FormatError("meta.json: unsupported index version " + std::to_string(version), 0);
        }
        const auto& c = meta.at("config");
        index.config_.num_centroids = c.at("num_centroids").get<std::size_t>();
        index.config_.kmeans_iters = c.at("kmeans_iters").get<std::size_t>();
        index.config_.n_probe = c.at("n_probe").get<std::size_t>();
        index.config_.seed = c.at("seed").get<std::uint64_t>();
        num_docs = meta.at("num_docs").get<std::size_t>();
    } catch (const json::exception& e) {
        throw FormatError(std::string("meta.json: ") + e.what(), 0);
    }

    auto cr = ByteReader::load(dir / "centroids.bin");
    cr.expect_header(kCentroidMagic, kIndexVersion);
    const std::size_t k = cr.take_u32("centroid count");
    const std::size_t dim = cr.take_u32("centroid width");
    if (static_cast<std::uint64_t>(k) * dim * 4 != cr.remaining()) {
        throw FormatError("centroids.bin payload does not match " + std::to_string(k) + "x" + std::to_string(dim),
                          cr.offset());
    }
    std::vector<double> cvals(k * dim);
    for (double& v : cvals) {
        const std::size_t at = cr.offset();
        const float f = cr.take_f32("centroid value");
        if (!std::isfinite(f)) {
            throw FormatError("non-finite centroid value", at);
        }
        v = f;
    }
    index.centroids_ = Mat(k, dim, std::move(cvals));

    for (auto& seq : read_embedding_file(dir / "docs.bin")) {
        if (seq.tokens.rows() == 0 || seq.tokens.cols() != dim) {
            throw FormatError("docs.bin entry " + seq.id + " does not match index width", 0);
        }
        index.docs_.push_back({std::move(seq.tokens), std::move(seq.id)});
    }
    if (index.docs_.size() != num_docs) {
        throw FormatError("docs.bin holds " + std::to_string(index.docs_.size()) + " documents, meta.json says " +
                          std::to_string(num_docs), 0);
    }

    auto pr = ByteReader::load(dir / "postings.bin");
    pr.expect_header(kPostingMagic, kIndexVersion);
    const std::size_t lists_at = pr.offset();
    const std::size_t lists = pr.take_u32("posting list count");
    if (lists != k) {
        throw FormatError("postings.bin has " + std::to_string(lists) + " lists for " + std::to_string(k) +
                          " centroids", lists_at);
    }
    std::vector<std::vector<char>> seen(index.docs_.size());
    for (std::size_t d = 0; d < index.docs_.size(); ++d) {
        seen[d].assign(index.docs_[d].length(), 0);
    }
    index.postings_.resize(k);
    for (std::size_t c = 0; c < k; ++c) {
        const std::size_t n = pr.take_u32("posting count");
        if (static_cast<std::uint64_t>(n) * 8 > pr.remaining()) {
            throw FormatError("truncated posting list", pr.offset());
        }
        index.postings_[c].reserve(n);
        for (std::size_t i = 0; i < n; ++i) {
            const std::size_t at = pr.offset();
            Posting e{pr.take_u32("posting doc"), pr.take_u32("posting token")};
            if (e.doc >= index.docs_.size() || e.token >= index.docs_[e.doc].length() ||
                seen[e.doc][e.token]) {
                throw FormatError("invalid or duplicate posting", at);
            }
            seen[e.doc][e.token] = 1;
            index.postings_[c].push_back(e);
        }
    }
    pr.expect_end();
    for (const auto& s : seen) {
        if (std::find(s.begin(), s.end(), 0) != s.end()) {
            throw FormatError("postings.bin does not cover every stored token", pr.offset());
        }
    }
    return index;
}

std::vector<double> retrieval_probabilities(std::span<const double> scores, double temperature) {
    if (!(temperature > 0.0)) {
        throw ContractError("temperature must be positive");
    }
    std::vector<double> p(scores.size());
    if (scores.empty()) {
        return p;
    }
    const double top = *std::max_element(scores.begin(), scores.end());
    double z = 0.0;
    for (std::size_t i = 0; i < scores.size(); ++i) {
        if (!std::isfinite(scores[i])) {
            throw NumericError("non-finite retrieval score");
        }
        p[i] = std::exp((scores[i] - top) / temperature);
        z += p[i];
    }
    for (double& v : p) {
        v /= z;
    }
    return p;
}

}  // namespace lire
