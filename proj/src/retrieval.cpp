#include "lire/retrieval.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <set>

#include "lire/binary_io.hpp"
#include "lire/errors.hpp"

namespace lire {

namespace {

void quantize_params(MlpParams& params) {
    for (auto block : params.blocks()) {
        for (double& v : block) {
            v = static_cast<float>(v);
        }
    }
}

void check_pair(const Mat& query, const Mat& doc) {
    if (query.rows() == 0) {
        throw ContractError("cannot score an empty query");
    }
    if (doc.rows() == 0) {
        throw ContractError("cannot score an empty document");
    }
    if (query.cols() != doc.cols()) {
        throw DimensionError("query width " + std::to_string(query.cols()) + " != document width " +
                             std::to_string(doc.cols()));
    }
}

// Forward pass over several sequences stacked into one matrix.
struct StackedForward {
    MlpOutput mlp;
    Mat tokens;                        // compressed (and normalized) rows
    std::vector<std::size_t> offsets;  // size = sequences + 1
};

StackedForward forward_stacked(const CompressionHead& head, const std::vector<const Mat*>& parts) {
    Mat stacked(0, head.in_dim());
    std::vector<std::size_t> offsets{0};
    for (const Mat* m : parts) {
        if (m->rows() > 0 && m->cols() != head.in_dim()) {
            throw DimensionError("token width " + std::to_string(m->cols()) + " does not match head input " +
                                 std::to_string(head.in_dim()));
        }
        stacked.append_rows(*m);
        offsets.push_back(stacked.rows());
    }
    StackedForward f{mlp_forward(head.params, stacked), Mat(), std::move(offsets)};
    f.tokens = head.normalize_output ? l2_normalize_rows(f.mlp.y) : f.mlp.y;
    return f;
}

Mat slice_rows(const Mat& m, std::size_t begin, std::size_t end) {
    std::vector<double> data(m.values().begin() + static_cast<std::ptrdiff_t>(begin * m.cols()),
                             m.values().begin() + static_cast<std::ptrdiff_t>(end * m.cols()));
    return Mat(end - begin, m.cols(), std::move(data));
}

// Gradient of row-wise normalization y = z / |z|. Zero rows pass the gradient through.
Mat normalize_backward(const Mat& z, const Mat& y, const Mat& dy) {
    Mat dz = dy;
    for (std::size_t r = 0; r < z.rows(); ++r) {
        const double norm = std::sqrt(dot(z.row(r), z.row(r)));
        if (norm == 0.0) {
            continue;
        }
        const double proj = dot(y.row(r), dy.row(r));
        auto out = dz.row(r);
        auto yr = y.row(r);
        for (std::size_t c = 0; c < out.size(); ++c) {
            out[c] = (out[c] - yr[c] * proj) / norm;
        }
    }
    return dz;
}

struct BatchScores {
    StackedForward queries;
    StackedForward docs;
    std::vector<QueryScores> scores;
    // argmax[i][j]: best document-token index (local to doc j) per token of query i
    std::vector<std::vector<std::vector<std::size_t>>> argmax;
};

BatchScores score_batch(const TrainBatch& batch, const CompressionHead& head, bool keep_argmax) {
    batch.validate();
    head.validate();
    std::vector<const Mat*> qparts;
    std::vector<const Mat*> dparts;
    for (const auto& q : batch.queries) {
        qparts.push_back(&q.tokens);
    }
    for (const auto& d : batch.positives) {
        dparts.push_back(&d.tokens);
    }
    BatchScores s{forward_stacked(head, qparts), forward_stacked(head, dparts), {}, {}};
    const std::size_t n = batch.queries.size();
    s.scores.resize(n);
    if (keep_argmax) {
        s.argmax.assign(n, std::vector<std::vector<std::size_t>>(n));
    }
    std::vector<Mat> qmats;
    std::vector<Mat> dmats;
    for (std::size_t i = 0; i < n; ++i) {
        qmats.push_back(slice_rows(s.queries.tokens, s.queries.offsets[i], s.queries.offsets[i + 1]));
        dmats.push_back(slice_rows(s.docs.tokens, s.docs.offsets[i], s.docs.offsets[i + 1]));
    }
    for (std::size_t i = 0; i < n; ++i) {
        s.scores[i].positive = i;
        s.scores[i].scores.resize(n);
        for (std::size_t j = 0; j < n; ++j) {
            auto best = max_sim_argmax(qmats[i], dmats[j]);
            double total = 0.0;
            for (std::size_t t = 0; t < best.size(); ++t) {
                total += dot(qmats[i].row(t), dmats[j].row(best[t]));
            }
            s.scores[i].scores[j] = total;
            if (keep_argmax) {
                s.argmax[i][j] = std::move(best);
            }
        }
    }
    return s;
}

}  // namespace

void CompressionHead::validate() const {
    params.validate();
    if (params.out_dim() >= params.in_dim()) {
        throw DimensionError("compression head must reduce dimension, got " + std::to_string(params.in_dim()) +
                             " -> " + std::to_string(params.out_dim()));
    }
}

CompressionHead make_head(std::size_t in_dim, std::size_t hidden_dim, std::size_t out_dim, std::uint64_t seed,
                          bool normalize_output) {
    if (hidden_dim == 0) {
        hidden_dim = in_dim;
    }
    if (out_dim == 0) {
        out_dim = in_dim / 2;
    }
    if (in_dim < 2 || out_dim == 0 || out_dim >= in_dim) {
        throw DimensionError("compression head needs 0 < h' < h, got h=" + std::to_string(in_dim) +
                             " h'=" + std::to_string(out_dim));
    }
    CompressionHead head{init_mlp(in_dim, hidden_dim, out_dim, seed), normalize_output};
    quantize_params(head.params);
    return head;
}

Mat compress(const CompressionHead& head, const Mat& tokens) {
    head.validate();
    if (tokens.rows() == 0) {
        return Mat(0, head.out_dim());
    }
    auto out = mlp_forward(head.params, tokens);
    return head.normalize_output ? l2_normalize_rows(out.y) : std::move(out.y);
}

std::vector<std::size_t> max_sim_argmax(const Mat& query, const Mat& doc) {
    check_pair(query, doc);
    std::vector<std::size_t> best(query.rows(), 0);
    for (std::size_t i = 0; i < query.rows(); ++i) {
        double top = -std::numeric_limits<double>::infinity();
        for (std::size_t j = 0; j < doc.rows(); ++j) {
            const double s = dot(query.row(i), doc.row(j));
            if (s > top) {
                top = s;
                best[i] = j;
            }
        }
    }
    return best;
}

double max_sim(const Mat& query, const Mat& doc) {
    check_pair(query, doc);
    double total = 0.0;
    for (std::size_t i = 0; i < query.rows(); ++i) {
        double top = -std::numeric_limits<double>::infinity();
        for (std::size_t j = 0; j < doc.rows(); ++j) {
            top = std::max(top, dot(query.row(i), doc.row(j)));
        }
        total += top;
    }
    return total;
}

double contrastive_loss(std::span<const double> scores, std::size_t positive) {
    if (scores.empty() || positive >= scores.size()) {
        throw ContractError("positive index " + std::to_string(positive) + " out of range for " +
                            std::to_string(scores.size()) + " scores");
    }
    double top = -std::numeric_limits<double>::infinity();
    for (double s : scores) {
        if (!std::isfinite(s)) {
            throw NumericError("non-finite relevance score");
        }
        top = std::max(top, s);
    }
    double sum = 0.0;
    for (double s : scores) {
        sum += std::exp(s - top);
    }
    return std::log(sum) - (scores[positive] - top);
}

double contrastive_loss(std::span<const QueryScores> batch) {
    double total = 0.0;
    for (const auto& q : batch) {
        total += contrastive_loss(q.scores, q.positive);
    }
    return total;
}

void TrainBatch::validate() const {
    if (queries.size() != positives.size()) {
        throw ContractError("batch has " + std::to_string(queries.size()) + " queries but " +
                            std::to_string(positives.size()) + " positives");
    }
    if (queries.size() < 2) {
        throw ContractError("in-batch negatives need at least two pairs");
    }
    std::set<std::string> seen;
    for (const auto& d : positives) {
        if (!seen.insert(d.doc_id).second) {
            throw ContractError("positive document " + d.doc_id + " appears twice in one batch");
        }
    }
}

double contrastive_batch_loss(const TrainBatch& batch, const CompressionHead& head) {
    return contrastive_loss(score_batch(batch, head, false).scores);
}

ContrastiveResult contrastive_grad(const TrainBatch& batch, const CompressionHead& head) {
    BatchScores s = score_batch(batch, head, true);
    const std::size_t n = batch.queries.size();
    const std::size_t out = head.out_dim();

    ContrastiveResult result{contrastive_loss(s.scores), GradBundle::zeros_like(head.params)};

    Mat dq(s.queries.tokens.rows(), out);
    Mat dd(s.docs.tokens.rows(), out);
    std::vector<double> weight(n);
    for (std::size_t i = 0; i < n; ++i) {
        const auto& sc = s.scores[i].scores;
        const double top = *std::max_element(sc.begin(), sc.end());
        double z = 0.0;
        for (std::size_t j = 0; j < n; ++j) {
            weight[j] = std::exp(sc[j] - top);
            z += weight[j];
        }
        for (std::size_t j = 0; j < n; ++j) {
            const double g = weight[j] / z - (j == i ? 1.0 : 0.0);
            if (g == 0.0) {
                continue;
            }
            const auto& best = s.argmax[i][j];
            for (std::size_t t = 0; t < best.size(); ++t) {
                const std::size_t qrow = s.queries.offsets[i] + t;
                const std::size_t drow = s.docs.offsets[j] + best[t];
                auto gq = dq.row(qrow);
                auto gd = dd.row(drow);
                auto vq = s.queries.tokens.row(qrow);
                auto vd = s.docs.tokens.row(drow);
                for (std::size_t c = 0; c < out; ++c) {
                    gq[c] += g * vd[c];
                    gd[c] += g * vq[c];
                }
            }
        }
    }

    if (head.normalize_output) {
        dq = normalize_backward(s.queries.mlp.y, s.queries.tokens, dq);
        dd = normalize_backward(s.docs.mlp.y, s.docs.tokens, dd);
    }
    result.grads += mlp_backward(head.params, s.queries.mlp.cache, dq).grads;
    result.grads += mlp_backward(head.params, s.docs.mlp.cache, dd).grads;
    return result;
}

namespace {

// Draws batches from repeated shuffles of the dataset, deferring pairs whose
// positive is already in the current batch.
class BatchSampler {
public:
    BatchSampler(std::span<const TrainingPair> dataset, std::size_t batch_size, std::uint64_t seed)
        : dataset_(dataset), batch_size_(batch_size), rng_(seed) {}

    TrainBatch next() {
        TrainBatch batch;
        std::set<std::string> ids;
        take_eligible(batch, ids);
        if (batch.queries.size() < batch_size_) {
            // A fresh permutation holds every distinct positive, so one refill suffices.
            refill();
            take_eligible(batch, ids);
        }
        if (batch.queries.size() < batch_size_) {
            throw ContractError("dataset has fewer distinct positives than the batch size");
        }
        return batch;
    }

private:
    void refill() {
        std::vector<std::size_t> order(dataset_.size());
        for (std::size_t i = 0; i < order.size(); ++i) {
            order[i] = i;
        }
        for (std::size_t i = order.size(); i > 1; --i) {
            std::swap(order[i - 1], order[rng_.uniform_index(i)]);
        }
        pending_.insert(pending_.end(), order.begin(), order.end());
    }

    void take_eligible(TrainBatch& batch, std::set<std::string>& ids) {
        for (auto it = pending_.begin(); it != pending_.end() && batch.queries.size() < batch_size_;) {
            const auto& pair = dataset_[*it];
            if (ids.insert(pair.second.doc_id).second) {
                batch.queries.push_back(pair.first);
                batch.positives.push_back(pair.second);
                it = pending_.erase(it);
            } else {
                ++it;
            }
        }
    }

    std::span<const TrainingPair> dataset_;
    std::size_t batch_size_;
    Rng rng_;
    std::vector<std::size_t> pending_;
};

}  // namespace

TrainResult train_head(std::span<const TrainingPair> dataset, const TrainConfig& config) {
    if (dataset.empty()) {
        throw ContractError("training set is empty");
    }
    const std::size_t h = dataset.front().first.dim();
    return train_head(dataset, config,
                      make_head(h, config.hidden_dim, config.out_dim, config.seed, config.normalize_output));
}

TrainResult train_head(std::span<const TrainingPair> dataset, const TrainConfig& config, CompressionHead initial) {
    if (config.batch_size < 2) {
        throw ContractError("batch size must be at least 2");
    }
    if (dataset.size() < config.batch_size) {
        throw ContractError("training set has " + std::to_string(dataset.size()) + " pairs, fewer than batch size " +
                            std::to_string(config.batch_size));
    }
    initial.validate();
    TrainResult result{std::move(initial), {}};
    result.loss_trace.reserve(config.steps);
    // Sampling stream is decoupled from the initialization stream.
    BatchSampler sampler(dataset, config.batch_size, config.seed ^ 0x5bd1e995a3c2f1b7ULL);
    const double scale = 1.0 / static_cast<double>(config.batch_size);
    for (std::size_t step = 1; step <= config.steps; ++step) {
        TrainBatch batch = sampler.next();
        ContrastiveResult r;
        try {
            r = contrastive_grad(batch, result.head);
        } catch (const NumericError& e) {
            throw TrainingError(e.what(), step);
        }
        const double mean_loss = r.loss * scale;
        if (!std::isfinite(mean_loss) || !std::isfinite(r.grads.squared_norm())) {
            throw TrainingError("loss or gradient is not finite", step);
        }
        result.loss_trace.push_back(mean_loss);
        sgd_step(result.head.params, r.grads, config.learning_rate * scale);
    }
    quantize_params(result.head.params);
    return result;
}

double in_batch_accuracy(const CompressionHead& head, std::span<const TrainingPair> dataset, std::size_t batch_size) {
    if (batch_size < 2 || dataset.size() < 2) {
        throw ContractError("in-batch accuracy needs a batch size and dataset of at least 2");
    }
    std::vector<Mat> q;
    std::vector<Mat> d;
    for (const auto& [query, doc] : dataset) {
        q.push_back(compress(head, query.tokens));
        d.push_back(compress(head, doc.tokens));
    }
    // A trailing group smaller than two pairs is merged into the previous batch.
    std::vector<std::size_t> bounds{0};
    while (bounds.back() < dataset.size()) {
        std::size_t end = std::min(dataset.size(), bounds.back() + batch_size);
        if (dataset.size() - end < 2) {
            end = dataset.size();
        }
        bounds.push_back(end);
    }
    std::size_t hits = 0;
    for (std::size_t g = 0; g + 1 < bounds.size(); ++g) {
        for (std::size_t i = bounds[g]; i < bounds[g + 1]; ++i) {
            std::size_t best = bounds[g];
            double top = -std::numeric_limits<double>::infinity();
            for (std::size_t j = bounds[g]; j < bounds[g + 1]; ++j) {
                const double s = max_sim(q[i], d[j]);
                if (s > top) {
                    top = s;
                    best = j;
                }
            }
            if (dataset[best].second.doc_id == dataset[i].second.doc_id) {
                ++hits;
            }
        }
    }
    return static_cast<double>(hits) / static_cast<double>(dataset.size());
}

void save_head(const std::filesystem::path& path, const CompressionHead& head) {
    head.validate();
    ByteWriter w;
    w.put_bytes(kHeadMagic);
    w.put_u16(kHeadVersion);
    w.put_u32(static_cast<std::uint32_t>(head.params.in_dim()));
    w.put_u32(static_cast<std::uint32_t>(head.params.hidden_dim()));
    w.put_u32(static_cast<std::uint32_t>(head.params.out_dim()));
    w.put_u8(head.normalize_output ? 1 : 0);
    for (auto block : head.params.blocks()) {
        for (double v : block) {
            w.put_f32(static_cast<float>(v));
        }
    }
    w.save(path);
}

CompressionHead load_head(const std::filesystem::path& path) {
    auto r = ByteReader::load(path);
    r.expect_header(kHeadMagic, kHeadVersion);
    const std::size_t h = r.take_u32("input dimension");
    const std::size_t m = r.take_u32("hidden dimension");
    const std::size_t out = r.take_u32("output dimension");
    const std::size_t flag_at = r.offset();
    const std::uint8_t flag = r.take_u8("normalize flag");
    if (flag > 1) {
        throw FormatError("normalize flag must be 0 or 1", flag_at);
    }
    const std::uint64_t expected = (static_cast<std::uint64_t>(h) * m + m + static_cast<std::uint64_t>(m) * out + out) * 4;
    if (expected > r.remaining()) {
        throw FormatError("truncated parameter payload", r.offset());
    }
    CompressionHead head{MlpParams{Mat(h, m), std::vector<double>(m), Mat(m, out), std::vector<double>(out)},
                         flag == 1};
    for (auto block : head.params.blocks()) {
        for (double& v : block) {
            const std::size_t at = r.offset();
            const float f = r.take_f32("parameter");
            if (!std::isfinite(f)) {
                throw FormatError("non-finite parameter", at);
            }
            v = f;
        }
    }
    r.expect_end();
    try {
        head.validate();
    } catch (const DimensionError& e) {
        throw FormatError(std::string("invalid head shape: ") + e.what(), 6);
    }
    return head;
}

}  // namespace lire
