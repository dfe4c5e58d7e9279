#include "lire/numerics.hpp"

#include <cmath>
#include <cstring>
#include <numbers>
#include <string>

#include "lire/errors.hpp"

namespace lire {

namespace {

void require_finite(std::span<const double> values) {
    for (std::size_t i = 0; i < values.size(); ++i) {
        if (!std::isfinite(values[i])) {
            throw NumericError("non-finite matrix entry at flat index " + std::to_string(i));
        }
    }
}

std::string shape(std::size_t r, std::size_t c) {
    return std::to_string(r) + "x" + std::to_string(c);
}

}  // namespace

Mat::Mat(std::size_t rows, std::size_t cols) : rows_(rows), cols_(cols), data_(rows * cols, 0.0) {}

Mat::Mat(std::size_t rows, std::size_t cols, std::vector<double> data)
    : rows_(rows), cols_(cols), data_(std::move(data)) {
    if (data_.size() != rows_ * cols_) {
        throw DimensionError("matrix data length " + std::to_string(data_.size()) +
                             " does not match shape " + shape(rows_, cols_));
    }
    require_finite(data_);
}

Mat Mat::from_rows(std::initializer_list<std::initializer_list<double>> rows) {
    const std::size_t n = rows.size();
    const std::size_t c = n == 0 ? 0 : rows.begin()->size();
    std::vector<double> data;
    data.reserve(n * c);
    for (const auto& r : rows) {
        if (r.size() != c) {
            throw DimensionError("ragged row in matrix literal");
        }
        data.insert(data.end(), r.begin(), r.end());
    }
    return Mat(n, c, std::move(data));
}

void Mat::append_rows(const Mat& other) {
    if (other.rows_ == 0) {
        return;
    }
    if (rows_ == 0 && data_.empty()) {
        cols_ = other.cols_;
    } else if (cols_ != other.cols_) {
        throw DimensionError("cannot append " + shape(other.rows_, other.cols_) + " rows to " +
                             shape(rows_, cols_));
    }
    data_.insert(data_.end(), other.data_.begin(), other.data_.end());
    rows_ += other.rows_;
}

double dot(std::span<const double> a, std::span<const double> b) {
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        s += a[i] * b[i];
    }
    return s;
}

Mat l2_normalize_rows(const Mat& x) {
    Mat out = x;
    for (std::size_t r = 0; r < out.rows(); ++r) {
        auto row = out.row(r);
        const double norm = std::sqrt(dot(row, row));
        if (norm > 0.0) {
            for (double& v : row) {
                v /= norm;
            }
        }
    }
    return out;
}

std::uint64_t Rng::next_u64() {
    std::uint64_t z = (state_ += 0x9e3779b97f4a7c15ULL);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

double Rng::uniform01() {
    return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
}

std::uint64_t Rng::uniform_index(std::uint64_t n) {
    // Rejection sampling removes modulo bias.
    const std::uint64_t limit = UINT64_MAX - UINT64_MAX % n;
    std::uint64_t v = next_u64();
    while (v >= limit) {
        v = next_u64();
    }
    return v % n;
}

double Rng::normal() {
    double u1 = uniform01();
    while (u1 <= 0.0) {
        u1 = uniform01();
    }
    const double u2 = uniform01();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
}

std::uint64_t fnv1a64(std::span<const unsigned char> bytes, std::uint64_t basis) {
    std::uint64_t h = basis;
    for (unsigned char b : bytes) {
        h ^= b;
        h *= 0x100000001b3ULL;
    }
    return h;
}

void MlpParams::validate() const {
    const std::size_t h = in_dim();
    const std::size_t m = hidden_dim();
    const std::size_t out = out_dim();
    if (h == 0 || m == 0 || out == 0) {
        throw DimensionError("perceptron dimensions must be positive");
    }
    if (b1.size() != m || w2.rows() != m || b2.size() != out) {
        throw DimensionError("inconsistent perceptron shapes: W1 " + shape(h, m) + ", b1 " +
                             std::to_string(b1.size()) + ", W2 " + shape(w2.rows(), out) + ", b2 " +
                             std::to_string(b2.size()));
    }
    if (out > h) {
        throw DimensionError("output dimension " + std::to_string(out) +
                             " exceeds input dimension " + std::to_string(h));
    }
}

std::array<std::span<double>, 4> MlpParams::blocks() {
    return {w1.values(), std::span<double>(b1), w2.values(), std::span<double>(b2)};
}

std::array<std::span<const double>, 4> MlpParams::blocks() const {
    return {w1.values(), std::span<const double>(b1), w2.values(), std::span<const double>(b2)};
}

std::size_t MlpParams::parameter_count() const {
    return w1.size() + b1.size() + w2.size() + b2.size();
}

MlpParams init_mlp(std::size_t in_dim, std::size_t hidden_dim, std::size_t out_dim, std::uint64_t seed) {
    Rng rng(seed);
    MlpParams p{Mat(in_dim, hidden_dim), std::vector<double>(hidden_dim, 0.0), Mat(hidden_dim, out_dim),
                std::vector<double>(out_dim, 0.0)};
    p.validate();
    const double a1 = std::sqrt(6.0 / static_cast<double>(in_dim + hidden_dim));
    for (double& v : p.w1.values()) {
        v = rng.uniform(-a1, a1);
    }
    const double a2 = std::sqrt(6.0 / static_cast<double>(hidden_dim + out_dim));
    for (double& v : p.w2.values()) {
        v = rng.uniform(-a2, a2);
    }
    return p;
}

std::uint64_t fingerprint(const MlpParams& params) {
    const std::uint64_t dims[3] = {params.in_dim(), params.hidden_dim(), params.out_dim()};
    std::uint64_t h = fnv1a64({reinterpret_cast<const unsigned char*>(dims), sizeof(dims)});
    for (auto block : params.blocks()) {
        h = fnv1a64({reinterpret_cast<const unsigned char*>(block.data()), block.size_bytes()}, h);
    }
    return h;
}

GradBundle GradBundle::zeros_like(const MlpParams& params) {
    return {Mat(params.w1.rows(), params.w1.cols()), std::vector<double>(params.b1.size(), 0.0),
            Mat(params.w2.rows(), params.w2.cols()), std::vector<double>(params.b2.size(), 0.0)};
}

std::array<std::span<double>, 4> GradBundle::blocks() {
    return {dw1.values(), std::span<double>(db1), dw2.values(), std::span<double>(db2)};
}

std::array<std::span<const double>, 4> GradBundle::blocks() const {
    return {dw1.values(), std::span<const double>(db1), dw2.values(), std::span<const double>(db2)};
}

GradBundle& GradBundle::operator+=(const GradBundle& other) {
    auto mine = blocks();
    auto theirs = other.blocks();
    for (std::size_t b = 0; b < mine.size(); ++b) {
        if (mine[b].size() != theirs[b].size()) {
            throw DimensionError("gradient bundles differ in shape");
        }
        for (std::size_t i = 0; i < mine[b].size(); ++i) {
            mine[b][i] += theirs[b][i];
        }
    }
    return *this;
}

double GradBundle::squared_norm() const {
    double s = 0.0;
    for (auto block : blocks()) {
        s += dot(block, block);
    }
    return s;
}

MlpOutput mlp_forward(const MlpParams& params, const Mat& x) {
    params.validate();
    const std::size_t h = params.in_dim();
    const std::size_t m = params.hidden_dim();
    const std::size_t out = params.out_dim();
    if (x.rows() > 0 && x.cols() != h) {
        throw DimensionError("input has " + std::to_string(x.cols()) + " columns, perceptron expects " +
                             std::to_string(h));
    }
    const std::size_t n = x.rows();

    MlpOutput result{Mat(n, out), MlpCache{x.rows() == 0 ? Mat(0, h) : x, Mat(n, m), Mat(n, m), fingerprint(params)}};
    Mat& pre = result.cache.pre_hidden;
    Mat& hid = result.cache.hidden;
    for (std::size_t r = 0; r < n; ++r) {
        for (std::size_t j = 0; j < m; ++j) {
            double s = params.b1[j];
            for (std::size_t i = 0; i < h; ++i) {
                s += x(r, i) * params.w1(i, j);
            }
            pre(r, j) = s;
            hid(r, j) = s > 0.0 ? s : 0.0;
        }
        for (std::size_t k = 0; k < out; ++k) {
            double s = params.b2[k];
            for (std::size_t j = 0; j < m; ++j) {
                s += hid(r, j) * params.w2(j, k);
            }
            result.y(r, k) = s;
        }
    }
    return result;
}

MlpBackward mlp_backward(const MlpParams& params, const MlpCache& cache, const Mat& dy) {
    params.validate();
    const std::size_t h = params.in_dim();
    const std::size_t m = params.hidden_dim();
    const std::size_t out = params.out_dim();
    const std::size_t n = cache.hidden.rows();
    if (cache.params_fingerprint != fingerprint(params) || cache.input.cols() != h ||
        cache.input.rows() != n || cache.pre_hidden.rows() != n || cache.hidden.cols() != m) {
        throw InvalidStateError("forward cache does not belong to these parameters");
    }
    if (dy.rows() != n || (n > 0 && dy.cols() != out)) {
        throw DimensionError("upstream gradient has shape " + shape(dy.rows(), dy.cols()) + ", expected " +
                             shape(n, out));
    }

    MlpBackward result{Mat(n, h), GradBundle::zeros_like(params)};
    GradBundle& g = result.grads;
    std::vector<double> dpre(m);
    for (std::size_t r = 0; r < n; ++r) {
        for (std::size_t k = 0; k < out; ++k) {
            const double d = dy(r, k);
            g.db2[k] += d;
            if (d == 0.0) {
                continue;
            }
            for (std::size_t j = 0; j < m; ++j) {
                g.dw2(j, k) += cache.hidden(r, j) * d;
            }
        }
        for (std::size_t j = 0; j < m; ++j) {
            double s = 0.0;
            if (cache.pre_hidden(r, j) > 0.0) {
                for (std::size_t k = 0; k < out; ++k) {
                    s += dy(r, k) * params.w2(j, k);
                }
            }
            dpre[j] = s;
            g.db1[j] += s;
        }
        for (std::size_t i = 0; i < h; ++i) {
            const double xi = cache.input(r, i);
            double s = 0.0;
            for (std::size_t j = 0; j < m; ++j) {
                g.dw1(i, j) += xi * dpre[j];
                s += params.w1(i, j) * dpre[j];
            }
            result.dx(r, i) = s;
        }
    }
    return result;
}

GradBundle finite_diff_grad(const std::function<double(const MlpParams&)>& loss_fn, const MlpParams& params,
                            double step) {
    if (!(step > 0.0)) {
        throw ContractError("finite-difference step must be positive");
    }
    MlpParams probe = params;
    GradBundle grads = GradBundle::zeros_like(params);
    auto probe_blocks = probe.blocks();
    auto grad_blocks = grads.blocks();
    for (std::size_t b = 0; b < probe_blocks.size(); ++b) {
        for (std::size_t i = 0; i < probe_blocks[b].size(); ++i) {
            double& theta = probe_blocks[b][i];
            const double saved = theta;
            theta = saved + step;
            const double plus = loss_fn(probe);
            theta = saved - step;
            const double minus = loss_fn(probe);
            theta = saved;
            if (!std::isfinite(plus) || !std::isfinite(minus)) {
                throw NumericError("loss is non-finite during finite differencing");
            }
            grad_blocks[b][i] = (plus - minus) / (2.0 * step);
        }
    }
    return grads;
}

void sgd_step(MlpParams& params, const GradBundle& grads, double learning_rate) {
    auto p = params.blocks();
    auto g = grads.blocks();
    for (std::size_t b = 0; b < p.size(); ++b) {
        if (p[b].size() != g[b].size()) {
            throw DimensionError("gradient bundle does not match parameters");
        }
        for (std::size_t i = 0; i < p[b].size(); ++i) {
            p[b][i] -= learning_rate * g[b][i];
        }
    }
}

}  // namespace lire
