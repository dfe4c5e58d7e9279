#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <initializer_list>
#include <span>
#include <vector>

namespace lire {

// Row-major dense matrix of doubles. Entries are finite on construction.
class Mat {
public:
    Mat() = default;
    Mat(std::size_t rows, std::size_t cols);
    Mat(std::size_t rows, std::size_t cols, std::vector<double> data);

    static Mat from_rows(std::initializer_list<std::initializer_list<double>> rows);

    std::size_t rows() const noexcept { return rows_; }
    std::size_t cols() const noexcept { return cols_; }
    std::size_t size() const noexcept { return data_.size(); }
    bool empty() const noexcept { return rows_ == 0; }

    double& operator()(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }
    double operator()(std::size_t r, std::size_t c) const { return data_[r * cols_ + c]; }

    std::span<double> row(std::size_t r) { return {data_.data() + r * cols_, cols_}; }
    std::span<const double> row(std::size_t r) const { return {data_.data() + r * cols_, cols_}; }

    std::span<double> values() noexcept { return data_; }
    std::span<const double> values() const noexcept { return data_; }

    // Appends the rows of `other`; column counts must agree unless *this is empty.
    void append_rows(const Mat& other);

    bool operator==(const Mat& other) const = default;

private:
    std::size_t rows_ = 0;
    std::size_t cols_ = 0;
    std::vector<double> data_;
};

double dot(std::span<const double> a, std::span<const double> b);

// Each nonzero row scaled to unit Euclidean norm; zero rows pass through.
Mat l2_normalize_rows(const Mat& x);

// Deterministic, platform-independent generator (splitmix64).
class Rng {
public:
    explicit Rng(std::uint64_t seed) : state_(seed) {}

    std::uint64_t next_u64();
    // Uniform in [0, 1) with 53 bits of resolution.
    double uniform01();
    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform01(); }
    // Unbiased integer in [0, n); n > 0.
    std::uint64_t uniform_index(std::uint64_t n);
    // Approximately standard normal (Box-Muller on uniform01).
    double normal();

private:
    std::uint64_t state_;
};

std::uint64_t fnv1a64(std::span<const unsigned char> bytes, std::uint64_t basis = 0xcbf29ce484222325ULL);

// Two-layer perceptron h -> m -> h' with a ReLU between the layers.
struct MlpParams {
    Mat w1;                  // h x m
    std::vector<double> b1;  // m
    Mat w2;                  // m x h'
    std::vector<double> b2;  // h'

    std::size_t in_dim() const noexcept { return w1.rows(); }
    std::size_t hidden_dim() const noexcept { return w1.cols(); }
    std::size_t out_dim() const noexcept { return w2.cols(); }

    // Throws DimensionError on inconsistent shapes or h' > h.
    void validate() const;

    std::array<std::span<double>, 4> blocks();
    std::array<std::span<const double>, 4> blocks() const;
    std::size_t parameter_count() const;

    bool operator==(const MlpParams&) const = default;
};

// Xavier-uniform weights, zero biases.
MlpParams init_mlp(std::size_t in_dim, std::size_t hidden_dim, std::size_t out_dim, std::uint64_t seed);

// Hash of shapes and values; used to detect a cache paired with the wrong parameters.
std::uint64_t fingerprint(const MlpParams& params);

struct GradBundle {
    Mat dw1;
    std::vector<double> db1;
    Mat dw2;
    std::vector<double> db2;

    static GradBundle zeros_like(const MlpParams& params);

    std::array<std::span<double>, 4> blocks();
    std::array<std::span<const double>, 4> blocks() const;

    GradBundle& operator+=(const GradBundle& other);
    double squared_norm() const;
};

struct MlpCache {
    Mat input;        // n x h
    Mat pre_hidden;   // n x m, before ReLU
    Mat hidden;       // n x m, after ReLU
    std::uint64_t params_fingerprint = 0;
};

struct MlpOutput {
    Mat y;
    MlpCache cache;
};

struct MlpBackward {
    Mat dx;
    GradBundle grads;
};

// Y = ReLU(X W1 + b1) W2 + b2, row-wise.
MlpOutput mlp_forward(const MlpParams& params, const Mat& x);

// Exact gradients of mlp_forward with ReLU'(0) = 0.
MlpBackward mlp_backward(const MlpParams& params, const MlpCache& cache, const Mat& dy);

// Central differences (f(p + step) - f(p - step)) / 2 step for every parameter.
GradBundle finite_diff_grad(const std::function<double(const MlpParams&)>& loss_fn,
                            const MlpParams& params, double step);

// Applies params -= learning_rate * grads.
void sgd_step(MlpParams& params, const GradBundle& grads, double learning_rate);

}  // namespace lire
