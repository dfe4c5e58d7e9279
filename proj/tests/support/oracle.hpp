#pragma once

// Independent scalar re-implementations used as test oracles. Nothing here
// calls the library's scoring, compression, or ranking code.

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

#include "lire/embeddings.hpp"
#include "lire/numerics.hpp"
#include "lire/retrieval.hpp"

namespace oracle {

using Rows = std::vector<std::vector<double>>;

inline Rows rows_of(const lire::Mat& m) {
    Rows out(m.rows(), std::vector<double>(m.cols()));
    for (std::size_t r = 0; r < m.rows(); ++r) {
        for (std::size_t c = 0; c < m.cols(); ++c) {
            out[r][c] = m(r, c);
        }
    }
    return out;
}

// Pre-activations of the hidden layer, for kink detection.
inline Rows pre_hidden(const lire::MlpParams& p, const Rows& x) {
    Rows out;
    for (const auto& row : x) {
        std::vector<double> h(p.hidden_dim());
        for (std::size_t j = 0; j < p.hidden_dim(); ++j) {
            double s = p.b1[j];
            for (std::size_t i = 0; i < row.size(); ++i) {
                s += row[i] * p.w1(i, j);
            }
            h[j] = s;
        }
        out.push_back(h);
    }
    return out;
}

inline Rows compress(const lire::MlpParams& p, bool normalize, const Rows& x) {
    Rows out;
    for (const auto& pre : pre_hidden(p, x)) {
        std::vector<double> y(p.out_dim());
        for (std::size_t o = 0; o < p.out_dim(); ++o) {
            double s = p.b2[o];
            for (std::size_t j = 0; j < pre.size(); ++j) {
                s += (pre[j] > 0 ? pre[j] : 0.0) * p.w2(j, o);
            }
            y[o] = s;
        }
        if (normalize) {
            double n = 0;
            for (double v : y) {
                n += v * v;
            }
            n = std::sqrt(n);
            if (n > 0) {
                for (double& v : y) {
                    v /= n;
                }
            }
        }
        out.push_back(y);
    }
    return out;
}

inline double inner(const std::vector<double>& a, const std::vector<double>& b) {
    double s = 0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        s += a[i] * b[i];
    }
    return s;
}

inline double max_sim(const Rows& q, const Rows& d) {
    double total = 0;
    for (const auto& qi : q) {
        double best = -INFINITY;
        for (const auto& dj : d) {
            best = std::max(best, inner(qi, dj));
        }
        total += best;
    }
    return total;
}

// Smallest gap between the best and second-best document token over all
// (query token, document) pairs; +inf when every document has one token.
inline double min_top2_gap(const Rows& q, const Rows& d) {
    double gap = INFINITY;
    for (const auto& qi : q) {
        double a = -INFINITY, b = -INFINITY;
        for (const auto& dj : d) {
            const double s = inner(qi, dj);
            if (s > a) {
                b = a;
                a = s;
            } else if (s > b) {
                b = s;
            }
        }
        if (std::isfinite(b)) {
            gap = std::min(gap, a - b);
        }
    }
    return gap;
}

// True when no ReLU pre-activation and no MaxSim top-2 gap lies within
// `margin` of a kink, so central differences see a smooth function.
inline bool smooth_at(const lire::TrainBatch& batch, const lire::MlpParams& p, bool normalize, double margin) {
    std::vector<Rows> qs, ds;
    auto scan = [&](const lire::Mat& tokens, std::vector<Rows>& out) {
        const Rows x = rows_of(tokens);
        for (const auto& pre : pre_hidden(p, x)) {
            for (double v : pre) {
                if (std::fabs(v) < margin) {
                    return false;
                }
            }
        }
        out.push_back(compress(p, normalize, x));
        return true;
    };
    for (const auto& q : batch.queries) {
        if (!scan(q.tokens, qs)) {
            return false;
        }
    }
    for (const auto& d : batch.positives) {
        if (!scan(d.tokens, ds)) {
            return false;
        }
    }
    for (const auto& q : qs) {
        for (const auto& d : ds) {
            if (min_top2_gap(q, d) < margin) {
                return false;
            }
        }
    }
    return true;
}

// Sum over queries of -log softmax(scores)[own positive], by direct evaluation.
inline double batch_loss(const lire::TrainBatch& batch, const lire::MlpParams& p, bool normalize) {
    std::vector<Rows> qs, ds;
    for (const auto& q : batch.queries) {
        qs.push_back(compress(p, normalize, rows_of(q.tokens)));
    }
    for (const auto& d : batch.positives) {
        ds.push_back(compress(p, normalize, rows_of(d.tokens)));
    }
    double loss = 0;
    for (std::size_t i = 0; i < qs.size(); ++i) {
        double z = 0;
        for (std::size_t j = 0; j < ds.size(); ++j) {
            z += std::exp(max_sim(qs[i], ds[j]));
        }
        loss += std::log(z) - max_sim(qs[i], ds[i]);
    }
    return loss;
}

struct Hit {
    std::string doc_id;
    double score;
};

// Exhaustive scan: score desc, doc_id asc.
inline std::vector<Hit> brute_force_topk(const Rows& q, const std::vector<lire::DocumentEmbedding>& docs,
                                         std::size_t k) {
    std::vector<Hit> all;
    for (const auto& d : docs) {
        all.push_back({d.doc_id, max_sim(q, rows_of(d.tokens))});
    }
    std::sort(all.begin(), all.end(), [](const Hit& a, const Hit& b) {
        return a.score != b.score ? a.score > b.score : a.doc_id < b.doc_id;
    });
    all.resize(std::min(k, all.size()));
    return all;
}

// Per-element |a - n| / max(|a|, |n|, floor).
inline double max_relative_error(const lire::GradBundle& a, const lire::GradBundle& n, double floor) {
    double worst = 0;
    const auto ba = a.blocks();
    const auto bn = n.blocks();
    for (std::size_t k = 0; k < 4; ++k) {
        for (std::size_t i = 0; i < ba[k].size(); ++i) {
            const double x = ba[k][i];
            const double y = bn[k][i];
            worst = std::max(worst, std::fabs(x - y) / std::max({std::fabs(x), std::fabs(y), floor}));
        }
    }
    return worst;
}

}  // namespace oracle
