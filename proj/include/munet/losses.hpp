#pragma once

#include <memory>
#include <vector>

#include "munet/ops.hpp"
#include "munet/sampling.hpp"
#include "munet/tensor.hpp"

namespace munet {

struct LossConfig {
    double sigma = 0.7;     // triplet margin
    double epsilon = 0.01;  // positive-pair slack
    double beta = 0.1;      // pair-term weight
    double lambda = 0.01;   // metric-loss weight
    std::vector<SamplingConfig> strategies;
    bool sep_mode = false;
    bool use_pair_term = false;

    void validate() const {
        if (!(sigma > 0)) throw std::invalid_argument("LossConfig: sigma must be > 0");
        if (epsilon < 0) throw std::invalid_argument("LossConfig: epsilon must be >= 0");
        if (beta < 0) throw std::invalid_argument("LossConfig: beta must be >= 0");
        if (lambda < 0) throw std::invalid_argument("LossConfig: lambda must be >= 0");
        for (const auto& s : strategies) s.validate();
    }
};

template <typename S>
struct LossBreakdown {
    double ce = 0;
    std::vector<double> metric_per_strategy;
    std::vector<std::int64_t> tuple_counts;
    double total = 0;
    Tensor<S> loss;  // graph node for backward
};

namespace detail {

template <typename S>
void check_tuple_bounds(const Tensor<S>& embedding, const TupleBatch& b) {
    const int N = embedding.dim(0), H = embedding.dim(2), W = embedding.dim(3);
    auto check = [&](const Coord& c, const char* role, size_t a) {
        if (b.image_index < 0 || b.image_index >= N || c.i < 0 || c.i >= H || c.j < 0 || c.j >= W)
            throw std::out_of_range(std::string("metric_loss: ") + role + " of anchor " +
                                    std::to_string(a) + " at (" + std::to_string(c.i) + "," +
                                    std::to_string(c.j) + ") image " +
                                    std::to_string(b.image_index) + " outside embedding " +
                                    shape_str(embedding.shape()));
    };
    for (size_t a = 0; a < b.anchors.size(); ++a) {
        check(b.anchors[a], "anchor", a);
        for (const auto& c : b.positives[a]) check(c, "positive", a);
        for (const auto& c : b.negatives[a]) check(c, "negative", a);
    }
}

// Index of the first feature channel of voxel (i,j) in image n; channels are
// separated by stride H*W.
template <typename S>
std::int64_t voxel_base(const Tensor<S>& e, int n, const Coord& c) {
    const std::int64_t d = e.dim(1);
    const std::int64_t plane = static_cast<std::int64_t>(e.dim(2)) * e.dim(3);
    return (static_cast<std::int64_t>(n) * d) * plane + static_cast<std::int64_t>(c.i) * e.dim(3) +
           c.j;
}

template <typename S>
S sqdist(const Tensor<S>& e, int n, const Coord& a, const Coord& b) {
    const int d = e.dim(1);
    const std::int64_t plane = static_cast<std::int64_t>(e.dim(2)) * e.dim(3);
    std::int64_t ia = voxel_base(e, n, a), ib = voxel_base(e, n, b);
    S acc = 0;
    for (int c = 0; c < d; ++c, ia += plane, ib += plane) {
        const S diff = e.array()[ia] - e.array()[ib];
        acc += diff * diff;
    }
    return acc;
}

// grad[x] += w * 2 * (e[x] - e[y]) over the channel fiber
template <typename S>
void add_sqdist_grad(const Tensor<S>& e, ArrayX<S>& grad, int n, const Coord& x, const Coord& y,
                     S w) {
    const int d = e.dim(1);
    const std::int64_t plane = static_cast<std::int64_t>(e.dim(2)) * e.dim(3);
    std::int64_t ix = voxel_base(e, n, x), iy = voxel_base(e, n, y);
    for (int c = 0; c < d; ++c, ix += plane, iy += plane)
        grad[ix] += w * S(2) * (e.array()[ix] - e.array()[iy]);
}

}  // namespace detail

/// Hinged tuple loss over voxel embeddings: mean over triplets of
/// max(0, d(a,p)^2 - d(a,n)^2 + sigma), plus beta * mean over pairs of
/// max(0, d(a,p)^2 - epsilon) when the pair term is enabled. Triplets are
/// the per-anchor cross product of its positives and negatives. An empty
/// tuple set yields exact zero with zero gradient.
template <typename S>
Tensor<S> metric_loss(const Tensor<S>& embedding, const std::vector<TupleBatch>& tuples, double sigma,
                      double epsilon, double beta, bool use_pair_term) {
    detail::check_4d(embedding.shape(), "metric_loss embedding");
    std::int64_t n_triplets = 0, n_pairs = 0;
    for (const auto& b : tuples) {
        detail::check_tuple_bounds(embedding, b);
        n_triplets += b.triplet_count();
        n_pairs += b.pair_count();
    }
    if (n_triplets == 0) return Tensor<S>::make_op(Shape{1}, ArrayX<S>::Zero(1), {embedding}, [] {});

    S tri_sum = 0, pair_sum = 0;
    for (const auto& b : tuples) {
        const int n = b.image_index;
        for (size_t a = 0; a < b.anchors.size(); ++a) {
            const Coord& anc = b.anchors[a];
            for (const auto& p : b.positives[a]) {
                const S dap = detail::sqdist(embedding, n, anc, p);
                if (use_pair_term) pair_sum += std::max(S(0), dap - static_cast<S>(epsilon));
                for (const auto& ng : b.negatives[a]) {
                    const S dan = detail::sqdist(embedding, n, anc, ng);
                    tri_sum += std::max(S(0), dap - dan + static_cast<S>(sigma));
                }
            }
        }
    }
    S value = tri_sum / static_cast<S>(n_triplets);
    if (use_pair_term && n_pairs > 0)
        value += static_cast<S>(beta) * (pair_sum / static_cast<S>(n_pairs));

    Tensor<S> e = embedding;
    auto tup = std::make_shared<std::vector<TupleBatch>>(tuples);
    ArrayX<S> out(1);
    out[0] = value;
    auto result = Tensor<S>::make_op(Shape{1}, std::move(out), {embedding}, nullptr);
    auto rnode = result.node();
    if (rnode->requires_grad) {
        TensorNode<S>* rn = rnode.get();
        rnode->backward_fn = [e, rn, tup, sigma, epsilon, beta, use_pair_term, n_triplets,
                              n_pairs]() mutable {
            e.node()->ensure_grad();
            const S up = rn->grad[0];
            const S wt = up / static_cast<S>(n_triplets);
            const S wp = (use_pair_term && n_pairs > 0)
                             ? up * static_cast<S>(beta) / static_cast<S>(n_pairs)
                             : S(0);
            ArrayX<S>& g = e.node()->grad;
            for (const auto& b : *tup) {
                const int n = b.image_index;
                for (size_t a = 0; a < b.anchors.size(); ++a) {
                    const Coord& anc = b.anchors[a];
                    for (const auto& p : b.positives[a]) {
                        const S dap = detail::sqdist(e, n, anc, p);
                        if (use_pair_term && dap - static_cast<S>(epsilon) > 0) {
                            detail::add_sqdist_grad(e, g, n, anc, p, wp);
                            detail::add_sqdist_grad(e, g, n, p, anc, wp);
                        }
                        for (const auto& ng : b.negatives[a]) {
                            const S dan = detail::sqdist(e, n, anc, ng);
                            if (dap - dan + static_cast<S>(sigma) > 0) {
                                detail::add_sqdist_grad(e, g, n, anc, p, wt);
                                detail::add_sqdist_grad(e, g, n, p, anc, wt);
                                detail::add_sqdist_grad(e, g, n, anc, ng, -wt);
                                detail::add_sqdist_grad(e, g, n, ng, anc, -wt);
                            }
                        }
                    }
                }
            }
        };
    }
    return result;
}

/// Combined objective: cross-entropy plus lambda times the sum of per-
/// strategy metric losses, kept in one graph so a single backward covers
/// both paths. tuple_batches_per_strategy[t] holds the batches of the t-th
/// configured strategy (one TupleBatch per image).
template <typename S>
LossBreakdown<S> total_loss(const Tensor<S>& logits, const std::vector<std::uint8_t>& labels,
                            const Tensor<S>& embedding,
                            const std::vector<std::vector<TupleBatch>>& tuple_batches_per_strategy,
                            const LossConfig& cfg) {
    cfg.validate();
    if (tuple_batches_per_strategy.size() != cfg.strategies.size())
        throw std::invalid_argument("total_loss: one batch list per configured strategy expected");
    LossBreakdown<S> out;
    Tensor<S> ce = softmax_cross_entropy(logits, labels);
    out.ce = static_cast<double>(ce[0]);

    Tensor<S> msum;
    for (size_t t = 0; t < tuple_batches_per_strategy.size(); ++t) {
        Tensor<S> mt = metric_loss(embedding, tuple_batches_per_strategy[t], cfg.sigma, cfg.epsilon,
                                   cfg.beta, cfg.use_pair_term);
        out.metric_per_strategy.push_back(static_cast<double>(mt[0]));
        std::int64_t count = 0;
        for (const auto& b : tuple_batches_per_strategy[t]) count += b.triplet_count();
        out.tuple_counts.push_back(count);
        msum = msum.defined() ? add(msum, mt) : mt;
    }

    if (msum.defined()) {
        out.loss = add(ce, scale(msum, static_cast<S>(cfg.lambda)));
    } else {
        out.loss = ce;
    }
    out.total = static_cast<double>(out.loss[0]);
    return out;
}

}  // namespace munet
