#include "munet/sampling.hpp"

#include <algorithm>
#include <fstream>
#include <random>
#include <stdexcept>

namespace munet {

std::string strategy_name(Strategy s) {
    switch (s) {
        case Strategy::random: return "random";
        case Strategy::focal_hard: return "focal_hard";
        case Strategy::contour: return "contour";
    }
    return "?";
}

Strategy strategy_from_name(const std::string& name) {
    if (name == "random") return Strategy::random;
    if (name == "focal_hard") return Strategy::focal_hard;
    if (name == "contour") return Strategy::contour;
    throw std::invalid_argument("unknown sampling strategy '" + name + "'");
}

void SamplingConfig::validate() const {
    if (k < 0) throw std::invalid_argument("SamplingConfig: k must be >= 0");
    if (m < 1) throw std::invalid_argument("SamplingConfig: m must be >= 1");
    if (!(tau > 0.0 && tau < 1.0)) throw std::invalid_argument("SamplingConfig: tau must be in (0,1)");
}

std::int64_t TupleBatch::triplet_count() const {
    std::int64_t n = 0;
    for (size_t a = 0; a < anchors.size(); ++a)
        n += static_cast<std::int64_t>(positives[a].size()) *
             static_cast<std::int64_t>(negatives[a].size());
    return n;
}

std::int64_t TupleBatch::pair_count() const {
    std::int64_t n = 0;
    for (const auto& p : positives) n += static_cast<std::int64_t>(p.size());
    return n;
}

namespace {

std::vector<Coord> where(const LabelMap& labels, std::uint8_t value) {
    std::vector<Coord> out;
    for (int i = 0; i < labels.h; ++i)
        for (int j = 0; j < labels.w; ++j)
            if (labels.at(i, j) == value) out.push_back({i, j});
    return out;
}

// min(k, pool) draws without replacement, via partial Fisher-Yates.
std::vector<Coord> draw_without_replacement(std::vector<Coord> pool, int k, std::mt19937_64& rng) {
    const int take = std::min<int>(k, static_cast<int>(pool.size()));
    for (int i = 0; i < take; ++i) {
        std::uniform_int_distribution<size_t> d(static_cast<size_t>(i), pool.size() - 1);
        std::swap(pool[static_cast<size_t>(i)], pool[d(rng)]);
    }
    pool.resize(static_cast<size_t>(take));
    return pool;
}

// m uniform draws; the anchor stands in for itself when it is the only
// element of the pool, and draws landing on the anchor shift to the next slot.
std::vector<Coord> draw_partners(const std::vector<Coord>& pool, const Coord& anchor, int m,
                                 bool exclude_anchor, std::mt19937_64& rng) {
    std::vector<Coord> out;
    out.reserve(static_cast<size_t>(m));
    std::uniform_int_distribution<size_t> d(0, pool.size() - 1);
    for (int t = 0; t < m; ++t) {
        size_t idx = d(rng);
        if (exclude_anchor && pool[idx] == anchor) {
            if (pool.size() == 1) {
                out.push_back(anchor);  // degenerate pool: anchor is its own positive
                continue;
            }
            idx = (idx + 1) % pool.size();
        }
        out.push_back(pool[idx]);
    }
    return out;
}

TupleBatch build_batch(const std::vector<Coord>& anchor_pool, const std::vector<Coord>& positive_pool,
                       const std::vector<Coord>& negative_pool, const SamplingConfig& cfg) {
    cfg.validate();
    TupleBatch batch;
    if (anchor_pool.empty() || positive_pool.empty() || negative_pool.empty() || cfg.k == 0)
        return batch;
    std::mt19937_64 rng(cfg.seed);
    batch.anchors = draw_without_replacement(anchor_pool, cfg.k, rng);
    for (const auto& a : batch.anchors) {
        batch.positives.push_back(draw_partners(positive_pool, a, cfg.m, true, rng));
        batch.negatives.push_back(draw_partners(negative_pool, a, cfg.m, false, rng));
    }
    return batch;
}

void check_prob(const ProbMap& prob, const LabelMap& labels) {
    if (prob.h != labels.h || prob.w != labels.w)
        throw std::invalid_argument("sampling: prob/label shape mismatch");
    for (double p : prob.v)
        if (!(p >= 0.0 && p <= 1.0))
            throw std::invalid_argument("sampling: probability outside [0,1]");
}

}  // namespace

TupleBatch sample_random(const LabelMap& labels, const SamplingConfig& cfg) {
    const auto pos = where(labels, 1);
    const auto neg = where(labels, 0);
    return build_batch(pos, pos, neg, cfg);
}

std::vector<std::uint8_t> hard_sample_mask(const ProbMap& prob, const LabelMap& labels, double tau) {
    check_prob(prob, labels);
    std::vector<std::uint8_t> mask(prob.v.size());
    for (size_t i = 0; i < prob.v.size(); ++i)
        mask[i] = std::abs(prob.v[i] - static_cast<double>(labels.v[i])) > tau ? 1 : 0;
    return mask;
}

TupleBatch sample_focal_hard(const ProbMap& prob, const LabelMap& labels, const SamplingConfig& cfg) {
    const auto hard = hard_sample_mask(prob, labels, cfg.tau);
    std::vector<Coord> anchor_pool;
    for (int i = 0; i < labels.h; ++i)
        for (int j = 0; j < labels.w; ++j)
            if (labels.at(i, j) == 1 && hard[static_cast<size_t>(i) * labels.w + j])
                anchor_pool.push_back({i, j});
    const auto pos = where(labels, 1);
    const auto neg = where(labels, 0);
    return build_batch(anchor_pool, pos, neg, cfg);
}

std::vector<Coord> extract_contour(const LabelMap& labels) {
    std::vector<Coord> out;
    auto bg = [&](int i, int j) {
        if (i < 0 || i >= labels.h || j < 0 || j >= labels.w) return true;
        return labels.at(i, j) == 0;
    };
    for (int i = 0; i < labels.h; ++i)
        for (int j = 0; j < labels.w; ++j)
            if (labels.at(i, j) == 1 &&
                (bg(i - 1, j) || bg(i + 1, j) || bg(i, j - 1) || bg(i, j + 1)))
                out.push_back({i, j});
    return out;
}

TupleBatch sample_contour(const LabelMap& labels, const SamplingConfig& cfg) {
    const auto contour = extract_contour(labels);
    const auto neg = where(labels, 0);
    return build_batch(contour, contour, neg, cfg);
}

TupleBatch sample_tuples(const ProbMap& prob, const LabelMap& labels, const SamplingConfig& cfg) {
    switch (cfg.strategy) {
        case Strategy::random: return sample_random(labels, cfg);
        case Strategy::focal_hard: return sample_focal_hard(prob, labels, cfg);
        case Strategy::contour: return sample_contour(labels, cfg);
    }
    throw std::invalid_argument("sample_tuples: bad strategy");
}

void write_tuples_csv(const std::string& path, const std::vector<TupleBatch>& batches) {
    std::ofstream os(path);
    if (!os) throw std::runtime_error("write_tuples_csv: cannot open " + path);
    os << "image_index,i,j,role\n";
    for (const auto& b : batches)
        for (size_t a = 0; a < b.anchors.size(); ++a) {
            os << b.image_index << "," << b.anchors[a].i << "," << b.anchors[a].j << ",anchor\n";
            for (const auto& p : b.positives[a])
                os << b.image_index << "," << p.i << "," << p.j << ",positive\n";
            for (const auto& n : b.negatives[a])
                os << b.image_index << "," << n.i << "," << n.j << ",negative\n";
        }
}

}  // namespace munet
