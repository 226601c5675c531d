#pragma once

#include <algorithm>
#include <functional>

#include "munet/tensor.hpp"

namespace munet {

struct GradCheckOptions {
    double eps = 1e-5;
    // When a tensor has more elements than this, only a seeded random subset
    // is perturbed. <= 0 means check every element.
    std::int64_t max_per_tensor = -1;
    std::uint64_t sample_seed = 0;
};

/// Central finite differences against the analytic gradients of a scalar
/// closure. Returns the max relative error over all checked elements,
/// rel = |a - n| / max(|a|, |n|, 1e-3). Meant to run in 64-bit.
template <typename S>
double gradient_check(const std::function<Tensor<S>()>& closure, std::vector<Tensor<S>> inputs,
                      GradCheckOptions opt = {}) {
    for (auto& t : inputs) {
        t.set_requires_grad(true);
        t.zero_grad();
    }
    Tensor<S> out = closure();
    out.backward();
    std::vector<ArrayX<S>> analytic;
    analytic.reserve(inputs.size());
    for (auto& t : inputs) analytic.push_back(t.grad());

    double max_rel = 0.0;
    std::mt19937_64 rng(opt.sample_seed);
    for (size_t ti = 0; ti < inputs.size(); ++ti) {
        auto& t = inputs[ti];
        std::vector<std::int64_t> idx;
        if (opt.max_per_tensor > 0 && t.size() > opt.max_per_tensor) {
            std::uniform_int_distribution<std::int64_t> d(0, t.size() - 1);
            for (std::int64_t i = 0; i < opt.max_per_tensor; ++i) idx.push_back(d(rng));
        } else {
            idx.resize(static_cast<size_t>(t.size()));
            std::iota(idx.begin(), idx.end(), 0);
        }
        for (std::int64_t i : idx) {
            const S orig = t[i];
            t[i] = orig + static_cast<S>(opt.eps);
            const double fp = static_cast<double>(closure()[0]);
            t[i] = orig - static_cast<S>(opt.eps);
            const double fm = static_cast<double>(closure()[0]);
            t[i] = orig;
            const double numeric = (fp - fm) / (2.0 * opt.eps);
            const double a = static_cast<double>(analytic[ti][i]);
            const double denom = std::max({std::abs(a), std::abs(numeric), 1e-3});
            max_rel = std::max(max_rel, std::abs(a - numeric) / denom);
        }
    }
    return max_rel;
}

}  // namespace munet
