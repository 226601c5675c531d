#pragma once

#include <map>
#include <string>
#include <unordered_map>
#include <vector>

#include "munet/ops.hpp"
#include "munet/tensor.hpp"

namespace munet {

/// Declarative description of an encoder-decoder segmentation net. The
/// default values give the full-width MetricUNet; the detection net uses a
/// narrower instance of the same topology.
struct NetworkSpec {
    std::vector<int> encoder_channels{32, 64, 128, 256};
    std::vector<int> decoder_channels{128, 64, 32};
    int in_channels = 3;
    int num_classes = 2;
    int head_channels = 32;
    std::string variant = "metric";  // "baseline" | "metric"

    int levels() const { return static_cast<int>(decoder_channels.size()); }
    int spatial_divisor() const { return 1 << levels(); }

    void validate() const {
        if (encoder_channels.size() != decoder_channels.size() + 1)
            throw std::invalid_argument(
                "NetworkSpec: encoder_channels must be one longer than decoder_channels");
        for (int c : encoder_channels)
            if (c <= 0) throw std::invalid_argument("NetworkSpec: non-positive encoder channels");
        for (int c : decoder_channels)
            if (c <= 0) throw std::invalid_argument("NetworkSpec: non-positive decoder channels");
        if (in_channels <= 0 || head_channels <= 0)
            throw std::invalid_argument("NetworkSpec: non-positive channel count");
        if (num_classes != 2) throw std::invalid_argument("NetworkSpec: num_classes must be 2");
        if (variant != "metric" && variant != "baseline")
            throw std::invalid_argument("NetworkSpec: unknown variant '" + variant + "'");
    }
};

template <typename S>
struct BNBuffers {
    Tensor<S> running_mean;
    Tensor<S> running_var;
};

enum class Mode { train, eval };

/// Built network: named parameters plus batch-norm running statistics.
template <typename S>
struct ModelState {
    NetworkSpec spec;
    std::vector<Parameter<S>> params;
    std::map<std::string, BNBuffers<S>> bn;  // ordered, for stable serialization
    Mode mode = Mode::train;

    Tensor<S>& param(const std::string& name) {
        auto it = index_.find(name);
        if (it == index_.end()) throw std::out_of_range("ModelState: no parameter '" + name + "'");
        return params[it->second].tensor;
    }
    const Tensor<S>& param(const std::string& name) const {
        auto it = index_.find(name);
        if (it == index_.end()) throw std::out_of_range("ModelState: no parameter '" + name + "'");
        return params[it->second].tensor;
    }

    void add_param(const std::string& name, Tensor<S> t) {
        if (index_.count(name)) throw std::invalid_argument("ModelState: duplicate parameter '" + name + "'");
        index_[name] = params.size();
        params.push_back(Parameter<S>{std::move(t), name, true});
    }

    /// Head parameters are the segmentation sub-network; everything else is
    /// the trunk (ends at the embedding layer).
    static bool is_head_param(const std::string& name) { return name.rfind("head", 0) == 0; }

    ModelState clone() const {
        ModelState c;
        c.spec = spec;
        c.mode = mode;
        for (const auto& p : params) c.add_param(p.name, p.tensor.clone());
        for (const auto& [k, v] : bn)
            c.bn[k] = BNBuffers<S>{v.running_mean.clone(), v.running_var.clone()};
        return c;
    }

private:
    std::unordered_map<std::string, size_t> index_;
};

template <typename S>
struct ForwardOutput {
    Tensor<S> logits;             // [N,2,H,W]
    Tensor<S> embedding;          // [N,d,H,W], post-ReLU of the last decoder conv
    std::vector<double> prob;     // foreground softmax probability, [N,H,W] row-major
};

namespace detail {

template <typename S>
void add_conv(ModelState<S>& m, const std::string& name, int cin, int cout, int k,
              std::mt19937_64& rng) {
    const S bound = static_cast<S>(1.0 / std::sqrt(static_cast<double>(cin) * k * k));
    m.add_param(name + ".w", Tensor<S>::uniform(Shape{cout, cin, k, k}, -bound, bound, rng));
    m.add_param(name + ".b", Tensor<S>::zeros(Shape{cout}));
}

template <typename S>
void add_conv_bn(ModelState<S>& m, const std::string& name, int cin, int cout,
                 std::mt19937_64& rng) {
    add_conv(m, name, cin, cout, 3, rng);
    m.add_param(name + ".gamma", Tensor<S>::full(Shape{cout}, S(1)));
    m.add_param(name + ".beta", Tensor<S>::zeros(Shape{cout}));
    m.bn[name] = BNBuffers<S>{Tensor<S>::zeros(Shape{cout}), Tensor<S>::full(Shape{cout}, S(1))};
}

template <typename S>
void add_tconv(ModelState<S>& m, const std::string& name, int cin, int cout,
               std::mt19937_64& rng) {
    const S bound = static_cast<S>(1.0 / std::sqrt(static_cast<double>(cin) * 4));
    m.add_param(name + ".w", Tensor<S>::uniform(Shape{cin, cout, 2, 2}, -bound, bound, rng));
}

}  // namespace detail

/// Symmetric UNet per the resolved architecture: L encoder blocks of two
/// 3x3 conv-bn-relu plus pooling, a bottleneck conv pair, L decoder blocks
/// of tconv + skip concat + two conv-bn-relu, then a conv-bn-relu head and
/// a 1x1 projection to two classes.
template <typename S>
ModelState<S> build_metric_unet(const NetworkSpec& spec, std::uint64_t seed = 0) {
    spec.validate();
    ModelState<S> m;
    m.spec = spec;
    std::mt19937_64 rng(seed);
    const int L = spec.levels();
    int cur = spec.in_channels;
    for (int l = 0; l < L; ++l) {
        const int c = spec.encoder_channels[static_cast<size_t>(l)];
        detail::add_conv_bn(m, "enc" + std::to_string(l + 1) + "a", cur, c, rng);
        detail::add_conv_bn(m, "enc" + std::to_string(l + 1) + "b", c, c, rng);
        cur = c;
    }
    const int cb = spec.encoder_channels.back();
    detail::add_conv_bn(m, "bott_a", cur, cb, rng);
    detail::add_conv_bn(m, "bott_b", cb, cb, rng);
    cur = cb;
    for (int l = 0; l < L; ++l) {
        const int c = spec.decoder_channels[static_cast<size_t>(l)];
        const int skip = spec.encoder_channels[static_cast<size_t>(L - 1 - l)];
        detail::add_tconv(m, "up" + std::to_string(l + 1), cur, c, rng);
        detail::add_conv_bn(m, "dec" + std::to_string(l + 1) + "a", c + skip, c, rng);
        detail::add_conv_bn(m, "dec" + std::to_string(l + 1) + "b", c, c, rng);
        cur = c;
    }
    detail::add_conv_bn(m, "head_a", cur, spec.head_channels, rng);
    detail::add_conv(m, "head_b", spec.head_channels, spec.num_classes, 1, rng);
    return m;
}

/// Stage-1 detector: same topology, widest layer capped at 32 filters,
/// 5-slice input stacks.
inline NetworkSpec detection_spec() {
    NetworkSpec s;
    s.encoder_channels = {4, 8, 16, 32};
    s.decoder_channels = {16, 8, 4};
    s.in_channels = 5;
    s.head_channels = 4;
    s.variant = "baseline";
    return s;
}

template <typename S>
ModelState<S> build_detection_unet(const NetworkSpec& spec, std::uint64_t seed = 0) {
    if (spec.in_channels != 5)
        throw std::invalid_argument("build_detection_unet: stage-1 patches stack 5 slices");
    int widest = 0;
    for (int c : spec.encoder_channels) widest = std::max(widest, c);
    if (widest > 32)
        throw std::invalid_argument("build_detection_unet: widest layer must be capped at 32");
    return build_metric_unet<S>(spec, seed);
}

template <typename S>
std::int64_t parameter_count(const ModelState<S>& m) {
    std::int64_t n = 0;
    for (const auto& p : m.params) n += p.tensor.size();
    return n;
}

namespace detail {

template <typename S>
Tensor<S> conv_bn_relu(ModelState<S>& m, const std::string& name, const Tensor<S>& x) {
    auto& b = m.bn.at(name);
    auto y = conv2d(x, m.param(name + ".w"), m.param(name + ".b"), 1, 1);
    y = batchnorm2d(y, m.param(name + ".gamma"), m.param(name + ".beta"), b.running_mean,
                    b.running_var, m.mode == Mode::train ? BNMode::train : BNMode::eval);
    return relu(y);
}

}  // namespace detail

/// Forward pass exposing both the segmentation logits and the voxel
/// embedding map. With sep_mode the head consumes a detached embedding, so
/// cross-entropy gradients stop at the head boundary.
template <typename S>
ForwardOutput<S> forward(ModelState<S>& m, const Tensor<S>& patch, bool sep_mode = false) {
    if (patch.ndim() != 4)
        throw std::invalid_argument("forward: expected NCHW input, got " + shape_str(patch.shape()));
    const int div = m.spec.spatial_divisor();
    if (patch.dim(2) % div != 0 || patch.dim(3) % div != 0)
        throw std::invalid_argument("forward: spatial dims must be divisible by " +
                                    std::to_string(div) + ", got " + shape_str(patch.shape()));
    if (patch.dim(1) != m.spec.in_channels)
        throw std::invalid_argument("forward: expected " + std::to_string(m.spec.in_channels) +
                                    " input channels, got " + std::to_string(patch.dim(1)));

    const int L = m.spec.levels();
    std::vector<Tensor<S>> skips;
    Tensor<S> x = patch;
    for (int l = 0; l < L; ++l) {
        x = detail::conv_bn_relu(m, "enc" + std::to_string(l + 1) + "a", x);
        x = detail::conv_bn_relu(m, "enc" + std::to_string(l + 1) + "b", x);
        skips.push_back(x);
        x = maxpool2d(x);
    }
    x = detail::conv_bn_relu(m, "bott_a", x);
    x = detail::conv_bn_relu(m, "bott_b", x);
    for (int l = 0; l < L; ++l) {
        x = transposed_conv2d(x, m.param("up" + std::to_string(l + 1) + ".w"));
        x = concat(x, skips[static_cast<size_t>(L - 1 - l)], 1);
        x = detail::conv_bn_relu(m, "dec" + std::to_string(l + 1) + "a", x);
        x = detail::conv_bn_relu(m, "dec" + std::to_string(l + 1) + "b", x);
    }
    ForwardOutput<S> out;
    out.embedding = x;
    Tensor<S> h = sep_mode ? x.detach() : x;
    h = detail::conv_bn_relu(m, "head_a", h);
    out.logits = conv2d(h, m.param("head_b.w"), m.param("head_b.b"), 1, 0);
    out.prob = softmax_prob_fg(out.logits);
    return out;
}

}  // namespace munet
