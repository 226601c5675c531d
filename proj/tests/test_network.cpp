#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <random>

#include "munet/network.hpp"
#include "munet/ops.hpp"

using namespace munet;

namespace {

Tensorf rand_input(Shape s, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    return Tensorf::uniform(std::move(s), 0.f, 1.f, rng);
}

std::vector<std::uint8_t> rand_labels(size_t n, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::vector<std::uint8_t> l(n);
    for (auto& v : l) v = static_cast<std::uint8_t>(rng() & 1);
    return l;
}

}  // namespace

TEST_CASE("forward produces logits, embedding and probabilities of the right shapes") {
    auto m = build_metric_unet<float>(NetworkSpec{}, 0);
    Tensorf x = rand_input(Shape{1, 3, 64, 64}, 1);
    auto out = forward(m, x);
    CHECK(out.logits.shape() == Shape{1, 2, 64, 64});
    CHECK(out.embedding.shape() == Shape{1, 32, 64, 64});
    CHECK(out.prob.size() == 64u * 64u);
    for (double p : out.prob) {
        CHECK(p >= 0.0);
        CHECK(p <= 1.0);
    }
}

TEST_CASE("the embedding is post-ReLU, hence non-negative") {
    auto m = build_metric_unet<float>(NetworkSpec{}, 3);
    auto out = forward(m, rand_input(Shape{1, 3, 16, 16}, 4));
    for (std::int64_t i = 0; i < out.embedding.size(); ++i) CHECK(out.embedding[i] >= 0.f);
}

TEST_CASE("parameter count is frozen and in the right ballpark") {
    auto m = build_metric_unet<float>(NetworkSpec{}, 0);
    const std::int64_t n = parameter_count(m);
    CHECK(n == 1937538);
    // same order of magnitude as the published 3.28M figure
    CHECK(n >= 1000000);
    CHECK(n < 10000000);
}

TEST_CASE("the detection net is much smaller than the segmentation net") {
    auto det = build_detection_unet<float>(detection_spec(), 0);
    auto seg = build_metric_unet<float>(NetworkSpec{}, 0);
    CHECK(parameter_count(det) < parameter_count(seg) / 50);
    int widest = 0;
    for (const auto& p : det.params) widest = std::max(widest, p.tensor.dim(0));
    CHECK(widest <= 32 * 4);  // tconv weights are [Cin,Cout,2,2]
}

TEST_CASE("build_detection_unet validates its constraints") {
    NetworkSpec s = detection_spec();
    s.in_channels = 3;
    CHECK_THROWS_AS(build_detection_unet<float>(s), std::invalid_argument);
    NetworkSpec wide = detection_spec();
    wide.encoder_channels = {4, 8, 16, 64};
    CHECK_THROWS_AS(build_detection_unet<float>(wide), std::invalid_argument);
}

TEST_CASE("seeded builds are reproducible and seeds matter") {
    auto a = build_metric_unet<float>(NetworkSpec{}, 42);
    auto b = build_metric_unet<float>(NetworkSpec{}, 42);
    auto c = build_metric_unet<float>(NetworkSpec{}, 43);
    REQUIRE(a.params.size() == b.params.size());
    bool any_diff = false;
    for (size_t i = 0; i < a.params.size(); ++i) {
        for (std::int64_t j = 0; j < a.params[i].tensor.size(); ++j) {
            REQUIRE(a.params[i].tensor[j] == b.params[i].tensor[j]);
            any_diff = any_diff || a.params[i].tensor[j] != c.params[i].tensor[j];
        }
    }
    CHECK(any_diff);
}

TEST_CASE("gradient reaches every parameter tensor") {
    auto m = build_metric_unet<float>(NetworkSpec{}, 5);
    zero_grads(m.params);
    for (auto& p : m.params) p.tensor.set_requires_grad(true);
    Tensorf x = rand_input(Shape{2, 3, 16, 16}, 6);
    auto out = forward(m, x);
    auto loss = softmax_cross_entropy(out.logits, rand_labels(2 * 16 * 16, 7));
    loss.backward();
    for (const auto& p : m.params) {
        // a conv bias feeding a batchnorm gets zero gradient analytically
        // (the normalization subtracts the mean), so skip those
        const bool bn_bias = p.name.size() > 2 && p.name.rfind(".b") == p.name.size() - 2 &&
                             p.name != "head_b.b";
        if (bn_bias) continue;
        bool nonzero = false;
        for (std::int64_t i = 0; i < p.tensor.size() && !nonzero; ++i)
            nonzero = p.tensor.grad()[i] != 0.f;
        INFO("parameter ", p.name);
        CHECK(nonzero);
    }
}

TEST_CASE("zeroed head projection yields exactly uniform probabilities") {
    auto m = build_metric_unet<float>(NetworkSpec{}, 8);
    m.param("head_b.w").array().setZero();
    m.param("head_b.b").array().setZero();
    auto out = forward(m, rand_input(Shape{1, 3, 16, 16}, 9));
    for (double p : out.prob) CHECK(p == 0.5);
}

TEST_CASE("forward rejects inputs that break the divisibility constraint") {
    auto m = build_metric_unet<float>(NetworkSpec{}, 0);
    try {
        forward(m, Tensorf::zeros(Shape{1, 3, 20, 20}));
        FAIL("expected invalid_argument");
    } catch (const std::invalid_argument& e) {
        CHECK(std::string(e.what()).find("divisible") != std::string::npos);
    }
    CHECK_THROWS_AS(forward(m, Tensorf::zeros(Shape{1, 4, 16, 16})), std::invalid_argument);
    CHECK_THROWS_AS(forward(m, Tensorf::zeros(Shape{3, 16, 16})), std::invalid_argument);
}

TEST_CASE("sep mode stops cross-entropy gradients at the head boundary") {
    auto m = build_metric_unet<float>(NetworkSpec{}, 10);
    zero_grads(m.params);
    for (auto& p : m.params) p.tensor.set_requires_grad(true);
    auto out = forward(m, rand_input(Shape{1, 3, 16, 16}, 11), /*sep_mode=*/true);
    softmax_cross_entropy(out.logits, rand_labels(16 * 16, 12)).backward();
    for (const auto& p : m.params) {
        if (p.name == "head_a.b") continue;  // zero analytically, see above
        bool nonzero = false;
        for (std::int64_t i = 0; i < p.tensor.size() && !nonzero; ++i)
            nonzero = p.tensor.grad()[i] != 0.f;
        INFO("parameter ", p.name);
        if (ModelState<float>::is_head_param(p.name))
            CHECK(nonzero);
        else
            CHECK_FALSE(nonzero);
    }
}

TEST_CASE("is_head_param splits the head from the trunk") {
    CHECK(ModelState<float>::is_head_param("head_a.w"));
    CHECK(ModelState<float>::is_head_param("head_b.b"));
    CHECK_FALSE(ModelState<float>::is_head_param("dec3b.w"));
    CHECK_FALSE(ModelState<float>::is_head_param("enc1a.gamma"));
}

TEST_CASE("NetworkSpec validation rejects malformed topologies") {
    NetworkSpec s;
    s.encoder_channels = {32, 64};
    CHECK_THROWS_AS(s.validate(), std::invalid_argument);
    s = NetworkSpec{};
    s.num_classes = 3;
    CHECK_THROWS_AS(s.validate(), std::invalid_argument);
    s = NetworkSpec{};
    s.variant = "transformer";
    CHECK_THROWS_AS(s.validate(), std::invalid_argument);
}

TEST_CASE("clone detaches parameter storage") {
    auto m = build_metric_unet<float>(detection_spec(), 1);
    auto c = m.clone();
    m.params[0].tensor[0] += 1.f;
    CHECK(c.params[0].tensor[0] != m.params[0].tensor[0]);
    CHECK(c.bn.size() == m.bn.size());
}
