#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <random>

#include "munet/gradcheck.hpp"
#include "munet/losses.hpp"

using namespace munet;

namespace {

// Brute-force scalar reimplementation of the tuple loss, kept deliberately
// naive: plain loops, no shared code with the production op.
double oracle_metric(const Tensord& e, const std::vector<TupleBatch>& tuples, double sigma,
                     double epsilon, double beta, bool pair) {
    const int d = e.dim(1), H = e.dim(2), W = e.dim(3);
    auto at = [&](int n, int c, const Coord& q) {
        return e[((static_cast<std::int64_t>(n) * d + c) * H + q.i) * W + q.j];
    };
    auto d2 = [&](int n, const Coord& a, const Coord& b) {
        double s = 0;
        for (int c = 0; c < d; ++c) {
            const double diff = at(n, c, a) - at(n, c, b);
            s += diff * diff;
        }
        return s;
    };
    double tri = 0, pr = 0;
    std::int64_t ntri = 0, npr = 0;
    for (const auto& b : tuples)
        for (size_t a = 0; a < b.anchors.size(); ++a)
            for (const auto& p : b.positives[a]) {
                const double dap = d2(b.image_index, b.anchors[a], p);
                pr += std::max(0.0, dap - epsilon);
                ++npr;
                for (const auto& ng : b.negatives[a]) {
                    tri += std::max(0.0, dap - d2(b.image_index, b.anchors[a], ng) + sigma);
                    ++ntri;
                }
            }
    if (ntri == 0) return 0.0;
    double v = tri / static_cast<double>(ntri);
    if (pair && npr > 0) v += beta * pr / static_cast<double>(npr);
    return v;
}

Tensord rand_emb(int n, int d, int h, int w, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    return Tensord::uniform(Shape{n, d, h, w}, -1.0, 1.0, rng);
}

std::vector<TupleBatch> rand_tuples(int n_images, int h, int w, int k, int m, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::uniform_int_distribution<int> di(0, h - 1), dj(0, w - 1);
    std::vector<TupleBatch> out;
    for (int n = 0; n < n_images; ++n) {
        TupleBatch b;
        b.image_index = n;
        for (int a = 0; a < k; ++a) {
            b.anchors.push_back({di(rng), dj(rng)});
            std::vector<Coord> ps, ns;
            for (int t = 0; t < m; ++t) {
                ps.push_back({di(rng), dj(rng)});
                ns.push_back({di(rng), dj(rng)});
            }
            b.positives.push_back(ps);
            b.negatives.push_back(ns);
        }
        out.push_back(std::move(b));
    }
    return out;
}

// Single-triplet batch with a 1-channel embedding holding the three values.
std::pair<Tensord, std::vector<TupleBatch>> one_triplet(double a, double p, double n) {
    ArrayX<double> v(4);
    v << a, p, n, 0.0;
    Tensord e(Shape{1, 1, 2, 2}, v);
    TupleBatch b;
    b.anchors = {{0, 0}};
    b.positives = {{{0, 1}}};
    b.negatives = {{{1, 0}}};
    return {e, {b}};
}

}  // namespace

TEST_CASE("a hand-computed triplet gives 0.25 - 0.43 + 0.7 = 0.52") {
    auto [e, t] = one_triplet(0.0, 0.5, std::sqrt(0.43));
    auto l = metric_loss(e, t, 0.7, 0.01, 0.1, false);
    CHECK(l[0] == doctest::Approx(0.52).epsilon(1e-12));
}

TEST_CASE("hinge boundary: an exactly satisfied margin contributes zero") {
    // dap = 0.25, dan = 0.95, sigma = 0.7 -> hinge argument exactly 0
    auto [e, t] = one_triplet(0.0, 0.5, std::sqrt(0.95));
    auto l = metric_loss(e, t, 0.7, 0.01, 0.1, false);
    CHECK(l[0] == doctest::Approx(0.0).scale(1).epsilon(1e-12));
    // beyond the margin it stays at zero
    auto [e2, t2] = one_triplet(0.0, 0.5, 2.0);
    CHECK(metric_loss(e2, t2, 0.7, 0.01, 0.1, false)[0] == 0.0);
}

TEST_CASE("degenerate tuples where all distances vanish cost exactly sigma") {
    Tensord e = Tensord::full(Shape{1, 3, 2, 2}, 0.25);
    TupleBatch b;
    b.anchors = {{0, 0}};
    b.positives = {{{0, 0}}};
    b.negatives = {{{1, 1}}};
    auto l = metric_loss(e, std::vector<TupleBatch>{b}, 0.7, 0.01, 0.1, false);
    CHECK(l[0] == doctest::Approx(0.7).epsilon(1e-12));
}

TEST_CASE("the pair term adds beta * mean hinge(dap^2 - epsilon)") {
    auto [e, t] = one_triplet(0.0, 0.5, 2.0);  // triplet hinge inactive
    auto l = metric_loss(e, t, 0.7, 0.01, 0.1, true);
    CHECK(l[0] == doctest::Approx(0.1 * (0.25 - 0.01)).epsilon(1e-12));
    // with the pair term disabled the value ignores epsilon and beta
    auto off1 = metric_loss(e, t, 0.7, 0.01, 0.1, false);
    auto off2 = metric_loss(e, t, 0.7, 0.5, 99.0, false);
    CHECK(off1[0] == off2[0]);
}

TEST_CASE("metric loss matches the brute-force oracle on random instances") {
    for (int trial = 0; trial < 25; ++trial) {
        Tensord e = rand_emb(3, 4, 6, 6, 100 + trial);
        auto tuples = rand_tuples(3, 6, 6, 5, 2, 200 + trial);
        const double sigma = 0.3 + 0.1 * (trial % 5);
        auto l = metric_loss(e, tuples, sigma, 0.01, 0.1, trial % 2 == 0);
        const double want = oracle_metric(e, tuples, sigma, 0.01, 0.1, trial % 2 == 0);
        CHECK(l[0] == doctest::Approx(want).epsilon(1e-12));
    }
}

TEST_CASE("metric loss gradient matches finite differences") {
    Tensord e = rand_emb(2, 3, 5, 5, 7);
    auto tuples = rand_tuples(2, 5, 5, 4, 2, 8);
    for (bool pair : {false, true}) {
        auto closure = [&] { return metric_loss(e, tuples, 0.7, 0.01, 0.1, pair); };
        CHECK(gradient_check<double>(closure, {e}) < 1e-6);
    }
}

TEST_CASE("empty tuple sets give exact zero and zero gradient") {
    Tensord e = rand_emb(1, 2, 4, 4, 9);
    e.set_requires_grad(true);
    e.zero_grad();
    auto l = metric_loss(e, std::vector<TupleBatch>{}, 0.7, 0.01, 0.1, true);
    CHECK(l[0] == 0.0);
    l.backward();
    for (std::int64_t i = 0; i < e.size(); ++i) CHECK(e.grad()[i] == 0.0);
}

TEST_CASE("the loss value is invariant under tuple reordering") {
    Tensord e = rand_emb(2, 3, 6, 6, 11);
    auto tuples = rand_tuples(2, 6, 6, 6, 2, 12);
    auto l1 = metric_loss(e, tuples, 0.7, 0.01, 0.1, true);
    std::reverse(tuples.begin(), tuples.end());
    for (auto& b : tuples) {
        std::reverse(b.anchors.begin(), b.anchors.end());
        std::reverse(b.positives.begin(), b.positives.end());
        std::reverse(b.negatives.begin(), b.negatives.end());
    }
    auto l2 = metric_loss(e, tuples, 0.7, 0.01, 0.1, true);
    CHECK(l1[0] == doctest::Approx(l2[0]).epsilon(1e-14));
}

TEST_CASE("out-of-bounds tuples are rejected with a descriptive error") {
    Tensord e = rand_emb(1, 2, 4, 4, 13);
    TupleBatch b;
    b.anchors = {{0, 0}};
    b.positives = {{{5, 0}}};
    b.negatives = {{{1, 1}}};
    CHECK_THROWS_AS(metric_loss(e, std::vector<TupleBatch>{b}, 0.7, 0.01, 0.1, false),
                    std::out_of_range);
    b.positives = {{{1, 0}}};
    b.image_index = 2;
    CHECK_THROWS_AS(metric_loss(e, std::vector<TupleBatch>{b}, 0.7, 0.01, 0.1, false),
                    std::out_of_range);
}

namespace {

struct TotalFixture {
    Tensord logits = rand_emb(2, 2, 4, 4, 21);
    Tensord embedding = rand_emb(2, 3, 4, 4, 22);
    std::vector<std::uint8_t> labels;
    LossConfig cfg;

    TotalFixture() {
        std::mt19937_64 rng(23);
        labels.resize(2 * 16);
        for (auto& v : labels) v = static_cast<std::uint8_t>(rng() & 1);
        cfg.strategies.resize(2);
        cfg.strategies[0].strategy = Strategy::random;
        cfg.strategies[1].strategy = Strategy::contour;
    }

    std::vector<std::vector<TupleBatch>> tuples() const {
        return {rand_tuples(2, 4, 4, 3, 1, 31), rand_tuples(2, 4, 4, 2, 2, 32)};
    }
};

}  // namespace

TEST_CASE("total loss is ce + lambda * sum of per-strategy metric losses") {
    TotalFixture f;
    auto t = f.tuples();
    auto bd = total_loss(f.logits, f.labels, f.embedding, t, f.cfg);
    double msum = 0;
    for (size_t i = 0; i < t.size(); ++i) {
        const double want = oracle_metric(f.embedding, t[i], f.cfg.sigma, f.cfg.epsilon, f.cfg.beta,
                                          f.cfg.use_pair_term);
        CHECK(bd.metric_per_strategy[i] == doctest::Approx(want).epsilon(1e-12));
        msum += bd.metric_per_strategy[i];
    }
    CHECK(bd.total == doctest::Approx(bd.ce + f.cfg.lambda * msum).epsilon(1e-12));
    CHECK(bd.tuple_counts.size() == 2);
}

TEST_CASE("doubling lambda doubles the metric contribution exactly") {
    TotalFixture f;
    auto t = f.tuples();
    auto b1 = total_loss(f.logits, f.labels, f.embedding, t, f.cfg);
    LossConfig c2 = f.cfg;
    c2.lambda *= 2;
    auto b2 = total_loss(f.logits, f.labels, f.embedding, t, c2);
    CHECK(b2.total - b2.ce == doctest::Approx(2 * (b1.total - b1.ce)).epsilon(1e-12));
}

TEST_CASE("lambda = 0 reproduces the pure cross-entropy loss bitwise") {
    TotalFixture f;
    f.logits.set_requires_grad(true);
    f.cfg.lambda = 0.0;
    auto with = total_loss(f.logits, f.labels, f.embedding, f.tuples(), f.cfg);

    Tensord logits2 = f.logits.clone();
    logits2.set_requires_grad(true);
    LossConfig bare;
    auto without = total_loss(logits2, f.labels, f.embedding, {}, bare);

    CHECK(with.total == without.total);  // bitwise, not approximate
    f.logits.zero_grad();
    logits2.zero_grad();
    with.loss.backward();
    without.loss.backward();
    for (std::int64_t i = 0; i < f.logits.size(); ++i)
        CHECK(f.logits.grad()[i] == logits2.grad()[i]);
}

TEST_CASE("a single backward covers both loss paths") {
    TotalFixture f;
    f.logits.set_requires_grad(true);
    f.embedding.set_requires_grad(true);
    f.logits.zero_grad();
    f.embedding.zero_grad();
    auto bd = total_loss(f.logits, f.labels, f.embedding, f.tuples(), f.cfg);
    bd.loss.backward();
    bool lg = false, eg = false;
    for (std::int64_t i = 0; i < f.logits.size(); ++i) lg = lg || f.logits.grad()[i] != 0;
    for (std::int64_t i = 0; i < f.embedding.size(); ++i) eg = eg || f.embedding.grad()[i] != 0;
    CHECK(lg);
    CHECK(eg);
}

TEST_CASE("combined loss gradient matches finite differences") {
    TotalFixture f;
    auto t = f.tuples();  // frozen: sampling is selection, not differentiation
    auto closure = [&] { return total_loss(f.logits, f.labels, f.embedding, t, f.cfg).loss; };
    CHECK(gradient_check<double>(closure, {f.logits, f.embedding}) < 1e-6);
}

TEST_CASE("total_loss validates configuration and batch-list arity") {
    TotalFixture f;
    CHECK_THROWS_AS(total_loss(f.logits, f.labels, f.embedding, {}, f.cfg),
                    std::invalid_argument);
    LossConfig bad;
    bad.sigma = 0.0;
    CHECK_THROWS_AS(total_loss(f.logits, f.labels, f.embedding, {}, bad), std::invalid_argument);
    bad = LossConfig{};
    bad.lambda = -1;
    CHECK_THROWS_AS(total_loss(f.logits, f.labels, f.embedding, {}, bad), std::invalid_argument);
}
