#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <numeric>
#include <set>

#include "munet/checkpoint.hpp"
#include "munet/pipeline.hpp"

using namespace munet;
namespace fs = std::filesystem;

namespace {

std::vector<std::pair<Volume, MaskVol>> small_dataset(int n, std::uint64_t seed = 13) {
    DatasetSpec spec;  // desk-scale geometry
    return generate_dataset(spec, n, seed);
}

ExperimentConfig tiny_config() {
    ExperimentConfig cfg;
    cfg.train.batch_size = 4;
    cfg.train.max_iters = 8;
    cfg.stage1.max_iters = 8;
    return cfg;
}

bool same_mask(const MaskVol& a, const MaskVol& b) {
    return a.dims == b.dims && a.voxels == b.voxels;
}

}  // namespace

TEST_CASE("experiment configs survive a JSON round-trip") {
    ExperimentConfig cfg = tiny_config();
    cfg.dataset.manifest = "somewhere/manifest.json";
    cfg.loss.lambda = 0.005;
    cfg.loss.strategies.resize(2);
    cfg.loss.strategies[0].strategy = Strategy::focal_hard;
    cfg.loss.strategies[0].k = 33;
    cfg.loss.strategies[1].strategy = Strategy::contour;
    cfg.loss.sep_mode = true;
    cfg.train.seed = 99;
    const std::string j1 = config_to_json(cfg);
    ExperimentConfig back = config_from_json(j1);
    CHECK(config_to_json(back) == j1);
    CHECK(back.loss.strategies.size() == 2);
    CHECK(back.loss.strategies[0].k == 33);
    CHECK(back.loss.sep_mode);
    CHECK(back.train.seed == 99);

    const std::string path = "/tmp/munet_test_cfg.json";
    std::ofstream(path) << j1;
    CHECK(config_to_json(load_config(path)) == j1);
    CHECK_THROWS_AS(load_config("/tmp/munet_no_such_cfg.json"), std::runtime_error);
}

TEST_CASE("profiles set the two published geometries") {
    ExperimentConfig cfg;
    apply_profile(cfg, "paper");
    CHECK(cfg.region_size == 128);
    CHECK(cfg.patch_size == 64);
    CHECK(cfg.stage1.downsample == 4);
    apply_profile(cfg, "desk");
    CHECK(cfg.region_size == 48);
    CHECK(cfg.patch_size == 32);
    CHECK(cfg.stage1.downsample == 2);
    CHECK_THROWS_AS(apply_profile(cfg, "cluster"), std::invalid_argument);
}

TEST_CASE("the dataset split is a seeded 70/10/20 partition") {
    DatasetConfig d;
    d.split_seed = 3;
    SplitIndices s = split_dataset(10, d);
    CHECK(s.train.size() == 7);
    CHECK(s.val.size() == 1);
    CHECK(s.test.size() == 2);
    std::set<int> all;
    for (int i : s.train) all.insert(i);
    for (int i : s.val) all.insert(i);
    for (int i : s.test) all.insert(i);
    CHECK(all.size() == 10);
    SplitIndices again = split_dataset(10, d);
    CHECK(again.train == s.train);
    d.split_seed = 4;
    CHECK(split_dataset(10, d).train != s.train);
}

TEST_CASE("the landmark reference center sits between the two spheres") {
    SceneSpec s;
    s.noise_sigma = 0.0;
    auto [v, m] = generate_scene(s);
    auto c = find_reference_center(normalize_intensity(v), 200.0);
    CHECK(c[0] == doctest::Approx(32.0).epsilon(0.05));
    CHECK(c[1] == doctest::Approx(48.0).epsilon(0.05));
    CHECK(c[2] == doctest::Approx((16.0 + 80.0) / 2).epsilon(0.05));

    Volume dark = v;
    for (auto& f : dark.voxels) f = std::min(f, 100.f);
    CHECK_THROWS_AS(find_reference_center(dark, 200.0), std::runtime_error);
}

TEST_CASE("localization without a detector falls back to the reference center") {
    auto data = small_dataset(1);
    ExperimentConfig cfg = tiny_config();
    const Volume norm = normalize_intensity(data[0].first);
    LocalizationResult loc = localize(nullptr, norm, cfg.stage1, cfg.region_size);
    CHECK(loc.used_fallback);
    CHECK(loc.final_centroid == loc.reference_center);
    for (int a = 0; a < 3; ++a) {
        CHECK(loc.crop_offset[a] >= 0);
        CHECK(loc.crop_offset[a] + cfg.region_size <= norm.dims[a]);
    }
}

TEST_CASE("prepared regions contain the whole blob") {
    auto data = small_dataset(4);
    ExperimentConfig cfg = tiny_config();
    auto regions = prepare_regions(data, nullptr, cfg);
    REQUIRE(regions.size() == 4);
    for (const auto& rc : regions) {
        CHECK(rc.region.dims == std::array<int, 3>{48, 48, 48});
        CHECK(rc.region_mask.dims == rc.region.dims);
        CHECK(rc.contains_full_blob);
        CHECK(rc.region_mask.count() > 0);
    }
}

TEST_CASE("stage-1 training drives the detector loss down") {
    auto data = small_dataset(4);
    ExperimentConfig cfg = tiny_config();
    cfg.stage1.max_iters = 60;
    cfg.train.batch_size = 8;
    std::vector<int> idx{0, 1, 2, 3};
    TrainResult tr = train_stage1(cfg, data, idx);
    REQUIRE(tr.log.size() == 60);
    auto mean = [&](size_t from, size_t to) {
        double s = 0;
        for (size_t i = from; i < to; ++i) s += tr.log[i].ce;
        return s / static_cast<double>(to - from);
    };
    CHECK(mean(55, 60) < mean(0, 5));
    CHECK(tr.log.front().lr == doctest::Approx(0.01));
    CHECK(tr.log.back().lr < 0.001);
}

TEST_CASE("checkpoints restore a model that infers identically") {
    auto data = small_dataset(3);
    ExperimentConfig cfg = tiny_config();
    cfg.loss.strategies.resize(1);
    cfg.loss.strategies[0].strategy = Strategy::random;
    auto regions = prepare_regions(data, nullptr, cfg);
    TrainResult tr = train_stage2(cfg, regions, {0, 1});

    const std::string path = "/tmp/munet_test_ckpt.munc";
    save_checkpoint(tr.model, path);
    ModelState<float> loaded = build_metric_unet<float>(cfg.network, /*seed=*/555);
    load_checkpoint(loaded, path);

    MaskVol a = infer_region(tr.model, regions[2].region, cfg.patch_channels);
    MaskVol b = infer_region(loaded, regions[2].region, cfg.patch_channels);
    CHECK(same_mask(a, b));
    for (const auto& [name, buf] : tr.model.bn) {
        const auto& other = loaded.bn.at(name);
        for (std::int64_t i = 0; i < buf.running_mean.size(); ++i) {
            CHECK(buf.running_mean[i] == other.running_mean[i]);
            CHECK(buf.running_var[i] == other.running_var[i]);
        }
    }

    ModelState<float> wrong = build_detection_unet<float>(detection_spec());
    CHECK_THROWS_AS(load_checkpoint(wrong, path), std::runtime_error);
}

TEST_CASE("inference is deterministic and shape-preserving") {
    auto data = small_dataset(1);
    ExperimentConfig cfg = tiny_config();
    auto regions = prepare_regions(data, nullptr, cfg);
    ModelState<float> m = build_metric_unet<float>(cfg.network, 1);
    MaskVol a = infer_region(m, regions[0].region, cfg.patch_channels);
    MaskVol b = infer_region(m, regions[0].region, cfg.patch_channels);
    CHECK(a.dims == regions[0].region.dims);
    CHECK(same_mask(a, b));
    CHECK(m.mode == Mode::train);  // inference must restore the mode

    Volume odd = crop_volume(regions[0].region, {0, 0, 0}, {8, 20, 20});
    CHECK_THROWS_AS(infer_region(m, odd, cfg.patch_channels), std::invalid_argument);
}

TEST_CASE("stage-2 training logs one row per iteration with per-strategy columns") {
    auto data = small_dataset(3);
    ExperimentConfig cfg = tiny_config();
    cfg.loss.strategies.resize(2);
    cfg.loss.strategies[0].strategy = Strategy::random;
    cfg.loss.strategies[1].strategy = Strategy::contour;
    auto regions = prepare_regions(data, nullptr, cfg);
    TrainResult tr = train_stage2(cfg, regions, {0, 1}, {2});
    REQUIRE(tr.log.size() == 8);
    for (const auto& row : tr.log) {
        CHECK(row.metric.size() == 2);
        CHECK(row.tuple_counts.size() == 2);
        CHECK(row.total == doctest::Approx(row.ce + cfg.loss.lambda *
                                                        (row.metric[0] + row.metric[1]))
                               .epsilon(1e-5));
    }

    const std::string path = "/tmp/munet_test_log.csv";
    write_train_log_csv(path, tr.log, cfg.loss.strategies);
    std::ifstream is(path);
    std::string header;
    std::getline(is, header);
    CHECK(header == "iter,lr,ce,metric_random,metric_contour,total,tuple_counts");
    int rows = 0;
    std::string line;
    while (std::getline(is, line)) ++rows;
    CHECK(rows == 8);
}

TEST_CASE("training twice with one seed is bitwise reproducible") {
    auto data = small_dataset(2);
    ExperimentConfig cfg = tiny_config();
    cfg.train.max_iters = 4;
    cfg.loss.strategies.resize(1);
    cfg.loss.strategies[0].strategy = Strategy::focal_hard;
    auto regions = prepare_regions(data, nullptr, cfg);
    TrainResult a = train_stage2(cfg, regions, {0, 1});
    TrainResult b = train_stage2(cfg, regions, {0, 1});
    REQUIRE(a.model.params.size() == b.model.params.size());
    for (size_t i = 0; i < a.model.params.size(); ++i)
        for (std::int64_t j = 0; j < a.model.params[i].tensor.size(); ++j)
            REQUIRE(a.model.params[i].tensor[j] == b.model.params[i].tensor[j]);
    for (size_t i = 0; i < a.log.size(); ++i) CHECK(a.log[i].total == b.log[i].total);
}

TEST_CASE("the ablation table lists the ten in-scope configurations") {
    const auto& rows = ablation_table();
    REQUIRE(rows.size() == 10);
    std::set<std::string> names;
    for (const auto& r : rows) names.insert(r.name);
    CHECK(names.size() == 10);
    CHECK(names.count("UNet (Baseline)") == 1);
    CHECK(names.count("MetricUNet-R-Sep") == 1);
    CHECK(names.count("MetricUNet-HCP") == 1);
    for (const auto& r : rows) {
        if (std::string(r.name) == "UNet (Baseline)") {
            CHECK_FALSE(r.random);
            CHECK_FALSE(r.hard);
            CHECK_FALSE(r.contour);
            CHECK_FALSE(r.pair_term);
        }
        if (r.sep) CHECK(std::string(r.name).find("Sep") != std::string::npos);
        if (r.pair_term) CHECK(std::string(r.name).back() == 'P');
    }
}

TEST_CASE("an all-background region evaluates gracefully end to end") {
    ExperimentConfig cfg = tiny_config();
    Volume region;
    region.dims = {48, 48, 48};
    region.voxels.assign(static_cast<size_t>(region.size()), 10.f);
    MaskVol gt;
    gt.dims = region.dims;
    gt.voxels.assign(region.voxels.size(), 0);
    ModelState<float> m = build_metric_unet<float>(cfg.network, 2);
    // bias the head towards background so the prediction is empty
    m.param("head_b.w").array().setZero();
    m.param("head_b.b").array() << 5.f, -5.f;
    MaskVol pred = infer_region(m, region, cfg.patch_channels);
    CHECK(pred.count() == 0);
    MetricsReport r = compute_metrics(gt, pred, {1, 1, 1});
    CHECK(r.dsc == 1.0);  // both empty
    CHECK_FALSE(r.asd_mm.has_value());
    CHECK_FALSE(r.hd95_mm.has_value());
}
