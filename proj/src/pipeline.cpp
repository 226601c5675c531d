#include "munet/pipeline.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <sstream>

#include <json.hpp>

#include "munet/checkpoint.hpp"

namespace munet {

namespace {

std::uint64_t splitmix(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

std::uint64_t mix(std::initializer_list<std::uint64_t> vs) {
    std::uint64_t h = 0x2545f4914f6cdd1dULL;
    for (auto v : vs) h = splitmix(h ^ v);
    return h;
}

}  // namespace

void ExperimentConfig::validate() const {
    network.validate();
    loss.validate();
    const double fsum = dataset.train_frac + dataset.val_frac + dataset.test_frac;
    if (std::abs(fsum - 1.0) > 1e-9)
        throw std::invalid_argument("ExperimentConfig: split fractions must sum to 1");
    if (region_size < patch_size)
        throw std::invalid_argument("ExperimentConfig: region_size must be >= patch size");
    if (train.batch_size <= 0 || train.max_iters < 0)
        throw std::invalid_argument("ExperimentConfig: bad training parameters");
    if (patch_channels % 2 == 0 || stage1.channels % 2 == 0)
        throw std::invalid_argument("ExperimentConfig: slice stacks must be odd");
}

void apply_profile(ExperimentConfig& cfg, const std::string& profile) {
    if (profile == "desk") {
        cfg.region_size = 48;
        cfg.patch_size = 32;
        cfg.stage1.patch_size = 32;
        cfg.stage1.downsample = 2;
    } else if (profile == "paper") {
        cfg.region_size = 128;
        cfg.patch_size = 64;
        cfg.stage1.patch_size = 64;
        cfg.stage1.downsample = 4;
    } else {
        throw std::invalid_argument("unknown profile '" + profile + "'");
    }
    cfg.profile = profile;
}

// ---- config json -------------------------------------------------------

namespace {

nlohmann::json spec_to_json(const NetworkSpec& s) {
    return {{"encoder_channels", s.encoder_channels}, {"decoder_channels", s.decoder_channels},
            {"in_channels", s.in_channels},           {"num_classes", s.num_classes},
            {"head_channels", s.head_channels},       {"variant", s.variant}};
}

NetworkSpec spec_from_json(const nlohmann::json& j) {
    NetworkSpec s;
    if (j.contains("encoder_channels")) j.at("encoder_channels").get_to(s.encoder_channels);
    if (j.contains("decoder_channels")) j.at("decoder_channels").get_to(s.decoder_channels);
    if (j.contains("in_channels")) j.at("in_channels").get_to(s.in_channels);
    if (j.contains("num_classes")) j.at("num_classes").get_to(s.num_classes);
    if (j.contains("head_channels")) j.at("head_channels").get_to(s.head_channels);
    if (j.contains("variant")) j.at("variant").get_to(s.variant);
    return s;
}

nlohmann::json sampling_to_json(const SamplingConfig& s) {
    return {{"strategy", strategy_name(s.strategy)},
            {"k", s.k},
            {"m", s.m},
            {"tau", s.tau},
            {"seed", s.seed}};
}

SamplingConfig sampling_from_json(const nlohmann::json& j) {
    SamplingConfig s;
    s.strategy = strategy_from_name(j.at("strategy").get<std::string>());
    if (j.contains("k")) j.at("k").get_to(s.k);
    if (j.contains("m")) j.at("m").get_to(s.m);
    if (j.contains("tau")) j.at("tau").get_to(s.tau);
    if (j.contains("seed")) j.at("seed").get_to(s.seed);
    return s;
}

}  // namespace

std::string config_to_json(const ExperimentConfig& cfg) {
    nlohmann::json j;
    j["dataset"] = {{"manifest", cfg.dataset.manifest},
                    {"train_frac", cfg.dataset.train_frac},
                    {"val_frac", cfg.dataset.val_frac},
                    {"test_frac", cfg.dataset.test_frac},
                    {"split_seed", cfg.dataset.split_seed},
                    {"body_crop_threshold", cfg.dataset.body_crop_threshold}};
    j["network"] = spec_to_json(cfg.network);
    nlohmann::json strategies = nlohmann::json::array();
    for (const auto& s : cfg.loss.strategies) strategies.push_back(sampling_to_json(s));
    j["loss"] = {{"sigma", cfg.loss.sigma},
                 {"epsilon", cfg.loss.epsilon},
                 {"beta", cfg.loss.beta},
                 {"lambda", cfg.loss.lambda},
                 {"strategies", strategies},
                 {"sep_mode", cfg.loss.sep_mode},
                 {"use_pair_term", cfg.loss.use_pair_term}};
    j["train"] = {{"batch_size", cfg.train.batch_size}, {"base_lr", cfg.train.base_lr},
                  {"poly_power", cfg.train.poly_power}, {"max_iters", cfg.train.max_iters},
                  {"seed", cfg.train.seed},             {"val_interval", cfg.train.val_interval}};
    j["stage1"] = {{"downsample", cfg.stage1.downsample},
                   {"patch_size", cfg.stage1.patch_size},
                   {"channels", cfg.stage1.channels},
                   {"max_iters", cfg.stage1.max_iters},
                   {"landmark_threshold", cfg.stage1.landmark_threshold},
                   {"detector", spec_to_json(cfg.stage1.detector)}};
    j["region_size"] = cfg.region_size;
    j["patch_size"] = cfg.patch_size;
    j["patch_channels"] = cfg.patch_channels;
    j["profile"] = cfg.profile;
    j["deterministic"] = cfg.deterministic;
    j["out_dir"] = cfg.out_dir;
    return j.dump(2);
}

ExperimentConfig config_from_json(const std::string& json_text) {
    nlohmann::json j = nlohmann::json::parse(json_text);
    ExperimentConfig cfg;
    if (j.contains("profile")) apply_profile(cfg, j.at("profile").get<std::string>());
    if (j.contains("dataset")) {
        const auto& d = j.at("dataset");
        if (d.contains("manifest")) d.at("manifest").get_to(cfg.dataset.manifest);
        if (d.contains("train_frac")) d.at("train_frac").get_to(cfg.dataset.train_frac);
        if (d.contains("val_frac")) d.at("val_frac").get_to(cfg.dataset.val_frac);
        if (d.contains("test_frac")) d.at("test_frac").get_to(cfg.dataset.test_frac);
        if (d.contains("split_seed")) d.at("split_seed").get_to(cfg.dataset.split_seed);
        if (d.contains("body_crop_threshold"))
            d.at("body_crop_threshold").get_to(cfg.dataset.body_crop_threshold);
    }
    if (j.contains("network")) cfg.network = spec_from_json(j.at("network"));
    if (j.contains("loss")) {
        const auto& l = j.at("loss");
        if (l.contains("sigma")) l.at("sigma").get_to(cfg.loss.sigma);
        if (l.contains("epsilon")) l.at("epsilon").get_to(cfg.loss.epsilon);
        if (l.contains("beta")) l.at("beta").get_to(cfg.loss.beta);
        if (l.contains("lambda")) l.at("lambda").get_to(cfg.loss.lambda);
        if (l.contains("sep_mode")) l.at("sep_mode").get_to(cfg.loss.sep_mode);
        if (l.contains("use_pair_term")) l.at("use_pair_term").get_to(cfg.loss.use_pair_term);
        if (l.contains("strategies"))
            for (const auto& s : l.at("strategies"))
                cfg.loss.strategies.push_back(sampling_from_json(s));
    }
    if (j.contains("train")) {
        const auto& t = j.at("train");
        if (t.contains("batch_size")) t.at("batch_size").get_to(cfg.train.batch_size);
        if (t.contains("base_lr")) t.at("base_lr").get_to(cfg.train.base_lr);
        if (t.contains("poly_power")) t.at("poly_power").get_to(cfg.train.poly_power);
        if (t.contains("max_iters")) t.at("max_iters").get_to(cfg.train.max_iters);
        if (t.contains("seed")) t.at("seed").get_to(cfg.train.seed);
        if (t.contains("val_interval")) t.at("val_interval").get_to(cfg.train.val_interval);
    }
    if (j.contains("stage1")) {
        const auto& s = j.at("stage1");
        if (s.contains("downsample")) s.at("downsample").get_to(cfg.stage1.downsample);
        if (s.contains("patch_size")) s.at("patch_size").get_to(cfg.stage1.patch_size);
        if (s.contains("channels")) s.at("channels").get_to(cfg.stage1.channels);
        if (s.contains("max_iters")) s.at("max_iters").get_to(cfg.stage1.max_iters);
        if (s.contains("landmark_threshold"))
            s.at("landmark_threshold").get_to(cfg.stage1.landmark_threshold);
        if (s.contains("detector")) cfg.stage1.detector = spec_from_json(s.at("detector"));
    }
    if (j.contains("region_size")) j.at("region_size").get_to(cfg.region_size);
    if (j.contains("patch_size")) j.at("patch_size").get_to(cfg.patch_size);
    if (j.contains("patch_channels")) j.at("patch_channels").get_to(cfg.patch_channels);
    if (j.contains("deterministic")) j.at("deterministic").get_to(cfg.deterministic);
    if (j.contains("out_dir")) j.at("out_dir").get_to(cfg.out_dir);
    cfg.validate();
    return cfg;
}

ExperimentConfig load_config(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw std::runtime_error("cannot open config " + path);
    std::stringstream ss;
    ss << is.rdbuf();
    return config_from_json(ss.str());
}

SplitIndices split_dataset(int n, const DatasetConfig& cfg) {
    std::vector<int> idx(static_cast<size_t>(n));
    std::iota(idx.begin(), idx.end(), 0);
    std::mt19937_64 rng(cfg.split_seed);
    std::shuffle(idx.begin(), idx.end(), rng);
    const int n_train = static_cast<int>(std::round(cfg.train_frac * n));
    const int n_val = static_cast<int>(std::round(cfg.val_frac * n));
    SplitIndices s;
    s.train.assign(idx.begin(), idx.begin() + n_train);
    s.val.assign(idx.begin() + n_train, idx.begin() + std::min(n, n_train + n_val));
    s.test.assign(idx.begin() + std::min(n, n_train + n_val), idx.end());
    return s;
}

// ---- localization ------------------------------------------------------

std::array<double, 3> find_reference_center(const Volume& v, double threshold) {
    // two bright spheres flank the target along x; split by the x midline
    std::array<double, 4> left{0, 0, 0, 0}, right{0, 0, 0, 0};  // sums + count
    const double half_x = 0.5 * (v.dims[2] - 1);
    for (int z = 0; z < v.dims[0]; ++z)
        for (int y = 0; y < v.dims[1]; ++y)
            for (int x = 0; x < v.dims[2]; ++x)
                if (v.at(z, y, x) >= threshold) {
                    auto& acc = (x < half_x) ? left : right;
                    acc[0] += z;
                    acc[1] += y;
                    acc[2] += x;
                    acc[3] += 1;
                }
    if (left[3] == 0 || right[3] == 0)
        throw std::runtime_error("find_reference_center: landmarks not found above threshold");
    return {0.5 * (left[0] / left[3] + right[0] / right[3]),
            0.5 * (left[1] / left[3] + right[1] / right[3]),
            0.5 * (left[2] / left[3] + right[2] / right[3])};
}

LocalizationResult localize(ModelState<float>* detector, const Volume& normalized,
                            const Stage1Config& s1, int region_size) {
    LocalizationResult r;
    r.reference_center = find_reference_center(normalized, s1.landmark_threshold);

    bool have_pred = false;
    if (detector != nullptr) {
        const Volume small = downsample(normalized, s1.downsample);
        const MaskVol coarse = infer_region(*detector, small, s1.channels);
        double sz = 0, sy = 0, sx = 0, n = 0;
        for (int z = 0; z < coarse.dims[0]; ++z)
            for (int y = 0; y < coarse.dims[1]; ++y)
                for (int x = 0; x < coarse.dims[2]; ++x)
                    if (coarse.at(z, y, x)) {
                        sz += z;
                        sy += y;
                        sx += x;
                        n += 1;
                    }
        if (n > 0) {
            r.predicted_centroid = {sz / n * s1.downsample, sy / n * s1.downsample,
                                    sx / n * s1.downsample};
            have_pred = true;
        }
    }
    if (have_pred) {
        for (int a = 0; a < 3; ++a)
            r.final_centroid[a] = 0.5 * (r.predicted_centroid[a] + r.reference_center[a]);
    } else {
        r.final_centroid = r.reference_center;
        r.used_fallback = true;
    }
    for (int a = 0; a < 3; ++a) {
        if (normalized.dims[a] < region_size)
            throw std::runtime_error("localize: volume smaller than region along axis " +
                                     std::to_string(a));
        const int want = static_cast<int>(std::round(r.final_centroid[a])) - region_size / 2;
        r.crop_offset[a] = std::clamp(want, 0, normalized.dims[a] - region_size);
    }
    return r;
}

std::vector<RegionCase> prepare_regions(const std::vector<std::pair<Volume, MaskVol>>& data,
                                        ModelState<float>* detector, const ExperimentConfig& cfg) {
    std::vector<RegionCase> out;
    out.reserve(data.size());
    for (const auto& [vol, mask] : data) {
        const Volume norm = normalize_intensity(vol);
        const CropResult body = crop_body(norm, cfg.dataset.body_crop_threshold);
        const MaskVol body_mask = crop_mask(mask, body.offset, body.volume.dims);
        RegionCase rc;
        rc.id = vol.id;
        rc.loc = localize(detector, body.volume, cfg.stage1, cfg.region_size);
        const std::array<int, 3> size{cfg.region_size, cfg.region_size, cfg.region_size};
        rc.region = crop_volume(body.volume, rc.loc.crop_offset, size);
        rc.region_mask = crop_mask(body_mask, rc.loc.crop_offset, size);
        rc.contains_full_blob = (rc.region_mask.count() == mask.count());
        out.push_back(std::move(rc));
    }
    return out;
}

// ---- training ----------------------------------------------------------

namespace {

// Batch of patches as an NCHW tensor (intensities scaled to [0,1]) plus
// flat labels.
void patches_to_batch(const std::vector<PatchSample>& patches, Tensorf& input,
                      std::vector<std::uint8_t>& labels) {
    const int B = static_cast<int>(patches.size());
    const int C = patches[0].channels, sz = patches[0].size;
    input = Tensorf(Shape{B, C, sz, sz});
    labels.resize(static_cast<size_t>(B) * sz * sz);
    for (int b = 0; b < B; ++b) {
        for (size_t i = 0; i < patches[static_cast<size_t>(b)].input.size(); ++i)
            input.data()[static_cast<size_t>(b) * C * sz * sz + i] =
                patches[static_cast<size_t>(b)].input[i] / 255.0f;
        std::copy(patches[static_cast<size_t>(b)].label.begin(),
                  patches[static_cast<size_t>(b)].label.end(),
                  labels.begin() + static_cast<std::int64_t>(b) * sz * sz);
    }
}

double mean_val_dsc(ModelState<float>& model, const std::vector<RegionCase>& regions,
                    const std::vector<int>& val_indices, int channels) {
    if (val_indices.empty()) return -1;
    double acc = 0;
    for (int i : val_indices) {
        const MaskVol pred = infer_region(model, regions[static_cast<size_t>(i)].region, channels);
        acc += dsc(regions[static_cast<size_t>(i)].region_mask, pred);
    }
    return acc / static_cast<double>(val_indices.size());
}

}  // namespace

void write_train_log_csv(const std::string& path, const std::vector<LogRow>& log,
                         const std::vector<SamplingConfig>& strategies) {
    std::ofstream os(path);
    if (!os) throw std::runtime_error("cannot open train log " + path);
    os << "iter,lr,ce";
    for (const auto& s : strategies) os << ",metric_" << strategy_name(s.strategy);
    os << ",total,tuple_counts\n";
    os.precision(9);
    for (const auto& r : log) {
        os << r.iter << "," << r.lr << "," << r.ce;
        for (double m : r.metric) os << "," << m;
        os << "," << r.total << ",";
        for (size_t i = 0; i < r.tuple_counts.size(); ++i)
            os << (i ? ";" : "") << r.tuple_counts[i];
        os << "\n";
    }
}

TrainResult train_stage1(const ExperimentConfig& cfg,
                         const std::vector<std::pair<Volume, MaskVol>>& data,
                         const std::vector<int>& train_indices) {
    if (train_indices.empty()) throw std::runtime_error("train_stage1: no training volumes");
    // quarter-scale (desk: half-scale) volumes with nearest-neighbor labels
    std::vector<Volume> vols;
    std::vector<MaskVol> masks;
    for (int i : train_indices) {
        const Volume norm = normalize_intensity(data[static_cast<size_t>(i)].first);
        vols.push_back(downsample(norm, cfg.stage1.downsample));
        masks.push_back(
            downsample_mask_nearest(data[static_cast<size_t>(i)].second, cfg.stage1.downsample));
    }
    TrainResult res{build_detection_unet<float>(cfg.stage1.detector, cfg.train.seed), {}, 0, -1};
    res.model.mode = Mode::train;
    const int half = cfg.stage1.channels / 2;
    const auto t0 = std::chrono::steady_clock::now();
    for (int iter = 0; iter < cfg.stage1.max_iters; ++iter) {
        std::mt19937_64 rng(mix({cfg.train.seed, 0x517a6e31ULL, static_cast<std::uint64_t>(iter)}));
        std::vector<PatchSample> patches;
        for (int b = 0; b < cfg.train.batch_size; ++b) {
            std::uniform_int_distribution<size_t> dv(0, vols.size() - 1);
            const size_t vi = dv(rng);
            const auto& v = vols[vi];
            std::uniform_int_distribution<int> dz(half, v.dims[0] - 1 - half);
            std::uniform_int_distribution<int> dy(0, v.dims[1] - cfg.stage1.patch_size);
            std::uniform_int_distribution<int> dx(0, v.dims[2] - cfg.stage1.patch_size);
            const int z = dz(rng), y0 = dy(rng), x0 = dx(rng);
            patches.push_back(extract_patch_at(v, masks[vi], z, y0, x0, cfg.stage1.patch_size,
                                               cfg.stage1.channels));
        }
        Tensorf input;
        std::vector<std::uint8_t> labels;
        patches_to_batch(patches, input, labels);
        zero_grads(res.model.params);
        for (auto& p : res.model.params) p.tensor.set_requires_grad(true);
        auto out = forward(res.model, input);
        auto ce = softmax_cross_entropy(out.logits, labels);
        ce.backward();
        const double lr =
            poly_lr(iter, cfg.stage1.max_iters, cfg.train.base_lr, cfg.train.poly_power);
        sgd_step(res.model.params, lr);
        res.log.push_back({iter, lr, static_cast<double>(ce[0]), {}, static_cast<double>(ce[0]), {}});
    }
    const auto t1 = std::chrono::steady_clock::now();
    if (cfg.stage1.max_iters > 0)
        res.seconds_per_iter =
            std::chrono::duration<double>(t1 - t0).count() / cfg.stage1.max_iters;
    return res;
}

TrainResult train_stage2(const ExperimentConfig& cfg, const std::vector<RegionCase>& regions,
                         const std::vector<int>& train_indices,
                         const std::vector<int>& val_indices) {
    if (train_indices.empty()) throw std::runtime_error("train_stage2: no training regions");
    cfg.validate();
    TrainResult res{build_metric_unet<float>(cfg.network, cfg.train.seed), {}, 0, -1};
    res.model.mode = Mode::train;
    const int half = cfg.patch_channels / 2;
    ModelState<float> best;
    const auto t0 = std::chrono::steady_clock::now();
    for (int iter = 0; iter < cfg.train.max_iters; ++iter) {
        std::mt19937_64 rng(mix({cfg.train.seed, 0x9a7c2ULL, static_cast<std::uint64_t>(iter)}));
        std::vector<PatchSample> patches;
        for (int b = 0; b < cfg.train.batch_size; ++b) {
            std::uniform_int_distribution<size_t> dv(0, train_indices.size() - 1);
            const auto& rc = regions[static_cast<size_t>(train_indices[dv(rng)])];
            std::uniform_int_distribution<int> dz(half, rc.region.dims[0] - 1 - half);
            std::uniform_int_distribution<int> dy(0, rc.region.dims[1] - cfg.patch_size);
            std::uniform_int_distribution<int> dx(0, rc.region.dims[2] - cfg.patch_size);
            const int z = dz(rng), y0 = dy(rng), x0 = dx(rng);
            patches.push_back(extract_patch_at(rc.region, rc.region_mask, z, y0, x0,
                                               cfg.patch_size, cfg.patch_channels));
        }
        Tensorf input;
        std::vector<std::uint8_t> labels;
        patches_to_batch(patches, input, labels);

        zero_grads(res.model.params);
        for (auto& p : res.model.params) p.tensor.set_requires_grad(true);
        auto out = forward(res.model, input, cfg.loss.sep_mode);

        // sampler RNG streams are independent of the patch stream, so
        // configurations differing only in samplers draw identical batches
        std::vector<std::vector<TupleBatch>> per_strategy;
        const int B = static_cast<int>(patches.size());
        const std::int64_t plane = static_cast<std::int64_t>(cfg.patch_size) * cfg.patch_size;
        for (size_t t = 0; t < cfg.loss.strategies.size(); ++t) {
            std::vector<TupleBatch> batches;
            for (int b = 0; b < B; ++b) {
                SamplingConfig scfg = cfg.loss.strategies[t];
                scfg.seed = mix({cfg.train.seed, 0x5a3fULL, static_cast<std::uint64_t>(iter),
                                 static_cast<std::uint64_t>(t), static_cast<std::uint64_t>(b)});
                LabelMap lm{cfg.patch_size, cfg.patch_size,
                            std::vector<std::uint8_t>(
                                labels.begin() + b * plane, labels.begin() + (b + 1) * plane)};
                ProbMap pm{cfg.patch_size, cfg.patch_size,
                           std::vector<double>(out.prob.begin() + b * plane,
                                               out.prob.begin() + (b + 1) * plane)};
                TupleBatch tb = sample_tuples(pm, lm, scfg);
                tb.image_index = b;
                if (!tb.empty()) batches.push_back(std::move(tb));
            }
            per_strategy.push_back(std::move(batches));
        }

        auto breakdown = total_loss(out.logits, labels, out.embedding, per_strategy, cfg.loss);
        breakdown.loss.backward();
        const double lr = poly_lr(iter, cfg.train.max_iters, cfg.train.base_lr, cfg.train.poly_power);
        sgd_step(res.model.params, lr);

        LogRow row{iter, lr, breakdown.ce, breakdown.metric_per_strategy, breakdown.total,
                   breakdown.tuple_counts};
        res.log.push_back(std::move(row));

        if (cfg.train.val_interval > 0 && !val_indices.empty() &&
            (iter + 1) % cfg.train.val_interval == 0) {
            const double d = mean_val_dsc(res.model, regions, val_indices, cfg.patch_channels);
            if (d > res.best_val_dsc) {
                res.best_val_dsc = d;
                best = res.model.clone();
            }
        }
    }
    const auto t1 = std::chrono::steady_clock::now();
    if (cfg.train.max_iters > 0)
        res.seconds_per_iter = std::chrono::duration<double>(t1 - t0).count() / cfg.train.max_iters;
    if (res.best_val_dsc >= 0) res.model = std::move(best);
    return res;
}

MaskVol infer_region(ModelState<float>& model, const Volume& region, int channels) {
    const int div = model.spec.spatial_divisor();
    if (region.dims[1] % div != 0 || region.dims[2] % div != 0)
        throw std::invalid_argument("infer_region: in-plane dims must be padded to multiples of " +
                                    std::to_string(div));
    const Mode prev = model.mode;
    model.mode = Mode::eval;
    const int nz = region.dims[0], H = region.dims[1], W = region.dims[2];
    const int half = channels / 2;
    MaskVol out;
    out.dims = region.dims;
    out.spacing = region.spacing;
    out.id = region.id;
    out.voxels.assign(static_cast<size_t>(out.size()), 0);

    constexpr int kChunk = 16;
    for (int z0 = 0; z0 < nz; z0 += kChunk) {
        const int n = std::min(kChunk, nz - z0);
        Tensorf input(Shape{n, channels, H, W});
        for (int b = 0; b < n; ++b)
            for (int c = 0; c < channels; ++c) {
                // edge-replicated slice stack at the volume boundary
                const int z = std::clamp(z0 + b + c - half, 0, nz - 1);
                for (int y = 0; y < H; ++y)
                    for (int x = 0; x < W; ++x)
                        input.data()[((static_cast<std::int64_t>(b) * channels + c) * H + y) * W +
                                     x] = region.at(z, y, x) / 255.0f;
            }
        auto fwd = forward(model, input);
        const std::int64_t plane = static_cast<std::int64_t>(H) * W;
        for (int b = 0; b < n; ++b)
            for (std::int64_t p = 0; p < plane; ++p) {
                const float z0l = fwd.logits[(static_cast<std::int64_t>(b) * 2 + 0) * plane + p];
                const float z1l = fwd.logits[(static_cast<std::int64_t>(b) * 2 + 1) * plane + p];
                if (z1l > z0l)
                    out.voxels[static_cast<size_t>(z0 + b) * plane + static_cast<size_t>(p)] = 1;
            }
    }
    model.mode = prev;
    return out;
}

// ---- ablation / sweeps -------------------------------------------------

const std::vector<AblationRowSpec>& ablation_table() {
    static const std::vector<AblationRowSpec> rows = {
        {"UNet (Baseline)", false, false, false, false, false},
        {"MetricUNet-R-Sep", true, false, false, false, true},
        {"MetricUNet-R", true, false, false, false, false},
        {"MetricUNet-H", false, true, false, false, false},
        {"MetricUNet-C", false, false, true, false, false},
        {"MetricUNet-HR", true, true, false, false, false},
        {"MetricUNet-HC", false, true, true, false, false},
        {"MetricUNet-HP", false, true, false, true, false},
        {"MetricUNet-HRP", true, true, false, true, false},
        {"MetricUNet-HCP", false, true, true, true, false},
    };
    return rows;
}

namespace {

ExperimentConfig config_for_row(const ExperimentConfig& base, const AblationRowSpec& row) {
    ExperimentConfig cfg = base;
    cfg.loss.strategies.clear();
    auto add = [&](Strategy s) {
        SamplingConfig sc;
        sc.strategy = s;
        cfg.loss.strategies.push_back(sc);
    };
    if (row.random) add(Strategy::random);
    if (row.hard) add(Strategy::focal_hard);
    if (row.contour) add(Strategy::contour);
    cfg.loss.use_pair_term = row.pair_term;
    cfg.loss.sep_mode = row.sep;
    return cfg;
}

std::string summarize(const std::vector<RegionCase>& regions, const std::vector<int>& test_idx,
                      ModelState<float>& model, int channels) {
    std::vector<double> dscs, asds, hd95s, sens, ppvs, arvds;
    for (int i : test_idx) {
        const auto& rc = regions[static_cast<size_t>(i)];
        const MaskVol pred = infer_region(model, rc.region, channels);
        const MetricsReport r = compute_metrics(rc.region_mask, pred, rc.region.spacing);
        dscs.push_back(r.dsc);
        if (r.asd_mm) asds.push_back(*r.asd_mm);
        if (r.hd95_mm) hd95s.push_back(*r.hd95_mm);
        if (r.sen) sens.push_back(*r.sen);
        if (r.ppv) ppvs.push_back(*r.ppv);
        if (r.arvd_percent) arvds.push_back(*r.arvd_percent);
    }
    auto cell = [](std::vector<double> v) -> std::string {
        if (v.empty()) return "undefined,undefined,undefined";
        const double mean = std::accumulate(v.begin(), v.end(), 0.0) / v.size();
        double var = 0;
        for (double x : v) var += (x - mean) * (x - mean);
        var /= static_cast<double>(v.size());
        std::sort(v.begin(), v.end());
        const double med =
            v.size() % 2 ? v[v.size() / 2] : 0.5 * (v[v.size() / 2 - 1] + v[v.size() / 2]);
        char buf[96];
        std::snprintf(buf, sizeof(buf), "%.6f,%.6f,%.6f", mean, std::sqrt(var), med);
        return buf;
    };
    return cell(dscs) + "," + cell(asds) + "," + cell(hd95s) + "," + cell(sens) + "," +
           cell(ppvs) + "," + cell(arvds);
}

constexpr const char* kSummaryHeader =
    "dsc_mean,dsc_std,dsc_median,asd_mean,asd_std,asd_median,"
    "hd95_mean,hd95_std,hd95_median,sen_mean,sen_std,sen_median,"
    "ppv_mean,ppv_std,ppv_median,arvd_mean,arvd_std,arvd_median";

}  // namespace

void ablate(const ExperimentConfig& cfg, const std::vector<std::pair<Volume, MaskVol>>& data,
            const std::string& out_csv) {
    const SplitIndices split = split_dataset(static_cast<int>(data.size()), cfg.dataset);
    const std::vector<RegionCase> regions = prepare_regions(data, nullptr, cfg);
    std::ofstream os(out_csv);
    if (!os) throw std::runtime_error("ablate: cannot open " + out_csv);
    os << "config_name,random,hard_negative,contour_aware,cross_entropy,positive_pair,triplet,"
       << kSummaryHeader << "\n";
    for (const auto& row : ablation_table()) {
        const bool triplet = row.random || row.hard || row.contour;
        os << row.name << "," << row.random << "," << row.hard << "," << row.contour << ",1,"
           << row.pair_term << "," << triplet << ",";
        try {
            ExperimentConfig rc = config_for_row(cfg, row);
            TrainResult tr = train_stage2(rc, regions, split.train, split.val);
            os << summarize(regions, split.test, tr.model, cfg.patch_channels);
        } catch (const std::exception& e) {
            os << "error:" << e.what();  // row failed; the run continues
        }
        os << "\n";
    }
}

void sweep(const ExperimentConfig& cfg, const std::vector<std::pair<Volume, MaskVol>>& data,
           const std::string& param, const std::string& out_csv) {
    const SplitIndices split = split_dataset(static_cast<int>(data.size()), cfg.dataset);
    const std::vector<RegionCase> regions = prepare_regions(data, nullptr, cfg);
    std::vector<double> grid;
    if (param == "lambda") grid = {0.1, 0.01, 0.001};
    else if (param == "sigma") grid = {0.1, 0.3, 0.5, 0.7, 1.0};
    else if (param == "k") grid = {20, 50, 100, 200};
    else throw std::invalid_argument("sweep: unknown parameter '" + param + "'");

    std::ofstream os(out_csv);
    if (!os) throw std::runtime_error("sweep: cannot open " + out_csv);
    os << "param,value," << kSummaryHeader << "\n";
    for (double value : grid) {
        os << param << "," << value << ",";
        try {
            ExperimentConfig rc = config_for_row(cfg, {"MetricUNet-R", true, false, false, false,
                                                       false});
            if (param == "lambda") rc.loss.lambda = value;
            if (param == "sigma") rc.loss.sigma = value;
            if (param == "k")
                for (auto& s : rc.loss.strategies) s.k = static_cast<int>(value);
            TrainResult tr = train_stage2(rc, regions, split.train, split.val);
            os << summarize(regions, split.test, tr.model, cfg.patch_channels);
        } catch (const std::exception& e) {
            os << "error:" << e.what();
        }
        os << "\n";
    }
}

// ---- reporting ---------------------------------------------------------

void write_pgm(const std::string& path, const std::vector<std::uint8_t>& pixels, int h, int w) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw std::runtime_error("write_pgm: cannot open " + path);
    os << "P5\n" << w << " " << h << "\n255\n";
    os.write(reinterpret_cast<const char*>(pixels.data()),
             static_cast<std::streamsize>(pixels.size()));
}

namespace {

std::vector<std::uint8_t> slice_contour(const MaskVol& m, int z) {
    const int H = m.dims[1], W = m.dims[2];
    std::vector<std::uint8_t> c(static_cast<size_t>(H) * W, 0);
    auto bg = [&](int y, int x) {
        if (y < 0 || y >= H || x < 0 || x >= W) return true;
        return m.at(z, y, x) == 0;
    };
    for (int y = 0; y < H; ++y)
        for (int x = 0; x < W; ++x)
            if (m.at(z, y, x) == 1 && (bg(y - 1, x) || bg(y + 1, x) || bg(y, x - 1) || bg(y, x + 1)))
                c[static_cast<size_t>(y) * W + x] = 1;
    return c;
}

}  // namespace

void write_overlay_pgm(const std::string& path, const Volume& region, const MaskVol& gt,
                       const MaskVol& pred) {
    const int z = region.dims[0] / 2, H = region.dims[1], W = region.dims[2];
    std::vector<std::uint8_t> img(static_cast<size_t>(H) * W);
    for (int y = 0; y < H; ++y)
        for (int x = 0; x < W; ++x)
            img[static_cast<size_t>(y) * W + x] = static_cast<std::uint8_t>(
                std::clamp(region.at(z, y, x) * 0.6f, 0.0f, 150.0f));
    const auto gc = slice_contour(gt, z), pc = slice_contour(pred, z);
    for (size_t i = 0; i < img.size(); ++i) {
        if (pc[i]) img[i] = 180;
        if (gc[i]) img[i] = 255;  // ground truth wins where contours coincide
    }
    write_pgm(path, img, H, W);
}

}  // namespace munet
