#include <CLI11.hpp>

#include <filesystem>
#include <iostream>

#include "munet/checkpoint.hpp"
#include "munet/pipeline.hpp"

namespace fs = std::filesystem;
using namespace munet;

namespace {

struct GlobalOpts {
    std::string config_path;
    std::uint64_t seed = 0;
    bool seed_set = false;
    std::string profile;
    bool deterministic = true;
    std::string out_dir;
    std::string manifest;
};

ExperimentConfig resolve_config(const GlobalOpts& g) {
    ExperimentConfig cfg;
    if (!g.config_path.empty()) cfg = load_config(g.config_path);
    if (!g.profile.empty()) apply_profile(cfg, g.profile);
    if (g.seed_set) cfg.train.seed = g.seed;
    cfg.deterministic = g.deterministic;
    if (!g.out_dir.empty()) cfg.out_dir = g.out_dir;
    if (!g.manifest.empty()) cfg.dataset.manifest = g.manifest;
    cfg.validate();
    fs::create_directories(cfg.out_dir);
    return cfg;
}

std::vector<std::pair<Volume, MaskVol>> load_data(const ExperimentConfig& cfg) {
    if (cfg.dataset.manifest.empty())
        throw std::runtime_error("no dataset manifest; run gen-data or pass --manifest");
    return read_dataset(cfg.dataset.manifest);
}

// Regions with the trained detector when a stage-1 checkpoint is present,
// landmark reference only otherwise.
std::vector<RegionCase> regions_for(const ExperimentConfig& cfg,
                                    const std::vector<std::pair<Volume, MaskVol>>& data) {
    const std::string ck = cfg.out_dir + "/stage1.munc";
    if (fs::exists(ck)) {
        ModelState<float> det = build_detection_unet<float>(cfg.stage1.detector, cfg.train.seed);
        load_checkpoint(det, ck);
        return prepare_regions(data, &det, cfg);
    }
    return prepare_regions(data, nullptr, cfg);
}

int cmd_gen_data(const GlobalOpts& g, int n) {
    ExperimentConfig cfg = resolve_config(g);
    DatasetSpec spec;
    auto data = generate_dataset(spec, n, g.seed_set ? g.seed : cfg.train.seed);
    const std::string manifest = write_dataset(data, cfg.out_dir + "/data");
    std::cout << "wrote " << n << " volumes, manifest " << manifest << "\n";
    return 0;
}

int cmd_train_stage1(const GlobalOpts& g) {
    ExperimentConfig cfg = resolve_config(g);
    auto data = load_data(cfg);
    const SplitIndices split = split_dataset(static_cast<int>(data.size()), cfg.dataset);
    TrainResult tr = train_stage1(cfg, data, split.train);
    save_checkpoint(tr.model, cfg.out_dir + "/stage1.munc");
    write_train_log_csv(cfg.out_dir + "/stage1_log.csv", tr.log, {});
    std::cout << "stage1: " << tr.log.size() << " iters, final ce "
              << (tr.log.empty() ? 0.0 : tr.log.back().ce) << ", "
              << tr.seconds_per_iter << " s/iter\n";
    return 0;
}

int cmd_train_stage2(const GlobalOpts& g) {
    ExperimentConfig cfg = resolve_config(g);
    auto data = load_data(cfg);
    const SplitIndices split = split_dataset(static_cast<int>(data.size()), cfg.dataset);
    const auto regions = regions_for(cfg, data);
    TrainResult tr = train_stage2(cfg, regions, split.train, split.val);
    save_checkpoint(tr.model, cfg.out_dir + "/stage2.munc");
    write_train_log_csv(cfg.out_dir + "/stage2_log.csv", tr.log, cfg.loss.strategies);
    std::ofstream(cfg.out_dir + "/config.json") << config_to_json(cfg);
    std::cout << "stage2: " << tr.log.size() << " iters, final total "
              << (tr.log.empty() ? 0.0 : tr.log.back().total) << ", " << tr.seconds_per_iter
              << " s/iter";
    if (tr.best_val_dsc >= 0) std::cout << ", best val dsc " << tr.best_val_dsc;
    std::cout << "\n";
    return 0;
}

ModelState<float> load_stage2(const ExperimentConfig& cfg) {
    ModelState<float> m = build_metric_unet<float>(cfg.network, cfg.train.seed);
    load_checkpoint(m, cfg.out_dir + "/stage2.munc");
    return m;
}

int cmd_infer(const GlobalOpts& g) {
    ExperimentConfig cfg = resolve_config(g);
    auto data = load_data(cfg);
    auto regions = regions_for(cfg, data);
    ModelState<float> m = load_stage2(cfg);
    for (const auto& rc : regions) {
        MaskVol pred = infer_region(m, rc.region, cfg.patch_channels);
        pred.id = rc.id;
        write_vvol(cfg.out_dir + "/pred_" + rc.id + ".vvol", pred);
    }
    std::cout << "wrote " << regions.size() << " predictions to " << cfg.out_dir << "\n";
    return 0;
}

int cmd_eval(const GlobalOpts& g) {
    ExperimentConfig cfg = resolve_config(g);
    auto data = load_data(cfg);
    const SplitIndices split = split_dataset(static_cast<int>(data.size()), cfg.dataset);
    auto regions = regions_for(cfg, data);
    ModelState<float> m = load_stage2(cfg);
    std::vector<std::string> ids;
    std::vector<MetricsReport> reports;
    for (int i : split.test) {
        const auto& rc = regions[static_cast<size_t>(i)];
        const MaskVol pred = infer_region(m, rc.region, cfg.patch_channels);
        ids.push_back(rc.id);
        reports.push_back(compute_metrics(rc.region_mask, pred, rc.region.spacing));
    }
    write_metrics_csv(cfg.out_dir + "/eval.csv", ids, reports);
    std::cout << "evaluated " << ids.size() << " test cases -> " << cfg.out_dir << "/eval.csv\n";
    return 0;
}

int cmd_ablate(const GlobalOpts& g) {
    ExperimentConfig cfg = resolve_config(g);
    auto data = load_data(cfg);
    ablate(cfg, data, cfg.out_dir + "/ablation.csv");
    std::cout << "wrote " << cfg.out_dir << "/ablation.csv\n";
    return 0;
}

int cmd_sweep(const GlobalOpts& g, const std::string& param) {
    ExperimentConfig cfg = resolve_config(g);
    auto data = load_data(cfg);
    sweep(cfg, data, param, cfg.out_dir + "/sweep_" + param + ".csv");
    std::cout << "wrote " << cfg.out_dir << "/sweep_" << param << ".csv\n";
    return 0;
}

int cmd_report(const GlobalOpts& g) {
    ExperimentConfig cfg = resolve_config(g);
    auto data = load_data(cfg);
    const SplitIndices split = split_dataset(static_cast<int>(data.size()), cfg.dataset);
    auto regions = regions_for(cfg, data);
    ModelState<float> m = load_stage2(cfg);
    for (int i : split.test) {
        const auto& rc = regions[static_cast<size_t>(i)];
        const MaskVol pred = infer_region(m, rc.region, cfg.patch_channels);
        write_overlay_pgm(cfg.out_dir + "/overlay_" + rc.id + ".pgm", rc.region, rc.region_mask,
                          pred);
    }
    std::cout << "wrote " << split.test.size() << " overlays to " << cfg.out_dir << "\n";
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"MetricUNet two-stage segmentation toolkit"};
    app.require_subcommand(1);
    app.fallthrough();  // global flags may follow the subcommand

    GlobalOpts g;
    app.add_option("--config", g.config_path, "experiment config JSON");
    auto* seed_opt = app.add_option("--seed", g.seed, "training seed override");
    app.add_option("--profile", g.profile, "desk|paper geometry preset")
        ->check(CLI::IsMember({"desk", "paper"}));
    app.add_flag("--deterministic,!--no-deterministic", g.deterministic,
                 "single-threaded strict determinism (default on)");
    app.add_option("--out-dir", g.out_dir, "output directory");
    app.add_option("--manifest", g.manifest, "dataset manifest override");

    int n_volumes = 20;
    app.add_subcommand("gen-data", "generate a synthetic dataset")
        ->add_option("--n", n_volumes, "volume count");
    app.add_subcommand("train-stage1", "train the localization detector");
    app.add_subcommand("train-stage2", "train the segmentation network");
    app.add_subcommand("infer", "predict masks for every case");
    app.add_subcommand("eval", "metrics over the test split");
    app.add_subcommand("ablate", "network-configuration ablation table");
    std::string sweep_param = "lambda";
    app.add_subcommand("sweep", "hyperparameter sweep")
        ->add_option("--param", sweep_param, "lambda|sigma|k")
        ->check(CLI::IsMember({"lambda", "sigma", "k"}));
    app.add_subcommand("report", "qualitative contour overlays");

    CLI11_PARSE(app, argc, argv);
    g.seed_set = seed_opt->count() > 0;

    try {
        const std::string sub = app.get_subcommands().front()->get_name();
        if (sub == "gen-data") return cmd_gen_data(g, n_volumes);
        if (sub == "train-stage1") return cmd_train_stage1(g);
        if (sub == "train-stage2") return cmd_train_stage2(g);
        if (sub == "infer") return cmd_infer(g);
        if (sub == "eval") return cmd_eval(g);
        if (sub == "ablate") return cmd_ablate(g);
        if (sub == "sweep") return cmd_sweep(g, sweep_param);
        if (sub == "report") return cmd_report(g);
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
