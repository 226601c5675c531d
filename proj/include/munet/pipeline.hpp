#pragma once

#include <optional>
#include <string>
#include <vector>

#include "munet/losses.hpp"
#include "munet/metrics.hpp"
#include "munet/network.hpp"
#include "munet/volume.hpp"

namespace munet {

struct DatasetConfig {
    std::string manifest;
    double train_frac = 0.7;
    double val_frac = 0.1;
    double test_frac = 0.2;
    std::uint64_t split_seed = 0;
    double body_crop_threshold = 10.0;
};

struct TrainConfig {
    int batch_size = 30;
    double base_lr = 0.01;
    double poly_power = 0.9;
    int max_iters = 3000;
    std::uint64_t seed = 0;
    int val_interval = 0;  // 0 disables DSC-based checkpoint selection
};

struct Stage1Config {
    int downsample = 2;
    int patch_size = 32;
    int channels = 5;
    int max_iters = 300;
    double landmark_threshold = 200.0;  // post-normalization intensity
    NetworkSpec detector = detection_spec();
};

struct ExperimentConfig {
    DatasetConfig dataset;
    NetworkSpec network;
    LossConfig loss;
    TrainConfig train;
    Stage1Config stage1;
    int region_size = 48;
    int patch_size = 32;
    int patch_channels = 3;
    std::string profile = "desk";
    bool deterministic = true;
    std::string out_dir = "out";

    void validate() const;
};

/// Desk profile keeps everything CPU-trainable; the paper profile restores
/// the full-scale geometry (region 128, patch 64, quarter downsampling).
void apply_profile(ExperimentConfig& cfg, const std::string& profile);

std::string config_to_json(const ExperimentConfig& cfg);
ExperimentConfig config_from_json(const std::string& json_text);
ExperimentConfig load_config(const std::string& path);

struct SplitIndices {
    std::vector<int> train, val, test;
};
SplitIndices split_dataset(int n, const DatasetConfig& cfg);

// ---- Localization ------------------------------------------------------

struct LocalizationResult {
    std::array<double, 3> predicted_centroid{0, 0, 0};
    std::array<double, 3> reference_center{0, 0, 0};
    std::array<double, 3> final_centroid{0, 0, 0};
    std::array<int, 3> crop_offset{0, 0, 0};
    bool used_fallback = false;  // empty coarse mask -> reference center only
};

/// Landmark reference center: midpoint of the two bright-sphere centroids
/// found by intensity thresholding, split along x.
std::array<double, 3> find_reference_center(const Volume& normalized, double threshold);

/// Coarse detection on the downsampled volume plus landmark reference,
/// averaged; crop box of region_size clipped to bounds. detector may be
/// null, in which case the reference center alone is used.
LocalizationResult localize(ModelState<float>* detector, const Volume& normalized,
                            const Stage1Config& s1, int region_size);

struct RegionCase {
    std::string id;
    Volume region;       // normalized intensities
    MaskVol region_mask;
    LocalizationResult loc;
    bool contains_full_blob = false;
};

std::vector<RegionCase> prepare_regions(const std::vector<std::pair<Volume, MaskVol>>& data,
                                        ModelState<float>* detector, const ExperimentConfig& cfg);

// ---- Training ----------------------------------------------------------

struct LogRow {
    int iter = 0;
    double lr = 0;
    double ce = 0;
    std::vector<double> metric;
    double total = 0;
    std::vector<std::int64_t> tuple_counts;
};

struct TrainResult {
    ModelState<float> model;
    std::vector<LogRow> log;
    double seconds_per_iter = 0;
    double best_val_dsc = -1;
};

void write_train_log_csv(const std::string& path, const std::vector<LogRow>& log,
                         const std::vector<SamplingConfig>& strategies);

/// Stage-1 detector training: cross-entropy on 5-slice patches from the
/// downsampled volumes.
TrainResult train_stage1(const ExperimentConfig& cfg,
                         const std::vector<std::pair<Volume, MaskVol>>& data,
                         const std::vector<int>& train_indices);

/// Stage-2 MetricUNet training on localized regions: per iteration draws a
/// patch batch, runs the configured samplers on (prob, labels), and steps
/// SGD on the combined loss with poly-decayed lr.
TrainResult train_stage2(const ExperimentConfig& cfg, const std::vector<RegionCase>& regions,
                         const std::vector<int>& train_indices,
                         const std::vector<int>& val_indices = {});

/// Whole-region inference: slide over slices with edge-replicated 3-slice
/// stacks, argmax per voxel.
MaskVol infer_region(ModelState<float>& model, const Volume& region, int channels = 3);

// ---- Ablation / sweeps -------------------------------------------------

struct AblationRowSpec {
    const char* name;
    bool random, hard, contour;
    bool pair_term;
    bool sep;
};

/// The in-scope network-configuration matrix (backbone variants excluded).
const std::vector<AblationRowSpec>& ablation_table();

void ablate(const ExperimentConfig& cfg, const std::vector<std::pair<Volume, MaskVol>>& data,
            const std::string& out_csv);

/// param is one of "lambda", "sigma", "k"; the grids follow the
/// hyperparameter studies.
void sweep(const ExperimentConfig& cfg, const std::vector<std::pair<Volume, MaskVol>>& data,
           const std::string& param, const std::string& out_csv);

// ---- Reporting ---------------------------------------------------------

void write_pgm(const std::string& path, const std::vector<std::uint8_t>& pixels, int h, int w);

/// Middle-slice overlay: volume grayscale with ground-truth contour at 255
/// and predicted contour at 180.
void write_overlay_pgm(const std::string& path, const Volume& region, const MaskVol& gt,
                       const MaskVol& pred);

}  // namespace munet
