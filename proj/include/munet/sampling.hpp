#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace munet {

/// Binary label map for one patch, row-major.
struct LabelMap {
    int h = 0;
    int w = 0;
    std::vector<std::uint8_t> v;

    std::uint8_t at(int i, int j) const { return v[static_cast<size_t>(i) * w + j]; }
};

/// Foreground probability map paired with a LabelMap.
struct ProbMap {
    int h = 0;
    int w = 0;
    std::vector<double> v;

    double at(int i, int j) const { return v[static_cast<size_t>(i) * w + j]; }
};

struct Coord {
    int i = 0;
    int j = 0;
    bool operator==(const Coord&) const = default;
};

enum class Strategy { random, focal_hard, contour };

std::string strategy_name(Strategy s);
Strategy strategy_from_name(const std::string& name);

struct SamplingConfig {
    Strategy strategy = Strategy::random;
    int k = 20;       // anchors per image
    int m = 1;        // positives and negatives per anchor
    double tau = 0.1; // hard threshold
    std::uint64_t seed = 0;

    void validate() const;
};

/// Sampled voxel tuples for one image. Every anchor/positive carries label 1
/// and every negative label 0; per anchor there are exactly m positives and
/// m negatives. May be empty when no eligible candidates exist.
struct TupleBatch {
    int image_index = 0;
    std::vector<Coord> anchors;
    std::vector<std::vector<Coord>> positives;
    std::vector<std::vector<Coord>> negatives;

    bool empty() const { return anchors.empty(); }
    std::int64_t triplet_count() const;
    std::int64_t pair_count() const;
};

TupleBatch sample_random(const LabelMap& labels, const SamplingConfig& cfg);

/// Indicator of |prob - label| > tau.
std::vector<std::uint8_t> hard_sample_mask(const ProbMap& prob, const LabelMap& labels, double tau);

TupleBatch sample_focal_hard(const ProbMap& prob, const LabelMap& labels, const SamplingConfig& cfg);

/// Foreground voxels with a 4-connected background neighbor; the image
/// border counts as background. Returned in row-major order.
std::vector<Coord> extract_contour(const LabelMap& labels);

TupleBatch sample_contour(const LabelMap& labels, const SamplingConfig& cfg);

/// Strategy dispatch (prob is ignored for random/contour).
TupleBatch sample_tuples(const ProbMap& prob, const LabelMap& labels, const SamplingConfig& cfg);

/// Debug dump: image_index,i,j,role rows.
void write_tuples_csv(const std::string& path, const std::vector<TupleBatch>& batches);

}  // namespace munet
