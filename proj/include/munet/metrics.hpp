#pragma once

#include <array>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "munet/volume.hpp"

namespace munet {

/// Thrown when a metric's denominator set is empty (empty mask / surface).
struct UndefinedMetricError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

/// Boundary voxel centers (6-connectivity; the volume border counts as
/// background), with the owning mask's spacing.
struct SurfaceSet {
    std::vector<std::array<int, 3>> points;  // (z,y,x)
    std::array<double, 3> spacing{1, 1, 1};
};

SurfaceSet extract_surface(const MaskVol& m);

double dsc(const MaskVol& gt, const MaskVol& seg);
std::pair<double, double> ppv_sen(const MaskVol& gt, const MaskVol& seg);
double asd(const MaskVol& gt, const MaskVol& seg, const std::array<double, 3>& spacing);
std::pair<double, double> hd_hd95(const MaskVol& gt, const MaskVol& seg,
                                  const std::array<double, 3>& spacing);
double arvd(const MaskVol& gt, const MaskVol& seg);

/// One prediction/ground-truth pair. Distance metrics are nullopt when
/// undefined (an empty surface on either side).
struct MetricsReport {
    double dsc = 0;
    std::optional<double> asd_mm;
    std::optional<double> sen;
    std::optional<double> ppv;
    std::optional<double> hd_mm;
    std::optional<double> hd95_mm;
    std::optional<double> arvd_percent;
};

MetricsReport compute_metrics(const MaskVol& gt, const MaskVol& seg,
                              const std::array<double, 3>& spacing);

/// Per-case CSV plus a mean±std and a median summary row.
void write_metrics_csv(const std::string& path, const std::vector<std::string>& case_ids,
                       const std::vector<MetricsReport>& reports);

}  // namespace munet
