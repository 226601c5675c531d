#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

namespace munet {

/// Scalar image volume. Dims and spacing are ordered (z,y,x); voxels are
/// row-major with x fastest.
struct Volume {
    std::array<int, 3> dims{0, 0, 0};
    std::array<double, 3> spacing{1.0, 1.0, 1.0};
    std::vector<float> voxels;
    std::string id;

    std::int64_t size() const {
        return static_cast<std::int64_t>(dims[0]) * dims[1] * dims[2];
    }
    float& at(int z, int y, int x) {
        return voxels[(static_cast<std::int64_t>(z) * dims[1] + y) * dims[2] + x];
    }
    float at(int z, int y, int x) const {
        return voxels[(static_cast<std::int64_t>(z) * dims[1] + y) * dims[2] + x];
    }
};

/// Binary label volume paired with a Volume.
struct MaskVol {
    std::array<int, 3> dims{0, 0, 0};
    std::array<double, 3> spacing{1.0, 1.0, 1.0};
    std::vector<std::uint8_t> voxels;
    std::string id;

    std::int64_t size() const {
        return static_cast<std::int64_t>(dims[0]) * dims[1] * dims[2];
    }
    std::uint8_t& at(int z, int y, int x) {
        return voxels[(static_cast<std::int64_t>(z) * dims[1] + y) * dims[2] + x];
    }
    std::uint8_t at(int z, int y, int x) const {
        return voxels[(static_cast<std::int64_t>(z) * dims[1] + y) * dims[2] + x];
    }
    std::int64_t count() const;
};

// ---- VVOL file format --------------------------------------------------
// ASCII header "VVOL <nx> <ny> <nz> <sx> <sy> <sz> <dtype>\n" followed by
// little-endian row-major voxels (x fastest). dtype f32 for volumes, u8
// for masks with values {0,1}.

void write_vvol(const std::string& path, const Volume& v);
void write_vvol(const std::string& path, const MaskVol& m);
Volume read_vvol_volume(const std::string& path);
MaskVol read_vvol_mask(const std::string& path);

// ---- Synthetic scenes --------------------------------------------------

/// One synthetic scene: a blurred low-contrast ellipsoidal blob plus two
/// bright landmark spheres flanking it, over a uniform background.
struct SceneSpec {
    std::array<int, 3> volume_shape{64, 96, 96};  // (z,y,x)
    std::array<double, 3> blob_center{32, 48, 48};
    std::array<double, 3> blob_semi_axes{10, 14, 12};
    double blur_width = 3.0;      // voxels across the boundary falloff
    double contrast_gap = 20.0;   // foreground minus background intensity
    double background = 60.0;
    std::array<double, 3> landmark1{32, 48, 16};
    std::array<double, 3> landmark2{32, 48, 80};
    double landmark_radius = 4.0;
    double landmark_intensity = 230.0;
    double noise_sigma = 2.0;
    std::uint64_t seed = 0;

    void validate() const;
};

/// Scene -> (intensity volume, exact pre-blur blob mask). Deterministic in
/// (spec, spec.seed).
std::pair<Volume, MaskVol> generate_scene(const SceneSpec& spec);

struct DatasetSpec {
    std::array<int, 3> volume_shape{64, 96, 96};
    double min_semi_axis = 8.0;
    double max_semi_axis = 16.0;
    double blur_width = 3.0;
    double contrast_gap = 20.0;
    double noise_sigma = 2.0;
};

/// n randomized scenes; per-volume RNG streams are derived from (seed, id)
/// so results do not depend on generation order.
std::vector<std::pair<Volume, MaskVol>> generate_dataset(const DatasetSpec& spec, int n,
                                                         std::uint64_t seed);

/// Writes volumes/masks as VVOL plus a JSON manifest
/// [{id, volume_path, mask_path}, ...]; returns the manifest path.
std::string write_dataset(const std::vector<std::pair<Volume, MaskVol>>& data,
                          const std::string& dir);
std::vector<std::pair<Volume, MaskVol>> read_dataset(const std::string& manifest_path);

// ---- Preprocessing -----------------------------------------------------

Volume resample_isotropic(const Volume& v, double target_mm = 1.0);

/// Trilinear downsample by an integer factor along every axis.
Volume downsample(const Volume& v, int factor);
MaskVol downsample_mask_nearest(const MaskVol& m, int factor);

/// Affine map of intensities to [0,255]; a constant volume maps to 0.
Volume normalize_intensity(const Volume& v);

struct CropResult {
    Volume volume;
    std::array<int, 3> offset{0, 0, 0};  // (z,y,x) of the crop origin
};

/// Tight bounding box of voxels above threshold.
CropResult crop_body(const Volume& v, double threshold = 10.0);

MaskVol crop_mask(const MaskVol& m, const std::array<int, 3>& offset,
                  const std::array<int, 3>& size);
Volume crop_volume(const Volume& v, const std::array<int, 3>& offset,
                   const std::array<int, 3>& size);

// ---- Patch extraction --------------------------------------------------

/// Stack of consecutive slices as channels with the middle slice's label.
struct PatchSample {
    int channels = 0;
    int size = 0;
    std::vector<float> input;         // [channels, size, size]
    std::vector<std::uint8_t> label;  // [size, size]
    std::string volume_id;
    int slice = 0;
    int y0 = 0;
    int x0 = 0;
};

std::vector<PatchSample> extract_patches(const Volume& v, const MaskVol& m, int count, int size,
                                         int channels, std::uint64_t seed);

/// One random patch draw (used by the training loops).
PatchSample extract_patch_at(const Volume& v, const MaskVol& m, int slice, int y0, int x0, int size,
                             int channels);

}  // namespace munet
