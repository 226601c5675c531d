#include "munet/volume.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>
#include <stdexcept>

#include <json.hpp>

namespace munet {

std::int64_t MaskVol::count() const {
    std::int64_t n = 0;
    for (auto v : voxels) n += v;
    return n;
}

namespace {

void write_header(std::ostream& os, const std::array<int, 3>& dims,
                  const std::array<double, 3>& spacing, const char* dtype) {
    // header lists (nx ny nz sx sy sz); dims/spacing are stored (z,y,x)
    os << "VVOL " << dims[2] << " " << dims[1] << " " << dims[0] << " " << spacing[2] << " "
       << spacing[1] << " " << spacing[0] << " " << dtype << "\n";
}

struct Header {
    std::array<int, 3> dims;
    std::array<double, 3> spacing;
    std::string dtype;
};

Header read_header(std::istream& is, const std::string& path) {
    std::string line;
    if (!std::getline(is, line)) throw std::runtime_error("VVOL: empty file " + path);
    std::istringstream ls(line);
    std::string magic;
    Header h;
    int nx, ny, nz;
    double sx, sy, sz;
    if (!(ls >> magic >> nx >> ny >> nz >> sx >> sy >> sz >> h.dtype) || magic != "VVOL")
        throw std::runtime_error("VVOL: bad header in " + path);
    h.dims = {nz, ny, nx};
    h.spacing = {sz, sy, sx};
    return h;
}

}  // namespace

void write_vvol(const std::string& path, const Volume& v) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw std::runtime_error("VVOL: cannot open for write: " + path);
    write_header(os, v.dims, v.spacing, "f32");
    static_assert(sizeof(float) == 4);
    os.write(reinterpret_cast<const char*>(v.voxels.data()),
             static_cast<std::streamsize>(v.voxels.size() * 4));
    if (!os) throw std::runtime_error("VVOL: write failed: " + path);
}

void write_vvol(const std::string& path, const MaskVol& m) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw std::runtime_error("VVOL: cannot open for write: " + path);
    write_header(os, m.dims, m.spacing, "u8");
    os.write(reinterpret_cast<const char*>(m.voxels.data()),
             static_cast<std::streamsize>(m.voxels.size()));
    if (!os) throw std::runtime_error("VVOL: write failed: " + path);
}

Volume read_vvol_volume(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw std::runtime_error("VVOL: cannot open: " + path);
    const Header h = read_header(is, path);
    if (h.dtype != "f32") throw std::runtime_error("VVOL: expected f32 volume in " + path);
    Volume v;
    v.dims = h.dims;
    v.spacing = h.spacing;
    v.id = std::filesystem::path(path).stem().string();
    v.voxels.resize(static_cast<size_t>(v.size()));
    is.read(reinterpret_cast<char*>(v.voxels.data()),
            static_cast<std::streamsize>(v.voxels.size() * 4));
    if (!is) throw std::runtime_error("VVOL: truncated voxel data in " + path);
    return v;
}

MaskVol read_vvol_mask(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw std::runtime_error("VVOL: cannot open: " + path);
    const Header h = read_header(is, path);
    if (h.dtype != "u8") throw std::runtime_error("VVOL: expected u8 mask in " + path);
    MaskVol m;
    m.dims = h.dims;
    m.spacing = h.spacing;
    m.id = std::filesystem::path(path).stem().string();
    m.voxels.resize(static_cast<size_t>(m.size()));
    is.read(reinterpret_cast<char*>(m.voxels.data()),
            static_cast<std::streamsize>(m.voxels.size()));
    if (!is) throw std::runtime_error("VVOL: truncated voxel data in " + path);
    for (auto v : m.voxels)
        if (v > 1) throw std::runtime_error("VVOL: mask value outside {0,1} in " + path);
    return m;
}

void SceneSpec::validate() const {
    for (int a = 0; a < 3; ++a) {
        if (blob_center[a] - blob_semi_axes[a] < 0 ||
            blob_center[a] + blob_semi_axes[a] > volume_shape[a] - 1)
            throw std::runtime_error("SceneSpec: blob exceeds volume along axis " +
                                     std::to_string(a));
    }
    auto near_blob = [&](const std::array<double, 3>& lm) {
        double q = 0;
        for (int a = 0; a < 3; ++a) {
            const double t = (lm[a] - blob_center[a]) / (blob_semi_axes[a] + landmark_radius);
            q += t * t;
        }
        return q <= 1.0;
    };
    if (near_blob(landmark1) || near_blob(landmark2))
        throw std::runtime_error("SceneSpec: landmark overlaps blob");
}

std::pair<Volume, MaskVol> generate_scene(const SceneSpec& spec) {
    spec.validate();
    Volume v;
    v.dims = spec.volume_shape;
    v.voxels.assign(static_cast<size_t>(v.size()), static_cast<float>(spec.background));
    MaskVol m;
    m.dims = spec.volume_shape;
    m.voxels.assign(static_cast<size_t>(m.size()), 0);

    const double amin =
        std::min({spec.blob_semi_axes[0], spec.blob_semi_axes[1], spec.blob_semi_axes[2]});
    for (int z = 0; z < v.dims[0]; ++z)
        for (int y = 0; y < v.dims[1]; ++y)
            for (int x = 0; x < v.dims[2]; ++x) {
                const double dz = (z - spec.blob_center[0]) / spec.blob_semi_axes[0];
                const double dy = (y - spec.blob_center[1]) / spec.blob_semi_axes[1];
                const double dx = (x - spec.blob_center[2]) / spec.blob_semi_axes[2];
                const double r = std::sqrt(dz * dz + dy * dy + dx * dx);
                if (r <= 1.0) m.at(z, y, x) = 1;
                double profile;
                if (spec.blur_width <= 0.0) {
                    profile = r <= 1.0 ? 1.0 : 0.0;
                } else {
                    // approximate signed distance to the boundary, in voxels
                    const double d = (1.0 - r) * amin;
                    profile = 0.5 * (1.0 + std::tanh(2.0 * d / spec.blur_width));
                }
                v.at(z, y, x) += static_cast<float>(spec.contrast_gap * profile);
            }

    auto paint_sphere = [&](const std::array<double, 3>& c) {
        const int r = static_cast<int>(std::ceil(spec.landmark_radius));
        for (int z = std::max(0, static_cast<int>(c[0]) - r);
             z <= std::min(v.dims[0] - 1, static_cast<int>(c[0]) + r); ++z)
            for (int y = std::max(0, static_cast<int>(c[1]) - r);
                 y <= std::min(v.dims[1] - 1, static_cast<int>(c[1]) + r); ++y)
                for (int x = std::max(0, static_cast<int>(c[2]) - r);
                     x <= std::min(v.dims[2] - 1, static_cast<int>(c[2]) + r); ++x) {
                    const double dz = z - c[0], dy = y - c[1], dx = x - c[2];
                    if (dz * dz + dy * dy + dx * dx <= spec.landmark_radius * spec.landmark_radius)
                        v.at(z, y, x) = static_cast<float>(spec.landmark_intensity);
                }
    };
    paint_sphere(spec.landmark1);
    paint_sphere(spec.landmark2);

    if (spec.noise_sigma > 0) {
        std::mt19937_64 rng(spec.seed);
        std::normal_distribution<double> noise(0.0, spec.noise_sigma);
        for (auto& f : v.voxels)
            f = static_cast<float>(std::clamp(static_cast<double>(f) + noise(rng), 0.0, 255.0));
    }
    return {std::move(v), std::move(m)};
}

std::vector<std::pair<Volume, MaskVol>> generate_dataset(const DatasetSpec& spec, int n,
                                                         std::uint64_t seed) {
    if (n <= 0) throw std::invalid_argument("generate_dataset: n must be > 0");
    std::vector<std::pair<Volume, MaskVol>> out;
    out.reserve(static_cast<size_t>(n));
    for (int id = 0; id < n; ++id) {
        // independent per-volume stream
        std::seed_seq sseq{static_cast<std::uint64_t>(id) + 1, seed};
        std::mt19937_64 rng(sseq);
        SceneSpec s;
        s.volume_shape = spec.volume_shape;
        s.blur_width = spec.blur_width;
        s.contrast_gap = spec.contrast_gap;
        s.noise_sigma = spec.noise_sigma;
        std::uniform_real_distribution<double> axis(spec.min_semi_axis, spec.max_semi_axis);
        s.blob_semi_axes = {axis(rng), axis(rng), axis(rng)};
        for (int a = 0; a < 2; ++a) {
            const double margin = s.blob_semi_axes[a] + 2.0;
            std::uniform_real_distribution<double> c(margin, spec.volume_shape[a] - 1 - margin);
            s.blob_center[a] = c(rng);
        }
        // the blob sits near the x midline, flanked by the landmark spheres
        const double mid = (spec.volume_shape[2] - 1) / 2.0;
        std::uniform_real_distribution<double> cx(mid - 6.0, mid + 6.0);
        s.blob_center[2] = cx(rng);
        // landmarks flank the blob along x, clear of the blob surface
        const double lz = s.blob_center[0];
        const double ly = s.blob_center[1];
        s.landmark_radius = 3.0;
        s.landmark1 = {lz, ly, s.landmark_radius + 1.0};
        s.landmark2 = {lz, ly, spec.volume_shape[2] - 1 - s.landmark_radius - 1.0};
        s.seed = rng();
        auto pair = generate_scene(s);
        pair.first.id = "case" + std::to_string(id);
        pair.second.id = pair.first.id;
        out.push_back(std::move(pair));
    }
    return out;
}

std::string write_dataset(const std::vector<std::pair<Volume, MaskVol>>& data,
                          const std::string& dir) {
    std::filesystem::create_directories(dir);
    nlohmann::json manifest = nlohmann::json::array();
    for (const auto& [v, m] : data) {
        const std::string vp = dir + "/" + v.id + "_img.vvol";
        const std::string mp = dir + "/" + v.id + "_msk.vvol";
        write_vvol(vp, v);
        write_vvol(mp, m);
        manifest.push_back({{"id", v.id}, {"volume_path", vp}, {"mask_path", mp}});
    }
    const std::string mpath = dir + "/manifest.json";
    std::ofstream os(mpath);
    os << manifest.dump(2) << "\n";
    return mpath;
}

std::vector<std::pair<Volume, MaskVol>> read_dataset(const std::string& manifest_path) {
    std::ifstream is(manifest_path);
    if (!is) throw std::runtime_error("dataset: cannot open manifest " + manifest_path);
    nlohmann::json manifest;
    is >> manifest;
    std::vector<std::pair<Volume, MaskVol>> out;
    for (const auto& e : manifest) {
        auto v = read_vvol_volume(e.at("volume_path").get<std::string>());
        auto m = read_vvol_mask(e.at("mask_path").get<std::string>());
        v.id = e.at("id").get<std::string>();
        m.id = v.id;
        out.emplace_back(std::move(v), std::move(m));
    }
    return out;
}

namespace {

float trilinear(const Volume& v, double z, double y, double x) {
    const int z0 = std::clamp(static_cast<int>(std::floor(z)), 0, v.dims[0] - 1);
    const int y0 = std::clamp(static_cast<int>(std::floor(y)), 0, v.dims[1] - 1);
    const int x0 = std::clamp(static_cast<int>(std::floor(x)), 0, v.dims[2] - 1);
    const int z1 = std::min(z0 + 1, v.dims[0] - 1);
    const int y1 = std::min(y0 + 1, v.dims[1] - 1);
    const int x1 = std::min(x0 + 1, v.dims[2] - 1);
    const double fz = std::clamp(z - z0, 0.0, 1.0);
    const double fy = std::clamp(y - y0, 0.0, 1.0);
    const double fx = std::clamp(x - x0, 0.0, 1.0);
    double acc = 0;
    for (int dz = 0; dz < 2; ++dz)
        for (int dy = 0; dy < 2; ++dy)
            for (int dx = 0; dx < 2; ++dx) {
                const double w = (dz ? fz : 1 - fz) * (dy ? fy : 1 - fy) * (dx ? fx : 1 - fx);
                acc += w * v.at(dz ? z1 : z0, dy ? y1 : y0, dx ? x1 : x0);
            }
    return static_cast<float>(acc);
}

Volume resample_to(const Volume& v, const std::array<int, 3>& new_dims,
                   const std::array<double, 3>& new_spacing) {
    Volume out;
    out.dims = new_dims;
    out.spacing = new_spacing;
    out.id = v.id;
    out.voxels.resize(static_cast<size_t>(out.size()));
    for (int z = 0; z < new_dims[0]; ++z)
        for (int y = 0; y < new_dims[1]; ++y)
            for (int x = 0; x < new_dims[2]; ++x)
                out.at(z, y, x) = trilinear(v, z * new_spacing[0] / v.spacing[0],
                                            y * new_spacing[1] / v.spacing[1],
                                            x * new_spacing[2] / v.spacing[2]);
    return out;
}

}  // namespace

Volume resample_isotropic(const Volume& v, double target_mm) {
    for (int a = 0; a < 3; ++a) {
        if (v.spacing[a] <= 0) throw std::invalid_argument("resample_isotropic: non-positive spacing");
        if (v.dims[a] <= 1) throw std::invalid_argument("resample_isotropic: degenerate axis");
    }
    std::array<int, 3> nd;
    for (int a = 0; a < 3; ++a)
        nd[a] = std::max(1, static_cast<int>(std::round(v.dims[a] * v.spacing[a] / target_mm)));
    return resample_to(v, nd, {target_mm, target_mm, target_mm});
}

Volume downsample(const Volume& v, int factor) {
    if (factor < 1) throw std::invalid_argument("downsample: factor must be >= 1");
    for (int a = 0; a < 3; ++a)
        if (v.dims[a] <= 1) throw std::invalid_argument("downsample: degenerate axis");
    std::array<int, 3> nd{v.dims[0] / factor, v.dims[1] / factor, v.dims[2] / factor};
    std::array<double, 3> ns{v.spacing[0] * factor, v.spacing[1] * factor, v.spacing[2] * factor};
    Volume out;
    out.dims = nd;
    out.spacing = ns;
    out.id = v.id;
    out.voxels.resize(static_cast<size_t>(out.size()));
    for (int z = 0; z < nd[0]; ++z)
        for (int y = 0; y < nd[1]; ++y)
            for (int x = 0; x < nd[2]; ++x)
                out.at(z, y, x) = trilinear(v, z * static_cast<double>(factor),
                                            y * static_cast<double>(factor),
                                            x * static_cast<double>(factor));
    return out;
}

MaskVol downsample_mask_nearest(const MaskVol& m, int factor) {
    if (factor < 1) throw std::invalid_argument("downsample_mask_nearest: factor must be >= 1");
    MaskVol out;
    out.dims = {m.dims[0] / factor, m.dims[1] / factor, m.dims[2] / factor};
    out.spacing = {m.spacing[0] * factor, m.spacing[1] * factor, m.spacing[2] * factor};
    out.id = m.id;
    out.voxels.resize(static_cast<size_t>(out.size()));
    for (int z = 0; z < out.dims[0]; ++z)
        for (int y = 0; y < out.dims[1]; ++y)
            for (int x = 0; x < out.dims[2]; ++x)
                out.at(z, y, x) = m.at(z * factor, y * factor, x * factor);
    return out;
}

Volume normalize_intensity(const Volume& v) {
    const auto [mn, mx] = std::minmax_element(v.voxels.begin(), v.voxels.end());
    Volume out = v;
    if (*mx == *mn) {
        std::fill(out.voxels.begin(), out.voxels.end(), 0.0f);  // constant volume convention
        return out;
    }
    const float lo = *mn, range = *mx - *mn;
    for (auto& f : out.voxels) f = (f - lo) / range * 255.0f;
    return out;
}

CropResult crop_body(const Volume& v, double threshold) {
    std::array<int, 3> lo{v.dims[0], v.dims[1], v.dims[2]}, hi{-1, -1, -1};
    for (int z = 0; z < v.dims[0]; ++z)
        for (int y = 0; y < v.dims[1]; ++y)
            for (int x = 0; x < v.dims[2]; ++x)
                if (v.at(z, y, x) > threshold) {
                    lo = {std::min(lo[0], z), std::min(lo[1], y), std::min(lo[2], x)};
                    hi = {std::max(hi[0], z), std::max(hi[1], y), std::max(hi[2], x)};
                }
    if (hi[0] < 0) throw std::runtime_error("crop_body: no voxel above threshold");
    CropResult r;
    r.offset = lo;
    r.volume = crop_volume(v, lo, {hi[0] - lo[0] + 1, hi[1] - lo[1] + 1, hi[2] - lo[2] + 1});
    return r;
}

Volume crop_volume(const Volume& v, const std::array<int, 3>& offset,
                   const std::array<int, 3>& size) {
    Volume out;
    out.dims = size;
    out.spacing = v.spacing;
    out.id = v.id;
    out.voxels.resize(static_cast<size_t>(out.size()));
    for (int z = 0; z < size[0]; ++z)
        for (int y = 0; y < size[1]; ++y)
            for (int x = 0; x < size[2]; ++x)
                out.at(z, y, x) = v.at(z + offset[0], y + offset[1], x + offset[2]);
    return out;
}

MaskVol crop_mask(const MaskVol& m, const std::array<int, 3>& offset,
                  const std::array<int, 3>& size) {
    MaskVol out;
    out.dims = size;
    out.spacing = m.spacing;
    out.id = m.id;
    out.voxels.resize(static_cast<size_t>(out.size()));
    for (int z = 0; z < size[0]; ++z)
        for (int y = 0; y < size[1]; ++y)
            for (int x = 0; x < size[2]; ++x)
                out.at(z, y, x) = m.at(z + offset[0], y + offset[1], x + offset[2]);
    return out;
}

PatchSample extract_patch_at(const Volume& v, const MaskVol& m, int slice, int y0, int x0, int size,
                             int channels) {
    if (channels % 2 == 0) throw std::invalid_argument("extract_patch_at: channels must be odd");
    if (v.dims[0] < channels)
        throw std::invalid_argument("extract_patch_at: volume thinner than slice stack");
    const int half = channels / 2;
    if (slice - half < 0 || slice + half >= v.dims[0] || y0 < 0 || x0 < 0 ||
        y0 + size > v.dims[1] || x0 + size > v.dims[2])
        throw std::out_of_range("extract_patch_at: crop outside volume");
    PatchSample p;
    p.channels = channels;
    p.size = size;
    p.volume_id = v.id;
    p.slice = slice;
    p.y0 = y0;
    p.x0 = x0;
    p.input.resize(static_cast<size_t>(channels) * size * size);
    p.label.resize(static_cast<size_t>(size) * size);
    for (int c = 0; c < channels; ++c)
        for (int y = 0; y < size; ++y)
            for (int x = 0; x < size; ++x)
                p.input[(static_cast<size_t>(c) * size + y) * size + x] =
                    v.at(slice - half + c, y0 + y, x0 + x);
    for (int y = 0; y < size; ++y)
        for (int x = 0; x < size; ++x)
            p.label[static_cast<size_t>(y) * size + x] = m.at(slice, y0 + y, x0 + x);
    return p;
}

std::vector<PatchSample> extract_patches(const Volume& v, const MaskVol& m, int count, int size,
                                         int channels, std::uint64_t seed) {
    if (channels % 2 == 0) throw std::invalid_argument("extract_patches: channels must be odd");
    if (size > v.dims[1] || size > v.dims[2])
        throw std::invalid_argument("extract_patches: patch larger than in-plane dims");
    if (v.dims[0] < channels)
        throw std::invalid_argument("extract_patches: volume thinner than slice stack");
    std::vector<PatchSample> out;
    out.reserve(static_cast<size_t>(count));
    std::mt19937_64 rng(seed);
    const int half = channels / 2;
    std::uniform_int_distribution<int> dz(half, v.dims[0] - 1 - half);
    std::uniform_int_distribution<int> dy(0, v.dims[1] - size);
    std::uniform_int_distribution<int> dx(0, v.dims[2] - size);
    for (int i = 0; i < count; ++i) {
        const int z = dz(rng), y0 = dy(rng), x0 = dx(rng);
        out.push_back(extract_patch_at(v, m, z, y0, x0, size, channels));
    }
    return out;
}

}  // namespace munet
