#include "munet/metrics.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <numeric>

namespace munet {

namespace {

void check_shapes(const MaskVol& gt, const MaskVol& seg, const char* what) {
    if (gt.dims != seg.dims)
        throw std::invalid_argument(std::string(what) + ": mask shape mismatch");
}

// Surface points as a 3xM matrix in mm.
Eigen::Matrix3Xd to_mm(const SurfaceSet& s) {
    Eigen::Matrix3Xd p(3, static_cast<Eigen::Index>(s.points.size()));
    for (size_t i = 0; i < s.points.size(); ++i) {
        p(0, static_cast<Eigen::Index>(i)) = s.points[i][0] * s.spacing[0];
        p(1, static_cast<Eigen::Index>(i)) = s.points[i][1] * s.spacing[1];
        p(2, static_cast<Eigen::Index>(i)) = s.points[i][2] * s.spacing[2];
    }
    return p;
}

// For each column of A, the distance to its nearest column of B.
std::vector<double> directed_distances(const Eigen::Matrix3Xd& A, const Eigen::Matrix3Xd& B) {
    std::vector<double> out(static_cast<size_t>(A.cols()));
    const Eigen::RowVectorXd b2 = B.colwise().squaredNorm();
    constexpr Eigen::Index kBlock = 256;
    for (Eigen::Index i0 = 0; i0 < A.cols(); i0 += kBlock) {
        const Eigen::Index n = std::min(kBlock, A.cols() - i0);
        const auto Ablk = A.middleCols(i0, n);
        // |a-b|^2 = |a|^2 - 2 a.b + |b|^2, minimized over b per row
        Eigen::MatrixXd d2 = (-2.0 * Ablk.transpose() * B).rowwise() + b2;
        d2.colwise() += Ablk.colwise().squaredNorm().transpose();
        for (Eigen::Index i = 0; i < n; ++i)
            out[static_cast<size_t>(i0 + i)] = std::sqrt(std::max(0.0, d2.row(i).minCoeff()));
    }
    return out;
}

double nearest_rank_percentile(std::vector<double> v, double pct) {
    std::sort(v.begin(), v.end());
    const size_t rank = static_cast<size_t>(
        std::ceil(pct / 100.0 * static_cast<double>(v.size())));
    return v[std::max<size_t>(1, rank) - 1];
}

std::int64_t intersection_count(const MaskVol& a, const MaskVol& b) {
    std::int64_t n = 0;
    for (size_t i = 0; i < a.voxels.size(); ++i) n += a.voxels[i] & b.voxels[i];
    return n;
}

}  // namespace

SurfaceSet extract_surface(const MaskVol& m) {
    SurfaceSet s;
    s.spacing = m.spacing;
    auto bg = [&](int z, int y, int x) {
        if (z < 0 || z >= m.dims[0] || y < 0 || y >= m.dims[1] || x < 0 || x >= m.dims[2])
            return true;
        return m.at(z, y, x) == 0;
    };
    for (int z = 0; z < m.dims[0]; ++z)
        for (int y = 0; y < m.dims[1]; ++y)
            for (int x = 0; x < m.dims[2]; ++x)
                if (m.at(z, y, x) == 1 &&
                    (bg(z - 1, y, x) || bg(z + 1, y, x) || bg(z, y - 1, x) || bg(z, y + 1, x) ||
                     bg(z, y, x - 1) || bg(z, y, x + 1)))
                    s.points.push_back({z, y, x});
    return s;
}

double dsc(const MaskVol& gt, const MaskVol& seg) {
    check_shapes(gt, seg, "dsc");
    const std::int64_t ng = gt.count(), ns = seg.count();
    if (ng == 0 && ns == 0) return 1.0;  // both-empty convention
    if (ng == 0 || ns == 0) return 0.0;
    return 2.0 * static_cast<double>(intersection_count(gt, seg)) / static_cast<double>(ng + ns);
}

std::pair<double, double> ppv_sen(const MaskVol& gt, const MaskVol& seg) {
    check_shapes(gt, seg, "ppv_sen");
    const std::int64_t ng = gt.count(), ns = seg.count();
    if (ns == 0) throw UndefinedMetricError("ppv: empty segmentation");
    if (ng == 0) throw UndefinedMetricError("sen: empty ground truth");
    const double inter = static_cast<double>(intersection_count(gt, seg));
    return {inter / static_cast<double>(ns), inter / static_cast<double>(ng)};
}

double asd(const MaskVol& gt, const MaskVol& seg, const std::array<double, 3>& spacing) {
    check_shapes(gt, seg, "asd");
    SurfaceSet sg = extract_surface(gt), ss = extract_surface(seg);
    if (sg.points.empty() || ss.points.empty())
        throw UndefinedMetricError("asd: empty mask surface");
    sg.spacing = spacing;
    ss.spacing = spacing;
    const Eigen::Matrix3Xd G = to_mm(sg), P = to_mm(ss);
    const auto d1 = directed_distances(G, P);
    const auto d2 = directed_distances(P, G);
    const double m1 = std::accumulate(d1.begin(), d1.end(), 0.0) / static_cast<double>(d1.size());
    const double m2 = std::accumulate(d2.begin(), d2.end(), 0.0) / static_cast<double>(d2.size());
    return 0.5 * (m1 + m2);
}

std::pair<double, double> hd_hd95(const MaskVol& gt, const MaskVol& seg,
                                  const std::array<double, 3>& spacing) {
    check_shapes(gt, seg, "hd_hd95");
    SurfaceSet sg = extract_surface(gt), ss = extract_surface(seg);
    if (sg.points.empty() || ss.points.empty())
        throw UndefinedMetricError("hd: empty mask surface");
    sg.spacing = spacing;
    ss.spacing = spacing;
    const Eigen::Matrix3Xd G = to_mm(sg), P = to_mm(ss);
    const auto d1 = directed_distances(G, P);
    const auto d2 = directed_distances(P, G);
    const double hd = std::max(*std::max_element(d1.begin(), d1.end()),
                               *std::max_element(d2.begin(), d2.end()));
    // PROMISE12 convention: nearest-rank 95th percentile per direction, max
    const double hd95 =
        std::max(nearest_rank_percentile(d1, 95.0), nearest_rank_percentile(d2, 95.0));
    return {hd, hd95};
}

double arvd(const MaskVol& gt, const MaskVol& seg) {
    check_shapes(gt, seg, "arvd");
    const std::int64_t ng = gt.count();
    if (ng == 0) throw UndefinedMetricError("arvd: empty ground truth");
    return 100.0 * std::abs(static_cast<double>(seg.count() - ng)) / static_cast<double>(ng);
}

MetricsReport compute_metrics(const MaskVol& gt, const MaskVol& seg,
                              const std::array<double, 3>& spacing) {
    MetricsReport r;
    r.dsc = dsc(gt, seg);
    try {
        auto [p, s] = ppv_sen(gt, seg);
        r.ppv = p;
        r.sen = s;
    } catch (const UndefinedMetricError&) {
    }
    try {
        r.asd_mm = asd(gt, seg, spacing);
        auto [hd, hd95] = hd_hd95(gt, seg, spacing);
        r.hd_mm = hd;
        r.hd95_mm = hd95;
    } catch (const UndefinedMetricError&) {
    }
    try {
        r.arvd_percent = arvd(gt, seg);
    } catch (const UndefinedMetricError&) {
    }
    return r;
}

namespace {

std::string fmt(const std::optional<double>& v) {
    if (!v) return "undefined";
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.6f", *v);
    return buf;
}

struct Stats {
    double mean = 0, stddev = 0, median = 0;
    bool any = false;
};

Stats stats_of(std::vector<double> v) {
    Stats s;
    if (v.empty()) return s;
    s.any = true;
    s.mean = std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
    double var = 0;
    for (double x : v) var += (x - s.mean) * (x - s.mean);
    s.stddev = std::sqrt(var / static_cast<double>(v.size()));
    std::sort(v.begin(), v.end());
    s.median = v.size() % 2 ? v[v.size() / 2]
                            : 0.5 * (v[v.size() / 2 - 1] + v[v.size() / 2]);
    return s;
}

}  // namespace

void write_metrics_csv(const std::string& path, const std::vector<std::string>& case_ids,
                       const std::vector<MetricsReport>& reports) {
    if (case_ids.size() != reports.size())
        throw std::invalid_argument("write_metrics_csv: id/report count mismatch");
    std::ofstream os(path);
    if (!os) throw std::runtime_error("write_metrics_csv: cannot open " + path);
    os << "case_id,dsc,asd_mm,hd_mm,hd95_mm,sen,ppv,arvd\n";
    std::vector<double> cols[7];
    for (size_t i = 0; i < reports.size(); ++i) {
        const auto& r = reports[i];
        os << case_ids[i] << "," << fmt(r.dsc) << "," << fmt(r.asd_mm) << "," << fmt(r.hd_mm)
           << "," << fmt(r.hd95_mm) << "," << fmt(r.sen) << "," << fmt(r.ppv) << ","
           << fmt(r.arvd_percent) << "\n";
        cols[0].push_back(r.dsc);
        if (r.asd_mm) cols[1].push_back(*r.asd_mm);
        if (r.hd_mm) cols[2].push_back(*r.hd_mm);
        if (r.hd95_mm) cols[3].push_back(*r.hd95_mm);
        if (r.sen) cols[4].push_back(*r.sen);
        if (r.ppv) cols[5].push_back(*r.ppv);
        if (r.arvd_percent) cols[6].push_back(*r.arvd_percent);
    }
    os << "mean_std";
    for (auto& c : cols) {
        const Stats s = stats_of(c);
        os << ",";
        if (s.any) {
            char buf[64];
            std::snprintf(buf, sizeof(buf), "%.6f+-%.6f", s.mean, s.stddev);
            os << buf;
        } else {
            os << "undefined";
        }
    }
    os << "\nmedian";
    for (auto& c : cols) {
        const Stats s = stats_of(c);
        os << "," << (s.any ? fmt(s.median) : std::string("undefined"));
    }
    os << "\n";
}

}  // namespace munet
