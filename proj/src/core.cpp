#include "needlekit/core.hpp"

#include <algorithm>
#include <cmath>

namespace needlekit {

namespace {

bool voxel_less(const Vec3i& a, const Vec3i& b) {
    if (a.z() != b.z()) return a.z() < b.z();
    if (a.y() != b.y()) return a.y() < b.y();
    return a.x() < b.x();
}

}  // namespace

ClusterSet canonicalize(ClusterSet set) {
    int m = set.cluster_count();
    // minimal voxel per cluster in (k, j, i) order
    std::vector<int> first(m, -1);
    for (std::size_t i = 0; i < set.labels.size(); ++i) {
        int l = set.labels[i];
        if (l < 0) continue;
        if (first[l] < 0 || voxel_less(set.cloud.voxels[i], set.cloud.voxels[first[l]]))
            first[l] = static_cast<int>(i);
    }
    std::vector<int> order;
    for (int l = 0; l < m; ++l)
        if (first[l] >= 0) order.push_back(l);
    std::sort(order.begin(), order.end(), [&](int a, int b) {
        return voxel_less(set.cloud.voxels[first[a]], set.cloud.voxels[first[b]]);
    });
    std::vector<int> remap(m, -1);
    for (std::size_t r = 0; r < order.size(); ++r) remap[order[r]] = static_cast<int>(r);
    for (auto& l : set.labels)
        if (l >= 0) l = remap[l];
    return set;
}

PointCloud mask_to_points(const Mask& mask) {
    if (mask.data.size() != mask.meta.voxel_count())
        throw std::invalid_argument("mask_to_points: grid size does not match meta dims");
    PointCloud cloud;
    cloud.meta = mask.meta;
    const auto& d = mask.meta.dims;
    std::size_t idx = 0;
    for (int k = 0; k < d.z(); ++k)
        for (int j = 0; j < d.y(); ++j)
            for (int i = 0; i < d.x(); ++i, ++idx)
                if (mask.data[idx]) cloud.voxels.emplace_back(i, j, k);
    return cloud;
}

Mask points_to_mask(const PointCloud& cloud) {
    Mask mask(cloud.meta);
    for (const auto& v : cloud.voxels) {
        if (!cloud.meta.contains(v))
            throw std::invalid_argument("points_to_mask: voxel outside grid");
        mask.set(v);
    }
    return mask;
}

std::vector<Vec3> interpolate_polyline(const std::vector<Vec3>& control_points,
                                       double step_mm) {
    if (control_points.size() < 2)
        throw std::invalid_argument("interpolate_polyline: need >= 2 control points");
    if (step_mm <= 0.0)
        throw std::invalid_argument("interpolate_polyline: step_mm must be > 0");
    std::vector<Vec3> out;
    out.push_back(control_points.front());
    for (std::size_t s = 0; s + 1 < control_points.size(); ++s) {
        const Vec3& a = control_points[s];
        const Vec3& b = control_points[s + 1];
        double len = (b - a).norm();
        int pieces = std::max(1, static_cast<int>(std::ceil(len / step_mm)));
        for (int p = 1; p < pieces; ++p)
            out.push_back(a + (b - a) * (static_cast<double>(p) / pieces));
        out.push_back(b);
    }
    return out;
}

Mask dilate_spherical(const std::vector<Vec3>& points_mm, double radius_mm,
                      const VolumeMeta& meta) {
    if (radius_mm <= 0.0)
        throw std::invalid_argument("dilate_spherical: radius_mm must be > 0");
    Mask mask(meta);
    const Vec3& sp = meta.spacing_mm;
    for (const auto& p : points_mm) {
        Vec3i lo, hi;
        for (int a = 0; a < 3; ++a) {
            lo[a] = std::max(0, static_cast<int>(std::ceil((p[a] - radius_mm) / sp[a])));
            hi[a] = std::min(meta.dims[a] - 1,
                             static_cast<int>(std::floor((p[a] + radius_mm) / sp[a])));
        }
        for (int k = lo.z(); k <= hi.z(); ++k)
            for (int j = lo.y(); j <= hi.y(); ++j)
                for (int i = lo.x(); i <= hi.x(); ++i) {
                    Vec3i v(i, j, k);
                    if ((meta.world(v) - p).norm() <= radius_mm) mask.set(v);
                }
    }
    return mask;
}

std::vector<Vec3> densify(const Trajectory& traj, int subdivisions) {
    if (const auto* pl = std::get_if<Polyline>(&traj)) return pl->vertices;
    const auto& c = std::get<NeedleCurve>(traj);
    std::vector<Vec3> out;
    out.reserve(subdivisions + 1);
    for (int s = 0; s <= subdivisions; ++s) {
        double z = c.z_min_mm + (c.z_max_mm - c.z_min_mm) * s / subdivisions;
        out.push_back(c.eval(z));
    }
    return out;
}

std::vector<Vec3> sample_equidistant(const Trajectory& traj, int n) {
    if (n < 2) throw std::invalid_argument("sample_equidistant: n must be >= 2");
    std::vector<Vec3> dense = densify(traj);
    std::vector<double> cum(dense.size(), 0.0);
    for (std::size_t i = 1; i < dense.size(); ++i)
        cum[i] = cum[i - 1] + (dense[i] - dense[i - 1]).norm();
    double total = cum.back();
    if (total <= 0.0)
        throw std::invalid_argument("sample_equidistant: trajectory has zero length");
    std::vector<Vec3> out(n);
    out.front() = dense.front();
    out.back() = dense.back();
    std::size_t seg = 0;
    for (int j = 1; j + 1 < n; ++j) {
        double target = total * j / (n - 1);
        while (seg + 2 < cum.size() && cum[seg + 1] < target) ++seg;
        double seg_len = cum[seg + 1] - cum[seg];
        double t = seg_len > 0.0 ? (target - cum[seg]) / seg_len : 0.0;
        out[j] = dense[seg] + (dense[seg + 1] - dense[seg]) * t;
    }
    return out;
}

}  // namespace needlekit
