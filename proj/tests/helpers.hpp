#pragma once

#include <cmath>
#include <functional>
#include <map>
#include <random>
#include <vector>

#include "needlekit/core.hpp"
#include "needlekit/types.hpp"

namespace nk_test {

using namespace needlekit;

inline VolumeMeta unit_meta(int nx, int ny, int nz) {
    return VolumeMeta(Vec3i(nx, ny, nz), Vec3(1.0, 1.0, 1.0));
}

inline PointCloud cloud_from_voxels(const VolumeMeta& meta, std::vector<Vec3i> voxels) {
    Mask mask(meta);
    for (const auto& v : voxels) mask.set(v);
    return mask_to_points(mask);
}

// straight vertical needle: one voxel per slice at (i, j), slices [k0, k1]
inline std::vector<Vec3i> straight_needle(int i, int j, int k0, int k1) {
    std::vector<Vec3i> v;
    for (int k = k0; k <= k1; ++k) v.emplace_back(i, j, k);
    return v;
}

// thick straight needle: plus-shaped in-plane footprint per slice
inline std::vector<Vec3i> thick_needle(int i, int j, int k0, int k1) {
    std::vector<Vec3i> v;
    for (int k = k0; k <= k1; ++k) {
        v.emplace_back(i, j, k);
        v.emplace_back(i + 1, j, k);
        v.emplace_back(i - 1, j, k);
        v.emplace_back(i, j + 1, k);
        v.emplace_back(i, j - 1, k);
    }
    return v;
}

inline void append(std::vector<Vec3i>& dst, const std::vector<Vec3i>& src) {
    dst.insert(dst.end(), src.begin(), src.end());
}

// gaussian blob of `count` points around a 2D center
inline std::vector<Eigen::Vector2d> blob_2d(Eigen::Vector2d center, double sigma,
                                            int count, std::mt19937_64& rng) {
    std::normal_distribution<double> g(0.0, sigma);
    std::vector<Eigen::Vector2d> out;
    for (int i = 0; i < count; ++i)
        out.push_back(center + Eigen::Vector2d(g(rng), g(rng)));
    return out;
}

inline std::vector<Vec3> blob_3d(Vec3 center, double sigma, int count,
                                 std::mt19937_64& rng) {
    std::normal_distribution<double> g(0.0, sigma);
    std::vector<Vec3> out;
    for (int i = 0; i < count; ++i)
        out.push_back(center + Vec3(g(rng), g(rng), g(rng)));
    return out;
}

// single-linkage connected components at the given linkage distance
template <typename Point>
std::vector<int> linkage_components(const std::vector<Point>& pts, double linkage) {
    const int n = static_cast<int>(pts.size());
    std::vector<int> parent(n);
    for (int i = 0; i < n; ++i) parent[i] = i;
    std::function<int(int)> find = [&](int a) {
        while (parent[a] != a) a = parent[a] = parent[parent[a]];
        return a;
    };
    for (int a = 0; a < n; ++a)
        for (int b = a + 1; b < n; ++b)
            if ((pts[a] - pts[b]).norm() <= linkage) parent[find(a)] = find(b);
    std::vector<int> label(n, -1);
    int next = 0;
    for (int i = 0; i < n; ++i) {
        int r = find(i);
        if (label[r] < 0) label[r] = next++;
        label[i] = label[r];
    }
    return label;
}

// do two labelings induce the same partition?
inline bool same_partition(const std::vector<int>& a, const std::vector<int>& b) {
    if (a.size() != b.size()) return false;
    std::map<int, int> fwd, bwd;
    for (std::size_t i = 0; i < a.size(); ++i) {
        auto f = fwd.emplace(a[i], b[i]);
        if (!f.second && f.first->second != b[i]) return false;
        auto g = bwd.emplace(b[i], a[i]);
        if (!g.second && g.first->second != a[i]) return false;
    }
    return true;
}

}  // namespace nk_test
