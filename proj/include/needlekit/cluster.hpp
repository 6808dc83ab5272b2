#pragma once

#include <limits>

#include "needlekit/types.hpp"

namespace needlekit {

struct HdbscanParams {
    int min_samples = 5;
    int min_cluster_size = 15;
};

/// Axial extremal reference points in voxel space (real-valued medians).
struct EndpointSet {
    std::vector<Vec3> lowest;
    std::vector<Vec3> highest;
};

enum class AxialDirection { InferiorToSuperior, SuperiorToInferior };

struct SeedRef {
    Vec3 pos_vox;     // (i, j, k) voxel-space position
    int spawn_slice;  // slice at which this reference becomes active
};

struct PropagateResult {
    std::vector<int> labels;  // per cloud voxel, -1 = unassigned
    int trail_count = 0;      // centroids collected over all slices
};

constexpr double kUnboundedRadius = std::numeric_limits<double>::infinity();

/// 2D spectral clustering: Gaussian affinity with sigma = median pairwise
/// distance, symmetric normalized Laplacian, k smallest eigenvectors,
/// row-normalized, then seeded k-means (10 restarts, best inertia).
std::vector<int> spectral_cluster(const std::vector<Eigen::Vector2d>& points,
                                  int k, unsigned seed);

/// HDBSCAN over 3D voxel-space points: mutual-reachability MST,
/// single-linkage hierarchy, condensation at min_cluster_size,
/// excess-of-mass cluster selection. Noise = -1.
std::vector<int> hdbscan(const std::vector<Vec3>& points, const HdbscanParams& params);

ClusterSet hdbscan(const PointCloud& cloud, const HdbscanParams& params);

/// Slice-by-slice nearest-reference clustering. References spawn at their
/// own slice; per-slice centroids replace them. Halts when two active
/// centroids come within converge_dist_vox (the halting slice is rolled
/// back) or when slices run out.
PropagateResult propagate_slices(const PointCloud& cloud,
                                 const std::vector<SeedRef>& seed_refs,
                                 AxialDirection direction,
                                 double converge_dist_vox = 1.5,
                                 double assign_radius_vox = kUnboundedRadius);

/// Detect per-fragment lowest/highest voxels with (3,5,5) and (3,7,7)
/// directional empty-slab kernels, then merge candidates within 3.5 voxels
/// and reduce each group to its coordinate-wise median.
EndpointSet detect_endpoints(const PointCloud& cloud);

}  // namespace needlekit
