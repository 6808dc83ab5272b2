#pragma once

#include "needlekit/types.hpp"

namespace needlekit {

struct MergeParams {
    double inplane_window_vox = 30.0;
    double ransac_outlier_vox = 5.0;
    int ransac_iters = 100;
    int ransac_degree = 2;
};

struct EmParams {
    int max_iters = 100;
    double loss_tol_mm = 1e-6;
};

struct EmResult {
    std::vector<NeedleCurve> needles;
    double final_loss = 0.0;
    std::vector<double> loss_trace;  // loss after init and after each iteration
};

struct DegreeSelection {
    std::vector<NeedleCurve> needles;
    double loss = 0.0;
    int degree = 1;
};

/// In-plane mm distance to the curve at the point's z when inside the axial
/// extent, otherwise 3D mm distance to the nearer curve endpoint.
double point_curve_distance(const Vec3& p_mm, const NeedleCurve& curve);

/// Mean over cloud points of the distance to the nearest needle, in mm.
double loss(const PointCloud& cloud, const std::vector<NeedleCurve>& needles);

/// Independent least-squares fits of x(z) and y(z); z is centered and scaled
/// to [-1,1] for conditioning, coefficients returned in the monomial basis.
NeedleCurve fit_poly_lsq(const std::vector<Vec3>& points_mm, int degree);

/// Number of distinct z values among the points, capped at degree+1 feasibility.
int distinct_z_count(const std::vector<Vec3>& points_mm);

/// Alternate nearest-curve assignment and per-curve refits until the loss
/// stops decreasing. Curves that lose all points are dropped; a refit is kept
/// only if it does not increase its cluster's summed distance, so the loss
/// trace is non-increasing.
EmResult em_optimize(const PointCloud& cloud, std::vector<NeedleCurve> init,
                     int degree, const EmParams& params = {});

/// Axially disjoint cluster pairs whose facing endpoint centroids are within
/// the in-plane window per axis. Pairs are (lower, upper) by slice.
std::vector<std::pair<int, int>> find_merge_candidates(const ClusterSet& clusters,
                                                       const MergeParams& params);

/// Seeded RANSAC: accept iff some degree-d fit of x(z), y(z) over the union
/// of both fragments, refit on its inliers, leaves zero points deviating
/// in-plane by more than ransac_outlier_vox. Symmetric in (a, b).
bool ransac_pair_check(const std::vector<Vec3i>& points_a,
                       const std::vector<Vec3i>& points_b,
                       const MergeParams& params, unsigned seed);

/// Merge clique groups of RANSAC-validated candidate pairs, largest clique
/// first (ties by smallest lowest cluster id), then relabel contiguously.
ClusterSet apply_merges(const ClusterSet& clusters, const MergeParams& params,
                        unsigned seed);

/// Greedily drop the needle whose removal least increases the loss until
/// `target` needles remain.
std::vector<NeedleCurve> iterative_removal(const PointCloud& cloud,
                                           std::vector<NeedleCurve> needles,
                                           int target);

/// Run fit + EM at degrees 1, 2, 3 and keep the run with the smallest final
/// loss; ties prefer the lower degree.
DegreeSelection select_degree(const PointCloud& cloud, const ClusterSet& clusters,
                              const EmParams& params = {});

}  // namespace needlekit
