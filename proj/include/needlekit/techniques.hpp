#pragma once

#include <string>

#include "needlekit/cluster.hpp"
#include "needlekit/refine.hpp"
#include "needlekit/types.hpp"

namespace needlekit {

enum class Technique { Jung, Leon, MJung, MJungPlus, LeonPlus };

/// Jung, MJung+ and Leon+ need the true needle count; Leon and MJung do not.
bool technique_needs_count(Technique t);

std::string technique_name(Technique t);
Technique technique_from_name(const std::string& name);

struct LeonSplitParams {
    double spread_threshold_vox = 6.0;
    int small_gap_max_slices = 3;
};

struct ReconstructParams {
    HdbscanParams hdbscan;
    LeonSplitParams leon_split;
    MergeParams merge;
    EmParams em;
    double mjung_assign_radius_vox = 5.0;
};

struct StageLog {
    std::string stage;
    int cluster_count = 0;
    double millis = 0.0;
};

struct ReconstructResult {
    std::vector<Trajectory> needles;
    double final_loss = 0.0;  // NaN for Leon (no optimization stage)
    std::vector<StageLog> stages;
    std::string diagnostic;
};

/// Spectral clustering on the most inferior occupied slice with k equal to
/// the known needle count, then slice propagation with unbounded radius.
ClusterSet jung_init(const PointCloud& cloud, int n_needles, unsigned seed);

/// HDBSCAN followed by per-slice spread analysis: short flagged runs are
/// healed against a linear fit, long runs split the cluster in two.
ClusterSet leon_cluster(const PointCloud& cloud, const HdbscanParams& params,
                        const LeonSplitParams& split);

/// Piecewise-linear fit of x and y on z by a binary regression tree with
/// linear leaf models, joined continuously at the leaf boundaries.
Polyline fit_polyline(const std::vector<Vec3>& cluster_points_mm,
                      int max_segments = 8);

/// Endpoint-seeded propagation in both axial directions; the direction
/// collecting the larger centroid trail wins (ties: inferior to superior).
ClusterSet mjung_init(const PointCloud& cloud, double assign_radius_vox = 5.0);

/// Run one of the five reconstruction pipelines. n_needles < 0 means unknown.
ReconstructResult reconstruct(const PointCloud& cloud, Technique technique,
                              int n_needles, unsigned seed,
                              const ReconstructParams& params = {});

}  // namespace needlekit
