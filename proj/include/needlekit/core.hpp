#pragma once

#include "needlekit/types.hpp"

namespace needlekit {

/// Extract the foreground voxels of a mask in canonical (k, j, i) order.
PointCloud mask_to_points(const Mask& mask);

/// Inverse of mask_to_points.
Mask points_to_mask(const PointCloud& cloud);

/// Sample each linear segment of a control polyline at spacing <= step_mm.
/// Segment endpoints are emitted exactly; shared corners are not duplicated.
std::vector<Vec3> interpolate_polyline(const std::vector<Vec3>& control_points,
                                       double step_mm);

/// Set every voxel whose center lies within radius_mm (world metric) of some
/// input point. Spheres reaching outside the grid are cropped.
Mask dilate_spherical(const std::vector<Vec3>& points_mm, double radius_mm,
                      const VolumeMeta& meta);

/// Chordal approximation of a curve: vertices at `subdivisions`+1 uniform z
/// steps. Polylines densify to their own vertices.
std::vector<Vec3> densify(const Trajectory& traj, int subdivisions = 1000);

/// n points at equal arc-length intervals from bottom (index 0) to tip
/// (index n-1), measured on the chordal approximation.
std::vector<Vec3> sample_equidistant(const Trajectory& traj, int n);

}  // namespace needlekit
