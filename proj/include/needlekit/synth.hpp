#pragma once

#include <map>
#include <string>

#include "needlekit/types.hpp"

namespace needlekit {

struct PhantomConfig {
    VolumeMeta meta{Vec3i(167, 143, 60), Vec3(0.6, 0.7, 1.0)};
    int n_needles = 12;
    int degree = 2;                                    // in {1, 2, 3}
    double curvature_mm = 3.0;                         // max in-plane deviation
    std::pair<double, double> length_range_mm{40.0, 52.0};
    double min_separation_mm = 6.0;
    int start_slice_jitter = 0;                        // slices
    double dilation_radius_mm = 1.0;
};

struct Phantom {
    PhantomConfig cfg;
    std::vector<std::vector<Vec3>> needles_mm;  // control points, bottom to tip
    Mask clean_mask;
};

struct ErrorProfile {
    double p_disconnect = 0.0;
    std::pair<int, int> gap_slices_range{2, 4};
    double p_drop_needle = 0.0;
    int fp_blobs_per_volume = 0;
    std::pair<int, int> fp_blob_size_range_vox{20, 40};
    double p_truncate_tip = 0.0;
    std::pair<int, int> truncate_range_slices{2, 5};
    double jitter_vox = 0.0;  // per-voxel dropout probability
};

/// Named presets: "clean", "3d-like" (low error rates), "2d-like" (high).
ErrorProfile error_profile_preset(const std::string& name);

struct ManifestEntry {
    std::string type;  // drop | gap | truncate | blob
    int needle = -1;
    std::map<std::string, double> params;
};

struct CorruptedPhantom {
    Mask mask;
    std::vector<ManifestEntry> manifest;
    std::vector<Vec3i> blob_voxels;
};

/// Rejection-sample polynomial needles with pairwise separation, then
/// voxelize via interpolation + spherical dilation. Deterministic per seed.
Phantom generate_phantom(const PhantomConfig& cfg, unsigned seed);

/// Voxelization of a single reference needle with the phantom's recipe.
Mask needle_mask(const Phantom& phantom, int needle);

/// Apply needle drops, mid-shaft gaps, tip truncations, spurious blobs and
/// voxel dropout, in that order, with a seeded stream; every injected error
/// is recorded in the manifest.
CorruptedPhantom inject_errors(const Phantom& phantom, const ErrorProfile& profile,
                               unsigned seed);

}  // namespace needlekit
