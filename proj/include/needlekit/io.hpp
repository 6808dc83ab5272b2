#pragma once

#include <string>

#include "needlekit/synth.hpp"
#include "needlekit/techniques.hpp"
#include "needlekit/types.hpp"

namespace needlekit {

/// Malformed file contents; the message names the offending file and field.
struct FormatError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

void log_info(const std::string& msg);
void log_debug(const std::string& msg);

/// Mask files: `<name>.json` header plus `<name>.raw` voxel payload
/// (x fastest, then y, then z, one byte per voxel, values 0/1).
Mask read_mask(const std::string& json_path);
void write_mask(const std::string& json_path, const Mask& mask);

/// Needle files: JSON list of objects with "points_mm" (bottom to tip) and,
/// for polynomial needles, "degree", "coeff_x", "coeff_y" and the axial extent.
void write_needles(const std::string& path, const std::vector<Trajectory>& needles);
std::vector<Trajectory> read_needles(const std::string& path);

struct RunConfig {
    ReconstructParams params;
    double gate_mm = 10.0;
};

/// Parse parameter overrides; unknown keys are rejected.
RunConfig read_run_config(const std::string& path);

struct ReconstructOptions {
    std::string mask_path;
    std::string technique;
    int n_needles = -1;
    unsigned seed = 0;
    std::string config_path;  // optional
    std::string out_dir;
};

struct EvaluateOptions {
    std::string pred_path;
    std::string ref_path;
    double gate_mm = 10.0;
    std::string out_dir;
};

struct SynthOptions {
    std::string config_path;
    unsigned seed = 0;
    std::string out_dir;
};

struct LabelOptions {
    std::string points_path;
    double radius_mm = 1.0;
    Vec3i dims{167, 143, 60};
    Vec3 spacing_mm{0.6, 0.7, 1.0};
    std::string out_dir;
};

// exit codes: 0 success, 1 config/file error, 2 empty-result diagnostic
int cmd_reconstruct(const ReconstructOptions& opts);
int cmd_evaluate(const EvaluateOptions& opts);
int cmd_synth(const SynthOptions& opts);
int cmd_label(const LabelOptions& opts);

}  // namespace needlekit
