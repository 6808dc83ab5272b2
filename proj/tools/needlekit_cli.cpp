#include <CLI11.hpp>

#include "needlekit/io.hpp"

int main(int argc, char** argv) {
    CLI::App app{"Needle reconstruction from segmentation masks"};
    app.require_subcommand(1);

    needlekit::ReconstructOptions rec;
    auto* cmd_rec = app.add_subcommand("reconstruct",
                                       "Reconstruct needle trajectories from a mask");
    cmd_rec->add_option("--mask", rec.mask_path, "Mask header (<name>.json)")->required();
    cmd_rec->add_option("--technique", rec.technique,
                        "jung | leon | mjung | mjung+ | leon+")->required();
    cmd_rec->add_option("--n-needles", rec.n_needles, "Known needle count");
    cmd_rec->add_option("--seed", rec.seed, "Random seed");
    cmd_rec->add_option("--config", rec.config_path, "Parameter overrides (JSON)");
    cmd_rec->add_option("--out", rec.out_dir, "Output directory")->required();

    needlekit::EvaluateOptions ev;
    auto* cmd_ev = app.add_subcommand("evaluate",
                                      "Compare predicted needles against a reference");
    cmd_ev->add_option("--pred", ev.pred_path, "Predicted needles (JSON)")->required();
    cmd_ev->add_option("--ref", ev.ref_path, "Reference needles (JSON)")->required();
    cmd_ev->add_option("--gate-mm", ev.gate_mm, "Matching gate in mm");
    cmd_ev->add_option("--out", ev.out_dir, "Output directory")->required();

    needlekit::SynthOptions sy;
    auto* cmd_sy = app.add_subcommand("synth", "Generate a synthetic phantom bundle");
    cmd_sy->add_option("--config", sy.config_path, "Phantom config (JSON)")->required();
    cmd_sy->add_option("--seed", sy.seed, "Random seed");
    cmd_sy->add_option("--out", sy.out_dir, "Output directory")->required();

    needlekit::LabelOptions lb;
    std::vector<int> lb_dims{167, 143, 60};
    std::vector<double> lb_spacing{0.6, 0.7, 1.0};
    auto* cmd_lb = app.add_subcommand("label",
                                      "Voxelize annotated control points into a mask");
    cmd_lb->add_option("--points", lb.points_path, "Control points (JSON)")->required();
    cmd_lb->add_option("--radius-mm", lb.radius_mm, "Dilation radius in mm");
    cmd_lb->add_option("--dims", lb_dims, "Grid dims nx ny nz")->expected(3);
    cmd_lb->add_option("--spacing-mm", lb_spacing, "Voxel spacing sx sy sz")->expected(3);
    cmd_lb->add_option("--out", lb.out_dir, "Output directory")->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        return app.exit(e) == 0 ? 0 : 1;
    }

    if (cmd_rec->parsed()) return needlekit::cmd_reconstruct(rec);
    if (cmd_ev->parsed()) return needlekit::cmd_evaluate(ev);
    if (cmd_sy->parsed()) return needlekit::cmd_synth(sy);
    if (cmd_lb->parsed()) {
        lb.dims = needlekit::Vec3i(lb_dims[0], lb_dims[1], lb_dims[2]);
        lb.spacing_mm = needlekit::Vec3(lb_spacing[0], lb_spacing[1], lb_spacing[2]);
        return needlekit::cmd_label(lb);
    }
    return 1;
}
