#include "needlekit/io.hpp"

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>

#include <json.hpp>

#include "needlekit/core.hpp"
#include "needlekit/metrics.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace needlekit {

namespace {

int log_level() {
    static int level = [] {
        const char* env = std::getenv("NEEDLEKIT_LOG");
        if (!env) return 0;
        std::string v(env);
        if (v == "debug") return 2;
        if (v == "info") return 1;
        return 0;
    }();
    return level;
}

json load_json(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw FormatError(path + ": cannot open file");
    try {
        return json::parse(in);
    } catch (const json::parse_error& e) {
        throw FormatError(path + ": " + e.what());
    }
}

std::string raw_path_of(const std::string& json_path) {
    fs::path p(json_path);
    p.replace_extension(".raw");
    return p.string();
}

void reject_unknown(const json& obj, const std::vector<std::string>& known,
                    const std::string& path, const std::string& context) {
    for (const auto& [key, _] : obj.items())
        if (std::find(known.begin(), known.end(), key) == known.end())
            throw FormatError(path + ": unknown key '" + context + key + "'");
}

json needle_to_json(const Trajectory& t) {
    json nj;
    json pts = json::array();
    for (const auto& p : sample_equidistant(t, 100))
        pts.push_back({p.x(), p.y(), p.z()});
    nj["points_mm"] = std::move(pts);
    if (const auto* c = std::get_if<NeedleCurve>(&t)) {
        nj["degree"] = c->degree;
        nj["coeff_x"] = std::vector<double>(c->coeff_x.begin(), c->coeff_x.end());
        nj["coeff_y"] = std::vector<double>(c->coeff_y.begin(), c->coeff_y.end());
        nj["z_min_mm"] = c->z_min_mm;
        nj["z_max_mm"] = c->z_max_mm;
    }
    return nj;
}

void write_text(const std::string& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw FormatError(path + ": cannot open for writing");
    out << text;
}

}  // namespace

void log_info(const std::string& msg) {
    if (log_level() >= 1) std::cerr << "[needlekit] " << msg << "\n";
}
void log_debug(const std::string& msg) {
    if (log_level() >= 2) std::cerr << "[needlekit] " << msg << "\n";
}

Mask read_mask(const std::string& json_path) {
    json hdr = load_json(json_path);
    reject_unknown(hdr, {"dims", "spacing_mm", "encoding"}, json_path, "");
    for (const char* key : {"dims", "spacing_mm", "encoding"})
        if (!hdr.contains(key))
            throw FormatError(json_path + ": missing field '" + key + "'");
    if (hdr["encoding"] != "raw-u8")
        throw FormatError(json_path + ": field 'encoding' must be \"raw-u8\"");
    auto dims = hdr["dims"].get<std::vector<int>>();
    auto spacing = hdr["spacing_mm"].get<std::vector<double>>();
    if (dims.size() != 3)
        throw FormatError(json_path + ": field 'dims' must have 3 entries");
    if (spacing.size() != 3)
        throw FormatError(json_path + ": field 'spacing_mm' must have 3 entries");

    VolumeMeta meta;
    try {
        meta = VolumeMeta(Vec3i(dims[0], dims[1], dims[2]),
                          Vec3(spacing[0], spacing[1], spacing[2]));
    } catch (const std::invalid_argument& e) {
        throw FormatError(json_path + ": " + e.what());
    }

    const std::string raw_path = raw_path_of(json_path);
    std::ifstream raw(raw_path, std::ios::binary | std::ios::ate);
    if (!raw) throw FormatError(raw_path + ": cannot open file");
    const auto size = static_cast<std::size_t>(raw.tellg());
    if (size != meta.voxel_count())
        throw FormatError(raw_path + ": size mismatch, expected " +
                          std::to_string(meta.voxel_count()) + " bytes, got " +
                          std::to_string(size));
    Mask mask(meta);
    raw.seekg(0);
    raw.read(reinterpret_cast<char*>(mask.data.data()), size);
    for (std::size_t i = 0; i < mask.data.size(); ++i)
        if (mask.data[i] > 1)
            throw FormatError(raw_path + ": voxel at offset " + std::to_string(i) +
                              " is not 0/1");
    return mask;
}

void write_mask(const std::string& json_path, const Mask& mask) {
    json hdr;
    hdr["dims"] = {mask.meta.dims.x(), mask.meta.dims.y(), mask.meta.dims.z()};
    hdr["spacing_mm"] = {mask.meta.spacing_mm.x(), mask.meta.spacing_mm.y(),
                         mask.meta.spacing_mm.z()};
    hdr["encoding"] = "raw-u8";
    write_text(json_path, hdr.dump(2) + "\n");
    std::ofstream raw(raw_path_of(json_path), std::ios::binary);
    if (!raw) throw FormatError(raw_path_of(json_path) + ": cannot open for writing");
    raw.write(reinterpret_cast<const char*>(mask.data.data()),
              static_cast<std::streamsize>(mask.data.size()));
}

void write_needles(const std::string& path, const std::vector<Trajectory>& needles) {
    json arr = json::array();
    for (const auto& t : needles) arr.push_back(needle_to_json(t));
    write_text(path, arr.dump(2) + "\n");
}

std::vector<Trajectory> read_needles(const std::string& path) {
    json arr = load_json(path);
    if (!arr.is_array()) throw FormatError(path + ": top level must be a list");
    std::vector<Trajectory> out;
    for (std::size_t i = 0; i < arr.size(); ++i) {
        const json& nj = arr[i];
        const std::string where = path + ": needles[" + std::to_string(i) + "]";
        reject_unknown(nj, {"points_mm", "degree", "coeff_x", "coeff_y",
                            "z_min_mm", "z_max_mm"}, path,
                       "needles[" + std::to_string(i) + "].");
        if (!nj.contains("points_mm"))
            throw FormatError(where + ".points_mm: missing");
        auto pts = nj["points_mm"].get<std::vector<std::vector<double>>>();
        if (pts.size() < 2) throw FormatError(where + ".points_mm: need >= 2 points");
        std::vector<Vec3> vertices;
        for (std::size_t j = 0; j < pts.size(); ++j) {
            if (pts[j].size() != 3)
                throw FormatError(where + ".points_mm[" + std::to_string(j) +
                                  "]: need 3 coordinates");
            vertices.emplace_back(pts[j][0], pts[j][1], pts[j][2]);
            if (j > 0 && !(vertices[j].z() > vertices[j - 1].z()))
                throw FormatError(where + ".points_mm[" + std::to_string(j) +
                                  "]: z must be strictly increasing");
        }
        if (nj.contains("degree")) {
            int degree = nj["degree"].get<int>();
            for (const char* key : {"coeff_x", "coeff_y", "z_min_mm", "z_max_mm"})
                if (!nj.contains(key))
                    throw FormatError(where + "." + key + ": missing for a polynomial needle");
            auto cx = nj["coeff_x"].get<std::vector<double>>();
            auto cy = nj["coeff_y"].get<std::vector<double>>();
            if (static_cast<int>(cx.size()) != degree + 1 ||
                static_cast<int>(cy.size()) != degree + 1)
                throw FormatError(where + ".coeff_x: need degree+1 coefficients");
            try {
                out.emplace_back(NeedleCurve(
                    degree, Eigen::Map<Eigen::VectorXd>(cx.data(), cx.size()),
                    Eigen::Map<Eigen::VectorXd>(cy.data(), cy.size()),
                    nj["z_min_mm"].get<double>(), nj["z_max_mm"].get<double>()));
            } catch (const std::invalid_argument& e) {
                throw FormatError(where + ": " + e.what());
            }
        } else {
            out.emplace_back(Polyline(std::move(vertices)));
        }
    }
    return out;
}

RunConfig read_run_config(const std::string& path) {
    json cfg = load_json(path);
    RunConfig rc;
    reject_unknown(cfg, {"hdbscan", "leon_split", "merge", "em", "gate_mm",
                         "mjung_assign_radius_vox"}, path, "");
    if (cfg.contains("hdbscan")) {
        const json& h = cfg["hdbscan"];
        reject_unknown(h, {"min_samples", "min_cluster_size"}, path, "hdbscan.");
        if (h.contains("min_samples"))
            rc.params.hdbscan.min_samples = h["min_samples"].get<int>();
        if (h.contains("min_cluster_size"))
            rc.params.hdbscan.min_cluster_size = h["min_cluster_size"].get<int>();
    }
    if (cfg.contains("leon_split")) {
        const json& l = cfg["leon_split"];
        reject_unknown(l, {"spread_threshold_vox", "small_gap_max_slices"}, path,
                       "leon_split.");
        if (l.contains("spread_threshold_vox"))
            rc.params.leon_split.spread_threshold_vox =
                l["spread_threshold_vox"].get<double>();
        if (l.contains("small_gap_max_slices"))
            rc.params.leon_split.small_gap_max_slices =
                l["small_gap_max_slices"].get<int>();
    }
    if (cfg.contains("merge")) {
        const json& m = cfg["merge"];
        reject_unknown(m, {"inplane_window_vox", "ransac_outlier_vox", "ransac_iters",
                           "ransac_degree"}, path, "merge.");
        if (m.contains("inplane_window_vox"))
            rc.params.merge.inplane_window_vox = m["inplane_window_vox"].get<double>();
        if (m.contains("ransac_outlier_vox"))
            rc.params.merge.ransac_outlier_vox = m["ransac_outlier_vox"].get<double>();
        if (m.contains("ransac_iters"))
            rc.params.merge.ransac_iters = m["ransac_iters"].get<int>();
        if (m.contains("ransac_degree"))
            rc.params.merge.ransac_degree = m["ransac_degree"].get<int>();
    }
    if (cfg.contains("em")) {
        const json& e = cfg["em"];
        reject_unknown(e, {"max_iters", "loss_tol_mm"}, path, "em.");
        if (e.contains("max_iters")) rc.params.em.max_iters = e["max_iters"].get<int>();
        if (e.contains("loss_tol_mm"))
            rc.params.em.loss_tol_mm = e["loss_tol_mm"].get<double>();
    }
    if (cfg.contains("gate_mm")) rc.gate_mm = cfg["gate_mm"].get<double>();
    if (cfg.contains("mjung_assign_radius_vox"))
        rc.params.mjung_assign_radius_vox = cfg["mjung_assign_radius_vox"].get<double>();
    return rc;
}

int cmd_reconstruct(const ReconstructOptions& opts) {
    try {
        RunConfig rc;
        if (!opts.config_path.empty()) rc = read_run_config(opts.config_path);
        Technique technique = technique_from_name(opts.technique);
        if (technique_needs_count(technique) && opts.n_needles < 1) {
            std::cerr << "error: technique requires needle count (--n-needles)\n";
            return 1;
        }
        Mask mask = read_mask(opts.mask_path);
        PointCloud cloud = mask_to_points(mask);
        log_info("reconstruct: " + std::to_string(cloud.size()) + " foreground voxels");

        ReconstructResult res =
            reconstruct(cloud, technique, opts.n_needles, opts.seed, rc.params);

        fs::create_directories(opts.out_dir);
        write_needles((fs::path(opts.out_dir) / "needles.json").string(), res.needles);

        json run_log;
        run_log["technique"] = opts.technique;
        run_log["seed"] = opts.seed;
        run_log["needles"] = res.needles.size();
        run_log["final_loss_mm"] =
            std::isnan(res.final_loss) ? json(nullptr) : json(res.final_loss);
        json stages = json::array();
        for (const auto& s : res.stages)
            stages.push_back({{"stage", s.stage},
                              {"cluster_count", s.cluster_count},
                              {"millis", s.millis}});
        run_log["stages"] = std::move(stages);
        if (!res.diagnostic.empty()) run_log["diagnostic"] = res.diagnostic;
        write_text((fs::path(opts.out_dir) / "run_log.json").string(),
                   run_log.dump(2) + "\n");

        if (res.needles.empty()) {
            std::cerr << "diagnostic: " << res.diagnostic << "\n";
            return 2;
        }
        return 0;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
}

int cmd_evaluate(const EvaluateOptions& opts) {
    try {
        auto preds = read_needles(opts.pred_path);
        auto refs = read_needles(opts.ref_path);
        EvalReport rep = evaluate(preds, refs, opts.gate_mm);

        fs::create_directories(opts.out_dir);
        auto stats_json = [](const Stats& s) {
            json j;
            j["median"] = s.median ? json(*s.median) : json(nullptr);
            j["iqr"] = s.iqr ? json(*s.iqr) : json(nullptr);
            return j;
        };
        json rj;
        rj["tip_mm"] = stats_json(rep.tip);
        rj["bottom_mm"] = stats_json(rep.bottom);
        rj["shaft_mm"] = stats_json(rep.shaft);
        rj["nf"] = rep.nf;
        rj["nseb1"] = rep.nseb1;
        rj["nseb2"] = rep.nseb2;
        rj["fp"] = rep.fp;
        rj["fn"] = rep.fn;
        rj["matched_only"] = true;  // medians cover matched needles only
        json rows = json::array();
        for (const auto& p : rep.pairs)
            rows.push_back({{"pred", p.pred_index},
                            {"ref", p.ref_index},
                            {"tip_mm", p.errors.tip_mm},
                            {"bottom_mm", p.errors.bottom_mm},
                            {"shaft_mm", p.errors.shaft_mm}});
        rj["needles"] = std::move(rows);
        write_text((fs::path(opts.out_dir) / "report.json").string(), rj.dump(2) + "\n");

        std::string csv = "id,tip_mm,bottom_mm,shaft_mm\n";
        for (std::size_t i = 0; i < rep.pairs.size(); ++i) {
            const auto& e = rep.pairs[i].errors;
            csv += std::to_string(i) + "," + std::to_string(e.tip_mm) + "," +
                   std::to_string(e.bottom_mm) + "," + std::to_string(e.shaft_mm) + "\n";
        }
        write_text((fs::path(opts.out_dir) / "report.csv").string(), csv);
        return 0;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
}

int cmd_synth(const SynthOptions& opts) {
    try {
        json cfg = load_json(opts.config_path);
        reject_unknown(cfg, {"dims", "spacing_mm", "n_needles", "degree",
                             "curvature_mm", "length_range_mm", "min_separation_mm",
                             "start_slice_jitter", "dilation_radius_mm", "profile"},
                       opts.config_path, "");
        PhantomConfig pc;
        if (cfg.contains("dims")) {
            auto d = cfg["dims"].get<std::vector<int>>();
            auto s = cfg.contains("spacing_mm")
                         ? cfg["spacing_mm"].get<std::vector<double>>()
                         : std::vector<double>{0.6, 0.7, 1.0};
            if (d.size() != 3 || s.size() != 3)
                throw FormatError(opts.config_path +
                                  ": fields 'dims'/'spacing_mm' must have 3 entries");
            pc.meta = VolumeMeta(Vec3i(d[0], d[1], d[2]), Vec3(s[0], s[1], s[2]));
        }
        if (cfg.contains("n_needles")) pc.n_needles = cfg["n_needles"].get<int>();
        if (cfg.contains("degree")) pc.degree = cfg["degree"].get<int>();
        if (cfg.contains("curvature_mm")) pc.curvature_mm = cfg["curvature_mm"].get<double>();
        if (cfg.contains("length_range_mm")) {
            auto r = cfg["length_range_mm"].get<std::vector<double>>();
            if (r.size() != 2)
                throw FormatError(opts.config_path +
                                  ": field 'length_range_mm' must have 2 entries");
            pc.length_range_mm = {r[0], r[1]};
        }
        if (cfg.contains("min_separation_mm"))
            pc.min_separation_mm = cfg["min_separation_mm"].get<double>();
        if (cfg.contains("start_slice_jitter"))
            pc.start_slice_jitter = cfg["start_slice_jitter"].get<int>();
        if (cfg.contains("dilation_radius_mm"))
            pc.dilation_radius_mm = cfg["dilation_radius_mm"].get<double>();

        ErrorProfile profile;  // default: clean
        if (cfg.contains("profile")) {
            if (cfg["profile"].is_string()) {
                profile = error_profile_preset(cfg["profile"].get<std::string>());
            } else {
                const json& p = cfg["profile"];
                reject_unknown(p, {"p_disconnect", "gap_slices_range", "p_drop_needle",
                                   "fp_blobs_per_volume", "fp_blob_size_range_vox",
                                   "p_truncate_tip", "truncate_range_slices",
                                   "jitter_vox"}, opts.config_path, "profile.");
                if (p.contains("p_disconnect"))
                    profile.p_disconnect = p["p_disconnect"].get<double>();
                if (p.contains("gap_slices_range")) {
                    auto r = p["gap_slices_range"].get<std::vector<int>>();
                    profile.gap_slices_range = {r.at(0), r.at(1)};
                }
                if (p.contains("p_drop_needle"))
                    profile.p_drop_needle = p["p_drop_needle"].get<double>();
                if (p.contains("fp_blobs_per_volume"))
                    profile.fp_blobs_per_volume = p["fp_blobs_per_volume"].get<int>();
                if (p.contains("fp_blob_size_range_vox")) {
                    auto r = p["fp_blob_size_range_vox"].get<std::vector<int>>();
                    profile.fp_blob_size_range_vox = {r.at(0), r.at(1)};
                }
                if (p.contains("p_truncate_tip"))
                    profile.p_truncate_tip = p["p_truncate_tip"].get<double>();
                if (p.contains("truncate_range_slices")) {
                    auto r = p["truncate_range_slices"].get<std::vector<int>>();
                    profile.truncate_range_slices = {r.at(0), r.at(1)};
                }
                if (p.contains("jitter_vox"))
                    profile.jitter_vox = p["jitter_vox"].get<double>();
            }
        }

        Phantom ph = generate_phantom(pc, opts.seed);
        CorruptedPhantom cp = inject_errors(ph, profile, opts.seed + 1);

        fs::create_directories(opts.out_dir);
        write_mask((fs::path(opts.out_dir) / "mask.json").string(), cp.mask);

        json refs = json::array();
        for (const auto& ctrl : ph.needles_mm) {
            json pts = json::array();
            for (const auto& p : ctrl) pts.push_back({p.x(), p.y(), p.z()});
            refs.push_back({{"points_mm", std::move(pts)}});
        }
        write_text((fs::path(opts.out_dir) / "ref_needles.json").string(),
                   refs.dump(2) + "\n");

        json manifest = json::array();
        for (const auto& e : cp.manifest) {
            json mj = {{"type", e.type}, {"needle", e.needle}};
            for (const auto& [k, v] : e.params) mj[k] = v;
            manifest.push_back(std::move(mj));
        }
        write_text((fs::path(opts.out_dir) / "manifest.json").string(),
                   manifest.dump(2) + "\n");
        return 0;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
}

int cmd_label(const LabelOptions& opts) {
    try {
        VolumeMeta meta(opts.dims, opts.spacing_mm);
        auto needles = read_needles(opts.points_path);
        Mask mask(meta);
        for (const auto& t : needles) {
            const auto* pl = std::get_if<Polyline>(&t);
            if (!pl)
                throw FormatError(opts.points_path +
                                  ": label expects control-point needles (points_mm only)");
            Mask m = dilate_spherical(
                interpolate_polyline(pl->vertices, meta.spacing_mm.minCoeff() / 2.0),
                opts.radius_mm, meta);
            for (std::size_t i = 0; i < m.data.size(); ++i)
                if (m.data[i]) mask.data[i] = 1;
        }
        fs::create_directories(opts.out_dir);
        write_mask((fs::path(opts.out_dir) / "mask.json").string(), mask);
        return 0;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
}

}  // namespace needlekit
