#include "needlekit/techniques.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <map>

namespace needlekit {

bool technique_needs_count(Technique t) {
    return t == Technique::Jung || t == Technique::MJungPlus || t == Technique::LeonPlus;
}

std::string technique_name(Technique t) {
    switch (t) {
        case Technique::Jung: return "jung";
        case Technique::Leon: return "leon";
        case Technique::MJung: return "mjung";
        case Technique::MJungPlus: return "mjung+";
        case Technique::LeonPlus: return "leon+";
    }
    return "?";
}

Technique technique_from_name(const std::string& name) {
    if (name == "jung") return Technique::Jung;
    if (name == "leon") return Technique::Leon;
    if (name == "mjung") return Technique::MJung;
    if (name == "mjung+") return Technique::MJungPlus;
    if (name == "leon+") return Technique::LeonPlus;
    throw std::invalid_argument("unknown technique: " + name);
}

ClusterSet jung_init(const PointCloud& cloud, int n_needles, unsigned seed) {
    if (cloud.empty()) throw std::invalid_argument("jung_init: empty cloud");
    if (n_needles < 1) throw std::invalid_argument("jung_init: n_needles must be >= 1");

    int k0 = cloud.voxels.front().z();
    for (const auto& v : cloud.voxels) k0 = std::min(k0, v.z());
    std::vector<Eigen::Vector2d> slice_mm;
    std::vector<Vec3i> slice_vox;
    for (const auto& v : cloud.voxels) {
        if (v.z() != k0) continue;
        slice_mm.emplace_back(v.x() * cloud.meta.spacing_mm.x(),
                              v.y() * cloud.meta.spacing_mm.y());
        slice_vox.push_back(v);
    }
    if (static_cast<int>(slice_mm.size()) < n_needles)
        throw std::runtime_error(
            "jung_init: most inferior slice has fewer points than needles");

    std::vector<int> labels = spectral_cluster(slice_mm, n_needles, seed);
    std::vector<Vec3> sums(n_needles, Vec3::Zero());
    std::vector<int> counts(n_needles, 0);
    for (std::size_t i = 0; i < slice_vox.size(); ++i) {
        sums[labels[i]] += slice_vox[i].cast<double>();
        ++counts[labels[i]];
    }
    std::vector<SeedRef> seeds;
    for (int c = 0; c < n_needles; ++c)
        seeds.push_back({sums[c] / counts[c], k0});

    PropagateResult prop = propagate_slices(cloud, seeds,
                                            AxialDirection::InferiorToSuperior,
                                            1.5, kUnboundedRadius);
    ClusterSet set;
    set.cloud = cloud;
    set.labels = std::move(prop.labels);
    return canonicalize(std::move(set));
}

namespace {

double slice_spread(const std::vector<Vec3i>& pts) {
    double spread = 0.0;
    for (std::size_t a = 0; a < pts.size(); ++a)
        for (std::size_t b = a + 1; b < pts.size(); ++b) {
            double di = pts[a].x() - pts[b].x();
            double dj = pts[a].y() - pts[b].y();
            spread = std::max(spread, std::hypot(di, dj));
        }
    return spread;
}

struct LinearLine {
    NeedleCurve curve;  // degree-1 fit in voxel space, z = slice index
    bool valid = false;
    double residual(const Vec3i& v) const {
        Vec3 q = curve.eval(v.z());
        return std::hypot(v.x() - q.x(), v.y() - q.y());
    }
};

LinearLine fit_line_vox(const std::vector<Vec3i>& pts) {
    LinearLine line;
    std::vector<Vec3> asmm(pts.size());
    for (std::size_t i = 0; i < pts.size(); ++i) asmm[i] = pts[i].cast<double>();
    if (distinct_z_count(asmm) < 2) return line;
    line.curve = fit_poly_lsq(asmm, 1);
    line.valid = true;
    return line;
}

// split/heal one HDBSCAN cluster; appends resulting clusters to `out`
void leon_process(std::vector<Vec3i> pts, const LeonSplitParams& split,
                  std::vector<std::vector<Vec3i>>& out) {
    if (pts.empty()) return;
    std::map<int, std::vector<Vec3i>> by_slice;
    for (const auto& v : pts) by_slice[v.z()].push_back(v);

    std::vector<int> flagged;
    for (const auto& [k, sp] : by_slice)
        if (slice_spread(sp) > split.spread_threshold_vox) flagged.push_back(k);
    if (flagged.empty()) {
        out.push_back(std::move(pts));
        return;
    }

    struct Run { int first, last; };
    std::vector<Run> runs;
    for (int k : flagged) {
        if (!runs.empty() && k == runs.back().last + 1)
            runs.back().last = k;
        else
            runs.push_back({k, k});
    }

    auto is_flagged = [&](int k) {
        return std::binary_search(flagged.begin(), flagged.end(), k);
    };
    const Run* large = nullptr;
    for (const auto& r : runs)
        if (r.last - r.first + 1 > split.small_gap_max_slices) { large = &r; break; }

    if (large == nullptr) {
        // heal: keep flagged-slice points near the global linear fit
        std::vector<Vec3i> clean;
        for (const auto& v : pts)
            if (!is_flagged(v.z())) clean.push_back(v);
        LinearLine line = fit_line_vox(clean);
        std::vector<Vec3i> result = clean;
        if (line.valid)
            for (const auto& v : pts)
                if (is_flagged(v.z()) && line.residual(v) <= 3.0) result.push_back(v);
        if (!result.empty()) out.push_back(std::move(result));
        return;
    }

    // split: the flagged run is read as two distinct needle strands; pull
    // them apart with a two-line model seeded from the widest flagged slice
    std::vector<Vec3i> run_pts, rest_pts;
    for (const auto& v : pts) {
        if (v.z() >= large->first && v.z() <= large->last)
            run_pts.push_back(v);
        else
            rest_pts.push_back(v);
    }

    int widest = large->first;
    double widest_spread = -1.0;
    for (int k = large->first; k <= large->last; ++k) {
        auto it = by_slice.find(k);
        if (it == by_slice.end()) continue;
        double s = slice_spread(it->second);
        if (s > widest_spread) {
            widest_spread = s;
            widest = k;
        }
    }
    Vec3i anchor_a = run_pts.front(), anchor_b = run_pts.front();
    {
        const auto& sp = by_slice.at(widest);
        double best = -1.0;
        for (std::size_t a = 0; a < sp.size(); ++a)
            for (std::size_t b = a + 1; b < sp.size(); ++b) {
                double d = std::hypot(double(sp[a].x() - sp[b].x()),
                                      double(sp[a].y() - sp[b].y()));
                if (d > best) {
                    best = d;
                    anchor_a = sp[a];
                    anchor_b = sp[b];
                }
            }
    }

    auto inplane = [](const Vec3i& u, const Vec3i& v) {
        return std::hypot(double(u.x() - v.x()), double(u.y() - v.y()));
    };
    std::vector<int> side(run_pts.size());
    for (std::size_t i = 0; i < run_pts.size(); ++i)
        side[i] = inplane(run_pts[i], anchor_a) <= inplane(run_pts[i], anchor_b) ? 0 : 1;

    LinearLine lines[2];
    for (int iter = 0; iter < 5; ++iter) {
        std::vector<Vec3i> groups[2];
        for (std::size_t i = 0; i < run_pts.size(); ++i)
            groups[side[i]].push_back(run_pts[i]);
        lines[0] = fit_line_vox(groups[0]);
        lines[1] = fit_line_vox(groups[1]);
        if (!lines[0].valid || !lines[1].valid) break;
        bool changed = false;
        for (std::size_t i = 0; i < run_pts.size(); ++i) {
            int s = lines[0].residual(run_pts[i]) <= lines[1].residual(run_pts[i]) ? 0 : 1;
            if (s != side[i]) {
                side[i] = s;
                changed = true;
            }
        }
        if (!changed) break;
    }

    if (!lines[0].valid || !lines[1].valid) {
        out.push_back(std::move(pts));  // strands inseparable; keep as one
        return;
    }

    // flagged-run points must lie within 3 voxels of their line; the rest of
    // the cluster follows the nearer line at its own slice
    std::vector<Vec3i> child[2];
    for (const auto& v : run_pts) {
        double d0 = lines[0].residual(v), d1 = lines[1].residual(v);
        if (std::min(d0, d1) <= 3.0) child[d0 <= d1 ? 0 : 1].push_back(v);
    }
    for (const auto& v : rest_pts)
        child[lines[0].residual(v) <= lines[1].residual(v) ? 0 : 1].push_back(v);

    for (auto& c : child) {
        if (c.empty()) continue;
        if (c.size() == pts.size())
            out.push_back(std::move(c));  // nothing separated; stop recursing
        else
            leon_process(std::move(c), split, out);
    }
}

}  // namespace

ClusterSet leon_cluster(const PointCloud& cloud, const HdbscanParams& params,
                        const LeonSplitParams& split) {
    if (cloud.empty()) throw std::invalid_argument("leon_cluster: empty cloud");
    ClusterSet base = hdbscan(cloud, params);
    auto idx = base.cluster_indices();

    std::vector<std::vector<Vec3i>> final_clusters;
    for (const auto& members : idx) {
        std::vector<Vec3i> pts;
        pts.reserve(members.size());
        for (auto i : members) pts.push_back(cloud.voxels[i]);
        leon_process(std::move(pts), split, final_clusters);
    }

    // map voxels back to labels
    std::map<std::size_t, int> label_of;
    for (std::size_t c = 0; c < final_clusters.size(); ++c)
        for (const auto& v : final_clusters[c])
            label_of[cloud.meta.linear(v)] = static_cast<int>(c);

    ClusterSet set;
    set.cloud = cloud;
    set.labels.assign(cloud.size(), -1);
    for (std::size_t i = 0; i < cloud.size(); ++i) {
        auto it = label_of.find(cloud.meta.linear(cloud.voxels[i]));
        if (it != label_of.end()) set.labels[i] = it->second;
    }
    return canonicalize(std::move(set));
}

namespace {

struct TreeLeaf {
    double z_lo, z_hi;
    Eigen::Vector2d a, b;  // x = a.x + b.x * z; y = a.y + b.y * z
    Eigen::Vector2d eval(double z) const { return a + b * z; }
};

struct LinFit {
    Eigen::Vector2d a, b;
    double sse;
};

LinFit linear_fit(const std::vector<Vec3>& pts, std::size_t lo, std::size_t hi) {
    const double n = static_cast<double>(hi - lo);
    double sz = 0, szz = 0;
    Eigen::Vector2d sv = Eigen::Vector2d::Zero(), svz = Eigen::Vector2d::Zero();
    for (std::size_t i = lo; i < hi; ++i) {
        double z = pts[i].z();
        Eigen::Vector2d v(pts[i].x(), pts[i].y());
        sz += z;
        szz += z * z;
        sv += v;
        svz += v * z;
    }
    double det = n * szz - sz * sz;
    LinFit fit;
    if (std::abs(det) < 1e-12) {
        fit.b = Eigen::Vector2d::Zero();
        fit.a = sv / n;
    } else {
        fit.b = (n * svz - sz * sv) / det;
        fit.a = (sv - fit.b * sz) / n;
    }
    fit.sse = 0.0;
    for (std::size_t i = lo; i < hi; ++i) {
        Eigen::Vector2d r = Eigen::Vector2d(pts[i].x(), pts[i].y()) -
                            (fit.a + fit.b * pts[i].z());
        fit.sse += r.squaredNorm();
    }
    return fit;
}

void build_tree(const std::vector<Vec3>& pts, std::size_t lo, std::size_t hi,
                double z_lo, double z_hi, int depth, int max_depth,
                std::vector<TreeLeaf>& leaves) {
    LinFit fit = linear_fit(pts, lo, hi);
    bool can_split = depth < max_depth && fit.sse > 0.0;
    std::size_t best_cut = 0;
    double best_child_sse = std::numeric_limits<double>::infinity();
    if (can_split) {
        for (std::size_t cut = lo + 1; cut < hi; ++cut) {
            if (pts[cut].z() == pts[cut - 1].z()) continue;  // split between distinct z
            if (cut - lo < 5 || hi - cut < 5) continue;
            LinFit l = linear_fit(pts, lo, cut);
            LinFit r = linear_fit(pts, cut, hi);
            if (l.sse + r.sse < best_child_sse) {
                best_child_sse = l.sse + r.sse;
                best_cut = cut;
            }
        }
    }
    // a split must buy a substantial residual drop; small gains are noise
    // chasing and would fragment straight needles
    if (best_cut != 0 && fit.sse - best_child_sse >= 0.05 * fit.sse) {
        double z_mid = 0.5 * (pts[best_cut - 1].z() + pts[best_cut].z());
        build_tree(pts, lo, best_cut, z_lo, z_mid, depth + 1, max_depth, leaves);
        build_tree(pts, best_cut, hi, z_mid, z_hi, depth + 1, max_depth, leaves);
    } else {
        leaves.push_back({z_lo, z_hi, fit.a, fit.b});
    }
}

}  // namespace

Polyline fit_polyline(const std::vector<Vec3>& cluster_points_mm, int max_segments) {
    if (max_segments < 1)
        throw std::invalid_argument("fit_polyline: max_segments must be >= 1");
    if (distinct_z_count(cluster_points_mm) < 2)
        throw std::invalid_argument("fit_polyline: points span fewer than 2 slices");

    std::vector<Vec3> pts = cluster_points_mm;
    std::sort(pts.begin(), pts.end(),
              [](const Vec3& a, const Vec3& b) { return a.z() < b.z(); });
    int max_depth = 0;
    while ((1 << (max_depth + 1)) <= max_segments) ++max_depth;

    std::vector<TreeLeaf> leaves;
    build_tree(pts, 0, pts.size(), pts.front().z(), pts.back().z(), 0, max_depth,
               leaves);

    std::vector<Vec3> vertices;
    Eigen::Vector2d first = leaves.front().eval(leaves.front().z_lo);
    vertices.emplace_back(first.x(), first.y(), leaves.front().z_lo);
    for (std::size_t i = 0; i + 1 < leaves.size(); ++i) {
        double zb = leaves[i].z_hi;
        Eigen::Vector2d v = 0.5 * (leaves[i].eval(zb) + leaves[i + 1].eval(zb));
        vertices.emplace_back(v.x(), v.y(), zb);
    }
    Eigen::Vector2d last = leaves.back().eval(leaves.back().z_hi);
    vertices.emplace_back(last.x(), last.y(), leaves.back().z_hi);
    return Polyline(std::move(vertices));
}

ClusterSet mjung_init(const PointCloud& cloud, double assign_radius_vox) {
    if (cloud.empty()) throw std::invalid_argument("mjung_init: empty cloud");
    EndpointSet eps = detect_endpoints(cloud);

    auto seeds_of = [](const std::vector<Vec3>& pts) {
        std::vector<SeedRef> seeds;
        for (const auto& p : pts)
            seeds.push_back({p, static_cast<int>(std::llround(p.z()))});
        return seeds;
    };

    PropagateResult up, down;
    bool have_up = !eps.lowest.empty(), have_down = !eps.highest.empty();
    if (have_up)
        up = propagate_slices(cloud, seeds_of(eps.lowest),
                              AxialDirection::InferiorToSuperior, 1.5,
                              assign_radius_vox);
    if (have_down)
        down = propagate_slices(cloud, seeds_of(eps.highest),
                                AxialDirection::SuperiorToInferior, 1.5,
                                assign_radius_vox);

    const PropagateResult* chosen = nullptr;
    if (have_up && have_down)
        chosen = down.trail_count > up.trail_count ? &down : &up;
    else
        chosen = have_up ? &up : &down;

    ClusterSet set;
    set.cloud = cloud;
    set.labels = chosen->labels;
    return canonicalize(std::move(set));
}

namespace {

using Clock = std::chrono::steady_clock;

double ms_since(Clock::time_point t0) {
    return std::chrono::duration<double, std::milli>(Clock::now() - t0).count();
}

std::vector<NeedleCurve> fit_clusters(const ClusterSet& set, int degree) {
    std::vector<NeedleCurve> curves;
    for (const auto& members : set.cluster_indices()) {
        std::vector<Vec3> pts;
        pts.reserve(members.size());
        for (auto i : members) pts.push_back(set.cloud.mm(i));
        int feasible = std::min(degree, distinct_z_count(pts) - 1);
        if (feasible < 1) continue;
        curves.push_back(fit_poly_lsq(pts, feasible));
    }
    return curves;
}

// In-plane voxel-metric distance to a curve at the voxel's z, or 3D
// voxel-metric distance to the nearer curve endpoint outside its extent.
double voxel_curve_distance(const Vec3& p_mm, const NeedleCurve& curve,
                            const Vec3& spacing) {
    if (p_mm.z() < curve.z_min_mm || p_mm.z() > curve.z_max_mm) {
        Vec3 e = p_mm.z() < curve.z_min_mm ? curve.bottom() : curve.tip();
        return ((p_mm - e).cwiseQuotient(spacing)).norm();
    }
    Vec3 q = curve.eval(p_mm.z());
    return std::hypot((p_mm.x() - q.x()) / spacing.x(),
                      (p_mm.y() - q.y()) / spacing.y());
}

// Voxels attributable to the surviving candidates. Voxels stranded far from
// every kept curve belong to discarded false-positive candidates; feeding
// them back into the final refinement would drag a real needle's fit.
constexpr double kKeepRadiusVox = 4.0;

PointCloud restrict_to_curves(const PointCloud& cloud,
                              const std::vector<NeedleCurve>& curves,
                              double radius_vox) {
    PointCloud kept;
    kept.meta = cloud.meta;
    for (const auto& v : cloud.voxels) {
        Vec3 p = cloud.meta.world(v);
        double best = std::numeric_limits<double>::infinity();
        for (const auto& c : curves)
            best = std::min(best,
                            voxel_curve_distance(p, c, cloud.meta.spacing_mm));
        if (best <= radius_vox) kept.voxels.push_back(v);
    }
    return kept;
}

ClusterSet clusters_from_curves(const PointCloud& cloud,
                                const std::vector<NeedleCurve>& curves) {
    ClusterSet set;
    set.cloud = cloud;
    set.labels.assign(cloud.size(), -1);
    for (std::size_t i = 0; i < cloud.size(); ++i) {
        Vec3 p = cloud.mm(i);
        int best = 0;
        double bd = point_curve_distance(p, curves[0]);
        for (std::size_t c = 1; c < curves.size(); ++c) {
            double d = point_curve_distance(p, curves[c]);
            if (d < bd) { bd = d; best = static_cast<int>(c); }
        }
        set.labels[i] = best;
    }
    return canonicalize(std::move(set));
}

void sort_needles(std::vector<Trajectory>& needles) {
    std::sort(needles.begin(), needles.end(), [](const Trajectory& a, const Trajectory& b) {
        Vec3 pa = trajectory_bottom(a), pb = trajectory_bottom(b);
        if (pa.z() != pb.z()) return pa.z() < pb.z();
        if (pa.y() != pb.y()) return pa.y() < pb.y();
        return pa.x() < pb.x();
    });
}

}  // namespace

ReconstructResult reconstruct(const PointCloud& cloud, Technique technique,
                              int n_needles, unsigned seed,
                              const ReconstructParams& params) {
    if (technique_needs_count(technique) && n_needles < 1)
        throw std::invalid_argument("technique requires needle count");

    ReconstructResult res;
    res.final_loss = std::numeric_limits<double>::quiet_NaN();
    if (cloud.empty()) {
        res.diagnostic = "no needles detected";
        return res;
    }

    auto t0 = Clock::now();
    auto log_stage = [&](const std::string& name, int count) {
        res.stages.push_back({name, count, ms_since(t0)});
        t0 = Clock::now();
    };

    // initialization
    ClusterSet init;
    switch (technique) {
        case Technique::Jung:
            init = jung_init(cloud, n_needles, seed);
            log_stage("jung_init", init.cluster_count());
            break;
        case Technique::Leon:
        case Technique::LeonPlus:
            init = leon_cluster(cloud, params.hdbscan, params.leon_split);
            log_stage("leon_cluster", init.cluster_count());
            break;
        case Technique::MJung:
        case Technique::MJungPlus:
            init = mjung_init(cloud, params.mjung_assign_radius_vox);
            log_stage("mjung_init", init.cluster_count());
            break;
    }
    if (init.cluster_count() == 0) {
        res.diagnostic = "no needles detected";
        return res;
    }

    if (technique == Technique::Leon) {
        for (const auto& members : init.cluster_indices()) {
            std::vector<Vec3> pts;
            pts.reserve(members.size());
            for (auto i : members) pts.push_back(cloud.mm(i));
            if (distinct_z_count(pts) < 2) continue;
            res.needles.emplace_back(fit_polyline(pts));
        }
        log_stage("fit_polyline", static_cast<int>(res.needles.size()));
    } else if (technique == Technique::Jung || technique == Technique::MJung) {
        std::vector<NeedleCurve> curves = fit_clusters(init, 2);
        if (curves.empty()) {
            res.diagnostic = "no needles detected";
            return res;
        }
        log_stage("fit_poly_lsq", static_cast<int>(curves.size()));
        EmResult em = em_optimize(cloud, std::move(curves), 2, params.em);
        res.final_loss = em.final_loss;
        log_stage("em_optimize", static_cast<int>(em.needles.size()));
        for (auto& c : em.needles) res.needles.emplace_back(std::move(c));
    } else {
        // MJung+ / Leon+: merge, remove down to the known count, pick degree
        ClusterSet merged = apply_merges(init, params.merge, seed);
        log_stage("apply_merges", merged.cluster_count());
        std::vector<NeedleCurve> curves = fit_clusters(merged, 2);
        if (curves.empty()) {
            res.diagnostic = "no needles detected";
            return res;
        }
        curves = iterative_removal(cloud, std::move(curves), n_needles);
        log_stage("iterative_removal", static_cast<int>(curves.size()));
        PointCloud kept = restrict_to_curves(cloud, curves, kKeepRadiusVox);
        if (kept.empty()) kept = cloud;
        ClusterSet final_clusters = clusters_from_curves(kept, curves);
        DegreeSelection sel = select_degree(kept, final_clusters, params.em);
        res.final_loss = sel.loss;
        log_stage("select_degree", static_cast<int>(sel.needles.size()));
        for (auto& c : sel.needles) res.needles.emplace_back(std::move(c));
    }

    if (res.needles.empty()) {
        res.diagnostic = "no needles detected";
        return res;
    }
    sort_needles(res.needles);
    return res;
}

}  // namespace needlekit
