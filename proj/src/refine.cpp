#include "needlekit/refine.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <set>

namespace needlekit {

namespace {

std::vector<double> sorted_distinct_z(const std::vector<Vec3>& points) {
    std::vector<double> zs(points.size());
    for (std::size_t i = 0; i < points.size(); ++i) zs[i] = points[i].z();
    std::sort(zs.begin(), zs.end());
    zs.erase(std::unique(zs.begin(), zs.end(),
                         [](double a, double b) { return std::abs(a - b) < 1e-12; }),
             zs.end());
    return zs;
}

// expand sum_m a_m ((z - c)/s)^m into monomial coefficients of z
Eigen::VectorXd descale_coeffs(const Eigen::VectorXd& a, double c, double s) {
    const int deg = static_cast<int>(a.size()) - 1;
    Eigen::VectorXd out = Eigen::VectorXd::Zero(deg + 1);
    // (z - c)^m via iterated multiplication
    Eigen::VectorXd pw = Eigen::VectorXd::Zero(deg + 1);
    pw[0] = 1.0;
    double sinv = 1.0;
    for (int m = 0; m <= deg; ++m) {
        for (int t = 0; t <= m; ++t) out[t] += a[m] * sinv * pw[t];
        if (m < deg) {
            Eigen::VectorXd next = Eigen::VectorXd::Zero(deg + 1);
            for (int t = 0; t <= m; ++t) {
                next[t + 1] += pw[t];
                next[t] -= c * pw[t];
            }
            pw = next;
            sinv /= s;
        }
    }
    return out;
}

struct Fit2D {
    Eigen::VectorXd cx, cy;  // monomial coefficients
    double eval_x(double z) const {
        double v = 0.0, p = 1.0;
        for (int i = 0; i < cx.size(); ++i, p *= z) v += cx[i] * p;
        return v;
    }
    double eval_y(double z) const {
        double v = 0.0, p = 1.0;
        for (int i = 0; i < cy.size(); ++i, p *= z) v += cy[i] * p;
        return v;
    }
};

// least-squares x(z), y(z) of the given degree with centered/scaled z
Fit2D fit_xy(const std::vector<Vec3>& points, int degree) {
    double z_lo = points.front().z(), z_hi = z_lo;
    for (const auto& p : points) {
        z_lo = std::min(z_lo, p.z());
        z_hi = std::max(z_hi, p.z());
    }
    const double c = 0.5 * (z_lo + z_hi);
    const double s = std::max(0.5 * (z_hi - z_lo), 1e-12);
    const int n = static_cast<int>(points.size());
    Eigen::MatrixXd vand(n, degree + 1);
    Eigen::VectorXd bx(n), by(n);
    for (int i = 0; i < n; ++i) {
        double t = (points[i].z() - c) / s, p = 1.0;
        for (int m = 0; m <= degree; ++m, p *= t) vand(i, m) = p;
        bx[i] = points[i].x();
        by[i] = points[i].y();
    }
    auto qr = vand.householderQr();
    Fit2D fit;
    fit.cx = descale_coeffs(qr.solve(bx), c, s);
    fit.cy = descale_coeffs(qr.solve(by), c, s);
    return fit;
}

double inplane_residual(const Fit2D& fit, const Vec3& p) {
    double dx = p.x() - fit.eval_x(p.z());
    double dy = p.y() - fit.eval_y(p.z());
    return std::hypot(dx, dy);
}

}  // namespace

int distinct_z_count(const std::vector<Vec3>& points_mm) {
    return static_cast<int>(sorted_distinct_z(points_mm).size());
}

double point_curve_distance(const Vec3& p_mm, const NeedleCurve& curve) {
    if (p_mm.z() >= curve.z_min_mm && p_mm.z() <= curve.z_max_mm) {
        Vec3 q = curve.eval(p_mm.z());
        return std::hypot(p_mm.x() - q.x(), p_mm.y() - q.y());
    }
    return std::min((p_mm - curve.bottom()).norm(), (p_mm - curve.tip()).norm());
}

double loss(const PointCloud& cloud, const std::vector<NeedleCurve>& needles) {
    if (needles.empty()) throw std::invalid_argument("loss: empty needle list");
    if (cloud.empty()) throw std::invalid_argument("loss: empty cloud");
    double total = 0.0;
    for (std::size_t i = 0; i < cloud.size(); ++i) {
        Vec3 p = cloud.mm(i);
        double best = point_curve_distance(p, needles[0]);
        for (std::size_t c = 1; c < needles.size(); ++c)
            best = std::min(best, point_curve_distance(p, needles[c]));
        total += best;
    }
    return total / cloud.size();
}

NeedleCurve fit_poly_lsq(const std::vector<Vec3>& points_mm, int degree) {
    if (degree < 1 || degree > 3)
        throw std::invalid_argument("fit_poly_lsq: degree must be 1, 2 or 3");
    auto zs = sorted_distinct_z(points_mm);
    if (static_cast<int>(zs.size()) < degree + 1)
        throw std::invalid_argument("fit_poly_lsq: need degree+1 distinct z values");
    Fit2D fit = fit_xy(points_mm, degree);
    return NeedleCurve(degree, fit.cx, fit.cy, zs.front(), zs.back());
}

EmResult em_optimize(const PointCloud& cloud, std::vector<NeedleCurve> init,
                     int degree, const EmParams& params) {
    if (init.empty()) throw std::invalid_argument("em_optimize: need >= 1 initial curve");
    if (cloud.empty()) throw std::invalid_argument("em_optimize: empty cloud");

    EmResult res;
    std::vector<NeedleCurve> curves = std::move(init);
    double prev_loss = loss(cloud, curves);
    res.loss_trace.push_back(prev_loss);

    for (int iter = 0; iter < params.max_iters; ++iter) {
        // E: nearest-curve assignment
        std::vector<std::vector<Vec3>> assigned(curves.size());
        for (std::size_t i = 0; i < cloud.size(); ++i) {
            Vec3 p = cloud.mm(i);
            int best = 0;
            double bd = point_curve_distance(p, curves[0]);
            for (std::size_t c = 1; c < curves.size(); ++c) {
                double d = point_curve_distance(p, curves[c]);
                if (d < bd) { bd = d; best = static_cast<int>(c); }
            }
            assigned[best].push_back(p);
        }
        // drop curves that lost all points
        std::vector<NeedleCurve> kept;
        std::vector<std::vector<Vec3>> kept_pts;
        for (std::size_t c = 0; c < curves.size(); ++c) {
            if (!assigned[c].empty()) {
                kept.push_back(curves[c]);
                kept_pts.push_back(std::move(assigned[c]));
            }
        }
        curves = std::move(kept);
        if (curves.empty())
            throw std::runtime_error("em_optimize: all curves lost their points");

        // M: refit, keeping the old fit if refit is infeasible or worse
        for (std::size_t c = 0; c < curves.size(); ++c) {
            const auto& pts = kept_pts[c];
            if (distinct_z_count(pts) < degree + 1) continue;
            NeedleCurve refit = fit_poly_lsq(pts, degree);
            double old_sum = 0.0, new_sum = 0.0;
            for (const auto& p : pts) {
                old_sum += point_curve_distance(p, curves[c]);
                new_sum += point_curve_distance(p, refit);
            }
            if (new_sum <= old_sum) curves[c] = refit;
        }

        double cur_loss = loss(cloud, curves);
        res.loss_trace.push_back(cur_loss);
        if (prev_loss - cur_loss < params.loss_tol_mm) {
            prev_loss = std::min(prev_loss, cur_loss);
            break;
        }
        prev_loss = cur_loss;
    }
    res.needles = std::move(curves);
    res.final_loss = res.loss_trace.back();
    return res;
}

std::vector<std::pair<int, int>> find_merge_candidates(const ClusterSet& clusters,
                                                       const MergeParams& params) {
    const int m = clusters.cluster_count();
    auto idx = clusters.cluster_indices();

    struct Extent {
        int k_min, k_max;
        Eigen::Vector2d bottom_c, top_c;
    };
    std::vector<Extent> ext(m);
    for (int c = 0; c < m; ++c) {
        int k_min = clusters.cloud.voxels[idx[c].front()].z(), k_max = k_min;
        for (auto i : idx[c]) {
            k_min = std::min(k_min, clusters.cloud.voxels[i].z());
            k_max = std::max(k_max, clusters.cloud.voxels[i].z());
        }
        Eigen::Vector2d bot = Eigen::Vector2d::Zero(), top = Eigen::Vector2d::Zero();
        int nb = 0, nt = 0;
        for (auto i : idx[c]) {
            const auto& v = clusters.cloud.voxels[i];
            if (v.z() == k_min) { bot += Eigen::Vector2d(v.x(), v.y()); ++nb; }
            if (v.z() == k_max) { top += Eigen::Vector2d(v.x(), v.y()); ++nt; }
        }
        ext[c] = {k_min, k_max, bot / nb, top / nt};
    }

    std::vector<std::pair<int, int>> out;
    for (int a = 0; a < m; ++a)
        for (int b = 0; b < m; ++b) {
            if (a == b || ext[a].k_max >= ext[b].k_min) continue;  // a strictly below b
            Eigen::Vector2d d = ext[a].top_c - ext[b].bottom_c;
            if (std::abs(d.x()) <= params.inplane_window_vox &&
                std::abs(d.y()) <= params.inplane_window_vox)
                out.emplace_back(a, b);
        }
    std::sort(out.begin(), out.end());
    return out;
}

bool ransac_pair_check(const std::vector<Vec3i>& points_a,
                       const std::vector<Vec3i>& points_b,
                       const MergeParams& params, unsigned seed) {
    std::vector<Vec3> u;
    u.reserve(points_a.size() + points_b.size());
    for (const auto& v : points_a) u.push_back(v.cast<double>());
    for (const auto& v : points_b) u.push_back(v.cast<double>());
    std::sort(u.begin(), u.end(), [](const Vec3& a, const Vec3& b) {
        if (a.z() != b.z()) return a.z() < b.z();
        if (a.y() != b.y()) return a.y() < b.y();
        return a.x() < b.x();
    });

    const int deg = params.ransac_degree;
    const int need = deg + 1;
    if (distinct_z_count(u) < need) return false;
    const int n = static_cast<int>(u.size());

    std::mt19937_64 rng(seed);
    std::uniform_int_distribution<int> pick(0, n - 1);
    int best_outliers = n + 1;
    Fit2D best_fit;

    for (int it = 0; it < params.ransac_iters; ++it) {
        std::vector<Vec3> sample;
        std::set<double> zs;
        for (int tries = 0; tries < 200 && static_cast<int>(sample.size()) < need; ++tries) {
            const Vec3& p = u[pick(rng)];
            if (zs.insert(p.z()).second) sample.push_back(p);
        }
        if (static_cast<int>(sample.size()) < need) continue;
        Fit2D fit = fit_xy(sample, deg);
        int outliers = 0;
        for (const auto& p : u)
            if (inplane_residual(fit, p) > params.ransac_outlier_vox) ++outliers;
        if (outliers < best_outliers) {
            best_outliers = outliers;
            best_fit = fit;
        }
    }
    if (best_outliers > n) return false;

    std::vector<Vec3> inliers;
    for (const auto& p : u)
        if (inplane_residual(best_fit, p) <= params.ransac_outlier_vox)
            inliers.push_back(p);
    Fit2D final_fit = best_fit;
    if (distinct_z_count(inliers) >= need) final_fit = fit_xy(inliers, deg);
    for (const auto& p : u)
        if (inplane_residual(final_fit, p) > params.ransac_outlier_vox) return false;
    return true;
}

namespace {

// all maximal cliques (Bron-Kerbosch); cluster graphs here are tiny
void bron_kerbosch(std::vector<int> r, std::vector<int> p, std::vector<int> x,
                   const std::vector<std::vector<bool>>& adj,
                   std::vector<std::vector<int>>& out) {
    if (p.empty() && x.empty()) {
        if (r.size() >= 2) out.push_back(r);
        return;
    }
    std::vector<int> p_copy = p;
    for (int v : p_copy) {
        std::vector<int> r2 = r;
        r2.push_back(v);
        std::vector<int> p2, x2;
        for (int w : p)
            if (adj[v][w]) p2.push_back(w);
        for (int w : x)
            if (adj[v][w]) x2.push_back(w);
        bron_kerbosch(std::move(r2), std::move(p2), std::move(x2), adj, out);
        p.erase(std::find(p.begin(), p.end(), v));
        x.push_back(v);
    }
}

}  // namespace

ClusterSet apply_merges(const ClusterSet& clusters, const MergeParams& params,
                        unsigned seed) {
    const int m = clusters.cluster_count();
    auto candidates = find_merge_candidates(clusters, params);
    if (candidates.empty() || m < 2) return clusters;

    auto idx = clusters.cluster_indices();
    auto pts_of = [&](int c) {
        std::vector<Vec3i> pts;
        pts.reserve(idx[c].size());
        for (auto i : idx[c]) pts.push_back(clusters.cloud.voxels[i]);
        return pts;
    };

    std::vector<std::vector<bool>> adj(m, std::vector<bool>(m, false));
    bool any = false;
    for (auto [a, b] : candidates) {
        unsigned pair_seed = seed * 1000003u + static_cast<unsigned>(a) * 131u +
                             static_cast<unsigned>(b);
        if (ransac_pair_check(pts_of(a), pts_of(b), params, pair_seed)) {
            adj[a][b] = adj[b][a] = true;
            any = true;
        }
    }
    if (!any) return clusters;

    std::vector<int> group(m);
    std::iota(group.begin(), group.end(), 0);
    std::vector<bool> remaining(m, true);
    for (;;) {
        std::vector<int> nodes;
        for (int c = 0; c < m; ++c)
            if (remaining[c]) nodes.push_back(c);
        std::vector<std::vector<int>> cliques;
        bron_kerbosch({}, nodes, {}, adj, cliques);
        if (cliques.empty()) break;
        for (auto& cl : cliques) std::sort(cl.begin(), cl.end());
        auto best = std::min_element(cliques.begin(), cliques.end(),
                                     [](const auto& a, const auto& b) {
                                         if (a.size() != b.size()) return a.size() > b.size();
                                         return a.front() < b.front();
                                     });
        int target = best->front();
        for (int c : *best) {
            group[c] = target;
            remaining[c] = false;
        }
    }

    ClusterSet merged;
    merged.cloud = clusters.cloud;
    merged.labels = clusters.labels;
    for (auto& l : merged.labels)
        if (l >= 0) l = group[l];
    return canonicalize(std::move(merged));
}

std::vector<NeedleCurve> iterative_removal(const PointCloud& cloud,
                                           std::vector<NeedleCurve> needles,
                                           int target) {
    if (target < 1) throw std::invalid_argument("iterative_removal: target must be >= 1");
    while (static_cast<int>(needles.size()) > target) {
        int best_i = 0;
        double best_loss = std::numeric_limits<double>::infinity();
        for (std::size_t i = 0; i < needles.size(); ++i) {
            std::vector<NeedleCurve> reduced;
            reduced.reserve(needles.size() - 1);
            for (std::size_t j = 0; j < needles.size(); ++j)
                if (j != i) reduced.push_back(needles[j]);
            double l = loss(cloud, reduced);
            if (l < best_loss) {
                best_loss = l;
                best_i = static_cast<int>(i);
            }
        }
        needles.erase(needles.begin() + best_i);
    }
    return needles;
}

DegreeSelection select_degree(const PointCloud& cloud, const ClusterSet& clusters,
                              const EmParams& params) {
    auto idx = clusters.cluster_indices();
    if (idx.empty()) throw std::invalid_argument("select_degree: no clusters");

    DegreeSelection best;
    bool have = false;
    for (int d = 1; d <= 3; ++d) {
        std::vector<NeedleCurve> init;
        for (const auto& members : idx) {
            std::vector<Vec3> pts;
            pts.reserve(members.size());
            for (auto i : members) pts.push_back(clusters.cloud.mm(i));
            int feasible = std::min(d, distinct_z_count(pts) - 1);
            if (feasible < 1) continue;  // single-slice cluster, nothing to fit
            init.push_back(fit_poly_lsq(pts, feasible));
        }
        if (init.empty()) continue;
        EmResult em = em_optimize(cloud, std::move(init), d, params);
        if (!have || em.final_loss < best.loss) {
            best = {std::move(em.needles), em.final_loss, d};
            have = true;
        }
    }
    if (!have) throw std::runtime_error("select_degree: no fittable clusters");
    return best;
}

}  // namespace needlekit
