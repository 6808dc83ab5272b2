#include <doctest.h>

#include <random>

#include "helpers.hpp"
#include "needlekit/refine.hpp"

using namespace needlekit;
using namespace nk_test;

namespace {

NeedleCurve straight_curve(double x, double y, double z0, double z1) {
    return NeedleCurve(1, Eigen::Vector2d(x, 0), Eigen::Vector2d(y, 0), z0, z1);
}

// label every point of a cloud by a coordinate predicate
ClusterSet labeled(const PointCloud& cloud, const std::function<int(const Vec3i&)>& f) {
    ClusterSet cs;
    cs.cloud = cloud;
    for (const auto& v : cloud.voxels) cs.labels.push_back(f(v));
    return cs;
}

}  // namespace

TEST_CASE("loss: points exactly on a curve give zero") {
    VolumeMeta meta = unit_meta(20, 20, 20);
    PointCloud cloud = cloud_from_voxels(meta, straight_needle(5, 7, 0, 19));
    CHECK(loss(cloud, {straight_curve(5, 7, 0, 19)}) == doctest::Approx(0.0));
}

TEST_CASE("loss: one point 2 mm in-plane from a straight needle") {
    VolumeMeta meta = unit_meta(20, 20, 20);
    PointCloud cloud = cloud_from_voxels(meta, {{7, 7, 10}});
    CHECK(loss(cloud, {straight_curve(5, 7, 0, 19)}) == doctest::Approx(2.0));
}

TEST_CASE("loss: point outside the z-range measures to the nearer endpoint") {
    VolumeMeta meta = unit_meta(20, 20, 20);
    PointCloud cloud = cloud_from_voxels(meta, {{5, 7, 18}});
    // curve ends at z=15; 3D distance to (5,7,15) is 3
    CHECK(loss(cloud, {straight_curve(5, 7, 0, 15)}) == doctest::Approx(3.0));
}

TEST_CASE("loss rejects an empty needle list") {
    VolumeMeta meta = unit_meta(4, 4, 4);
    PointCloud cloud = cloud_from_voxels(meta, {{1, 1, 1}});
    CHECK_THROWS_AS(loss(cloud, {}), std::invalid_argument);
}

TEST_CASE("loss matches a dense-sampling oracle on near-vertical curves") {
    std::mt19937_64 rng(13);
    std::uniform_real_distribution<double> u01(0.0, 1.0);
    VolumeMeta meta(Vec3i(64, 64, 32), Vec3(1.0, 1.0, 1.0));
    for (int trial = 0; trial < 10; ++trial) {
        std::vector<NeedleCurve> needles;
        for (int c = 0; c < 3; ++c) {
            Eigen::Vector3d cx(10 + 40 * u01(rng), 0.01 * (u01(rng) - 0.5),
                               1e-4 * (u01(rng) - 0.5));
            Eigen::Vector3d cy(10 + 40 * u01(rng), 0.01 * (u01(rng) - 0.5),
                               1e-4 * (u01(rng) - 0.5));
            needles.emplace_back(2, cx, cy, 2.0, 28.0);
        }
        std::vector<Vec3i> voxels;
        while (voxels.size() < 50) {
            const NeedleCurve& c = needles[rng() % 3];
            double z = 32 * u01(rng);
            Vec3 p = c.eval(std::clamp(z, c.z_min_mm, c.z_max_mm));
            Vec3i v(static_cast<int>(p.x() + 4 * (u01(rng) - 0.5)),
                    static_cast<int>(p.y() + 4 * (u01(rng) - 0.5)),
                    static_cast<int>(z));
            if (meta.contains(v)) voxels.push_back(v);
        }
        PointCloud cloud = cloud_from_voxels(meta, voxels);

        // oracle: min 3D distance to 10000 dense samples per curve
        double total = 0.0;
        for (std::size_t i = 0; i < cloud.size(); ++i) {
            Vec3 p = cloud.mm(i);
            double best = 1e18;
            for (const auto& c : needles) {
                for (int s = 0; s < 10000; ++s) {
                    double z = c.z_min_mm + (c.z_max_mm - c.z_min_mm) * s / 9999.0;
                    best = std::min(best, (p - c.eval(z)).norm());
                }
            }
            total += best;
        }
        CHECK(std::abs(loss(cloud, needles) - total / cloud.size()) <= 1e-3);
    }
}

TEST_CASE("loss never increases when a needle is added") {
    std::mt19937_64 rng(14);
    std::uniform_real_distribution<double> u(2.0, 18.0);
    VolumeMeta meta = unit_meta(24, 24, 24);
    std::vector<Vec3i> voxels;
    for (int i = 0; i < 30; ++i)
        voxels.emplace_back(static_cast<int>(u(rng)), static_cast<int>(u(rng)),
                            static_cast<int>(u(rng)));
    PointCloud cloud = cloud_from_voxels(meta, voxels);
    std::vector<NeedleCurve> needles{straight_curve(4, 4, 0, 23)};
    for (int extra = 0; extra < 5; ++extra) {
        double before = loss(cloud, needles);
        needles.push_back(straight_curve(u(rng), u(rng), 0, 23));
        CHECK(loss(cloud, needles) <= before + 1e-12);
    }
}

TEST_CASE("fit_poly_lsq recovers an exact linear model") {
    std::vector<Vec3> pts;
    for (int z = 0; z <= 10; ++z) pts.emplace_back(2.0 * z + 1.0, 0.0, double(z));
    NeedleCurve c = fit_poly_lsq(pts, 1);
    CHECK(c.coeff_x[0] == doctest::Approx(1.0).epsilon(1e-9));
    CHECK(c.coeff_x[1] == doctest::Approx(2.0).epsilon(1e-9));
    CHECK(c.coeff_y[0] == doctest::Approx(0.0).epsilon(1e-9));
    CHECK(c.z_min_mm == doctest::Approx(0.0));
    CHECK(c.z_max_mm == doctest::Approx(10.0));
}

TEST_CASE("fit_poly_lsq: degree-1 fit of a parabola matches the analytic best line") {
    std::vector<Vec3> pts;
    for (int z = 0; z <= 4; ++z) pts.emplace_back(double(z * z), 0.0, double(z));
    NeedleCurve c = fit_poly_lsq(pts, 1);
    // normal equations on raw z, solved by Cramer's rule
    double n = 5, sz = 0, szz = 0, sx = 0, szx = 0;
    for (const auto& p : pts) {
        sz += p.z();
        szz += p.z() * p.z();
        sx += p.x();
        szx += p.z() * p.x();
    }
    double det = n * szz - sz * sz;
    double b = (n * szx - sz * sx) / det;
    double a = (sx - b * sz) / n;
    CHECK(c.coeff_x[0] == doctest::Approx(a).epsilon(1e-9));
    CHECK(c.coeff_x[1] == doctest::Approx(b).epsilon(1e-9));
}

TEST_CASE("fit_poly_lsq rejects insufficient distinct z") {
    std::vector<Vec3> pts{{0, 0, 0}, {1, 0, 1}, {2, 0, 2}};
    CHECK_THROWS_AS(fit_poly_lsq(pts, 3), std::invalid_argument);
}

TEST_CASE("em_optimize: exact init is a fixed point with zero loss") {
    VolumeMeta meta = unit_meta(30, 30, 20);
    std::vector<Vec3i> voxels = straight_needle(5, 5, 0, 19);
    append(voxels, straight_needle(15, 5, 0, 19));
    PointCloud cloud = cloud_from_voxels(meta, voxels);
    std::vector<NeedleCurve> init{straight_curve(5, 5, 0, 19),
                                  straight_curve(15, 5, 0, 19)};
    EmResult res = em_optimize(cloud, init, 2);
    CHECK(res.final_loss == doctest::Approx(0.0).epsilon(1e-12));
    REQUIRE(res.needles.size() == 2);
}

TEST_CASE("em_optimize recovers two straight needles from perturbed init") {
    VolumeMeta meta = unit_meta(30, 30, 20);
    std::vector<Vec3i> voxels = straight_needle(5, 5, 0, 19);
    append(voxels, straight_needle(15, 5, 0, 19));
    PointCloud cloud = cloud_from_voxels(meta, voxels);
    std::vector<NeedleCurve> init{straight_curve(7, 6, 0, 19),
                                  straight_curve(13, 4, 0, 19)};
    EmResult res = em_optimize(cloud, init, 2);
    CHECK(res.final_loss <= res.loss_trace.front() + 1e-12);
    REQUIRE(res.needles.size() == 2);
    for (const auto& c : res.needles) {
        double x = c.eval(10.0).x();
        bool near5 = std::abs(x - 5.0) < 0.5, near15 = std::abs(x - 15.0) < 0.5;
        CHECK((near5 || near15));
        CHECK(std::abs(c.eval(10.0).y() - 5.0) < 0.5);
    }
}

TEST_CASE("em_optimize loss trace is monotone non-increasing") {
    std::mt19937_64 rng(23);
    std::uniform_real_distribution<double> u(-3.0, 3.0);
    VolumeMeta meta = unit_meta(40, 40, 24);
    std::vector<Vec3i> voxels;
    for (int n = 0; n < 3; ++n)
        append(voxels, straight_needle(8 + 10 * n, 12, 0, 23));
    PointCloud cloud = cloud_from_voxels(meta, voxels);
    for (int trial = 0; trial < 100; ++trial) {
        std::vector<NeedleCurve> init;
        for (int n = 0; n < 3; ++n)
            init.push_back(straight_curve(8 + 10 * n + u(rng), 12 + u(rng), 0, 23));
        EmResult res = em_optimize(cloud, init, 2);
        for (std::size_t i = 1; i < res.loss_trace.size(); ++i)
            CHECK(res.loss_trace[i] <= res.loss_trace[i - 1] + 1e-9);
    }
}

TEST_CASE("em_optimize throws when every curve loses its points") {
    VolumeMeta meta = unit_meta(10, 10, 10);
    PointCloud cloud;
    cloud.meta = meta;
    CHECK_THROWS(em_optimize(cloud, {straight_curve(5, 5, 0, 9)}, 2));
}

TEST_CASE("find_merge_candidates: disjoint fragments inside the window") {
    VolumeMeta meta = unit_meta(40, 40, 40);
    std::vector<Vec3i> voxels = straight_needle(10, 10, 0, 10);
    append(voxels, straight_needle(13, 12, 14, 30));
    ClusterSet cs = labeled(cloud_from_voxels(meta, voxels),
                            [](const Vec3i& v) { return v.z() <= 10 ? 0 : 1; });
    auto cands = find_merge_candidates(cs, {});
    REQUIRE(cands.size() == 1);
    CHECK(cands[0] == std::pair<int, int>(0, 1));
}

TEST_CASE("find_merge_candidates: offset beyond the window is rejected") {
    VolumeMeta meta = unit_meta(60, 40, 40);
    std::vector<Vec3i> voxels = straight_needle(10, 10, 0, 10);
    append(voxels, straight_needle(41, 10, 14, 30));  // |di| = 31 > 30
    ClusterSet cs = labeled(cloud_from_voxels(meta, voxels),
                            [](const Vec3i& v) { return v.z() <= 10 ? 0 : 1; });
    CHECK(find_merge_candidates(cs, {}).empty());
}

TEST_CASE("find_merge_candidates: axially overlapping fragments are rejected") {
    VolumeMeta meta = unit_meta(40, 40, 40);
    std::vector<Vec3i> voxels = straight_needle(10, 10, 0, 12);
    append(voxels, straight_needle(13, 10, 10, 30));
    ClusterSet cs = labeled(cloud_from_voxels(meta, voxels),
                            [](const Vec3i& v) { return v.x() == 10 ? 0 : 1; });
    CHECK(find_merge_candidates(cs, {}).empty());
}

TEST_CASE("ransac_pair_check accepts two collinear fragments") {
    std::vector<Vec3i> a = straight_needle(10, 10, 0, 10);
    std::vector<Vec3i> b = straight_needle(10, 10, 14, 30);
    CHECK(ransac_pair_check(a, b, {}, 7));
}

TEST_CASE("ransac_pair_check rejects a large in-plane jump") {
    // a 14-voxel jump exceeds twice the 5-voxel outlier band: no polynomial
    // can thread both flat fragments without leaving an outlier
    std::vector<Vec3i> a = straight_needle(10, 10, 0, 10);
    std::vector<Vec3i> b = straight_needle(24, 10, 13, 23);
    CHECK_FALSE(ransac_pair_check(a, b, {}, 7));
}

TEST_CASE("ransac_pair_check accepts fragments of one curved needle") {
    std::vector<Vec3i> a, b;
    for (int k = 0; k <= 10; ++k)
        a.emplace_back(static_cast<int>(std::lround(10 + 0.02 * k * k)), 10, k);
    for (int k = 16; k <= 26; ++k)
        b.emplace_back(static_cast<int>(std::lround(10 + 0.02 * k * k)), 10, k);
    CHECK(ransac_pair_check(a, b, {}, 7));
}

TEST_CASE("ransac_pair_check is symmetric and deterministic") {
    std::vector<Vec3i> a = straight_needle(10, 10, 0, 10);
    std::vector<Vec3i> b = straight_needle(12, 11, 14, 30);
    bool ab = ransac_pair_check(a, b, {}, 99);
    CHECK(ab == ransac_pair_check(b, a, {}, 99));
    CHECK(ab == ransac_pair_check(a, b, {}, 99));
}

TEST_CASE("apply_merges joins three collinear fragments of one needle") {
    VolumeMeta meta = unit_meta(40, 40, 60);
    std::vector<Vec3i> voxels = straight_needle(10, 10, 0, 12);
    append(voxels, straight_needle(10, 10, 18, 30));
    append(voxels, straight_needle(10, 10, 36, 50));
    append(voxels, straight_needle(25, 25, 0, 50));  // separate intact needle
    ClusterSet cs = labeled(cloud_from_voxels(meta, voxels), [](const Vec3i& v) {
        if (v.x() == 25) return 3;
        return v.z() <= 12 ? 0 : (v.z() <= 30 ? 1 : 2);
    });
    ClusterSet merged = apply_merges(cs, {}, 5);
    CHECK(merged.cluster_count() == 2);
    // union of clustered points is unchanged
    for (std::size_t i = 0; i < cs.labels.size(); ++i)
        CHECK((merged.labels[i] >= 0) == (cs.labels[i] >= 0));
    // the three fragments now share a label
    int frag_label = -2;
    for (std::size_t i = 0; i < cs.labels.size(); ++i) {
        if (cs.cloud.voxels[i].x() != 10) continue;
        if (frag_label == -2) frag_label = merged.labels[i];
        CHECK(merged.labels[i] == frag_label);
    }
}

TEST_CASE("apply_merges merges collinear false-positive blobs too") {
    VolumeMeta meta = unit_meta(40, 40, 40);
    std::vector<Vec3i> voxels = straight_needle(10, 10, 2, 6);
    append(voxels, straight_needle(10, 10, 20, 24));
    ClusterSet cs = labeled(cloud_from_voxels(meta, voxels),
                            [](const Vec3i& v) { return v.z() <= 6 ? 0 : 1; });
    ClusterSet merged = apply_merges(cs, {}, 5);
    CHECK(merged.cluster_count() == 1);
}

TEST_CASE("apply_merges with no candidates is the identity") {
    VolumeMeta meta = unit_meta(40, 40, 40);
    std::vector<Vec3i> voxels = straight_needle(10, 10, 0, 39);
    append(voxels, straight_needle(25, 25, 0, 39));  // axially overlapping
    ClusterSet cs = labeled(cloud_from_voxels(meta, voxels),
                            [](const Vec3i& v) { return v.x() == 10 ? 0 : 1; });
    ClusterSet merged = apply_merges(cs, {}, 5);
    CHECK(merged.labels == cs.labels);
}

TEST_CASE("iterative_removal drops low-support blob needles") {
    VolumeMeta meta = unit_meta(60, 60, 40);
    std::vector<Vec3i> voxels;
    for (int n = 0; n < 4; ++n) append(voxels, straight_needle(10 + 10 * n, 20, 0, 39));
    append(voxels, straight_needle(50, 50, 10, 12));  // 3-voxel blob
    PointCloud cloud = cloud_from_voxels(meta, voxels);
    std::vector<NeedleCurve> needles;
    for (int n = 0; n < 4; ++n) needles.push_back(straight_curve(10 + 10 * n, 20, 0, 39));
    needles.push_back(straight_curve(50, 50, 10, 12.5));
    auto kept = iterative_removal(cloud, needles, 4);
    REQUIRE(kept.size() == 4);
    for (const auto& c : kept) CHECK(c.eval(20.0).x() < 45.0);
}

TEST_CASE("iterative_removal at target count is the identity") {
    VolumeMeta meta = unit_meta(30, 30, 20);
    PointCloud cloud = cloud_from_voxels(meta, straight_needle(5, 5, 0, 19));
    std::vector<NeedleCurve> needles{straight_curve(5, 5, 0, 19),
                                     straight_curve(9, 9, 0, 19)};
    auto kept = iterative_removal(cloud, needles, 2);
    REQUIRE(kept.size() == 2);
    CHECK(kept[0].coeff_x == needles[0].coeff_x);
    CHECK(kept[1].coeff_x == needles[1].coeff_x);
}

TEST_CASE("iterative_removal matches a brute-force greedy oracle") {
    std::mt19937_64 rng(31);
    std::uniform_real_distribution<double> u(2.0, 38.0);
    VolumeMeta meta = unit_meta(42, 42, 30);
    for (int trial = 0; trial < 20; ++trial) {
        int n_needles = 4 + static_cast<int>(rng() % 5);  // up to 8
        std::vector<Vec3i> voxels;
        for (int i = 0; i < 60; ++i)
            voxels.emplace_back(static_cast<int>(u(rng)), static_cast<int>(u(rng)),
                                static_cast<int>(rng() % 30));
        PointCloud cloud = cloud_from_voxels(meta, voxels);
        std::vector<NeedleCurve> needles;
        for (int i = 0; i < n_needles; ++i)
            needles.push_back(straight_curve(u(rng), u(rng), 0, 29));
        int target = 1 + static_cast<int>(rng() % n_needles);

        auto kept = iterative_removal(cloud, needles, target);

        // oracle: independent greedy simulation over whole-set losses
        std::vector<NeedleCurve> sim = needles;
        while (static_cast<int>(sim.size()) > target) {
            int best = -1;
            double best_loss = 1e18;
            for (std::size_t r = 0; r < sim.size(); ++r) {
                std::vector<NeedleCurve> rest;
                for (std::size_t j = 0; j < sim.size(); ++j)
                    if (j != r) rest.push_back(sim[j]);
                double l = loss(cloud, rest);
                if (l < best_loss - 1e-15) {
                    best_loss = l;
                    best = static_cast<int>(r);
                }
            }
            sim.erase(sim.begin() + best);
        }
        REQUIRE(kept.size() == sim.size());
        for (std::size_t i = 0; i < sim.size(); ++i)
            CHECK(kept[i].coeff_x == sim[i].coeff_x);
    }
}

TEST_CASE("select_degree picks degree 1 for straight needles") {
    VolumeMeta meta = unit_meta(30, 30, 24);
    std::vector<Vec3i> voxels = straight_needle(8, 12, 0, 23);
    append(voxels, straight_needle(20, 12, 0, 23));
    ClusterSet cs = labeled(cloud_from_voxels(meta, voxels),
                            [](const Vec3i& v) { return v.x() == 8 ? 0 : 1; });
    DegreeSelection sel = select_degree(cs.cloud, cs);
    CHECK(sel.degree == 1);
    CHECK(sel.loss == doctest::Approx(0.0).epsilon(1e-9));
}

TEST_CASE("select_degree prefers degree 3 on a strongly cubic needle") {
    VolumeMeta meta = unit_meta(60, 30, 24);
    std::vector<Vec3i> voxels;
    for (int k = 0; k < 24; ++k) {
        double t = k - 11.5;
        voxels.emplace_back(static_cast<int>(std::lround(30 + 0.02 * t * t * t)), 12, k);
    }
    ClusterSet cs = labeled(cloud_from_voxels(meta, voxels),
                            [](const Vec3i&) { return 0; });
    DegreeSelection sel = select_degree(cs.cloud, cs);
    CHECK(sel.degree == 3);
}

TEST_CASE("select_degree falls back gracefully on a 2-slice cluster") {
    VolumeMeta meta = unit_meta(20, 20, 10);
    std::vector<Vec3i> voxels{{5, 5, 3}, {5, 5, 4}};
    ClusterSet cs = labeled(cloud_from_voxels(meta, voxels),
                            [](const Vec3i&) { return 0; });
    DegreeSelection sel = select_degree(cs.cloud, cs);
    REQUIRE(sel.needles.size() == 1);
    CHECK(sel.loss == doctest::Approx(0.0).epsilon(1e-9));
}
