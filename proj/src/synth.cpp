#include "needlekit/synth.hpp"

#include <algorithm>
#include <cmath>
#include <random>

#include "needlekit/core.hpp"

namespace needlekit {

ErrorProfile error_profile_preset(const std::string& name) {
    ErrorProfile p;
    if (name == "clean") return p;
    if (name == "3d-like") {
        p.p_disconnect = 0.15;
        p.gap_slices_range = {2, 4};
        p.fp_blobs_per_volume = 2;
        p.fp_blob_size_range_vox = {20, 40};
        return p;
    }
    if (name == "2d-like") {
        p.p_disconnect = 0.5;
        p.gap_slices_range = {3, 8};
        p.p_drop_needle = 0.05;
        p.fp_blobs_per_volume = 8;
        p.fp_blob_size_range_vox = {20, 60};
        p.p_truncate_tip = 0.2;
        p.truncate_range_slices = {2, 5};
        p.jitter_vox = 0.02;
        return p;
    }
    throw std::invalid_argument("unknown error profile preset: " + name);
}

namespace {

// dense 1 mm samples of a needle's control polyline
std::vector<Vec3> dense_samples(const std::vector<Vec3>& ctrl) {
    return interpolate_polyline(ctrl, 1.0);
}

double min_pair_distance(const std::vector<Vec3>& a, const std::vector<Vec3>& b) {
    double best = std::numeric_limits<double>::infinity();
    for (const auto& p : a)
        for (const auto& q : b) best = std::min(best, (p - q).norm());
    return best;
}

std::vector<Vec3> sample_needle(const PhantomConfig& cfg, std::mt19937_64& rng) {
    const Vec3 extent = cfg.meta.spacing_mm.cwiseProduct(
        (cfg.meta.dims - Vec3i::Ones()).cast<double>());
    const double margin = cfg.curvature_mm + cfg.dilation_radius_mm + 2.0;
    std::uniform_real_distribution<double> ux(margin, extent.x() - margin);
    std::uniform_real_distribution<double> uy(margin, extent.y() - margin);
    std::uniform_real_distribution<double> ulen(cfg.length_range_mm.first,
                                                cfg.length_range_mm.second);
    std::uniform_real_distribution<double> ucoef(-1.0, 1.0);
    std::uniform_int_distribution<int> ujit(0, std::max(0, cfg.start_slice_jitter));

    const double x0 = ux(rng), y0 = uy(rng);
    const double z0 = 2.0 + ujit(rng) * cfg.meta.spacing_mm.z();
    double len = ulen(rng);
    len = std::min(len, extent.z() - 2.0 - z0);
    if (len < 4.0 * cfg.meta.spacing_mm.z())
        throw std::runtime_error("generate_phantom: needle does not fit the volume");

    // in-plane deviation terms over u = (z - z0)/len, bounded by curvature_mm
    double tx = ucoef(rng) * cfg.curvature_mm, ty = ucoef(rng) * cfg.curvature_mm;
    double bx = 0.0, by = 0.0, wx = 0.0, wy = 0.0;
    if (cfg.degree >= 2) {
        bx = ucoef(rng) * cfg.curvature_mm;
        by = ucoef(rng) * cfg.curvature_mm;
    }
    if (cfg.degree >= 3) {
        wx = ucoef(rng) * cfg.curvature_mm;
        wy = ucoef(rng) * cfg.curvature_mm;
    }

    std::vector<Vec3> ctrl;
    const int steps = std::max(2, static_cast<int>(std::ceil(len)));
    for (int s = 0; s <= steps; ++s) {
        double u = static_cast<double>(s) / steps;
        double bump = 4.0 * u * (1.0 - u);                       // max 1 at u=0.5
        double wiggle = 6.75 * u * (1.0 - u) * (1.0 - 2.0 * u);  // max |.| = 0.65
        ctrl.emplace_back(x0 + tx * u + bx * bump + wx * wiggle,
                          y0 + ty * u + by * bump + wy * wiggle, z0 + u * len);
    }
    return ctrl;
}

}  // namespace

Phantom generate_phantom(const PhantomConfig& cfg, unsigned seed) {
    if (cfg.n_needles < 1)
        throw std::invalid_argument("generate_phantom: n_needles must be >= 1");
    if (cfg.degree < 1 || cfg.degree > 3)
        throw std::invalid_argument("generate_phantom: degree must be 1, 2 or 3");
    if (!(cfg.min_separation_mm > 2.0 * cfg.dilation_radius_mm))
        throw std::invalid_argument(
            "generate_phantom: min_separation_mm must exceed twice the dilation radius");

    std::mt19937_64 rng(seed);
    Phantom ph;
    ph.cfg = cfg;
    std::vector<std::vector<Vec3>> dense;

    int rejections = 0;
    while (static_cast<int>(ph.needles_mm.size()) < cfg.n_needles) {
        std::vector<Vec3> ctrl = sample_needle(cfg, rng);
        std::vector<Vec3> d = dense_samples(ctrl);
        bool ok = true;
        for (const auto& other : dense)
            if (min_pair_distance(d, other) < cfg.min_separation_mm) {
                ok = false;
                break;
            }
        if (ok) {
            ph.needles_mm.push_back(std::move(ctrl));
            dense.push_back(std::move(d));
            rejections = 0;
        } else if (++rejections >= 1000) {
            throw std::runtime_error("generate_phantom: config infeasible "
                                     "(1000 consecutive rejections)");
        }
    }

    ph.clean_mask = Mask(cfg.meta);
    for (const auto& ctrl : ph.needles_mm) {
        Mask m = dilate_spherical(
            interpolate_polyline(ctrl, cfg.meta.spacing_mm.minCoeff() / 2.0),
            cfg.dilation_radius_mm, cfg.meta);
        for (std::size_t i = 0; i < m.data.size(); ++i)
            if (m.data[i]) ph.clean_mask.data[i] = 1;
    }
    return ph;
}

Mask needle_mask(const Phantom& phantom, int needle) {
    const auto& cfg = phantom.cfg;
    return dilate_spherical(
        interpolate_polyline(phantom.needles_mm.at(needle),
                             cfg.meta.spacing_mm.minCoeff() / 2.0),
        cfg.dilation_radius_mm, cfg.meta);
}

CorruptedPhantom inject_errors(const Phantom& phantom, const ErrorProfile& profile,
                               unsigned seed) {
    const VolumeMeta& meta = phantom.cfg.meta;
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> coin(0.0, 1.0);

    CorruptedPhantom out;
    out.mask = phantom.clean_mask;

    const int n = static_cast<int>(phantom.needles_mm.size());
    std::vector<Mask> per_needle;
    per_needle.reserve(n);
    for (int i = 0; i < n; ++i) per_needle.push_back(needle_mask(phantom, i));

    auto slice_range = [&](const Mask& m, int& k_lo, int& k_hi) {
        k_lo = meta.dims.z();
        k_hi = -1;
        std::size_t idx = 0;
        for (int k = 0; k < meta.dims.z(); ++k)
            for (int j = 0; j < meta.dims.y(); ++j)
                for (int i = 0; i < meta.dims.x(); ++i, ++idx)
                    if (m.data[idx]) {
                        k_lo = std::min(k_lo, k);
                        k_hi = std::max(k_hi, k);
                    }
    };
    auto clear_slices = [&](int needle, int from, int to) {
        std::size_t idx = 0;
        for (int k = 0; k < meta.dims.z(); ++k)
            for (int j = 0; j < meta.dims.y(); ++j)
                for (int i = 0; i < meta.dims.x(); ++i, ++idx)
                    if (k >= from && k <= to && per_needle[needle].data[idx])
                        out.mask.data[idx] = 0;
    };

    std::vector<bool> dropped(n, false);
    for (int i = 0; i < n; ++i) {
        if (coin(rng) < profile.p_drop_needle) {
            dropped[i] = true;
            clear_slices(i, 0, meta.dims.z() - 1);
            out.manifest.push_back({"drop", i, {}});
        }
    }
    for (int i = 0; i < n; ++i) {
        if (dropped[i] || coin(rng) >= profile.p_disconnect) continue;
        std::uniform_int_distribution<int> ulen(profile.gap_slices_range.first,
                                                profile.gap_slices_range.second);
        int gap = ulen(rng);
        int k_lo, k_hi;
        slice_range(per_needle[i], k_lo, k_hi);
        int first = k_lo + 2, last = k_hi - 2 - gap;
        if (last < first) continue;  // needle too short for a gap
        std::uniform_int_distribution<int> ustart(first, last);
        int start = ustart(rng);
        clear_slices(i, start, start + gap - 1);
        out.manifest.push_back({"gap", i, {{"start_slice", double(start)},
                                           {"gap_slices", double(gap)}}});
    }
    for (int i = 0; i < n; ++i) {
        if (dropped[i] || coin(rng) >= profile.p_truncate_tip) continue;
        std::uniform_int_distribution<int> ulen(profile.truncate_range_slices.first,
                                                profile.truncate_range_slices.second);
        int t = ulen(rng);
        int k_lo, k_hi;
        slice_range(per_needle[i], k_lo, k_hi);
        if (k_hi - t <= k_lo + 2) continue;
        clear_slices(i, k_hi - t + 1, k_hi);
        out.manifest.push_back({"truncate", i, {{"slices", double(t)}}});
    }

    if (profile.fp_blobs_per_volume > 0) {
        // voxels within 5 index units of any true needle voxel are off limits
        std::vector<std::uint8_t> forbidden(meta.voxel_count(), 0);
        std::vector<Vec3i> ball;
        for (int dk = -5; dk <= 5; ++dk)
            for (int dj = -5; dj <= 5; ++dj)
                for (int di = -5; di <= 5; ++di)
                    if (di * di + dj * dj + dk * dk <= 25) ball.emplace_back(di, dj, dk);
        std::size_t idx = 0;
        for (int k = 0; k < meta.dims.z(); ++k)
            for (int j = 0; j < meta.dims.y(); ++j)
                for (int i = 0; i < meta.dims.x(); ++i, ++idx)
                    if (phantom.clean_mask.data[idx])
                        for (const auto& d : ball) {
                            Vec3i v(i + d.x(), j + d.y(), k + d.z());
                            if (meta.contains(v)) forbidden[meta.linear(v)] = 1;
                        }

        std::uniform_int_distribution<int> ui(0, meta.dims.x() - 1);
        std::uniform_int_distribution<int> uj(0, meta.dims.y() - 1);
        std::uniform_int_distribution<int> uk(0, meta.dims.z() - 1);
        std::uniform_int_distribution<int> usize(profile.fp_blob_size_range_vox.first,
                                                 profile.fp_blob_size_range_vox.second);
        std::uniform_int_distribution<int> udir(0, 5);
        const Vec3i dirs[6] = {{1, 0, 0}, {-1, 0, 0}, {0, 1, 0},
                               {0, -1, 0}, {0, 0, 1}, {0, 0, -1}};
        for (int b = 0; b < profile.fp_blobs_per_volume; ++b) {
            Vec3i cur;
            int tries = 0;
            do {
                cur = Vec3i(ui(rng), uj(rng), uk(rng));
            } while (forbidden[meta.linear(cur)] && ++tries < 10000);
            if (forbidden[meta.linear(cur)]) continue;
            int target = usize(rng);
            std::vector<Vec3i> blob{cur};
            out.mask.set(cur);
            for (int step = 0; static_cast<int>(blob.size()) < target && step < 50 * target;
                 ++step) {
                Vec3i next = cur + dirs[udir(rng)];
                if (!meta.contains(next) || forbidden[meta.linear(next)]) continue;
                cur = next;
                if (!out.mask.at(cur)) {
                    out.mask.set(cur);
                    blob.push_back(cur);
                }
            }
            out.manifest.push_back({"blob", -1, {{"size_vox", double(blob.size())}}});
            out.blob_voxels.insert(out.blob_voxels.end(), blob.begin(), blob.end());
        }
    }

    if (profile.jitter_vox > 0.0) {
        for (auto& v : out.mask.data)
            if (v && coin(rng) < profile.jitter_vox) v = 0;
    }
    return out;
}

}  // namespace needlekit
