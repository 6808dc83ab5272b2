#pragma once

#include <Eigen/Dense>
#include <stdexcept>
#include <variant>
#include <vector>

namespace needlekit {

using Vec3 = Eigen::Vector3d;
using Vec3i = Eigen::Vector3i;

/// Grid geometry of a segmentation volume. The third index (k) is the
/// axial slice index; world coordinates are voxel index times spacing.
struct VolumeMeta {
    Vec3i dims{0, 0, 0};        // (nx, ny, nz) voxel counts
    Vec3 spacing_mm{0.6, 0.7, 1.0};

    VolumeMeta() = default;
    VolumeMeta(Vec3i d, Vec3 s) : dims(std::move(d)), spacing_mm(std::move(s)) {
        if (dims.minCoeff() < 1)
            throw std::invalid_argument("VolumeMeta: all dims must be >= 1");
        if (spacing_mm.minCoeff() <= 0.0)
            throw std::invalid_argument("VolumeMeta: all spacings must be > 0");
    }

    std::size_t voxel_count() const {
        return static_cast<std::size_t>(dims.x()) * dims.y() * dims.z();
    }
    bool contains(const Vec3i& v) const {
        return v.x() >= 0 && v.y() >= 0 && v.z() >= 0 &&
               v.x() < dims.x() && v.y() < dims.y() && v.z() < dims.z();
    }
    Vec3 world(const Vec3i& v) const {
        return spacing_mm.cwiseProduct(v.cast<double>());
    }
    std::size_t linear(const Vec3i& v) const {
        return static_cast<std::size_t>(v.x()) +
               static_cast<std::size_t>(dims.x()) *
                   (static_cast<std::size_t>(v.y()) +
                    static_cast<std::size_t>(dims.y()) * v.z());
    }
    bool operator==(const VolumeMeta& o) const {
        return dims == o.dims && spacing_mm == o.spacing_mm;
    }
};

/// Dense binary voxel grid, x fastest, then y, then z.
struct Mask {
    VolumeMeta meta;
    std::vector<std::uint8_t> data;

    Mask() = default;
    explicit Mask(VolumeMeta m) : meta(std::move(m)), data(meta.voxel_count(), 0) {}

    std::uint8_t at(const Vec3i& v) const { return data[meta.linear(v)]; }
    void set(const Vec3i& v, std::uint8_t val = 1) { data[meta.linear(v)] = val; }
};

/// Foreground voxels of a mask, deduplicated and sorted by (k, j, i).
struct PointCloud {
    VolumeMeta meta;
    std::vector<Vec3i> voxels;

    bool empty() const { return voxels.empty(); }
    std::size_t size() const { return voxels.size(); }
    Vec3 mm(std::size_t idx) const { return meta.world(voxels[idx]); }
};

/// Polynomial needle trajectory x(z), y(z) in mm over an axial extent.
struct NeedleCurve {
    int degree = 1;                 // in {1, 2, 3}
    Eigen::VectorXd coeff_x;        // degree+1 monomial coefficients, low order first
    Eigen::VectorXd coeff_y;
    double z_min_mm = 0.0;
    double z_max_mm = 0.0;

    NeedleCurve() = default;
    NeedleCurve(int deg, Eigen::VectorXd cx, Eigen::VectorXd cy, double z0, double z1)
        : degree(deg), coeff_x(std::move(cx)), coeff_y(std::move(cy)),
          z_min_mm(z0), z_max_mm(z1) {
        if (degree < 1 || degree > 3)
            throw std::invalid_argument("NeedleCurve: degree must be 1, 2 or 3");
        if (coeff_x.size() != degree + 1 || coeff_y.size() != degree + 1)
            throw std::invalid_argument("NeedleCurve: need degree+1 coefficients");
        if (!(z_min_mm < z_max_mm))
            throw std::invalid_argument("NeedleCurve: z_min_mm must be < z_max_mm");
    }

    Vec3 eval(double z) const {
        double x = 0.0, y = 0.0, p = 1.0;
        for (int m = 0; m <= degree; ++m, p *= z) {
            x += coeff_x[m] * p;
            y += coeff_y[m] * p;
        }
        return {x, y, z};
    }
    Vec3 bottom() const { return eval(z_min_mm); }
    Vec3 tip() const { return eval(z_max_mm); }
};

/// Piecewise-linear trajectory with strictly increasing z, in mm.
struct Polyline {
    std::vector<Vec3> vertices;

    Polyline() = default;
    explicit Polyline(std::vector<Vec3> v) : vertices(std::move(v)) {
        if (vertices.size() < 2)
            throw std::invalid_argument("Polyline: need at least 2 vertices");
        for (std::size_t i = 1; i < vertices.size(); ++i)
            if (!(vertices[i].z() > vertices[i - 1].z()))
                throw std::invalid_argument("Polyline: z must be strictly increasing");
    }

    Vec3 bottom() const { return vertices.front(); }
    Vec3 tip() const { return vertices.back(); }
};

using Trajectory = std::variant<NeedleCurve, Polyline>;

inline Vec3 trajectory_bottom(const Trajectory& t) {
    return std::visit([](const auto& s) { return s.bottom(); }, t);
}
inline Vec3 trajectory_tip(const Trajectory& t) {
    return std::visit([](const auto& s) { return s.tip(); }, t);
}

/// Partition of a PointCloud into clusters (ids 0..m-1) plus noise (-1).
struct ClusterSet {
    PointCloud cloud;
    std::vector<int> labels;

    int cluster_count() const {
        int m = -1;
        for (int l : labels) m = std::max(m, l);
        return m + 1;
    }
    std::vector<std::vector<std::size_t>> cluster_indices() const {
        std::vector<std::vector<std::size_t>> out(cluster_count());
        for (std::size_t i = 0; i < labels.size(); ++i)
            if (labels[i] >= 0) out[labels[i]].push_back(i);
        return out;
    }
};

/// Relabel clusters contiguously, ordered by each cluster's minimal voxel
/// position in canonical (k, j, i) order. Empty clusters disappear.
ClusterSet canonicalize(ClusterSet set);

}  // namespace needlekit
