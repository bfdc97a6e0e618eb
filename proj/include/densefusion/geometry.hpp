#pragma once

#include <Eigen/Core>
#include <Eigen/Geometry>

#include <array>
#include <cmath>
#include <stdexcept>
#include <vector>

namespace df {

struct NonPositiveDepth : std::invalid_argument {
    using std::invalid_argument::invalid_argument;
};
struct EmptyCloud : std::invalid_argument {
    using std::invalid_argument::invalid_argument;
};

// Rigid transform in SE(3): unit quaternion + translation in meters.
// The quaternion is kept unit-norm with w >= 0 (double cover resolved at
// construction), so two Poses representing the same rotation compare equal.
struct Pose {
    Eigen::Quaterniond rotation{1.0, 0.0, 0.0, 0.0};  // w, x, y, z
    Eigen::Vector3d translation{0.0, 0.0, 0.0};

    Pose() = default;
    Pose(const Eigen::Quaterniond& q, const Eigen::Vector3d& t)
        : rotation(normalized(q)), translation(t) {}

    static Pose identity() { return Pose(); }

    static Pose from_axis_angle(const Eigen::Vector3d& axis, double angle,
                                const Eigen::Vector3d& t = Eigen::Vector3d::Zero()) {
        return Pose(Eigen::Quaterniond(Eigen::AngleAxisd(angle, axis.normalized())), t);
    }

    static Pose from_translation(const Eigen::Vector3d& t) {
        return Pose(Eigen::Quaterniond::Identity(), t);
    }

    Eigen::Vector3d apply(const Eigen::Vector3d& p) const {
        return rotation * p + translation;
    }

    Eigen::Matrix3d rotation_matrix() const { return rotation.toRotationMatrix(); }

    // angle of the rotation in radians, in [0, pi]
    double rotation_angle() const {
        double w = std::min(1.0, std::abs(rotation.w()));
        return 2.0 * std::acos(w);
    }

    static Eigen::Quaterniond normalized(const Eigen::Quaterniond& q) {
        Eigen::Quaterniond r = q.normalized();
        if (r.w() < 0.0) r.coeffs() = -r.coeffs();
        return r;
    }
};

// result.apply(x) == a.apply(b.apply(x))
inline Pose compose(const Pose& a, const Pose& b) {
    return Pose(a.rotation * b.rotation, a.rotation * b.translation + a.translation);
}

inline Pose inverse(const Pose& p) {
    Eigen::Quaterniond qi = p.rotation.conjugate();
    return Pose(qi, -(qi * p.translation));
}

struct CameraIntrinsics {
    double fx = 140.0, fy = 140.0;
    double cx = 80.0, cy = 60.0;
    int width = 160, height = 120;

    bool valid() const {
        return fx > 0.0 && fy > 0.0 && cx >= 0.0 && cx < width && cy >= 0.0 && cy < height &&
               width > 0 && height > 0;
    }
};

// Points in meters; colors in [0,1] RGB and pixel_index (row, col) are
// optional and, when present, share the leading dimension with points.
struct PointCloud {
    std::vector<Eigen::Vector3d> points;
    std::vector<Eigen::Vector3d> colors;
    std::vector<Eigen::Vector2i> pixel_index;

    std::size_t size() const { return points.size(); }
    bool has_colors() const { return !colors.empty(); }
    bool has_pixel_index() const { return !pixel_index.empty(); }
};

inline PointCloud transform_points(const Pose& p, const PointCloud& c) {
    PointCloud out;
    out.points.reserve(c.points.size());
    const Eigen::Matrix3d R = p.rotation_matrix();
    for (const auto& x : c.points) out.points.push_back(R * x + p.translation);
    out.colors = c.colors;
    out.pixel_index = c.pixel_index;
    return out;
}

struct PixelPoint {
    double u = 0.0, v = 0.0;
    double depth = 0.0;
};

inline PixelPoint project(const CameraIntrinsics& k, const Eigen::Vector3d& p) {
    if (p.z() <= 0.0) throw NonPositiveDepth("project: point depth must be > 0");
    return {k.fx * p.x() / p.z() + k.cx, k.fy * p.y() / p.z() + k.cy, p.z()};
}

inline Eigen::Vector3d backproject(const CameraIntrinsics& k, double u, double v, double depth) {
    if (depth <= 0.0) throw NonPositiveDepth("backproject: depth must be > 0");
    return {(u - k.cx) * depth / k.fx, (v - k.cy) * depth / k.fy, depth};
}

// Scene-file pose layout: (qw, qx, qy, qz, tx, ty, tz)
inline std::array<double, 7> pose_to_array(const Pose& p) {
    return {p.rotation.w(), p.rotation.x(), p.rotation.y(), p.rotation.z(),
            p.translation.x(), p.translation.y(), p.translation.z()};
}

inline Pose pose_from_array(const std::array<double, 7>& a) {
    return Pose(Eigen::Quaterniond(a[0], a[1], a[2], a[3]), Eigen::Vector3d(a[4], a[5], a[6]));
}

}  // namespace df
