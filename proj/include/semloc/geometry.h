#pragma once

#include <Eigen/Core>
#include <Eigen/Geometry>

#include <optional>

namespace semloc {

using WorldPoint = Eigen::Vector3d;
using ImagePoint = Eigen::Vector2d;

// Pinhole camera, no distortion.
struct CameraIntrinsics {
    double fx = 1.0;
    double fy = 1.0;
    double cx = 0.0;
    double cy = 0.0;
    int width = 1;
    int height = 1;

    bool valid() const;
    bool in_bounds(const ImagePoint &p) const;
    bool operator==(const CameraIntrinsics &) const = default;
};

// x_cam = R (X - C). The rotation maps world to camera, the center is the
// camera position in world coordinates.
struct RigidPose {
    Eigen::Matrix3d rotation = Eigen::Matrix3d::Identity();
    Eigen::Vector3d center = Eigen::Vector3d::Zero();

    RigidPose() = default;
    RigidPose(const Eigen::Matrix3d &R, const Eigen::Vector3d &C) : rotation(R), center(C) {}

    static RigidPose from_quaternion(const Eigen::Quaterniond &q, const Eigen::Vector3d &C);
    // Builds a pose looking from `eye` toward `target` with world `up` pointing to -y in the image.
    static RigidPose look_at(const Eigen::Vector3d &eye, const Eigen::Vector3d &target,
                             const Eigen::Vector3d &up = Eigen::Vector3d::UnitZ());

    Eigen::Quaterniond quaternion() const;
    Eigen::Vector3d translation() const { return -rotation * center; }
    Eigen::Vector3d to_camera(const WorldPoint &X) const { return rotation * (X - center); }

    bool valid(double tol = 1e-9) const;
};

struct PoseError {
    double position_error = 0.0;    // meters
    double orientation_error = 0.0; // degrees
};

std::optional<ImagePoint> project(const WorldPoint &X, const RigidPose &pose, const CameraIntrinsics &K);

// Throws std::invalid_argument for depth <= 0 or non-finite depth.
WorldPoint back_project(const ImagePoint &pixel, double depth, const RigidPose &pose,
                        const CameraIntrinsics &K);

double rotation_error_deg(const Eigen::Matrix3d &R_gt, const Eigen::Matrix3d &R_est);
double position_error_m(const Eigen::Vector3d &C_gt, const Eigen::Vector3d &C_est);
PoseError pose_error(const RigidPose &gt, const RigidPose &est);

Eigen::Matrix3d skew(const Eigen::Vector3d &v);
// Rodrigues: rotation by |w| radians about w/|w|.
Eigen::Matrix3d exp_so3(const Eigen::Vector3d &w);
Eigen::Matrix3d axis_angle(const Eigen::Vector3d &axis, double angle_rad);

// Angle between two non-zero vectors, radians, in [0, pi].
double angle_between(const Eigen::Vector3d &a, const Eigen::Vector3d &b);

// Nearest pixel index for a continuous coordinate, round half up. Pixel centers
// sit at integer coordinates.
inline long nearest_pixel(double v) { return static_cast<long>(std::floor(v + 0.5)); }

constexpr double kPi = 3.14159265358979323846;
inline double rad2deg(double r) { return r * 180.0 / kPi; }
inline double deg2rad(double d) { return d * kPi / 180.0; }

} // namespace semloc
