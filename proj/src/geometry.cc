#include "semloc/geometry.h"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace semloc {

bool CameraIntrinsics::valid() const {
    return fx > 0 && fy > 0 && width > 0 && height > 0 && cx >= 0 && cx < width && cy >= 0 &&
           cy < height;
}

bool CameraIntrinsics::in_bounds(const ImagePoint &p) const {
    const long u = nearest_pixel(p.x());
    const long v = nearest_pixel(p.y());
    return u >= 0 && v >= 0 && u < width && v < height;
}

RigidPose RigidPose::from_quaternion(const Eigen::Quaterniond &q, const Eigen::Vector3d &C) {
    return RigidPose(q.normalized().toRotationMatrix(), C);
}

RigidPose RigidPose::look_at(const Eigen::Vector3d &eye, const Eigen::Vector3d &target,
                             const Eigen::Vector3d &up) {
    const Eigen::Vector3d forward = (target - eye).normalized();
    const Eigen::Vector3d right = forward.cross(up).normalized();
    const Eigen::Vector3d down = forward.cross(right);
    Eigen::Matrix3d R;
    R.row(0) = right.transpose();
    R.row(1) = down.transpose();
    R.row(2) = forward.transpose();
    return RigidPose(R, eye);
}

Eigen::Quaterniond RigidPose::quaternion() const {
    Eigen::Quaterniond q(rotation);
    q.normalize();
    if (q.w() < 0) q.coeffs() *= -1.0;
    return q;
}

bool RigidPose::valid(double tol) const {
    if (!rotation.allFinite() || !center.allFinite()) return false;
    const double ortho = (rotation.transpose() * rotation - Eigen::Matrix3d::Identity()).cwiseAbs().maxCoeff();
    return ortho <= tol && std::abs(rotation.determinant() - 1.0) <= tol;
}

std::optional<ImagePoint> project(const WorldPoint &X, const RigidPose &pose, const CameraIntrinsics &K) {
    const Eigen::Vector3d p = pose.to_camera(X);
    if (!(p.z() > 0)) return std::nullopt;
    return ImagePoint(K.fx * p.x() / p.z() + K.cx, K.fy * p.y() / p.z() + K.cy);
}

WorldPoint back_project(const ImagePoint &pixel, double depth, const RigidPose &pose,
                        const CameraIntrinsics &K) {
    if (!std::isfinite(depth) || depth <= 0)
        throw std::invalid_argument("back_project: depth must be positive and finite");
    const Eigen::Vector3d p((pixel.x() - K.cx) / K.fx * depth, (pixel.y() - K.cy) / K.fy * depth, depth);
    return pose.rotation.transpose() * p + pose.center;
}

double rotation_error_deg(const Eigen::Matrix3d &R_gt, const Eigen::Matrix3d &R_est) {
    // Same angle as acos((trace - 1) / 2) but well conditioned near 0 and 180 degrees.
    const Eigen::Matrix3d rel = R_gt.transpose() * R_est;
    const double c = std::clamp((rel.trace() - 1.0) / 2.0, -1.0, 1.0);
    const Eigen::Vector3d w(rel(2, 1) - rel(1, 2), rel(0, 2) - rel(2, 0), rel(1, 0) - rel(0, 1));
    const double s = 0.5 * w.norm();
    return rad2deg(std::atan2(s, c));
}

double position_error_m(const Eigen::Vector3d &C_gt, const Eigen::Vector3d &C_est) {
    return (C_est - C_gt).norm();
}

PoseError pose_error(const RigidPose &gt, const RigidPose &est) {
    return {position_error_m(gt.center, est.center), rotation_error_deg(gt.rotation, est.rotation)};
}

Eigen::Matrix3d skew(const Eigen::Vector3d &v) {
    Eigen::Matrix3d S;
    S << 0, -v.z(), v.y(), v.z(), 0, -v.x(), -v.y(), v.x(), 0;
    return S;
}

Eigen::Matrix3d exp_so3(const Eigen::Vector3d &w) {
    const double theta = w.norm();
    if (theta < 1e-12) return Eigen::Matrix3d::Identity() + skew(w);
    return Eigen::AngleAxisd(theta, w / theta).toRotationMatrix();
}

Eigen::Matrix3d axis_angle(const Eigen::Vector3d &axis, double angle_rad) {
    return Eigen::AngleAxisd(angle_rad, axis.normalized()).toRotationMatrix();
}

double angle_between(const Eigen::Vector3d &a, const Eigen::Vector3d &b) {
    return std::atan2(a.cross(b).norm(), a.dot(b));
}

} // namespace semloc
