#pragma once

#include "semloc/geometry.h"
#include "semloc/matching.h"

#include <Eigen/Core>

#include <array>
#include <cstdint>
#include <optional>
#include <random>
#include <span>
#include <vector>

namespace semloc {

struct RansacConfig {
    double inlier_threshold_px = 8.0;
    int max_iterations = 10000;
    double confidence = 0.999;
    bool adaptive_stopping = true;
    int min_inliers = 12;
    std::uint64_t seed = 0;
    double min_sample_spread_px = 10.0; // minimal samples whose pixels all lie closer are resampled

    static RansacConfig temporary_pose_defaults();
    void validate() const;
};

struct PnPSolution {
    RigidPose pose;
    std::vector<int> inliers;
    double mean_error_px = 0.0;
    int iterations = 0;
};

// Reprojection error in pixels, +inf for points at or behind the camera.
double reprojection_error(const RigidPose &pose, const CameraIntrinsics &K, const ImagePoint &x, const WorldPoint &X);

// Up to four poses reprojecting the three points. Throws std::invalid_argument for collinear
// world points or degenerate bearings.
std::vector<RigidPose> solve_p3p(const std::array<ImagePoint, 3> &pixels, const std::array<WorldPoint, 3> &points,
                                 const CameraIntrinsics &K);
std::vector<RigidPose> solve_p3p(std::span<const Correspondence2D3D, 3> corrs, const CameraIntrinsics &K);

// Linear pose from six or more correspondences, used when minimal samples keep degenerating.
std::optional<RigidPose> solve_dlt(std::span<const ImagePoint> pixels, std::span<const WorldPoint> points,
                                   const CameraIntrinsics &K);

// Draws minimal samples of distinct indices. Each draw picks an index with probability
// proportional to its weight among the indices not yet in the sample; equal weights use
// a uniform path so weighted and unweighted RANSAC coincide under the same seed.
class MinimalSampler {
  public:
    MinimalSampler(std::span<const double> weights, std::uint64_t seed);

    void sample(std::span<int> out);
    size_t size() const { return weights_.size(); }

  private:
    int draw_one();
    double uniform01();

    std::vector<double> weights_;
    std::vector<double> cumulative_;
    bool uniform_ = true;
    size_t positive_ = 0;
    std::mt19937_64 rng_;
};

// Unweighted RANSAC + P3P on the matches of one retrieved image. Empty when fewer than four
// matches are given or the best model has fewer than min_inliers inliers.
std::optional<PnPSolution> estimate_temporary_pose(std::span<const Correspondence2D3D> corrs,
                                                   const CameraIntrinsics &K, const RansacConfig &cfg);

// RANSAC whose minimal samples are drawn according to the correspondence weights. Inlier
// counting is unweighted. Throws for fewer than four correspondences or invalid weights.
std::optional<PnPSolution> weighted_ransac_pnp(std::span<const Correspondence2D3D> corrs, const CameraIntrinsics &K,
                                               const RansacConfig &cfg);

struct RefineOptions {
    int max_iterations = 100;
    double relative_decrease_tol = 1e-10;
};

struct RefineReport {
    RigidPose pose;
    double initial_cost = 0.0;
    double final_cost = 0.0;
    int iterations = 0;
    std::vector<double> accepted_costs;
};

// Levenberg-Marquardt over the inliers, left-multiplied rotation update and additive center
// update. Cost is the sum of squared reprojection errors.
RefineReport refine_pose_report(const PnPSolution &initial, std::span<const Correspondence2D3D> corrs,
                                const CameraIntrinsics &K, const RefineOptions &opts = {});
RigidPose refine_pose(const PnPSolution &initial, std::span<const Correspondence2D3D> corrs, const CameraIntrinsics &K,
                      const RefineOptions &opts = {});

// Parameter order (rotation update w, center update dc).
using PoseUpdate = Eigen::Matrix<double, 6, 1>;
RigidPose apply_update(const RigidPose &pose, const PoseUpdate &delta);
Eigen::Vector2d reprojection_residual(const RigidPose &pose, const CameraIntrinsics &K, const ImagePoint &x,
                                      const WorldPoint &X);
Eigen::Matrix<double, 2, 6> reprojection_jacobian(const RigidPose &pose, const CameraIntrinsics &K,
                                                  const WorldPoint &X);

} // namespace semloc
