#pragma once

#include "semloc/dataset.h"
#include "semloc/geometry.h"
#include "semloc/image.h"

#include <cstdint>
#include <set>
#include <span>
#include <string>
#include <vector>

namespace semloc {

struct DepthFilterConfig {
    double tau = 0.01;                // relative depth tolerance
    int min_consistent_neighbors = 1; // N
    int neighbor_count = 4;           // neighbor views per image, nearest camera centers

    void validate() const;
};

// Directions point from the map point toward the observing cameras, world frame.
struct VisibilityCone {
    double d_min = 0.0;
    double d_max = 0.0;
    Eigen::Vector3d v_l = Eigen::Vector3d::UnitZ();
    Eigen::Vector3d v_u = Eigen::Vector3d::UnitZ();
    Eigen::Vector3d v_m = Eigen::Vector3d::UnitZ();
    double theta = 0.0; // radians

    // Mean direction of the two extreme rays; any unit vector orthogonal to them when they are opposite.
    static Eigen::Vector3d mean_direction(const Eigen::Vector3d &v_l, const Eigen::Vector3d &v_u);
};

struct DensePoint {
    WorldPoint position = WorldPoint::Zero();
    std::uint8_t label = kUnlabeled;
    VisibilityCone cone;
    int support = 0;
};

using DenseMap = std::vector<DensePoint>;

struct FusedPoint {
    WorldPoint position;
    std::vector<ImageId> contributors; // sorted, unique
};

// Indices into `records` of the `count` images with the nearest camera centers, self excluded.
// Ties resolved by index.
std::vector<std::vector<size_t>> select_neighbors(std::span<const DatabaseImageRecord> records, int count);

// Keeps a depth iff |d_R - d_N| / d_N < tau on at least N neighbors, where d_R is the depth of the
// back-projected point in the neighbor camera and d_N the neighbor depth at the nearest pixel.
DepthMap filter_depth_map(const DatabaseImageRecord &target,
                          std::span<const DatabaseImageRecord *const> neighbors,
                          const DepthFilterConfig &cfg);

// Voxels are centered on integer multiples of voxel_size.
std::vector<FusedPoint> fuse_depth_maps(std::span<const DatabaseImageRecord> records, double voxel_size);

// Modal label over the contributing images, smallest class id on ties, kUnlabeled without votes.
std::uint8_t vote_semantic_label(const WorldPoint &point,
                                 std::span<const DatabaseImageRecord *const> contributing);

DenseMap remove_unstable_classes(std::span<const DensePoint> points, const std::set<std::uint8_t> &unstable);

VisibilityCone compute_visibility_cone(const WorldPoint &point,
                                       std::span<const DatabaseImageRecord *const> contributing);

struct MapBuildConfig {
    DepthFilterConfig filter;
    double voxel_size = 0.05;
    std::set<std::uint8_t> unstable = default_unstable_classes();
};

struct MapBuildLog {
    size_t input_depth_pixels = 0;
    size_t filtered_depth_pixels = 0;
    size_t fused_points = 0;
    size_t labeled_points = 0;
    size_t stable_points = 0;
    std::vector<std::string> warnings;
};

// filter -> fuse -> vote -> cones -> remove unstable classes.
DenseMap build_map(std::span<const DatabaseImageRecord> records, const MapBuildConfig &cfg,
                   MapBuildLog *log = nullptr);

namespace serial {
// Single-threaded references of the parallel kernels above.
DepthMap filter_depth_map(const DatabaseImageRecord &target,
                          std::span<const DatabaseImageRecord *const> neighbors,
                          const DepthFilterConfig &cfg);
DenseMap label_and_cone(const std::vector<FusedPoint> &fused, std::span<const DatabaseImageRecord> records);
} // namespace serial

DenseMap label_and_cone(const std::vector<FusedPoint> &fused, std::span<const DatabaseImageRecord> records);

} // namespace semloc
