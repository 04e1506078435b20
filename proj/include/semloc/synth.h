#pragma once

#include "semloc/dataset.h"
#include "semloc/geometry.h"

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

namespace semloc::synth {

// Descriptor corruption of one family under one capture condition.
struct Corruption {
    double descriptor_sigma = 0.0; // per-component Gaussian noise, latent components are N(0, 1)
    double dropout = 0.0;          // probability that an anchor is not detected
    double pixel_sigma = 0.0;      // keypoint location noise, pixels
};

struct FamilySpec {
    FeatureFamily family;
    Corruption database; // applied to database keypoints
    Corruption day;
    Corruption night;
};

struct SceneSpec {
    std::uint64_t seed = 1;
    int image_width = 320;
    int image_height = 240;
    double focal = 260.0;

    // Street canyon along +x: facades at y = +-street_width/2, ground at z = 0.
    double street_length = 40.0;
    double street_width = 12.0;
    double sidewalk_width = 2.0;
    double facade_height = 12.0;
    double patch_size = 2.0;
    int cars = 4;

    int database_stations = 10; // two cameras per station
    double station_spacing = 3.0;
    double camera_height = 1.6;
    double camera_yaw_deg = 50.0;  // away from the street axis
    double camera_jitter_deg = 3.0;

    int queries = 50;
    double night_fraction = 0.0;
    double query_offset_m = 1.0;
    double query_yaw_jitter_deg = 10.0;
    double query_pitch_jitter_deg = 3.0;

    int anchors_per_image = 120;
    int clutter_keypoints = 20;
    std::vector<FamilySpec> families;

    int global_dim = 128;
    double global_noise_day = 0.0;
    double global_noise_night = 0.0;

    double depth_outlier_fraction = 0.0; // database depth pixels scaled by depth_outlier_scale
    double depth_outlier_scale = 1.5;
    double query_label_noise = 0.0;      // probability of a random label per query pixel

    void validate() const;
};

// Two families, a handcrafted-like one that degrades at night and a learned-like one with
// coarser keypoints that degrades mildly everywhere.
SceneSpec paper_like_spec();
// Same layout with every noise source disabled.
SceneSpec zero_noise_spec();

// Rectangle origin + a*edge_u + b*edge_v, a, b in [0, 1], split into cells_u x cells_v class cells.
struct Surface {
    Eigen::Vector3d origin;
    Eigen::Vector3d edge_u;
    Eigen::Vector3d edge_v;
    int cells_u = 1;
    int cells_v = 1;
    std::vector<std::uint8_t> classes; // cells_u * cells_v, row index b

    std::uint8_t class_at(double a, double b) const;
};

struct RayHit {
    double depth = 0.0; // camera z of the hit
    std::uint8_t label = kUnlabeled;
    int surface = -1;
};

// Nearest intersection along the ray through `pixel`. Empty when nothing is hit.
std::optional<RayHit> cast_ray(const std::vector<Surface> &surfaces, const RigidPose &pose, const CameraIntrinsics &K,
                               const ImagePoint &pixel);

struct Anchor {
    WorldPoint position;
    ImageId host = -1;
    std::uint8_t label = kUnlabeled;
};

struct Scene {
    SceneSpec spec;
    std::vector<Surface> surfaces;
    std::vector<Anchor> anchors;
    Dataset dataset;
    std::map<ImageId, RigidPose> query_poses;
};

constexpr ImageId kFirstQueryId = 10000;

Scene generate_scene(const SceneSpec &spec);

// Renders exact depth and labels; sky (no hit) gets depth 0 and the sky class.
void render(const std::vector<Surface> &surfaces, const RigidPose &pose, const CameraIntrinsics &K, DepthMap &depth,
            LabelImage &labels);

// True when the anchor projects inside the image and is the nearest surface along its ray.
bool anchor_visible(const std::vector<Surface> &surfaces, const WorldPoint &X, const RigidPose &pose,
                    const CameraIntrinsics &K);

} // namespace semloc::synth
