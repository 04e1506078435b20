#pragma once

#include "semloc/dataset.h"
#include "semloc/evaluation.h"
#include "semloc/localizer.h"
#include "semloc/semantic_map.h"
#include "semloc/synth.h"

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

namespace semloc::io {

namespace fs = std::filesystem;
using Bytes = std::vector<std::uint8_t>;

// Malformed or missing input data. Carries the file and, for binary formats, the byte offset.
class DataError : public std::runtime_error {
  public:
    using std::runtime_error::runtime_error;
};

// Binary formats: little-endian, 4-byte magic carrying the version digit.
Bytes encode_depth(const DepthMap &d);                 // DMP1
DepthMap decode_depth(const Bytes &b, const std::string &source = "<memory>");
Bytes encode_labels(const LabelImage &l);              // LBL1
LabelImage decode_labels(const Bytes &b, const std::string &source = "<memory>");
Bytes encode_features(const FeatureSet &f);            // FEA1
FeatureSet decode_features(const Bytes &b, const std::string &source = "<memory>");
Bytes encode_global(const Eigen::VectorXd &g);         // GDS1
Eigen::VectorXd decode_global(const Bytes &b, const std::string &source = "<memory>");
Bytes encode_map(const DenseMap &m);                   // MAP1
DenseMap decode_map(const Bytes &b, const std::string &source = "<memory>");

Bytes read_file(const fs::path &p);
void write_file(const fs::path &p, const Bytes &b);
void write_text(const fs::path &p, const std::string &s);

// `id fx fy cx cy width height qw qx qy qz cx_w cy_w cz_w`
struct CameraLine {
    ImageId id = -1;
    CameraIntrinsics intrinsics;
    RigidPose pose;
};
std::string format_camera_line(const CameraLine &c);
CameraLine parse_camera_line(const std::string &line, const std::string &source = "<memory>", size_t line_no = 0);
void write_cameras(const fs::path &p, const std::vector<CameraLine> &cams);
std::vector<CameraLine> read_cameras(const fs::path &p);

// `id fx fy cx cy width height`
void write_intrinsics(const fs::path &p, const std::vector<std::pair<ImageId, CameraIntrinsics>> &cams);
std::vector<std::pair<ImageId, CameraIntrinsics>> read_intrinsics(const fs::path &p);

struct LoadedDataset {
    Dataset dataset;
    std::map<ImageId, RigidPose> ground_truth; // empty when the manifest lists none
};

// Writes manifest.json plus every per-image file under `root`.
void write_dataset(const fs::path &root, const Dataset &ds, const std::map<ImageId, RigidPose> *ground_truth = nullptr);
LoadedDataset load_dataset(const fs::path &root);

struct FamilyOverride {
    std::optional<bool> mutual_nn;
    std::optional<std::optional<double>> ratio;
};

struct PipelineConfig {
    MapBuildConfig map;
    LocalizerConfig localizer;
    std::map<std::string, FamilyOverride> family_overrides;
    std::vector<ThresholdBucket> day_buckets = semloc::day_buckets();
    std::vector<ThresholdBucket> night_buckets = semloc::night_buckets();

    // Throws std::invalid_argument for overrides naming a family that the dataset lacks.
    void apply_family_overrides(std::vector<FeatureFamily> &families) const;
};

// `key = value` lines, `#` comments. Unknown keys are rejected.
PipelineConfig parse_config(const std::string &text, const std::string &source = "<memory>");
PipelineConfig load_config(const fs::path &p);
std::string render_config(const PipelineConfig &cfg);

// JSON object: optional "profile" ("paper_like", the default, or "zero_noise") as the base, then any
// SceneSpec field by name. "families" replaces the family list. Unknown keys are rejected.
synth::SceneSpec parse_scene_spec(const std::string &text, const std::string &source = "<memory>");
std::string render_scene_spec(const synth::SceneSpec &spec);

} // namespace semloc::io
