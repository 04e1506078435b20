#pragma once

#include "semloc/dataset.h"
#include "semloc/pose.h"
#include "semloc/retrieval.h"
#include "semloc/scoring.h"
#include "semloc/semantic_map.h"

#include <cstdint>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <vector>

namespace semloc {

struct LocalizerConfig {
    RetrievalConfig retrieval;
    VisibilityGateConfig gate;
    RansacConfig temporary = RansacConfig::temporary_pose_defaults();
    RansacConfig final_ransac;
    RefineOptions refine;
    double score_floor = 0.0; // images scoring below are dropped before weighting; 0 keeps all
    bool semantic_weighting = true; // false pools matches with uniform weights
    std::uint64_t seed = 0;
    std::set<std::string> families; // empty: every dataset family
};

struct RetrievedImageDiagnostics {
    ImageId image = -1;
    double retrieval_distance = 0.0;
    size_t matches = 0;
    size_t correspondences = 0;
    size_t outside_image = 0;
    size_t invalid_depth = 0;
    int temporary_inliers = 0;
    SemanticScore score;
};

struct LocalizationResult {
    ImageId query = -1;
    std::optional<RigidPose> pose;
    std::string failure; // empty on success
    size_t correspondences = 0;
    int inliers = 0;
    int iterations = 0;
    double mean_error_px = 0.0;
    std::vector<RetrievedImageDiagnostics> retrieved;
};

class Localizer {
  public:
    // Keeps references to the dataset and map; both must outlive the localizer.
    Localizer(const Dataset &dataset, const DenseMap &map, LocalizerConfig cfg);

    LocalizationResult localize(const QueryRecord &query) const;
    // Queries run in parallel; each one uses its own seeded generator.
    std::vector<LocalizationResult> localize_all(std::span<const QueryRecord> queries) const;

    const LocalizerConfig &config() const { return cfg_; }

  private:
    const Dataset &dataset_;
    const DenseMap &map_;
    LocalizerConfig cfg_;
    RetrievalIndex index_;
    std::vector<FeatureFamily> families_;
};

std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t a, std::uint64_t b = 0);

} // namespace semloc
