#pragma once

#include "semloc/dataset.h"
#include "semloc/features.h"
#include "semloc/geometry.h"

#include <span>
#include <string>
#include <vector>

namespace semloc {

struct Match2D2D {
    int query_index;
    int db_index;
    double distance;
};

struct Correspondence2D3D {
    ImagePoint query_pixel;
    WorldPoint world_point;
    ImageId source_image = -1;
    std::string family;
    double weight = 1.0;
};

// Nearest neighbour matching under L2. The ratio test runs first, then the mutual check.
// Throws std::invalid_argument when either set does not belong to `family`.
std::vector<Match2D2D> match_family(const FeatureSet &query, const FeatureSet &db, const FeatureFamily &family);

struct LiftResult {
    std::vector<Correspondence2D3D> correspondences;
    size_t outside_image = 0;
    size_t invalid_depth = 0;
};

// Reads the database depth at the nearest pixel of each matched keypoint and back-projects it.
LiftResult lift_to_3d(std::span<const Match2D2D> matches, const FeatureSet &query, const FeatureSet &db,
                      const DatabaseImageRecord &record);

std::vector<Correspondence2D3D> merge_hybrid(std::span<const std::vector<Correspondence2D3D>> per_family);

namespace serial {
std::vector<Match2D2D> match_family(const FeatureSet &query, const FeatureSet &db, const FeatureFamily &family);
}

} // namespace semloc
