#pragma once

#include "semloc/geometry.h"

#include <Eigen/Core>

#include <optional>
#include <string>
#include <vector>

namespace semloc {

// Matching rules of one keypoint/descriptor type.
struct FeatureFamily {
    std::string name;
    int dim = 0;
    bool use_mutual_nn = true;
    std::optional<double> ratio; // Lowe ratio threshold in (0, 1], off when empty

    void validate() const;
};

// All keypoints of one family in one image. Descriptors are stored column-wise.
struct FeatureSet {
    std::string family;
    std::vector<ImagePoint> locations;
    Eigen::MatrixXf descriptors; // dim x count

    size_t size() const { return locations.size(); }
    int dim() const { return static_cast<int>(descriptors.rows()); }
    void validate() const;
};

} // namespace semloc
