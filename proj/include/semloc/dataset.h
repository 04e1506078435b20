#pragma once

#include "semloc/features.h"
#include "semloc/geometry.h"
#include "semloc/image.h"

#include <Eigen/Core>

#include <map>
#include <string>
#include <vector>

namespace semloc {

using ImageId = int;

struct GlobalDescriptor {
    ImageId owner = -1;
    Eigen::VectorXd values;
};

struct DatabaseImageRecord {
    ImageId id = -1;
    CameraIntrinsics intrinsics;
    RigidPose pose;
    DepthMap depth;
    LabelImage labels;
    std::map<std::string, FeatureSet> features;
    GlobalDescriptor global;

    // Throws std::invalid_argument when depth or labels disagree with the intrinsics.
    void validate() const;
};

enum class Condition { Day, Night };
const char *condition_name(Condition c);
Condition parse_condition(const std::string &s);

struct QueryRecord {
    ImageId id = -1;
    Condition condition = Condition::Day;
    CameraIntrinsics intrinsics;
    LabelImage labels;
    std::map<std::string, FeatureSet> features;
    GlobalDescriptor global;
};

struct Dataset {
    std::vector<FeatureFamily> families;
    std::vector<DatabaseImageRecord> database;
    std::vector<QueryRecord> queries;

    const DatabaseImageRecord &database_image(ImageId id) const;
};

} // namespace semloc
