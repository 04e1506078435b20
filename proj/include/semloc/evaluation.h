#pragma once

#include "semloc/dataset.h"
#include "semloc/geometry.h"

#include <map>
#include <optional>
#include <string>
#include <vector>

namespace semloc {

struct ThresholdBucket {
    double max_position = 0.0;    // meters
    double max_orientation = 0.0; // degrees
    std::string label;
};

// (0.25 m, 2 deg), (0.5 m, 5 deg), (5 m, 10 deg)
std::vector<ThresholdBucket> day_buckets();
// (0.5 m, 2 deg), (1 m, 5 deg), (5 m, 10 deg)
std::vector<ThresholdBucket> night_buckets();

struct QueryOutcome {
    ImageId query = -1;
    std::optional<PoseError> error; // empty when no pose was estimated
};

struct RecallReport {
    std::string condition;
    std::vector<ThresholdBucket> buckets;
    std::vector<double> percentages; // one per bucket, 0..100
    size_t total = 0;
    std::vector<ImageId> failures;   // queries without an estimate
    std::vector<QueryOutcome> outcomes;
};

// Bucket membership is inclusive on both bounds. Throws for an empty ground-truth set or an
// estimate whose query id has no ground truth.
RecallReport evaluate(const std::map<ImageId, std::optional<RigidPose>> &estimates,
                      const std::map<ImageId, RigidPose> &ground_truth, const std::vector<ThresholdBucket> &buckets,
                      const std::string &condition = "day");

// Same report from precomputed errors, used to re-derive reports from their serialized form.
RecallReport evaluate_errors(const std::vector<QueryOutcome> &outcomes, const std::vector<ThresholdBucket> &buckets,
                             const std::string &condition = "day");

// "a / b / c" with one decimal.
std::string format_percentages(const RecallReport &report);
// One "<condition>  a / b / c" row per report, preceded by the bucket header of each.
std::string render_report(const std::vector<RecallReport> &reports);

} // namespace semloc
