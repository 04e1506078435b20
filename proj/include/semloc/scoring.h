#pragma once

#include "semloc/matching.h"
#include "semloc/semantic_map.h"

#include <span>
#include <vector>

namespace semloc {

struct VisibilityGateConfig {
    double distance_margin = 1.2; // distance window becomes [d_min / m, d_max * m]
    double angle_margin = 0.1;    // radians added to the cone angle

    void validate() const;
};

struct SemanticScore {
    ImageId image = -1;
    long consistent = 0;
    long projected = 0;
};

// True iff d_min/m < |C_Q - X| < d_max*m and angle(C_Q - X, v_m) < theta + angle_margin.
bool passes_visibility_gate(const DensePoint &p, const Eigen::Vector3d &query_center, const VisibilityGateConfig &cfg);

DenseMap gate_visible(std::span<const DensePoint> points, const RigidPose &query_pose, const VisibilityGateConfig &cfg);

// Counts gated points whose projection lands on a labeled query pixel (projected) and, among
// those, the ones whose label agrees (consistent). Unlabeled query pixels count toward neither.
SemanticScore semantic_consistency_score(std::span<const DensePoint> gated, const RigidPose &temp_pose,
                                         const CameraIntrinsics &K, const LabelImage &query_labels);

// Gate and score in one pass over the full map.
SemanticScore score_pose(std::span<const DensePoint> map, const RigidPose &temp_pose, const CameraIntrinsics &K,
                         const LabelImage &query_labels, const VisibilityGateConfig &cfg);

// Every match inherits its image's score; weights are normalized over matches so they sum to one.
// Uniform weights when every score is zero. Throws when a source image has no score.
std::vector<Correspondence2D3D> normalize_weights(std::span<const SemanticScore> scores,
                                                  std::span<const Correspondence2D3D> corrs);

namespace serial {
SemanticScore score_pose(std::span<const DensePoint> map, const RigidPose &temp_pose, const CameraIntrinsics &K,
                         const LabelImage &query_labels, const VisibilityGateConfig &cfg);
}

} // namespace semloc
