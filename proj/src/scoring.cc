#include "semloc/scoring.h"

#include <stdexcept>
#include <unordered_map>

namespace semloc {

void VisibilityGateConfig::validate() const {
    if (!(distance_margin >= 1.0)) throw std::invalid_argument("visibility gate: distance margin must be >= 1");
    if (!(angle_margin >= 0.0)) throw std::invalid_argument("visibility gate: angle margin must be >= 0");
}

bool passes_visibility_gate(const DensePoint &p, const Eigen::Vector3d &query_center, const VisibilityGateConfig &cfg) {
    const Eigen::Vector3d v = query_center - p.position;
    const double dist = v.norm();
    if (!(dist > p.cone.d_min / cfg.distance_margin && dist < p.cone.d_max * cfg.distance_margin)) return false;
    return angle_between(v, p.cone.v_m) < p.cone.theta + cfg.angle_margin;
}

DenseMap gate_visible(std::span<const DensePoint> points, const RigidPose &query_pose, const VisibilityGateConfig &cfg) {
    cfg.validate();
    DenseMap out;
    for (const auto &p : points)
        if (passes_visibility_gate(p, query_pose.center, cfg)) out.push_back(p);
    return out;
}

namespace {
// 0: not counted, 1: projected but inconsistent, 2: consistent.
inline int classify(const DensePoint &p, const RigidPose &pose, const CameraIntrinsics &K, const LabelImage &labels) {
    const auto q = project(p.position, pose, K);
    if (!q) return 0;
    const long u = nearest_pixel(q->x());
    const long v = nearest_pixel(q->y());
    if (!labels.contains(u, v)) return 0;
    const std::uint8_t l = labels.at(u, v);
    if (l == kUnlabeled) return 0;
    return l == p.label ? 2 : 1;
}
} // namespace

SemanticScore semantic_consistency_score(std::span<const DensePoint> gated, const RigidPose &temp_pose,
                                         const CameraIntrinsics &K, const LabelImage &query_labels) {
    SemanticScore s;
    for (const auto &p : gated) {
        const int c = classify(p, temp_pose, K, query_labels);
        s.projected += c > 0;
        s.consistent += c == 2;
    }
    return s;
}

SemanticScore score_pose(std::span<const DensePoint> map, const RigidPose &temp_pose, const CameraIntrinsics &K,
                         const LabelImage &query_labels, const VisibilityGateConfig &cfg) {
    cfg.validate();
    long projected = 0, consistent = 0;
    const long n = static_cast<long>(map.size());
    // Same conjunction as the serial version, cheapest tests first.
#pragma omp parallel for schedule(static) reduction(+ : projected, consistent)
    for (long i = 0; i < n; ++i) {
        const DensePoint &p = map[i];
        const Eigen::Vector3d v = temp_pose.center - p.position;
        const double dist = v.norm();
        if (!(dist > p.cone.d_min / cfg.distance_margin && dist < p.cone.d_max * cfg.distance_margin)) continue;
        const int c = classify(p, temp_pose, K, query_labels);
        if (c == 0) continue;
        if (!(angle_between(v, p.cone.v_m) < p.cone.theta + cfg.angle_margin)) continue;
        projected += 1;
        consistent += c == 2;
    }
    SemanticScore s;
    s.projected = projected;
    s.consistent = consistent;
    return s;
}

namespace serial {
SemanticScore score_pose(std::span<const DensePoint> map, const RigidPose &temp_pose, const CameraIntrinsics &K,
                         const LabelImage &query_labels, const VisibilityGateConfig &cfg) {
    cfg.validate();
    SemanticScore s;
    for (const auto &p : map) {
        if (!passes_visibility_gate(p, temp_pose.center, cfg)) continue;
        const int c = classify(p, temp_pose, K, query_labels);
        s.projected += c > 0;
        s.consistent += c == 2;
    }
    return s;
}
} // namespace serial

std::vector<Correspondence2D3D> normalize_weights(std::span<const SemanticScore> scores,
                                                  std::span<const Correspondence2D3D> corrs) {
    std::unordered_map<ImageId, double> by_image;
    for (const auto &s : scores) by_image[s.image] = static_cast<double>(s.consistent);
    std::vector<Correspondence2D3D> out(corrs.begin(), corrs.end());
    double total = 0.0;
    for (auto &c : out) {
        auto it = by_image.find(c.source_image);
        if (it == by_image.end())
            throw std::invalid_argument("normalize_weights: no score for image " + std::to_string(c.source_image));
        c.weight = it->second;
        total += it->second;
    }
    if (out.empty()) return out;
    if (total > 0) {
        for (auto &c : out) c.weight /= total;
    } else {
        for (auto &c : out) c.weight = 1.0 / static_cast<double>(out.size());
    }
    return out;
}

} // namespace semloc
