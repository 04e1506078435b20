#include "semloc/semantic_map.h"

#include "parallel.h"

#include <algorithm>
#include <array>
#include <cmath>
#include <numeric>
#include <stdexcept>
#include <unordered_map>

namespace semloc {

void DepthFilterConfig::validate() const {
    if (!(tau > 0)) throw std::invalid_argument("depth filter: tau must be positive");
    if (min_consistent_neighbors < 1) throw std::invalid_argument("depth filter: N must be >= 1");
    if (neighbor_count < 1) throw std::invalid_argument("depth filter: neighbor count must be >= 1");
}

Eigen::Vector3d VisibilityCone::mean_direction(const Eigen::Vector3d &v_l, const Eigen::Vector3d &v_u) {
    const Eigen::Vector3d s = v_l + v_u;
    const double n = s.norm();
    if (n < 1e-12) return v_l.unitOrthogonal();
    return s / n;
}

std::vector<std::vector<size_t>> select_neighbors(std::span<const DatabaseImageRecord> records, int count) {
    std::vector<std::vector<size_t>> out(records.size());
    for (size_t i = 0; i < records.size(); ++i) {
        std::vector<size_t> order;
        for (size_t j = 0; j < records.size(); ++j)
            if (j != i) order.push_back(j);
        const Eigen::Vector3d &c = records[i].pose.center;
        std::stable_sort(order.begin(), order.end(), [&](size_t a, size_t b) {
            return (records[a].pose.center - c).squaredNorm() < (records[b].pose.center - c).squaredNorm();
        });
        if (order.size() > static_cast<size_t>(count)) order.resize(count);
        out[i] = std::move(order);
    }
    return out;
}

namespace {

void check_filter_inputs(const DatabaseImageRecord &target, std::span<const DatabaseImageRecord *const> neighbors,
                         const DepthFilterConfig &cfg) {
    cfg.validate();
    target.validate();
    if (neighbors.empty()) throw std::invalid_argument("filter_depth_map: no neighbor views");
    for (const auto *n : neighbors) {
        if (n == nullptr) throw std::invalid_argument("filter_depth_map: null neighbor");
        n->validate();
    }
}

bool pixel_consistent(const DatabaseImageRecord &target, std::span<const DatabaseImageRecord *const> neighbors,
                      const DepthFilterConfig &cfg, long u, long v) {
    const double d = target.depth.at(u, v);
    if (!(d > 0)) return false;
    const WorldPoint X = back_project(ImagePoint(u, v), d, target.pose, target.intrinsics);
    int support = 0;
    for (const auto *n : neighbors) {
        const Eigen::Vector3d p = n->pose.to_camera(X);
        if (!(p.z() > 0)) continue;
        const auto q = project(X, n->pose, n->intrinsics);
        const long nu = nearest_pixel(q->x());
        const long nv = nearest_pixel(q->y());
        if (!n->depth.valid_at(nu, nv)) continue;
        const double d_N = n->depth.at(nu, nv);
        const double d_R = p.z();
        if (std::abs(d_R - d_N) / d_N < cfg.tau) ++support;
        if (support >= cfg.min_consistent_neighbors) return true;
    }
    return false;
}

} // namespace

DepthMap filter_depth_map(const DatabaseImageRecord &target, std::span<const DatabaseImageRecord *const> neighbors,
                          const DepthFilterConfig &cfg) {
    check_filter_inputs(target, neighbors, cfg);
    const DepthMap &in = target.depth;
    DepthMap out(in.width, in.height, 0.0);
    const long height = in.height;
#pragma omp parallel for schedule(static)
    for (long v = 0; v < height; ++v)
        for (long u = 0; u < in.width; ++u)
            if (pixel_consistent(target, neighbors, cfg, u, v)) out.at(u, v) = in.at(u, v);
    return out;
}

namespace serial {
DepthMap filter_depth_map(const DatabaseImageRecord &target, std::span<const DatabaseImageRecord *const> neighbors,
                          const DepthFilterConfig &cfg) {
    check_filter_inputs(target, neighbors, cfg);
    const DepthMap &in = target.depth;
    DepthMap out(in.width, in.height, 0.0);
    for (long v = 0; v < in.height; ++v)
        for (long u = 0; u < in.width; ++u)
            if (pixel_consistent(target, neighbors, cfg, u, v)) out.at(u, v) = in.at(u, v);
    return out;
}
} // namespace serial

namespace {

struct VoxelKey {
    long x, y, z;
    bool operator==(const VoxelKey &) const = default;
};

struct VoxelKeyHash {
    size_t operator()(const VoxelKey &k) const {
        size_t h = std::hash<long>{}(k.x);
        h ^= std::hash<long>{}(k.y) + 0x9e3779b97f4a7c15ULL + (h << 6) + (h >> 2);
        h ^= std::hash<long>{}(k.z) + 0x9e3779b97f4a7c15ULL + (h << 6) + (h >> 2);
        return h;
    }
};

struct VoxelAccumulator {
    Eigen::Vector3d sum = Eigen::Vector3d::Zero();
    size_t count = 0;
    std::vector<ImageId> ids;
};

} // namespace

std::vector<FusedPoint> fuse_depth_maps(std::span<const DatabaseImageRecord> records, double voxel_size) {
    if (records.empty()) throw std::invalid_argument("fuse_depth_maps: no records");
    if (!(voxel_size > 0)) throw std::invalid_argument("fuse_depth_maps: voxel size must be positive");

    std::unordered_map<VoxelKey, size_t, VoxelKeyHash> index;
    std::vector<VoxelAccumulator> voxels;
    for (const auto &rec : records) {
        rec.validate();
        for (long v = 0; v < rec.depth.height; ++v) {
            for (long u = 0; u < rec.depth.width; ++u) {
                const double d = rec.depth.at(u, v);
                if (!(d > 0)) continue;
                const WorldPoint X = back_project(ImagePoint(u, v), d, rec.pose, rec.intrinsics);
                const VoxelKey key{static_cast<long>(std::floor(X.x() / voxel_size + 0.5)),
                                   static_cast<long>(std::floor(X.y() / voxel_size + 0.5)),
                                   static_cast<long>(std::floor(X.z() / voxel_size + 0.5))};
                auto [it, inserted] = index.try_emplace(key, voxels.size());
                if (inserted) voxels.emplace_back();
                VoxelAccumulator &acc = voxels[it->second];
                acc.sum += X;
                ++acc.count;
                if (acc.ids.empty() || acc.ids.back() != rec.id) acc.ids.push_back(rec.id);
            }
        }
    }

    std::vector<FusedPoint> out;
    out.reserve(voxels.size());
    for (auto &acc : voxels) {
        std::sort(acc.ids.begin(), acc.ids.end());
        acc.ids.erase(std::unique(acc.ids.begin(), acc.ids.end()), acc.ids.end());
        out.push_back({acc.sum / static_cast<double>(acc.count), std::move(acc.ids)});
    }
    return out;
}

std::uint8_t vote_semantic_label(const WorldPoint &point, std::span<const DatabaseImageRecord *const> contributing) {
    std::array<int, cityscapes::kNumClasses> votes{};
    for (const auto *rec : contributing) {
        const auto q = project(point, rec->pose, rec->intrinsics);
        if (!q) continue;
        const long u = nearest_pixel(q->x());
        const long v = nearest_pixel(q->y());
        if (!rec->labels.contains(u, v)) continue;
        const std::uint8_t l = rec->labels.at(u, v);
        if (l < cityscapes::kNumClasses) ++votes[l];
    }
    const auto best = std::max_element(votes.begin(), votes.end());
    if (*best == 0) return kUnlabeled;
    return static_cast<std::uint8_t>(best - votes.begin());
}

DenseMap remove_unstable_classes(std::span<const DensePoint> points, const std::set<std::uint8_t> &unstable) {
    DenseMap out;
    out.reserve(points.size());
    for (const auto &p : points)
        if (p.label != kUnlabeled && !unstable.contains(p.label)) out.push_back(p);
    return out;
}

VisibilityCone compute_visibility_cone(const WorldPoint &point,
                                       std::span<const DatabaseImageRecord *const> contributing) {
    if (contributing.empty()) throw std::invalid_argument("compute_visibility_cone: no contributing images");
    std::vector<Eigen::Vector3d> dirs;
    dirs.reserve(contributing.size());
    VisibilityCone cone;
    cone.d_min = std::numeric_limits<double>::infinity();
    cone.d_max = 0.0;
    for (const auto *rec : contributing) {
        const Eigen::Vector3d diff = rec->pose.center - point;
        const double r = diff.norm();
        if (r < 1e-9) throw std::invalid_argument("compute_visibility_cone: point coincides with a camera center");
        dirs.push_back(diff / r);
        cone.d_min = std::min(cone.d_min, r);
        cone.d_max = std::max(cone.d_max, r);
    }
    size_t bi = 0, bj = 0;
    double best = 0.0;
    for (size_t i = 0; i < dirs.size(); ++i)
        for (size_t j = i + 1; j < dirs.size(); ++j) {
            const double a = angle_between(dirs[i], dirs[j]);
            if (a > best) {
                best = a;
                bi = i;
                bj = j;
            }
        }
    cone.v_l = dirs[bi];
    cone.v_u = dirs[bj];
    cone.theta = angle_between(cone.v_l, cone.v_u);
    cone.v_m = VisibilityCone::mean_direction(cone.v_l, cone.v_u);
    return cone;
}

namespace {

std::unordered_map<ImageId, const DatabaseImageRecord *> index_records(std::span<const DatabaseImageRecord> records) {
    std::unordered_map<ImageId, const DatabaseImageRecord *> by_id;
    for (const auto &r : records)
        if (!by_id.emplace(r.id, &r).second) throw std::invalid_argument("duplicate database image id");
    return by_id;
}

DensePoint label_and_cone_one(const FusedPoint &f,
                              const std::unordered_map<ImageId, const DatabaseImageRecord *> &by_id) {
    std::vector<const DatabaseImageRecord *> contributing;
    contributing.reserve(f.contributors.size());
    for (ImageId id : f.contributors) {
        auto it = by_id.find(id);
        if (it == by_id.end()) throw std::invalid_argument("fused point references unknown image id");
        contributing.push_back(it->second);
    }
    DensePoint p;
    p.position = f.position;
    p.label = vote_semantic_label(f.position, contributing);
    p.cone = compute_visibility_cone(f.position, contributing);
    p.support = static_cast<int>(contributing.size());
    return p;
}

} // namespace

DenseMap label_and_cone(const std::vector<FusedPoint> &fused, std::span<const DatabaseImageRecord> records) {
    const auto by_id = index_records(records);
    DenseMap out(fused.size());
    const long n = static_cast<long>(fused.size());
    ExceptionCollector errors;
#pragma omp parallel for schedule(dynamic, 256)
    for (long i = 0; i < n; ++i)
        errors.run([&] { out[i] = label_and_cone_one(fused[i], by_id); });
    errors.rethrow();
    return out;
}

namespace serial {
DenseMap label_and_cone(const std::vector<FusedPoint> &fused, std::span<const DatabaseImageRecord> records) {
    const auto by_id = index_records(records);
    DenseMap out;
    out.reserve(fused.size());
    for (const auto &f : fused) out.push_back(label_and_cone_one(f, by_id));
    return out;
}
} // namespace serial

DenseMap build_map(std::span<const DatabaseImageRecord> records, const MapBuildConfig &cfg, MapBuildLog *log) {
    if (records.size() < 2) throw std::invalid_argument("build_map: need at least two database images");
    cfg.filter.validate();
    MapBuildLog local;
    MapBuildLog &lg = log ? *log : local;

    const auto neighbors = select_neighbors(records, cfg.filter.neighbor_count);
    std::vector<DatabaseImageRecord> filtered(records.size());
    for (size_t i = 0; i < records.size(); ++i) {
        std::vector<const DatabaseImageRecord *> nbrs;
        for (size_t j : neighbors[i]) nbrs.push_back(&records[j]);
        DatabaseImageRecord &f = filtered[i];
        f.id = records[i].id;
        f.intrinsics = records[i].intrinsics;
        f.pose = records[i].pose;
        f.labels = records[i].labels;
        f.depth = filter_depth_map(records[i], nbrs, cfg.filter);
        lg.input_depth_pixels += records[i].depth.valid_count();
        lg.filtered_depth_pixels += f.depth.valid_count();
    }

    const auto fused = fuse_depth_maps(filtered, cfg.voxel_size);
    lg.fused_points = fused.size();
    const DenseMap labeled = label_and_cone(fused, filtered);
    lg.labeled_points = static_cast<size_t>(std::count_if(
        labeled.begin(), labeled.end(), [](const DensePoint &p) { return p.label != kUnlabeled; }));
    DenseMap stable = remove_unstable_classes(labeled, cfg.unstable);
    lg.stable_points = stable.size();
    if (stable.empty()) lg.warnings.push_back("map is empty after removing unstable classes");
    return stable;
}

} // namespace semloc
