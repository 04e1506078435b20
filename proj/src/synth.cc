#include "semloc/synth.h"

#include "parallel.h"

#include <algorithm>
#include <cmath>
#include <random>
#include <stdexcept>

namespace semloc::synth {

namespace {

std::uint64_t splitmix(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

std::mt19937_64 stream(std::uint64_t seed, std::uint64_t a, std::uint64_t b = 0) {
    return std::mt19937_64(splitmix(splitmix(splitmix(seed) ^ a) ^ b));
}

double uniform(std::mt19937_64 &rng, double lo, double hi) {
    return lo + (hi - lo) * (static_cast<double>(rng() >> 11) * 0x1.0p-53);
}

double gaussian(std::mt19937_64 &rng) {
    // Box-Muller keeps streams identical across standard library implementations.
    double u1 = 0.0;
    do u1 = static_cast<double>(rng() >> 11) * 0x1.0p-53;
    while (u1 <= 0.0);
    const double u2 = static_cast<double>(rng() >> 11) * 0x1.0p-53;
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * kPi * u2);
}

enum StreamTag : std::uint64_t {
    kLayout = 1,
    kCameras,
    kAnchors,
    kLatent,
    kGlobalCodes,
    kDatabaseFeatures,
    kQueryFeatures,
    kGlobalNoise,
    kDepthNoise,
    kLabelNoise,
    kQueryPoses,
};

std::uint8_t pick_class(std::mt19937_64 &rng, bool ground_row) {
    using namespace cityscapes;
    const double r = uniform(rng, 0.0, 1.0);
    if (ground_row) {
        if (r < 0.45) return building;
        if (r < 0.60) return wall;
        if (r < 0.75) return fence;
        return vegetation;
    }
    if (r < 0.55) return building;
    if (r < 0.72) return vegetation;
    if (r < 0.84) return wall;
    if (r < 0.92) return traffic_sign;
    return pole;
}

Surface make_surface(const Eigen::Vector3d &origin, const Eigen::Vector3d &eu, const Eigen::Vector3d &ev, int cu, int cv,
                     std::uint8_t cls) {
    Surface s{origin, eu, ev, cu, cv, std::vector<std::uint8_t>(static_cast<size_t>(cu) * cv, cls)};
    return s;
}

Surface make_facade(const Eigen::Vector3d &origin, const Eigen::Vector3d &eu, const Eigen::Vector3d &ev,
                    double patch, std::mt19937_64 &rng) {
    const int cu = std::max(1, static_cast<int>(std::round(eu.norm() / patch)));
    const int cv = std::max(1, static_cast<int>(std::round(ev.norm() / patch)));
    Surface s = make_surface(origin, eu, ev, cu, cv, cityscapes::building);
    for (int b = 0; b < cv; ++b)
        for (int a = 0; a < cu; ++a) s.classes[static_cast<size_t>(b) * cu + a] = pick_class(rng, b == 0);
    return s;
}

std::vector<Surface> build_surfaces(const SceneSpec &spec) {
    auto rng = stream(spec.seed, kLayout);
    const double L = spec.street_length, W = spec.street_width, H = spec.facade_height, sw = spec.sidewalk_width;
    const double hw = W / 2.0;
    std::vector<Surface> s;
    s.push_back(make_facade({0, hw, 0}, {L, 0, 0}, {0, 0, H}, spec.patch_size, rng));
    s.push_back(make_facade({0, -hw, 0}, {L, 0, 0}, {0, 0, H}, spec.patch_size, rng));
    s.push_back(make_facade({0, -hw, 0}, {0, W, 0}, {0, 0, H}, spec.patch_size, rng));
    s.push_back(make_facade({L, -hw, 0}, {0, W, 0}, {0, 0, H}, spec.patch_size, rng));
    s.push_back(make_surface({0, hw - sw, 0}, {L, 0, 0}, {0, sw, 0}, 1, 1, cityscapes::sidewalk));
    s.push_back(make_surface({0, -hw + sw, 0}, {L, 0, 0}, {0, W - 2 * sw, 0}, 1, 1, cityscapes::road));
    s.push_back(make_surface({0, -hw, 0}, {L, 0, 0}, {0, sw, 0}, 1, 1, cityscapes::sidewalk));
    for (int c = 0; c < spec.cars; ++c) {
        const double side = (c % 2 == 0) ? 1.0 : -1.0;
        const double x = uniform(rng, 1.0, std::max(1.5, L - 5.0));
        const double y = side * (hw - sw - 1.0);
        s.push_back(make_surface({x, y, 0}, {4.0, 0, 0}, {0, 0, 1.5}, 1, 1, cityscapes::car));
    }
    return s;
}

RigidPose camera_from_angles(const Eigen::Vector3d &eye, double yaw_rad, double pitch_rad) {
    const Eigen::Vector3d fwd(std::cos(pitch_rad) * std::cos(yaw_rad), std::cos(pitch_rad) * std::sin(yaw_rad),
                              std::sin(pitch_rad));
    return RigidPose::look_at(eye, eye + fwd);
}

} // namespace

void SceneSpec::validate() const {
    if (image_width < 2 || image_height < 2 || !(focal > 0)) throw std::invalid_argument("scene: bad camera");
    if (database_stations < 1) throw std::invalid_argument("scene: need at least two database cameras");
    if (!(street_length > 0 && street_width > 2 * sidewalk_width && facade_height > 0 && patch_size > 0))
        throw std::invalid_argument("scene: bad street layout");
    if (queries < 0 || anchors_per_image < 0 || clutter_keypoints < 0) throw std::invalid_argument("scene: negative count");
    if (families.empty()) throw std::invalid_argument("scene: no feature families");
    if (global_dim < 1) throw std::invalid_argument("scene: global descriptor dimension must be >= 1");
    if (!(night_fraction >= 0 && night_fraction <= 1)) throw std::invalid_argument("scene: night fraction out of range");
    for (size_t i = 0; i < families.size(); ++i) {
        families[i].family.validate();
        for (size_t j = 0; j < i; ++j)
            if (families[j].family.name == families[i].family.name)
                throw std::invalid_argument("scene: duplicate family name");
        for (const Corruption *c : {&families[i].database, &families[i].day, &families[i].night})
            if (c->descriptor_sigma < 0 || c->pixel_sigma < 0 || c->dropout < 0 || c->dropout > 1)
                throw std::invalid_argument("scene: bad corruption parameters");
    }
}

SceneSpec paper_like_spec() {
    SceneSpec spec;
    FamilySpec hand;
    hand.family = {"sift", 32, true, std::nullopt};
    hand.database = {0.05, 0.0, 0.0};
    hand.day = {0.10, 0.10, 0.3};
    hand.night = {1.30, 0.80, 0.3};
    FamilySpec learned;
    learned.family = {"r2d2", 32, true, std::nullopt};
    learned.database = {0.10, 0.0, 0.0};
    learned.day = {0.30, 0.35, 1.0};
    learned.night = {0.50, 0.95, 1.0};
    spec.families = {hand, learned};
    spec.global_noise_day = 0.3;
    spec.global_noise_night = 0.8;
    spec.night_fraction = 0.5;
    return spec;
}

SceneSpec zero_noise_spec() {
    SceneSpec spec = paper_like_spec();
    for (auto &f : spec.families) f.database = f.day = f.night = Corruption{};
    spec.global_noise_day = spec.global_noise_night = 0.0;
    spec.night_fraction = 0.0;
    spec.clutter_keypoints = 0;
    return spec;
}

std::uint8_t Surface::class_at(double a, double b) const {
    const int iu = std::clamp(static_cast<int>(a * cells_u), 0, cells_u - 1);
    const int iv = std::clamp(static_cast<int>(b * cells_v), 0, cells_v - 1);
    return classes[static_cast<size_t>(iv) * cells_u + iu];
}

std::optional<RayHit> cast_ray(const std::vector<Surface> &surfaces, const RigidPose &pose, const CameraIntrinsics &K,
                               const ImagePoint &pixel) {
    // Unnormalized direction with unit camera z, so the ray parameter is the depth.
    const Eigen::Vector3d dir = pose.rotation.transpose() *
                                Eigen::Vector3d((pixel.x() - K.cx) / K.fx, (pixel.y() - K.cy) / K.fy, 1.0);
    std::optional<RayHit> best;
    for (size_t i = 0; i < surfaces.size(); ++i) {
        const Surface &s = surfaces[i];
        const Eigen::Vector3d n = s.edge_u.cross(s.edge_v);
        const double denom = n.dot(dir);
        if (std::abs(denom) < 1e-15) continue;
        const double t = n.dot(s.origin - pose.center) / denom;
        if (!(t > 1e-9)) continue;
        if (best && !(t < best->depth)) continue;
        const Eigen::Vector3d rel = pose.center + t * dir - s.origin;
        const double a = rel.dot(s.edge_u) / s.edge_u.squaredNorm();
        const double b = rel.dot(s.edge_v) / s.edge_v.squaredNorm();
        if (a < 0 || a > 1 || b < 0 || b > 1) continue;
        best = RayHit{t, s.class_at(a, b), static_cast<int>(i)};
    }
    return best;
}

void render(const std::vector<Surface> &surfaces, const RigidPose &pose, const CameraIntrinsics &K, DepthMap &depth,
            LabelImage &labels) {
    depth = DepthMap(K.width, K.height, 0.0);
    labels = LabelImage(K.width, K.height, cityscapes::sky);
    for (int v = 0; v < K.height; ++v)
        for (int u = 0; u < K.width; ++u)
            if (auto hit = cast_ray(surfaces, pose, K, ImagePoint(u, v))) {
                depth.at(u, v) = hit->depth;
                labels.at(u, v) = hit->label;
            }
}

bool anchor_visible(const std::vector<Surface> &surfaces, const WorldPoint &X, const RigidPose &pose,
                    const CameraIntrinsics &K) {
    const auto q = project(X, pose, K);
    if (!q || !K.in_bounds(*q)) return false;
    const double z = pose.to_camera(X).z();
    const auto hit = cast_ray(surfaces, pose, K, *q);
    return hit && std::abs(hit->depth - z) <= 1e-6 * z;
}

Scene generate_scene(const SceneSpec &spec) {
    spec.validate();
    Scene scene;
    scene.spec = spec;
    scene.surfaces = build_surfaces(spec);
    Dataset &ds = scene.dataset;
    for (const auto &f : spec.families) ds.families.push_back(f.family);

    CameraIntrinsics K;
    K.fx = K.fy = spec.focal;
    K.cx = (spec.image_width - 1) / 2.0;
    K.cy = (spec.image_height - 1) / 2.0;
    K.width = spec.image_width;
    K.height = spec.image_height;

    // Database cameras: two per station on opposite sides of the street axis, each facing the far facade.
    {
        auto rng = stream(spec.seed, kCameras);
        const double x0 = (spec.street_length - (spec.database_stations - 1) * spec.station_spacing) / 2.0;
        const double yaw = deg2rad(spec.camera_yaw_deg);
        const double jitter = deg2rad(spec.camera_jitter_deg);
        ImageId id = 0;
        for (int k = 0; k < spec.database_stations; ++k) {
            const double x = x0 + k * spec.station_spacing;
            for (int side = 0; side < 2; ++side) {
                const double sign = side == 0 ? 1.0 : -1.0;
                DatabaseImageRecord rec;
                rec.id = id++;
                rec.intrinsics = K;
                const Eigen::Vector3d eye(x, -sign * 1.0, spec.camera_height);
                rec.pose = camera_from_angles(eye, sign * yaw + uniform(rng, -jitter, jitter),
                                              deg2rad(5.0) + uniform(rng, -jitter, jitter));
                ds.database.push_back(std::move(rec));
            }
        }
    }

    const long n_db = static_cast<long>(ds.database.size());
#pragma omp parallel for schedule(dynamic, 1)
    for (long i = 0; i < n_db; ++i) {
        auto &rec = ds.database[i];
        render(scene.surfaces, rec.pose, rec.intrinsics, rec.depth, rec.labels);
    }

    // Anchors sit on pixel centers of their host image so the host depth is exact at the keypoint.
    for (const auto &rec : ds.database) {
        auto rng = stream(spec.seed, kAnchors, static_cast<std::uint64_t>(rec.id));
        std::vector<std::pair<int, int>> valid;
        for (int v = 0; v < K.height; ++v)
            for (int u = 0; u < K.width; ++u)
                if (rec.depth.at(u, v) > 0) valid.emplace_back(u, v);
        const size_t take = std::min(valid.size(), static_cast<size_t>(spec.anchors_per_image));
        for (size_t k = 0; k < take; ++k) {
            const size_t j = k + static_cast<size_t>(uniform(rng, 0.0, 1.0) * static_cast<double>(valid.size() - k));
            std::swap(valid[k], valid[std::min(j, valid.size() - 1)]);
            const auto [u, v] = valid[k];
            Anchor a;
            a.position = back_project(ImagePoint(u, v), rec.depth.at(u, v), rec.pose, rec.intrinsics);
            a.host = rec.id;
            a.label = rec.labels.at(u, v);
            scene.anchors.push_back(a);
        }
    }
    const size_t n_anchor = scene.anchors.size();

    // Latent local descriptors per family and latent place codes for global descriptors.
    std::vector<Eigen::MatrixXf> latent(spec.families.size());
    for (size_t f = 0; f < spec.families.size(); ++f) {
        auto rng = stream(spec.seed, kLatent, f);
        latent[f].resize(spec.families[f].family.dim, static_cast<Eigen::Index>(n_anchor));
        for (Eigen::Index a = 0; a < latent[f].cols(); ++a)
            for (Eigen::Index k = 0; k < latent[f].rows(); ++k) latent[f](k, a) = static_cast<float>(gaussian(rng));
    }
    Eigen::MatrixXd codes(spec.global_dim, static_cast<Eigen::Index>(n_anchor) + 1);
    {
        auto rng = stream(spec.seed, kGlobalCodes);
        for (Eigen::Index a = 0; a < codes.cols(); ++a)
            for (Eigen::Index k = 0; k < codes.rows(); ++k) codes(k, a) = gaussian(rng);
    }

    const auto global_for = [&](const RigidPose &pose, double noise, std::uint64_t key) {
        Eigen::VectorXd g = Eigen::VectorXd::Zero(spec.global_dim);
        int visible = 0;
        for (size_t a = 0; a < n_anchor; ++a)
            if (anchor_visible(scene.surfaces, scene.anchors[a].position, pose, K)) {
                g += codes.col(static_cast<Eigen::Index>(a));
                ++visible;
            }
        if (visible == 0) g = codes.col(codes.cols() - 1);
        else g /= std::sqrt(static_cast<double>(visible));
        auto rng = stream(spec.seed, kGlobalNoise, key);
        for (Eigen::Index k = 0; k < g.size(); ++k) g[k] += noise * gaussian(rng);
        return g;
    };

    // Database features and descriptors.
    std::vector<std::vector<size_t>> hosted(ds.database.size());
    for (size_t a = 0; a < n_anchor; ++a) hosted[static_cast<size_t>(scene.anchors[a].host)].push_back(a);
    ExceptionCollector errors;
#pragma omp parallel for schedule(dynamic, 1)
    for (long i = 0; i < n_db; ++i) {
        errors.run([&] {
            auto &rec = ds.database[i];
            for (size_t f = 0; f < spec.families.size(); ++f) {
                const FamilySpec &fam = spec.families[f];
                auto rng = stream(spec.seed, kDatabaseFeatures, (static_cast<std::uint64_t>(rec.id) << 8) | f);
                FeatureSet set;
                set.family = fam.family.name;
                std::vector<Eigen::VectorXf> descs;
                for (size_t a : hosted[static_cast<size_t>(i)]) {
                    if (uniform(rng, 0.0, 1.0) < fam.database.dropout) continue;
                    const auto q = project(scene.anchors[a].position, rec.pose, K);
                    ImagePoint loc(nearest_pixel(q->x()), nearest_pixel(q->y()));
                    loc += fam.database.pixel_sigma * ImagePoint(gaussian(rng), gaussian(rng));
                    Eigen::VectorXf d = latent[f].col(static_cast<Eigen::Index>(a));
                    for (Eigen::Index k = 0; k < d.size(); ++k)
                        d[k] += static_cast<float>(fam.database.descriptor_sigma * gaussian(rng));
                    set.locations.push_back(loc);
                    descs.push_back(std::move(d));
                }
                set.descriptors.resize(fam.family.dim, static_cast<Eigen::Index>(descs.size()));
                for (size_t k = 0; k < descs.size(); ++k) set.descriptors.col(static_cast<Eigen::Index>(k)) = descs[k];
                rec.features.emplace(set.family, std::move(set));
            }
            rec.global = {rec.id, global_for(rec.pose, spec.global_noise_day, static_cast<std::uint64_t>(rec.id))};
            if (spec.depth_outlier_fraction > 0) {
                auto rng = stream(spec.seed, kDepthNoise, static_cast<std::uint64_t>(rec.id));
                for (double &d : rec.depth.values)
                    if (uniform(rng, 0.0, 1.0) < spec.depth_outlier_fraction && d > 0) d *= spec.depth_outlier_scale;
            }
        });
    }
    errors.rethrow();

    // Queries: perturbed copies of database viewpoints.
    {
        auto rng = stream(spec.seed, kQueryPoses);
        for (int q = 0; q < spec.queries; ++q) {
            QueryRecord rec;
            rec.id = kFirstQueryId + q;
            rec.intrinsics = K;
            const auto base_idx = std::min<size_t>(ds.database.size() - 1,
                                                   static_cast<size_t>(uniform(rng, 0.0, 1.0) * static_cast<double>(ds.database.size())));
            const RigidPose &base = ds.database[base_idx].pose;
            const Eigen::Vector3d fwd = base.rotation.row(2).transpose();
            const double base_yaw = std::atan2(fwd.y(), fwd.x());
            const double base_pitch = std::asin(std::clamp(fwd.z(), -1.0, 1.0));
            const double o = spec.query_offset_m;
            Eigen::Vector3d eye = base.center + Eigen::Vector3d(uniform(rng, -o, o), uniform(rng, -o, o) * 0.5,
                                                                uniform(rng, -0.2, 0.2));
            const double lim = spec.street_width / 2.0 - spec.sidewalk_width;
            eye.y() = std::clamp(eye.y(), -lim, lim);
            const double yaw = base_yaw + deg2rad(uniform(rng, -spec.query_yaw_jitter_deg, spec.query_yaw_jitter_deg));
            const double pitch =
                base_pitch + deg2rad(uniform(rng, -spec.query_pitch_jitter_deg, spec.query_pitch_jitter_deg));
            const RigidPose pose = camera_from_angles(eye, yaw, pitch);
            const double u = uniform(rng, 0.0, 1.0);
            rec.condition = u < spec.night_fraction ? Condition::Night : Condition::Day;
            scene.query_poses[rec.id] = pose;
            ds.queries.push_back(std::move(rec));
        }
    }

    const long n_q = static_cast<long>(ds.queries.size());
#pragma omp parallel for schedule(dynamic, 1)
    for (long i = 0; i < n_q; ++i) {
        errors.run([&] {
            auto &rec = ds.queries[i];
            const RigidPose &pose = scene.query_poses.at(rec.id);
            DepthMap depth;
            render(scene.surfaces, pose, K, depth, rec.labels);
            if (spec.query_label_noise > 0) {
                auto rng = stream(spec.seed, kLabelNoise, static_cast<std::uint64_t>(rec.id));
                for (auto &l : rec.labels.values)
                    if (uniform(rng, 0.0, 1.0) < spec.query_label_noise)
                        l = static_cast<std::uint8_t>(uniform(rng, 0.0, 1.0) * cityscapes::kNumClasses) % cityscapes::kNumClasses;
            }
            std::vector<size_t> visible;
            for (size_t a = 0; a < n_anchor; ++a)
                if (anchor_visible(scene.surfaces, scene.anchors[a].position, pose, K)) visible.push_back(a);
            const bool night = rec.condition == Condition::Night;
            for (size_t f = 0; f < spec.families.size(); ++f) {
                const FamilySpec &fam = spec.families[f];
                const Corruption &c = night ? fam.night : fam.day;
                auto rng = stream(spec.seed, kQueryFeatures, (static_cast<std::uint64_t>(rec.id) << 8) | f);
                FeatureSet set;
                set.family = fam.family.name;
                std::vector<Eigen::VectorXf> descs;
                for (size_t a : visible) {
                    if (uniform(rng, 0.0, 1.0) < c.dropout) continue;
                    ImagePoint loc = *project(scene.anchors[a].position, pose, K);
                    loc += c.pixel_sigma * ImagePoint(gaussian(rng), gaussian(rng));
                    Eigen::VectorXf d = latent[f].col(static_cast<Eigen::Index>(a));
                    for (Eigen::Index k = 0; k < d.size(); ++k) d[k] += static_cast<float>(c.descriptor_sigma * gaussian(rng));
                    set.locations.push_back(loc);
                    descs.push_back(std::move(d));
                }
                for (int k = 0; k < spec.clutter_keypoints; ++k) {
                    set.locations.emplace_back(uniform(rng, 0.0, K.width - 1.0), uniform(rng, 0.0, K.height - 1.0));
                    Eigen::VectorXf d(fam.family.dim);
                    for (Eigen::Index j = 0; j < d.size(); ++j) d[j] = static_cast<float>(gaussian(rng));
                    descs.push_back(std::move(d));
                }
                set.descriptors.resize(fam.family.dim, static_cast<Eigen::Index>(descs.size()));
                for (size_t k = 0; k < descs.size(); ++k) set.descriptors.col(static_cast<Eigen::Index>(k)) = descs[k];
                rec.features.emplace(set.family, std::move(set));
            }
            rec.global = {rec.id, global_for(pose, night ? spec.global_noise_night : spec.global_noise_day,
                                             static_cast<std::uint64_t>(rec.id))};
        });
    }
    errors.rethrow();
    return scene;
}

} // namespace semloc::synth
