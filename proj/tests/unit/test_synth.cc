#include "oracles.h"
#include "semloc/matching.h"
#include "semloc/semantic_map.h"
#include "semloc/synth.h"

#include <doctest.h>

using namespace semloc;

namespace {

synth::SceneSpec tiny(std::uint64_t seed) {
    synth::SceneSpec spec = synth::zero_noise_spec();
    spec.seed = seed;
    spec.image_width = 80;
    spec.image_height = 60;
    spec.focal = 65;
    spec.database_stations = 3;
    spec.queries = 6;
    spec.anchors_per_image = 40;
    return spec;
}

// Fraction of matches whose lifted point reprojects within 8 px in the true query pose.
double correct_fraction(const synth::Scene &s, const QueryRecord &q, const std::string &fam) {
    const FeatureFamily *family = nullptr;
    for (const auto &f : s.dataset.families)
        if (f.name == fam) family = &f;
    size_t good = 0, total = 0;
    for (const auto &db : s.dataset.database) {
        const auto m = match_family(q.features.at(fam), db.features.at(fam), *family);
        const auto lifted = lift_to_3d(m, q.features.at(fam), db.features.at(fam), db);
        for (const auto &c : lifted.correspondences) {
            const auto p = oracle::project_with_depth(c.world_point, s.query_poses.at(q.id), q.intrinsics);
            ++total;
            good += p && std::hypot((*p)[0] - c.query_pixel.x(), (*p)[1] - c.query_pixel.y()) < 8.0;
        }
    }
    return total ? static_cast<double>(good) / total : 0.0;
}

} // namespace

TEST_SUITE("synth") {

TEST_CASE("rendered depth equals the analytic plane depth") {
    synth::Surface wall;
    wall.origin = Eigen::Vector3d(-50, -50, 7);
    wall.edge_u = Eigen::Vector3d(100, 0, 0);
    wall.edge_v = Eigen::Vector3d(0, 100, 0);
    wall.classes = {2};
    const CameraIntrinsics K{30, 30, 15.5, 11.5, 32, 24};
    std::mt19937_64 g(30);
    for (int t = 0; t < 20; ++t) {
        const RigidPose pose(oracle::rodrigues(oracle::random_unit(g), oracle::uniform(g, 0, 0.4)),
                             Eigen::Vector3d(oracle::uniform(g, -1, 1), oracle::uniform(g, -1, 1), oracle::uniform(g, 0, 3)));
        DepthMap d;
        LabelImage l;
        synth::render({wall}, pose, K, d, l);
        REQUIRE(d.width == 32);
        for (int v = 0; v < 24; ++v)
            for (int u = 0; u < 32; ++u) {
                // Ray r = R^T K^-1 x, hit at C + s r with z = 7; camera depth equals s.
                const Eigen::Vector3d ray = pose.rotation.transpose() * Eigen::Vector3d((u - K.cx) / K.fx, (v - K.cy) / K.fy, 1);
                const double s = (7 - pose.center.z()) / ray.z();
                if (s > 0) {
                    CHECK(std::abs(d.at(u, v) - s) <= 1e-12 * s);
                    CHECK(l.at(u, v) == 2);
                } else {
                    CHECK(d.at(u, v) == 0.0);
                }
            }
    }
}

TEST_CASE("cast ray picks the nearest surface") {
    synth::Surface a, b;
    a.origin = Eigen::Vector3d(-1, -1, 4);
    a.edge_u = Eigen::Vector3d(2, 0, 0);
    a.edge_v = Eigen::Vector3d(0, 2, 0);
    a.classes = {4};
    b = a;
    b.origin.z() = 9;
    b.classes = {2};
    const CameraIntrinsics K{10, 10, 5, 5, 11, 11};
    const auto hit = synth::cast_ray({b, a}, RigidPose(), K, {5, 5});
    REQUIRE(hit);
    CHECK(hit->depth == doctest::Approx(4));
    CHECK(hit->label == 4);
    CHECK(hit->surface == 1);
    CHECK_FALSE(synth::cast_ray({a}, RigidPose(), K, {-200, 5}));
}

TEST_CASE("class cells") {
    synth::Surface s;
    s.cells_u = 2;
    s.cells_v = 2;
    s.classes = {1, 2, 3, 4};
    CHECK(s.class_at(0.1, 0.1) == 1);
    CHECK(s.class_at(0.9, 0.1) == 2);
    CHECK(s.class_at(0.1, 0.9) == 3);
    CHECK(s.class_at(1.0, 1.0) == 4);
}

TEST_CASE("generation is deterministic") {
    const auto a = synth::generate_scene(tiny(31));
    const auto b = synth::generate_scene(tiny(31));
    REQUIRE(a.dataset.database.size() == b.dataset.database.size());
    for (size_t i = 0; i < a.dataset.database.size(); ++i) {
        CHECK(a.dataset.database[i].depth.values == b.dataset.database[i].depth.values);
        CHECK(a.dataset.database[i].labels.values == b.dataset.database[i].labels.values);
        for (const auto &[name, f] : a.dataset.database[i].features) {
            CHECK(f.descriptors == b.dataset.database[i].features.at(name).descriptors);
            CHECK(f.locations == b.dataset.database[i].features.at(name).locations);
        }
        CHECK(a.dataset.database[i].global.values == b.dataset.database[i].global.values);
    }
    for (size_t i = 0; i < a.dataset.queries.size(); ++i) {
        CHECK(a.dataset.queries[i].labels.values == b.dataset.queries[i].labels.values);
        for (const auto &[name, f] : a.dataset.queries[i].features)
            CHECK(f.descriptors == b.dataset.queries[i].features.at(name).descriptors);
    }
    for (const auto &[id, p] : a.query_poses) CHECK(p.center == b.query_poses.at(id).center);
    const auto c = synth::generate_scene(tiny(32));
    CHECK(c.dataset.database[0].features.begin()->second.descriptors != a.dataset.database[0].features.begin()->second.descriptors);
}

TEST_CASE("generated records are consistent") {
    const auto s = synth::generate_scene(tiny(33));
    CHECK(s.dataset.database.size() == 6);
    CHECK(s.dataset.queries.size() == 6);
    for (const auto &r : s.dataset.database) {
        CHECK_NOTHROW(r.validate());
        CHECK(r.pose.valid());
        for (const auto &[name, f] : r.features) {
            CHECK_NOTHROW(f.validate());
            // Database keypoints sit on pixel centers with exact depth.
            for (const auto &p : f.locations) {
                CHECK(p.x() == std::floor(p.x()));
                CHECK(r.depth.at(static_cast<int>(p.x()), static_cast<int>(p.y())) > 0);
            }
        }
    }
    for (const auto &a : s.anchors) {
        const auto &host = s.dataset.database_image(a.host);
        const auto q = oracle::project_with_depth(a.position, host.pose, host.intrinsics);
        REQUIRE(q);
        const long u = oracle::round_half_up((*q)[0]), v = oracle::round_half_up((*q)[1]);
        CHECK(std::abs((*q)[2] - host.depth.at(u, v)) < 1e-9);
        CHECK(host.labels.at(u, v) == a.label);
    }
    for (const auto &q : s.dataset.queries) CHECK(s.query_poses.count(q.id) == 1);
}

TEST_CASE("zero-noise map labels equal the surface class") {
    const auto s = synth::generate_scene(tiny(34));
    const auto map = build_map(s.dataset.database, {});
    REQUIRE(!map.empty());
    size_t agree = 0;
    for (const auto &p : map) {
        for (const auto &surf : s.surfaces) {
            const Eigen::Vector3d n = surf.edge_u.cross(surf.edge_v).normalized();
            if (std::abs((p.position - surf.origin).dot(n)) > 1e-6) continue;
            const double a = (p.position - surf.origin).dot(surf.edge_u) / surf.edge_u.squaredNorm();
            const double b = (p.position - surf.origin).dot(surf.edge_v) / surf.edge_v.squaredNorm();
            if (a < 0 || a > 1 || b < 0 || b > 1) continue;
            agree += surf.class_at(a, b) == p.label;
            break;
        }
    }
    // Voxels straddling a cell border may average into the neighboring cell.
    CHECK(agree >= map.size() * 97 / 100);
}

TEST_CASE("night descriptor noise lowers the correct-match fraction") {
    synth::SceneSpec day = tiny(35);
    day.families.resize(1);
    day.families[0].day.descriptor_sigma = 0.3;
    day.families[0].night.descriptor_sigma = 3.0;
    synth::SceneSpec night = day;
    night.night_fraction = 1.0;
    const auto sd = synth::generate_scene(day), sn = synth::generate_scene(night);
    double fd = 0, fn = 0;
    for (size_t i = 0; i < sd.dataset.queries.size(); ++i) {
        CHECK(sn.dataset.queries[i].condition == Condition::Night);
        CHECK(sd.query_poses.at(sd.dataset.queries[i].id).center == sn.query_poses.at(sn.dataset.queries[i].id).center);
        fd += correct_fraction(sd, sd.dataset.queries[i], day.families[0].family.name);
        fn += correct_fraction(sn, sn.dataset.queries[i], day.families[0].family.name);
    }
    CHECK(fn < fd);
}

TEST_CASE("one family corrupted at night falls below the other") {
    synth::SceneSpec spec = tiny(36);
    spec.night_fraction = 1.0;
    for (auto &f : spec.families) f.day.descriptor_sigma = f.night.descriptor_sigma = 0.3;
    spec.families[0].night.descriptor_sigma *= 10;
    const auto s = synth::generate_scene(spec);
    double fa = 0, fb = 0;
    for (const auto &q : s.dataset.queries) {
        fa += correct_fraction(s, q, spec.families[0].family.name);
        fb += correct_fraction(s, q, spec.families[1].family.name);
    }
    CHECK(fa < fb);
}

TEST_CASE("spec validation") {
    auto spec = tiny(1);
    spec.night_fraction = 1.5;
    CHECK_THROWS_AS(spec.validate(), std::invalid_argument);
    spec = tiny(1);
    spec.families.clear();
    CHECK_THROWS_AS(spec.validate(), std::invalid_argument);
    const auto p = synth::paper_like_spec();
    CHECK(p.families.size() == 2);
    CHECK(p.families[0].night.descriptor_sigma > p.families[0].day.descriptor_sigma);
}

}
