#include "oracles.h"
#include "semloc/scoring.h"
#include "semloc/semantic_map.h"
#include "semloc/synth.h"

#include <doctest.h>

#include <random>

using namespace semloc;

namespace {

DensePoint point_seen_from(const Eigen::Vector3d &X, const std::vector<Eigen::Vector3d> &centers, std::uint8_t label) {
    const CameraIntrinsics K{1, 1, 0, 0, 1, 1};
    std::vector<DatabaseImageRecord> rs;
    for (const auto &c : centers) {
        DatabaseImageRecord r;
        r.intrinsics = K;
        r.pose = RigidPose(Eigen::Matrix3d::Identity(), c);
        rs.push_back(r);
    }
    std::vector<const DatabaseImageRecord *> p;
    for (auto &r : rs) p.push_back(&r);
    DensePoint d;
    d.position = X;
    d.label = label;
    d.cone = compute_visibility_cone(X, p);
    d.support = static_cast<int>(centers.size());
    return d;
}

struct SceneFixture {
    synth::Scene scene;
    DenseMap map;
};

const SceneFixture &fixture(int which) {
    static std::vector<SceneFixture> cache;
    if (cache.empty()) {
        for (int s = 0; s < 5; ++s) {
            synth::SceneSpec spec = synth::zero_noise_spec();
            spec.seed = 500 + s;
            spec.image_width = 96;
            spec.image_height = 72;
            spec.focal = 80;
            spec.database_stations = 4;
            spec.queries = 4;
            spec.anchors_per_image = 20;
            SceneFixture f;
            f.scene = synth::generate_scene(spec);
            f.map = build_map(f.scene.dataset.database, {});
            cache.push_back(std::move(f));
        }
    }
    return cache[which];
}

} // namespace

TEST_SUITE("scoring") {

TEST_CASE("gate config defaults and validation") {
    const VisibilityGateConfig cfg;
    CHECK(cfg.distance_margin == 1.2);
    CHECK(cfg.angle_margin == 0.1);
    CHECK_THROWS_AS((VisibilityGateConfig{0.9, 0.1}.validate()), std::invalid_argument);
    CHECK_THROWS_AS((VisibilityGateConfig{1.2, -0.1}.validate()), std::invalid_argument);
}

TEST_CASE("gate examples") {
    const DensePoint p = point_seen_from({0, 0, 0}, {{0, 0, -5}}, 2);
    CHECK(passes_visibility_gate(p, {0, 0, -5}, {}));
    CHECK_FALSE(passes_visibility_gate(p, {0, 0, -50}, {}));
    CHECK_FALSE(passes_visibility_gate(p, {0, 0, 5}, {}));
    CHECK_FALSE(passes_visibility_gate(p, {0, 0, -5}, {1.2, 0.0}));
    const DensePoint two = point_seen_from({0, 0, 0}, {{0, 0, -5}, {5, 0, -5}}, 2);
    CHECK(passes_visibility_gate(two, {2, 0, -5}, {}));
    CHECK(passes_visibility_gate(two, Eigen::Vector3d(0, 0, -5), {}));
    CHECK_FALSE(passes_visibility_gate(two, {0, 0, -2}, {}));
}

TEST_CASE("gate equals brute-force inequalities and grows with margins") {
    std::mt19937_64 g(3);
    const auto &f = fixture(0);
    for (int trial = 0; trial < 20; ++trial) {
        const RigidPose q(oracle::rodrigues(oracle::random_unit(g), 1.0),
                          Eigen::Vector3d(oracle::uniform(g, -20, 20), oracle::uniform(g, -5, 5), oracle::uniform(g, 0, 3)));
        const auto gated = gate_visible(f.map, q, {});
        size_t expected = 0;
        for (const auto &p : f.map) expected += oracle::gate(p, q.center, 1.2, 0.1);
        CHECK(gated.size() == expected);
        CHECK(gated.size() <= f.map.size());
        const auto wider = gate_visible(f.map, q, {1.5, 0.3});
        CHECK(wider.size() >= gated.size());
        size_t j = 0;
        for (const auto &p : wider) {
            if (j < gated.size() && p.position == gated[j].position) ++j;
        }
        CHECK(j == gated.size());
    }
}

TEST_CASE("score examples on a synthetic scene") {
    const auto &f = fixture(1);
    for (const auto &q : f.scene.dataset.queries) {
        const RigidPose &gt = f.scene.query_poses.at(q.id);
        const auto s = score_pose(f.map, gt, q.intrinsics, q.labels, {});
        CHECK(s.projected > 0);
        // Occluded map points still pass the gate, so a few land on foreign labels.
        CHECK(s.consistent >= 0.9 * s.projected);
        const RigidPose far(gt.rotation, gt.center + Eigen::Vector3d(0, 0, 500));
        const auto z = score_pose(f.map, far, q.intrinsics, q.labels, {});
        CHECK(z.projected == 0);
        CHECK(z.consistent == 0);
    }
}

TEST_CASE("scores equal the per-point oracle for perturbed poses") {
    std::mt19937_64 g(4);
    for (int s = 0; s < 5; ++s) {
        const auto &f = fixture(s);
        for (int trial = 0; trial < 20; ++trial) {
            const auto &q = f.scene.dataset.queries[trial % f.scene.dataset.queries.size()];
            const RigidPose &gt = f.scene.query_poses.at(q.id);
            const RigidPose pose(oracle::rodrigues(oracle::random_unit(g), oracle::uniform(g, 0, 0.1)) * gt.rotation,
                                 gt.center + oracle::random_unit(g) * oracle::uniform(g, 0, 1.0));
            const auto ref = oracle::score(f.map, pose, q.intrinsics, q.labels);
            const auto fused = score_pose(f.map, pose, q.intrinsics, q.labels, {});
            const auto two_step =
                semantic_consistency_score(gate_visible(f.map, pose, {}), pose, q.intrinsics, q.labels);
            const auto ser = serial::score_pose(f.map, pose, q.intrinsics, q.labels, {});
            CHECK(fused.consistent == ref.consistent);
            CHECK(fused.projected == ref.projected);
            CHECK(two_step.consistent == ref.consistent);
            CHECK(two_step.projected == ref.projected);
            CHECK(ser.consistent == ref.consistent);
            CHECK(ser.projected == ref.projected);
            CHECK(fused.consistent <= fused.projected);
        }
    }
}

TEST_CASE("unlabeled query pixels count toward neither total") {
    const auto &f = fixture(2);
    const auto &q = f.scene.dataset.queries[0];
    const RigidPose &gt = f.scene.query_poses.at(q.id);
    LabelImage holes = q.labels;
    for (size_t i = 0; i < holes.values.size(); i += 2) holes.values[i] = kUnlabeled;
    const auto full = score_pose(f.map, gt, q.intrinsics, q.labels, {});
    const auto part = score_pose(f.map, gt, q.intrinsics, holes, {});
    CHECK(part.projected < full.projected);
    CHECK(part.consistent <= full.consistent);
    const auto ref = oracle::score(f.map, gt, q.intrinsics, holes);
    CHECK(part.projected == ref.projected);
    CHECK(part.consistent == ref.consistent);
}

TEST_CASE("ground-truth pose outscores displaced poses") {
    std::mt19937_64 g(5);
    int wins = 0, trials = 0;
    for (int s = 0; s < 5; ++s) {
        const auto &f = fixture(s);
        for (int t = 0; t < 20; ++t, ++trials) {
            const auto &q = f.scene.dataset.queries[t % f.scene.dataset.queries.size()];
            const RigidPose &gt = f.scene.query_poses.at(q.id);
            Eigen::Vector3d dir = oracle::random_unit(g);
            const RigidPose moved(gt.rotation, gt.center + dir * oracle::uniform(g, 2, 4));
            wins += score_pose(f.map, gt, q.intrinsics, q.labels, {}).consistent >=
                    score_pose(f.map, moved, q.intrinsics, q.labels, {}).consistent;
        }
    }
    CHECK(wins >= 95 * trials / 100);
}

TEST_CASE("weight normalization examples") {
    std::vector<Correspondence2D3D> c(2);
    c[0].source_image = 1;
    c[1].source_image = 2;
    std::vector<SemanticScore> s = {{1, 10, 20}, {2, 30, 40}};
    auto w = normalize_weights(s, c);
    CHECK(w[0].weight == doctest::Approx(0.25));
    CHECK(w[1].weight == doctest::Approx(0.75));

    std::vector<SemanticScore> zero = {{1, 0, 5}, {2, 0, 0}};
    w = normalize_weights(zero, c);
    CHECK(w[0].weight == 0.5);
    CHECK(w[1].weight == 0.5);

    std::vector<Correspondence2D3D> three(3);
    three[0].source_image = three[1].source_image = 1;
    three[2].source_image = 2;
    std::vector<SemanticScore> equal = {{1, 10, 10}, {2, 10, 10}};
    w = normalize_weights(equal, three);
    for (const auto &x : w) CHECK(x.weight == doctest::Approx(1.0 / 3.0));

    std::vector<Correspondence2D3D> stray(1);
    stray[0].source_image = 99;
    CHECK_THROWS_AS(normalize_weights(s, stray), std::invalid_argument);
    CHECK(normalize_weights(s, std::vector<Correspondence2D3D>{}).empty());
}

TEST_CASE("weights sum to one and ignore score scale") {
    std::mt19937_64 g(6);
    for (int trial = 0; trial < 100; ++trial) {
        std::vector<SemanticScore> s;
        for (int i = 0; i < 6; ++i) s.push_back({i, static_cast<long>(g() % 50), 100});
        std::vector<Correspondence2D3D> c(1 + g() % 60);
        for (auto &x : c) x.source_image = static_cast<ImageId>(g() % 6);
        const auto w = normalize_weights(s, c);
        double sum = 0;
        for (const auto &x : w) sum += x.weight;
        CHECK(std::abs(sum - 1.0) < 1e-12);
        auto scaled = s;
        for (auto &x : scaled) x.consistent *= 7;
        const auto w2 = normalize_weights(scaled, c);
        for (size_t i = 0; i < w.size(); ++i) CHECK(w2[i].weight == doctest::Approx(w[i].weight).epsilon(1e-12));
    }
}

}
