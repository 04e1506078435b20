#include "oracles.h"
#include "semloc/io.h"

#include <doctest.h>

#include <cstring>
#include <filesystem>
#include <random>

using namespace semloc;
namespace fs = std::filesystem;

namespace {

float f32(double v) { return static_cast<float>(v); }

Eigen::Vector3d f32(const Eigen::Vector3d &v) { return Eigen::Vector3d(f32(v.x()), f32(v.y()), f32(v.z())); }

std::string error_of(const std::function<void()> &fn) {
    try {
        fn();
    } catch (const std::exception &e) {
        return e.what();
    }
    return {};
}

fs::path scratch_dir(const std::string &name) {
    const fs::path p = fs::temp_directory_path() / ("semloc_test_" + name + "_" + std::to_string(::getpid()));
    fs::remove_all(p);
    fs::create_directories(p);
    return p;
}

} // namespace

TEST_SUITE("io") {

TEST_CASE("depth and label round trips") {
    std::mt19937_64 g(40);
    for (int t = 0; t < 100; ++t) {
        const int w = 1 + static_cast<int>(g() % 30), h = 1 + static_cast<int>(g() % 30);
        DepthMap d(w, h, 0.0);
        LabelImage l(w, h, 0);
        for (size_t i = 0; i < d.size(); ++i) {
            d.values[i] = g() % 5 ? oracle::uniform(g, 0.1, 80) : 0.0;
            l.values[i] = g() % 6 ? static_cast<std::uint8_t>(g() % 19) : kUnlabeled;
        }
        const DepthMap d2 = io::decode_depth(io::encode_depth(d));
        REQUIRE(d2.width == w);
        REQUIRE(d2.height == h);
        for (size_t i = 0; i < d.size(); ++i) CHECK(d2.values[i] == double(f32(d.values[i])));
        CHECK(io::encode_depth(d2) == io::encode_depth(d));
        CHECK(io::decode_labels(io::encode_labels(l)) == l);
    }
}

TEST_CASE("feature, global and map round trips") {
    std::mt19937_64 g(41);
    for (int t = 0; t < 100; ++t) {
        FeatureSet f;
        f.family = t % 2 ? "sift" : "r2d2";
        const int n = static_cast<int>(g() % 20), dim = 1 + static_cast<int>(g() % 16);
        f.descriptors.resize(dim, n);
        for (int i = 0; i < n; ++i) {
            f.locations.emplace_back(f32(oracle::uniform(g, 0, 320)), f32(oracle::uniform(g, 0, 240)));
            for (int k = 0; k < dim; ++k) f.descriptors(k, i) = f32(oracle::uniform(g, -3, 3));
        }
        const FeatureSet f2 = io::decode_features(io::encode_features(f));
        CHECK(f2.family == f.family);
        CHECK(f2.locations == f.locations);
        CHECK(f2.descriptors == f.descriptors);

        Eigen::VectorXd gd(1 + g() % 64);
        for (auto &x : gd) x = f32(oracle::uniform(g, -2, 2));
        CHECK(io::decode_global(io::encode_global(gd)) == gd);

        DenseMap m(g() % 30);
        for (auto &p : m) {
            for (int k = 0; k < 3; ++k) p.position[k] = f32(oracle::uniform(g, -50, 50));
            p.label = static_cast<std::uint8_t>(g() % 19);
            p.cone.v_l = f32(oracle::random_unit(g));
            p.cone.v_u = f32(oracle::random_unit(g));
            p.cone.v_m = VisibilityCone::mean_direction(p.cone.v_l, p.cone.v_u);
            p.cone.theta = f32(oracle::uniform(g, 0, 1.5));
            p.cone.d_min = f32(oracle::uniform(g, 0.5, 10));
            p.cone.d_max = f32(p.cone.d_min + oracle::uniform(g, 0, 10));
            p.support = static_cast<int>(g() % 100);
        }
        const DenseMap m2 = io::decode_map(io::encode_map(m));
        REQUIRE(m2.size() == m.size());
        for (size_t i = 0; i < m.size(); ++i) {
            CHECK(m2[i].position == m[i].position);
            CHECK(m2[i].label == m[i].label);
            CHECK(m2[i].cone.v_l == m[i].cone.v_l);
            CHECK(m2[i].cone.v_u == m[i].cone.v_u);
            CHECK((m2[i].cone.v_m - m[i].cone.v_m).norm() < 1e-12);
            CHECK(m2[i].cone.theta == m[i].cone.theta);
            CHECK(m2[i].cone.d_min == m[i].cone.d_min);
            CHECK(m2[i].cone.d_max == m[i].cone.d_max);
            CHECK(m2[i].support == m[i].support);
        }
    }
}

TEST_CASE("corrupt binary data reports the byte offset") {
    LabelImage l(3, 2, 1);
    auto b = io::encode_labels(l);
    b[12 + 4] = 77;
    CHECK(error_of([&] { io::decode_labels(b, "x.lbl"); }) == "x.lbl: offset 16: label outside 0..18 and 255");

    auto d = io::encode_depth(DepthMap(2, 2, 1.0));
    CHECK(error_of([&] { io::decode_depth(io::Bytes(d.begin(), d.end() - 1), "x.dmp"); }) ==
          "x.dmp: offset 12: record count exceeds data size");
    d.push_back(0);
    CHECK(error_of([&] { io::decode_depth(d, "x.dmp"); }) == "x.dmp: offset 28: trailing bytes");
    d.pop_back();
    const float nan = NAN;
    std::memcpy(d.data() + 16, &nan, 4);
    CHECK(error_of([&] { io::decode_depth(d, "x.dmp"); }) == "x.dmp: offset 16: non-finite value");

    auto wrong = io::encode_labels(l);
    wrong[3] = '2';
    CHECK(error_of([&] { io::decode_labels(wrong, "x.lbl"); }) == "x.lbl: offset 0: bad magic, expected LBL1");

    io::Bytes huge = {'F', 'E', 'A', '1', 1, 0, 0, 0, 's', 0xff, 0xff, 0xff, 0x7f, 8, 0, 0, 0};
    CHECK(error_of([&] { io::decode_features(huge); }).find("record count exceeds data size") != std::string::npos);
    CHECK_THROWS_AS(io::decode_global({}), io::DataError);

    DenseMap m(1);
    m[0].cone.d_min = 2;
    m[0].cone.d_max = 1;
    CHECK(error_of([&] { io::decode_map(io::encode_map(m)); }).find("invalid visibility distances") != std::string::npos);
}

TEST_CASE("every truncation of a valid file is rejected") {
    FeatureSet f;
    f.family = "sift";
    f.locations = {{1, 2}, {3, 4}};
    f.descriptors = Eigen::MatrixXf::Ones(4, 2);
    const auto b = io::encode_features(f);
    for (size_t n = 0; n < b.size(); ++n)
        CHECK_THROWS_AS(io::decode_features(io::Bytes(b.begin(), b.begin() + n)), io::DataError);
}

TEST_CASE("camera lines") {
    std::mt19937_64 g(42);
    for (int t = 0; t < 100; ++t) {
        io::CameraLine c;
        c.id = t;
        c.intrinsics = {oracle::uniform(g, 100, 900), oracle::uniform(g, 100, 900), oracle::uniform(g, 100, 300),
                        oracle::uniform(g, 100, 200), 640, 480};
        c.pose = oracle::random_pose(g, 50);
        const auto back = io::parse_camera_line(io::format_camera_line(c));
        CHECK(back.id == c.id);
        CHECK(back.intrinsics == c.intrinsics);
        CHECK(back.pose.center == c.pose.center);
        CHECK((back.pose.rotation - c.pose.rotation).norm() < 1e-14);
    }
    CHECK_THROWS_AS(io::parse_camera_line("1 2 3"), io::DataError);
    CHECK(error_of([] { io::parse_camera_line("1 500 500 10 10 20 20 2 0 0 0 0 0 0", "cams.txt", 7); }) ==
          "cams.txt: line 7: quaternion is not unit length");
    CHECK_THROWS_AS(io::parse_camera_line("1 -500 500 10 10 20 20 1 0 0 0 0 0 0"), io::DataError);
}

TEST_CASE("dataset directory round trip") {
    synth::SceneSpec spec = synth::zero_noise_spec();
    spec.image_width = 40;
    spec.image_height = 30;
    spec.focal = 32;
    spec.database_stations = 2;
    spec.queries = 3;
    spec.anchors_per_image = 15;
    const auto scene = synth::generate_scene(spec);
    const fs::path root = scratch_dir("dataset");
    io::write_dataset(root, scene.dataset, &scene.query_poses);
    const auto loaded = io::load_dataset(root);
    const Dataset &a = scene.dataset, &b = loaded.dataset;
    REQUIRE(b.families.size() == a.families.size());
    for (size_t i = 0; i < a.families.size(); ++i) {
        CHECK(b.families[i].name == a.families[i].name);
        CHECK(b.families[i].dim == a.families[i].dim);
        CHECK(b.families[i].use_mutual_nn == a.families[i].use_mutual_nn);
        CHECK(b.families[i].ratio == a.families[i].ratio);
    }
    REQUIRE(b.database.size() == a.database.size());
    for (size_t i = 0; i < a.database.size(); ++i) {
        CHECK(b.database[i].id == a.database[i].id);
        CHECK(b.database[i].labels == a.database[i].labels);
        CHECK(b.database[i].intrinsics == a.database[i].intrinsics);
        CHECK(b.database[i].pose.center == a.database[i].pose.center);
        for (size_t k = 0; k < a.database[i].depth.size(); ++k)
            CHECK(b.database[i].depth.values[k] == double(f32(a.database[i].depth.values[k])));
        CHECK(b.database[i].features.size() == a.database[i].features.size());
    }
    REQUIRE(b.queries.size() == a.queries.size());
    for (size_t i = 0; i < a.queries.size(); ++i) {
        CHECK(b.queries[i].id == a.queries[i].id);
        CHECK(b.queries[i].condition == a.queries[i].condition);
        CHECK(b.queries[i].labels == a.queries[i].labels);
    }
    CHECK(loaded.ground_truth.size() == scene.query_poses.size());

    fs::remove(root / "database" / "0.lbl");
    CHECK(error_of([&] { io::load_dataset(root); }).find("referenced file does not exist") != std::string::npos);
    fs::remove_all(root);
    CHECK_THROWS_AS(io::load_dataset(root), io::DataError);
}

TEST_CASE("config parsing") {
    const auto cfg = io::parse_config("# comment\n"
                                      "seed = 9\n"
                                      "depth_filter.tau = 0.02\n"
                                      "depth_filter.min_neighbors = 2\n"
                                      "fusion.voxel_size = 0.1  # trailing\n"
                                      "map.unstable_classes = 10, 11\n"
                                      "gate.distance_margin = 1.5\n"
                                      "retrieval.top_k_day = 5\n"
                                      "ransac.threshold_px = 4\n"
                                      "temporary.max_iterations = 300\n"
                                      "localize.semantic_weighting = false\n"
                                      "evaluate.day_buckets = 0.1:1, 1:10\n");
    CHECK(cfg.localizer.seed == 9);
    CHECK(cfg.map.filter.tau == 0.02);
    CHECK(cfg.map.filter.min_consistent_neighbors == 2);
    CHECK(cfg.map.voxel_size == 0.1);
    CHECK(cfg.map.unstable == std::set<std::uint8_t>{10, 11});
    CHECK(cfg.localizer.gate.distance_margin == 1.5);
    CHECK(cfg.localizer.retrieval.top_k_day == 5);
    CHECK(cfg.localizer.final_ransac.inlier_threshold_px == 4);
    CHECK(cfg.localizer.temporary.max_iterations == 300);
    CHECK_FALSE(cfg.localizer.semantic_weighting);
    REQUIRE(cfg.day_buckets.size() == 2);
    CHECK(cfg.day_buckets[1].max_orientation == 10);

    const auto again = io::parse_config(io::render_config(cfg));
    CHECK(io::render_config(again) == io::render_config(cfg));

    const io::PipelineConfig defaults = io::parse_config("");
    CHECK(defaults.map.filter.tau == 0.01);
    CHECK(defaults.map.voxel_size == 0.05);
    CHECK(defaults.localizer.retrieval.top_k_day == 20);
    CHECK(defaults.localizer.retrieval.top_k_night == 30);
}

TEST_CASE("config rejections carry the line") {
    CHECK(error_of([] { io::parse_config("seed = 1\nbogus.key = 2\n", "c.cfg"); }).find("c.cfg: line 2") == 0);
    CHECK(error_of([] { io::parse_config("seed = 1\nseed = 2\n", "c.cfg"); }).find("duplicate key") != std::string::npos);
    CHECK_THROWS_AS(io::parse_config("depth_filter.tau = abc"), std::invalid_argument);
    CHECK_THROWS_AS(io::parse_config("fusion.voxel_size = -1"), std::invalid_argument);
    CHECK_THROWS_AS(io::parse_config("map.unstable_classes = 40"), std::invalid_argument);
    CHECK_THROWS_AS(io::parse_config("localize.semantic_weighting = maybe"), std::invalid_argument);
    CHECK_THROWS_AS(io::parse_config("just words"), std::invalid_argument);
}

TEST_CASE("family overrides") {
    auto cfg = io::parse_config("family.sift.ratio = 0.8\nfamily.r2d2.mutual_nn = false\n");
    std::vector<FeatureFamily> fams = {{"sift", 8, true, std::nullopt}, {"r2d2", 8, true, 0.9}};
    cfg.apply_family_overrides(fams);
    CHECK(fams[0].ratio == 0.8);
    CHECK_FALSE(fams[1].use_mutual_nn);
    CHECK(fams[1].ratio == 0.9);
    auto stray = io::parse_config("family.orb.ratio = off\n");
    CHECK_THROWS_AS(stray.apply_family_overrides(fams), std::invalid_argument);
}

TEST_CASE("scene spec json") {
    const auto spec = io::parse_scene_spec(R"({"profile": "zero_noise", "seed": 12, "queries": 7, "focal": 100.5})");
    CHECK(spec.seed == 12);
    CHECK(spec.queries == 7);
    CHECK(spec.focal == 100.5);
    CHECK(spec.families[0].night.descriptor_sigma == 0.0);
    const auto paper = io::parse_scene_spec("{}");
    CHECK(paper.families[0].night.descriptor_sigma == synth::paper_like_spec().families[0].night.descriptor_sigma);
    const auto back = io::parse_scene_spec(io::render_scene_spec(paper));
    CHECK(io::render_scene_spec(back) == io::render_scene_spec(paper));
    CHECK_THROWS_AS(io::parse_scene_spec(R"({"colour": 1})"), std::invalid_argument);
    CHECK_THROWS_AS(io::parse_scene_spec(R"({"profile": "noir"})"), std::invalid_argument);
    CHECK_THROWS_AS(io::parse_scene_spec(R"({"queries": -3})"), std::invalid_argument);
    CHECK_THROWS_AS(io::parse_scene_spec("[1"), std::invalid_argument);
}

}
