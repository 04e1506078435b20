#include "oracles.h"
#include "semloc/retrieval.h"

#include <doctest.h>

#include <algorithm>
#include <random>

using namespace semloc;

namespace {
std::vector<GlobalDescriptor> random_descriptors(std::mt19937_64 &g, int n, int dim) {
    std::normal_distribution<double> N;
    std::vector<GlobalDescriptor> out;
    for (int i = 0; i < n; ++i) {
        GlobalDescriptor d;
        d.owner = 1000 + i;
        d.values.resize(dim);
        for (int k = 0; k < dim; ++k) d.values[k] = N(g);
        out.push_back(d);
    }
    return out;
}
} // namespace

TEST_SUITE("retrieval") {

TEST_CASE("defaults follow the day and night retrieval counts") {
    const RetrievalConfig cfg;
    CHECK(cfg.top_k(Condition::Day) == 20);
    CHECK(cfg.top_k(Condition::Night) == 30);
}

TEST_CASE("build normalizes and keeps duplicates") {
    GlobalDescriptor a{1, Eigen::Vector2d(3, 4)}, b{2, Eigen::Vector2d(3, 4)};
    const auto idx = RetrievalIndex::build(std::vector{a, b});
    REQUIRE(idx.size() == 2);
    CHECK(idx.vector(0).isApprox(Eigen::Vector2d(0.6, 0.8)));
    CHECK(idx.id(0) == 1);
    CHECK(idx.id(1) == 2);
    std::mt19937_64 g(1);
    const auto many = RetrievalIndex::build(random_descriptors(g, 1000, 16));
    for (size_t i = 0; i < many.size(); ++i) CHECK(std::abs(many.vector(i).norm() - 1.0) < 1e-9);
}

TEST_CASE("build and query errors") {
    CHECK_THROWS_AS(RetrievalIndex::build(std::vector<GlobalDescriptor>{}), std::invalid_argument);
    GlobalDescriptor a{1, Eigen::Vector2d(3, 4)}, z{2, Eigen::Vector2d(0, 0)}, c{3, Eigen::Vector3d(1, 2, 3)};
    CHECK_THROWS_AS(RetrievalIndex::build(std::vector{a, z}), std::invalid_argument);
    CHECK_THROWS_AS(RetrievalIndex::build(std::vector{a, c}), std::invalid_argument);
    GlobalDescriptor n{4, Eigen::Vector2d(NAN, 1)};
    CHECK_THROWS_AS(RetrievalIndex::build(std::vector{a, n}), std::invalid_argument);
    const auto idx = RetrievalIndex::build(std::vector{a});
    CHECK_THROWS_AS(idx.query_top_k(c, 1), std::invalid_argument);
    CHECK_THROWS_AS(idx.query_top_k(a, 0), std::invalid_argument);
}

TEST_CASE("query examples") {
    std::mt19937_64 g(2);
    const auto ds = random_descriptors(g, 30, 8);
    const auto idx = RetrievalIndex::build(ds);
    const auto hits = idx.query_top_k(ds[7], 5);
    REQUIRE(hits.size() == 5);
    CHECK(hits[0].id == ds[7].owner);
    CHECK(hits[0].distance < 1e-12);
    auto all = idx.query_top_k(ds[3], 30);
    std::vector<ImageId> ids;
    for (auto &h : all) ids.push_back(h.id);
    std::sort(ids.begin(), ids.end());
    for (int i = 0; i < 30; ++i) CHECK(ids[i] == 1000 + i);
    CHECK(idx.query_top_k(ds[3], 100).size() == 30);
}

TEST_CASE("top-k equals the exhaustive sort oracle and is a prefix of the full ranking") {
    std::mt19937_64 g(3);
    const auto ds = random_descriptors(g, 200, 32);
    const auto idx = RetrievalIndex::build(ds);
    for (int trial = 0; trial < 20; ++trial) {
        GlobalDescriptor q = random_descriptors(g, 1, 32)[0];
        std::vector<std::pair<double, ImageId>> ref;
        const Eigen::VectorXd qn = q.values / q.values.norm();
        for (const auto &d : ds) ref.emplace_back((d.values / d.values.norm() - qn).norm(), d.owner);
        std::sort(ref.begin(), ref.end());
        const auto hits = idx.query_top_k(q, 20);
        REQUIRE(hits.size() == 20);
        for (int i = 0; i < 20; ++i) {
            CHECK(hits[i].id == ref[i].second);
            CHECK(hits[i].distance == doctest::Approx(ref[i].first).epsilon(1e-12));
        }
        const auto full = idx.query_top_k(q, 200);
        for (int i = 0; i < 20; ++i) CHECK(full[i].id == hits[i].id);
        for (size_t i = 1; i < full.size(); ++i) CHECK(full[i - 1].distance <= full[i].distance);
        for (const auto &h : full) {
            CHECK(h.distance >= 0);
            CHECK(h.distance <= 2.0 + 1e-12);
        }
        GlobalDescriptor scaled = q;
        scaled.values *= 37.5;
        const auto s = idx.query_top_k(scaled, 20);
        for (int i = 0; i < 20; ++i) CHECK(s[i].id == hits[i].id);
    }
}

TEST_CASE("ties are broken by image id") {
    GlobalDescriptor a{9, Eigen::Vector2d(1, 0)}, b{4, Eigen::Vector2d(1, 0)}, c{6, Eigen::Vector2d(0, 1)};
    const auto idx = RetrievalIndex::build(std::vector{a, b, c});
    const auto hits = idx.query_top_k(GlobalDescriptor{0, Eigen::Vector2d(1, 0)}, 3);
    CHECK(hits[0].id == 4);
    CHECK(hits[1].id == 9);
    CHECK(hits[2].id == 6);
}

}
