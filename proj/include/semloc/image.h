#pragma once

#include <cstdint>
#include <set>
#include <stdexcept>
#include <vector>

namespace semloc {

// Row-major grid; pixel (u, v) is column u, row v with its center at integer coordinates.
template <typename T> struct Grid {
    int width = 0;
    int height = 0;
    std::vector<T> values;

    Grid() = default;
    Grid(int w, int h, T fill) : width(w), height(h), values(static_cast<size_t>(w) * h, fill) {
        if (w < 0 || h < 0) throw std::invalid_argument("Grid: negative dimension");
    }

    bool contains(long u, long v) const { return u >= 0 && v >= 0 && u < width && v < height; }
    T &at(long u, long v) { return values[static_cast<size_t>(v) * width + u]; }
    const T &at(long u, long v) const { return values[static_cast<size_t>(v) * width + u]; }
    size_t size() const { return values.size(); }

    bool operator==(const Grid &) const = default;
};

// Depth along the optical axis in meters; values <= 0 are invalid.
struct DepthMap : Grid<double> {
    using Grid<double>::Grid;
    bool valid_at(long u, long v) const { return contains(u, v) && at(u, v) > 0; }
    size_t valid_count() const;
};

constexpr std::uint8_t kUnlabeled = 255;

// Cityscapes train ids.
namespace cityscapes {
enum : std::uint8_t {
    road = 0,
    sidewalk = 1,
    building = 2,
    wall = 3,
    fence = 4,
    pole = 5,
    traffic_light = 6,
    traffic_sign = 7,
    vegetation = 8,
    terrain = 9,
    sky = 10,
    person = 11,
    rider = 12,
    car = 13,
    truck = 14,
    bus = 15,
    train = 16,
    motorcycle = 17,
    bicycle = 18,
};
constexpr int kNumClasses = 19;
} // namespace cityscapes

inline bool is_valid_label(std::uint8_t l) { return l < cityscapes::kNumClasses || l == kUnlabeled; }

struct LabelImage : Grid<std::uint8_t> {
    using Grid<std::uint8_t>::Grid;
};

// Dynamic objects plus sky.
std::set<std::uint8_t> default_unstable_classes();

} // namespace semloc
