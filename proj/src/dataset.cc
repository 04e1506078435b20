#include "semloc/dataset.h"

#include <algorithm>
#include <stdexcept>

namespace semloc {

size_t DepthMap::valid_count() const {
    return static_cast<size_t>(std::count_if(values.begin(), values.end(), [](double d) { return d > 0; }));
}

std::set<std::uint8_t> default_unstable_classes() {
    using namespace cityscapes;
    return {person, rider, car, truck, bus, train, motorcycle, bicycle, sky};
}

void FeatureFamily::validate() const {
    if (name.empty()) throw std::invalid_argument("feature family: empty name");
    if (dim < 1) throw std::invalid_argument("feature family '" + name + "': dimension must be >= 1");
    if (ratio && !(*ratio > 0 && *ratio <= 1))
        throw std::invalid_argument("feature family '" + name + "': ratio must lie in (0, 1]");
}

void FeatureSet::validate() const {
    if (static_cast<size_t>(descriptors.cols()) != locations.size())
        throw std::invalid_argument("feature set '" + family + "': descriptor count differs from keypoint count");
}

void DatabaseImageRecord::validate() const {
    if (!intrinsics.valid()) throw std::invalid_argument("image " + std::to_string(id) + ": invalid intrinsics");
    if (depth.width != intrinsics.width || depth.height != intrinsics.height)
        throw std::invalid_argument("image " + std::to_string(id) + ": depth map size differs from intrinsics");
    if (labels.width != intrinsics.width || labels.height != intrinsics.height)
        throw std::invalid_argument("image " + std::to_string(id) + ": label image size differs from intrinsics");
}

const char *condition_name(Condition c) { return c == Condition::Day ? "day" : "night"; }

Condition parse_condition(const std::string &s) {
    if (s == "day") return Condition::Day;
    if (s == "night") return Condition::Night;
    throw std::invalid_argument("unknown condition tag '" + s + "'");
}

const DatabaseImageRecord &Dataset::database_image(ImageId id) const {
    for (const auto &r : database)
        if (r.id == id) return r;
    throw std::out_of_range("unknown database image id " + std::to_string(id));
}

} // namespace semloc
