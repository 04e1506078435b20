#include "semloc/evaluation.h"

#include <algorithm>
#include <cstdio>
#include <sstream>
#include <stdexcept>

namespace semloc {

std::vector<ThresholdBucket> day_buckets() {
    return {{0.25, 2.0, "(0.25m, 2deg)"}, {0.5, 5.0, "(0.5m, 5deg)"}, {5.0, 10.0, "(5m, 10deg)"}};
}

std::vector<ThresholdBucket> night_buckets() {
    return {{0.5, 2.0, "(0.5m, 2deg)"}, {1.0, 5.0, "(1m, 5deg)"}, {5.0, 10.0, "(5m, 10deg)"}};
}

namespace {
void check_buckets(const std::vector<ThresholdBucket> &buckets) {
    if (buckets.empty()) throw std::invalid_argument("evaluate: no threshold buckets");
    for (const auto &b : buckets)
        if (!(b.max_position > 0 && b.max_orientation > 0))
            throw std::invalid_argument("evaluate: bucket bounds must be positive");
}
} // namespace

RecallReport evaluate_errors(const std::vector<QueryOutcome> &outcomes, const std::vector<ThresholdBucket> &buckets,
                             const std::string &condition) {
    check_buckets(buckets);
    if (outcomes.empty()) throw std::invalid_argument("evaluate: empty query set");
    RecallReport rep;
    rep.condition = condition;
    rep.buckets = buckets;
    rep.total = outcomes.size();
    rep.outcomes = outcomes;
    std::sort(rep.outcomes.begin(), rep.outcomes.end(),
              [](const QueryOutcome &a, const QueryOutcome &b) { return a.query < b.query; });
    std::vector<size_t> hits(buckets.size(), 0);
    for (const auto &o : rep.outcomes) {
        if (!o.error) {
            rep.failures.push_back(o.query);
            continue;
        }
        for (size_t b = 0; b < buckets.size(); ++b)
            if (o.error->position_error <= buckets[b].max_position &&
                o.error->orientation_error <= buckets[b].max_orientation)
                ++hits[b];
    }
    for (size_t b = 0; b < buckets.size(); ++b)
        rep.percentages.push_back(100.0 * static_cast<double>(hits[b]) / static_cast<double>(rep.total));

    for (size_t b = 1; b < buckets.size(); ++b) {
        const bool nested = buckets[b].max_position >= buckets[b - 1].max_position &&
                            buckets[b].max_orientation >= buckets[b - 1].max_orientation;
        if (nested && rep.percentages[b] < rep.percentages[b - 1])
            throw std::logic_error("evaluate: recall decreased across nested buckets");
    }
    return rep;
}

RecallReport evaluate(const std::map<ImageId, std::optional<RigidPose>> &estimates,
                      const std::map<ImageId, RigidPose> &ground_truth, const std::vector<ThresholdBucket> &buckets,
                      const std::string &condition) {
    for (const auto &[id, _] : estimates)
        if (!ground_truth.contains(id))
            throw std::invalid_argument("evaluate: estimate for unknown query " + std::to_string(id));
    std::vector<QueryOutcome> outcomes;
    for (const auto &[id, gt] : ground_truth) {
        QueryOutcome o;
        o.query = id;
        auto it = estimates.find(id);
        if (it != estimates.end() && it->second) o.error = pose_error(gt, *it->second);
        outcomes.push_back(o);
    }
    return evaluate_errors(outcomes, buckets, condition);
}

std::string format_percentages(const RecallReport &report) {
    std::string out;
    char buf[32];
    for (size_t i = 0; i < report.percentages.size(); ++i) {
        std::snprintf(buf, sizeof(buf), "%.1f", report.percentages[i]);
        if (i) out += " / ";
        out += buf;
    }
    return out;
}

std::string render_report(const std::vector<RecallReport> &reports) {
    std::ostringstream os;
    for (const auto &r : reports) {
        std::string m, deg;
        char buf[32];
        for (size_t i = 0; i < r.buckets.size(); ++i) {
            if (i) {
                m += " / ";
                deg += " / ";
            }
            std::snprintf(buf, sizeof(buf), "%g", r.buckets[i].max_position);
            m += buf;
            std::snprintf(buf, sizeof(buf), "%g", r.buckets[i].max_orientation);
            deg += buf;
        }
        os << r.condition << " (" << r.total << " queries, " << r.failures.size() << " failed)\n";
        os << "  m    " << m << "\n";
        os << "  deg  " << deg << "\n";
        os << "  " << r.condition << "  " << format_percentages(r) << "\n";
    }
    return os.str();
}

} // namespace semloc
