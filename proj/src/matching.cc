#include "semloc/matching.h"

#include <cmath>
#include <limits>
#include <stdexcept>

namespace semloc {

namespace {

void check_family(const FeatureSet &set, const FeatureFamily &family, const char *which) {
    set.validate();
    if (set.family != family.name)
        throw std::invalid_argument(std::string("match_family: ") + which + " set belongs to '" + set.family +
                                    "', expected '" + family.name + "'");
    if (set.size() > 0 && set.dim() != family.dim)
        throw std::invalid_argument(std::string("match_family: ") + which + " descriptor dimension mismatch");
}

double sq_distance(const Eigen::MatrixXf &a, Eigen::Index i, const Eigen::MatrixXf &b, Eigen::Index j) {
    double s = 0.0;
    for (Eigen::Index k = 0; k < a.rows(); ++k) {
        const double d = static_cast<double>(a(k, i)) - static_cast<double>(b(k, j));
        s += d * d;
    }
    return s;
}

struct Nearest {
    int best = -1;
    double d1 = std::numeric_limits<double>::infinity();
    double d2 = std::numeric_limits<double>::infinity();

    void offer(int idx, double d) {
        if (d < d1) {
            d2 = d1;
            d1 = d;
            best = idx;
        } else if (d < d2) {
            d2 = d;
        }
    }
};

// dist is row-major query x db, squared distances.
std::vector<Match2D2D> select_matches(const std::vector<double> &dist, int nq, int nd, const FeatureFamily &family) {
    std::vector<Nearest> row(nq), col(nd);
    for (int i = 0; i < nq; ++i)
        for (int j = 0; j < nd; ++j) {
            const double d = dist[static_cast<size_t>(i) * nd + j];
            row[i].offer(j, d);
            col[j].offer(i, d);
        }
    std::vector<Match2D2D> out;
    for (int i = 0; i < nq; ++i) {
        const Nearest &r = row[i];
        if (r.best < 0) continue;
        const double d1 = std::sqrt(r.d1);
        if (family.ratio && nd >= 2) {
            const double d2 = std::sqrt(r.d2);
            if (!(d1 < *family.ratio * d2)) continue;
        }
        if (family.use_mutual_nn && col[r.best].best != i) continue;
        out.push_back({i, r.best, d1});
    }
    return out;
}

} // namespace

std::vector<Match2D2D> match_family(const FeatureSet &query, const FeatureSet &db, const FeatureFamily &family) {
    check_family(query, family, "query");
    check_family(db, family, "database");
    const int nq = static_cast<int>(query.size());
    const int nd = static_cast<int>(db.size());
    std::vector<double> dist(static_cast<size_t>(nq) * nd);
#pragma omp parallel for schedule(static)
    for (int i = 0; i < nq; ++i)
        for (int j = 0; j < nd; ++j) dist[static_cast<size_t>(i) * nd + j] = sq_distance(query.descriptors, i, db.descriptors, j);
    return select_matches(dist, nq, nd, family);
}

namespace serial {
std::vector<Match2D2D> match_family(const FeatureSet &query, const FeatureSet &db, const FeatureFamily &family) {
    check_family(query, family, "query");
    check_family(db, family, "database");
    const int nq = static_cast<int>(query.size());
    const int nd = static_cast<int>(db.size());
    std::vector<double> dist(static_cast<size_t>(nq) * nd);
    for (int i = 0; i < nq; ++i)
        for (int j = 0; j < nd; ++j) dist[static_cast<size_t>(i) * nd + j] = sq_distance(query.descriptors, i, db.descriptors, j);
    return select_matches(dist, nq, nd, family);
}
} // namespace serial

LiftResult lift_to_3d(std::span<const Match2D2D> matches, const FeatureSet &query, const FeatureSet &db,
                      const DatabaseImageRecord &record) {
    LiftResult out;
    out.correspondences.reserve(matches.size());
    for (const auto &m : matches) {
        if (m.query_index < 0 || static_cast<size_t>(m.query_index) >= query.size() || m.db_index < 0 ||
            static_cast<size_t>(m.db_index) >= db.size())
            throw std::out_of_range("lift_to_3d: match index out of range");
        const ImagePoint &kp = db.locations[m.db_index];
        const long u = nearest_pixel(kp.x());
        const long v = nearest_pixel(kp.y());
        if (!record.depth.contains(u, v)) {
            ++out.outside_image;
            continue;
        }
        const double d = record.depth.at(u, v);
        if (!(d > 0)) {
            ++out.invalid_depth;
            continue;
        }
        Correspondence2D3D c;
        c.query_pixel = query.locations[m.query_index];
        c.world_point = back_project(kp, d, record.pose, record.intrinsics);
        c.source_image = record.id;
        c.family = db.family;
        c.weight = 1.0;
        out.correspondences.push_back(std::move(c));
    }
    return out;
}

std::vector<Correspondence2D3D> merge_hybrid(std::span<const std::vector<Correspondence2D3D>> per_family) {
    std::vector<Correspondence2D3D> out;
    size_t n = 0;
    for (const auto &v : per_family) n += v.size();
    out.reserve(n);
    for (const auto &v : per_family) out.insert(out.end(), v.begin(), v.end());
    return out;
}

} // namespace semloc
