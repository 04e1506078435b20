#include "semloc/retrieval.h"

#include <algorithm>
#include <stdexcept>

namespace semloc {

namespace {
Eigen::VectorXd normalized_or_throw(const Eigen::VectorXd &v) {
    if (!v.allFinite()) throw std::invalid_argument("global descriptor has non-finite values");
    const double n = v.norm();
    if (!(n > 0)) throw std::invalid_argument("global descriptor has zero norm");
    return v / n;
}
} // namespace

RetrievalIndex RetrievalIndex::build(std::span<const GlobalDescriptor> descriptors) {
    if (descriptors.empty()) throw std::invalid_argument("retrieval index: no descriptors");
    const Eigen::Index dim = descriptors.front().values.size();
    if (dim < 1) throw std::invalid_argument("retrieval index: empty descriptor");
    RetrievalIndex index;
    index.vectors_.resize(dim, static_cast<Eigen::Index>(descriptors.size()));
    for (size_t i = 0; i < descriptors.size(); ++i) {
        if (descriptors[i].values.size() != dim) throw std::invalid_argument("retrieval index: dimension mismatch");
        index.vectors_.col(static_cast<Eigen::Index>(i)) = normalized_or_throw(descriptors[i].values);
        index.ids_.push_back(descriptors[i].owner);
    }
    return index;
}

std::vector<RetrievalHit> RetrievalIndex::query_top_k(const GlobalDescriptor &q, int k) const {
    if (q.values.size() != vectors_.rows()) throw std::invalid_argument("retrieval query: dimension mismatch");
    if (k < 1) throw std::invalid_argument("retrieval query: k must be >= 1");
    const Eigen::VectorXd qn = normalized_or_throw(q.values);
    std::vector<RetrievalHit> hits;
    hits.reserve(ids_.size());
    for (size_t i = 0; i < ids_.size(); ++i)
        hits.push_back({ids_[i], (vectors_.col(static_cast<Eigen::Index>(i)) - qn).norm()});
    const size_t n = std::min(static_cast<size_t>(k), hits.size());
    std::partial_sort(hits.begin(), hits.begin() + static_cast<long>(n), hits.end(),
                      [](const RetrievalHit &a, const RetrievalHit &b) {
                          return a.distance < b.distance || (a.distance == b.distance && a.id < b.id);
                      });
    hits.resize(n);
    return hits;
}

} // namespace semloc
