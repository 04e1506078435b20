#pragma once

#include "semloc/dataset.h"

#include <span>
#include <utility>
#include <vector>

namespace semloc {

struct RetrievalConfig {
    int top_k_day = 20;
    int top_k_night = 30;

    int top_k(Condition c) const { return c == Condition::Day ? top_k_day : top_k_night; }
};

struct RetrievalHit {
    ImageId id;
    double distance;
};

// Exhaustive index over L2-normalized global descriptors.
class RetrievalIndex {
  public:
    // Throws on empty input, mixed dimensions, non-finite values or zero-norm vectors.
    static RetrievalIndex build(std::span<const GlobalDescriptor> descriptors);

    // Ascending normalized-L2 distance, ties by image id; min(k, size) results.
    std::vector<RetrievalHit> query_top_k(const GlobalDescriptor &q, int k) const;

    size_t size() const { return ids_.size(); }
    int dim() const { return static_cast<int>(vectors_.rows()); }
    ImageId id(size_t i) const { return ids_[i]; }
    Eigen::VectorXd vector(size_t i) const { return vectors_.col(static_cast<Eigen::Index>(i)); }

  private:
    std::vector<ImageId> ids_;
    Eigen::MatrixXd vectors_; // dim x count
};

} // namespace semloc
