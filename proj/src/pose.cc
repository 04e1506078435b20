#include "semloc/pose.h"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <stdexcept>

namespace semloc {

RansacConfig RansacConfig::temporary_pose_defaults() {
    RansacConfig cfg;
    cfg.min_inliers = 6;
    return cfg;
}

void RansacConfig::validate() const {
    if (!(inlier_threshold_px > 0)) throw std::invalid_argument("ransac: inlier threshold must be positive");
    if (!(confidence > 0 && confidence < 1)) throw std::invalid_argument("ransac: confidence must lie in (0, 1)");
    if (max_iterations < 1) throw std::invalid_argument("ransac: max_iterations must be >= 1");
    if (min_inliers < 0) throw std::invalid_argument("ransac: min_inliers must be >= 0");
}

double reprojection_error(const RigidPose &pose, const CameraIntrinsics &K, const ImagePoint &x, const WorldPoint &X) {
    const auto q = project(X, pose, K);
    if (!q) return std::numeric_limits<double>::infinity();
    return (*q - x).norm();
}

// ---------------------------------------------------------------------------------------------
// P3P

namespace {

// Coefficients, lowest degree first.
template <size_t N> using Poly = std::array<double, N>;

template <size_t A, size_t B> Poly<A + B - 1> poly_mul(const Poly<A> &a, const Poly<B> &b) {
    Poly<A + B - 1> r{};
    for (size_t i = 0; i < A; ++i)
        for (size_t j = 0; j < B; ++j) r[i + j] += a[i] * b[j];
    return r;
}

template <size_t N> double poly_eval(const Poly<N> &p, double x) {
    double r = 0.0;
    for (size_t i = N; i-- > 0;) r = r * x + p[i];
    return r;
}

template <size_t N> double poly_deriv_eval(const Poly<N> &p, double x) {
    double r = 0.0;
    for (size_t i = N; i-- > 1;) r = r * x + static_cast<double>(i) * p[i];
    return r;
}

// Root of p in [lo, hi] given a sign change, by Newton steps safeguarded with bisection.
template <size_t N> double bracketed_root(const Poly<N> &p, double lo, double hi) {
    double flo = poly_eval(p, lo);
    if (flo == 0.0) return lo;
    double x = 0.5 * (lo + hi);
    for (int it = 0; it < 200; ++it) {
        const double f = poly_eval(p, x);
        if (f == 0.0) return x;
        if ((f < 0) == (flo < 0)) {
            lo = x;
            flo = f;
        } else {
            hi = x;
        }
        const double d = poly_deriv_eval(p, x);
        double next = d != 0.0 ? x - f / d : 0.5 * (lo + hi);
        if (!(next > lo && next < hi)) next = 0.5 * (lo + hi);
        if (std::abs(next - x) <= 1e-16 * std::max(1.0, std::abs(x)) || hi - lo <= 1e-16 * std::max(1.0, std::abs(x)))
            return next;
        x = next;
    }
    return x;
}

template <size_t N> Poly<N - 1> derivative(const Poly<N> &p) {
    Poly<N - 1> d{};
    for (size_t i = 1; i < N; ++i) d[i - 1] = static_cast<double>(i) * p[i];
    return d;
}

// Sorted real roots of a polynomial with at most N - 1 roots. Critical points of the derivative split
// the line into monotone pieces; a root is taken from each piece with a sign change, plus any critical
// point where the polynomial touches zero.
template <size_t N> int real_roots(const Poly<N> &p, std::array<double, N - 1> &roots) {
    if constexpr (N <= 1) {
        return 0;
    } else {
        double scale = 0.0;
        for (double c : p) scale = std::max(scale, std::abs(c));
        if (scale == 0.0) return 0;
        if (std::abs(p[N - 1]) <= 1e-14 * scale) {
            Poly<N - 1> lower{};
            for (size_t i = 0; i + 1 < N; ++i) lower[i] = p[i];
            std::array<double, N - 2> r{};
            const int n = real_roots(lower, r);
            for (int i = 0; i < n; ++i) roots[i] = r[i];
            return n;
        }
        if constexpr (N == 2) {
            roots[0] = -p[0] / p[1];
            return 1;
        } else {
            std::array<double, N - 2> crit{};
            const int nc = real_roots(derivative(p), crit);
            double bound = 0.0;
            for (size_t i = 0; i + 1 < N; ++i) bound = std::max(bound, std::abs(p[i] / p[N - 1]));
            bound += 1.0;
            std::array<double, N> knots{};
            int nk = 0;
            knots[nk++] = -bound;
            for (int i = 0; i < nc; ++i) knots[nk++] = std::clamp(crit[i], -bound, bound);
            knots[nk++] = bound;
            int n = 0;
            const double touch = 1e-13 * scale;
            for (int i = 0; i + 1 < nk && n < static_cast<int>(N) - 1; ++i) {
                const double lo = knots[i], hi = knots[i + 1];
                const double flo = poly_eval(p, lo), fhi = poly_eval(p, hi);
                if (i > 0 && std::abs(flo) <= touch) {
                    if (n == 0 || roots[n - 1] != lo) roots[n++] = lo;
                    continue;
                }
                if (hi > lo && (flo < 0) != (fhi < 0) && std::abs(fhi) > touch) roots[n++] = bracketed_root(p, lo, hi);
            }
            return n;
        }
    }
}

// Refines distances along the bearings so the pairwise distances match the world triangle.
Eigen::Vector3d polish_distances(Eigen::Vector3d s, const Eigen::Vector3d &cosines, const Eigen::Vector3d &sq_dist) {
    // Pairs (1,2), (0,2), (0,1) with cosines (alpha, beta, gamma) and squared lengths (a^2, b^2, c^2).
    constexpr int pairs[3][2] = {{1, 2}, {0, 2}, {0, 1}};
    for (int it = 0; it < 6; ++it) {
        Eigen::Vector3d f;
        Eigen::Matrix3d J = Eigen::Matrix3d::Zero();
        for (int k = 0; k < 3; ++k) {
            const int i = pairs[k][0], j = pairs[k][1];
            f[k] = s[i] * s[i] + s[j] * s[j] - 2.0 * s[i] * s[j] * cosines[k] - sq_dist[k];
            J(k, i) = 2.0 * s[i] - 2.0 * s[j] * cosines[k];
            J(k, j) = 2.0 * s[j] - 2.0 * s[i] * cosines[k];
        }
        if (f.cwiseAbs().maxCoeff() <= 1e-15 * sq_dist.maxCoeff()) break;
        const Eigen::Vector3d step = J.inverse() * f;
        if (!step.allFinite()) break;
        s -= step;
        if (step.norm() <= 1e-15 * s.norm()) break;
    }
    return s;
}

Eigen::Matrix3d triangle_frame(const Eigen::Vector3d &a, const Eigen::Vector3d &b, const Eigen::Vector3d &c) {
    Eigen::Matrix3d F;
    F.col(0) = (b - a).normalized();
    F.col(2) = F.col(0).cross(c - a).normalized();
    F.col(1) = F.col(2).cross(F.col(0));
    return F;
}

// Rigid transform with cam = R * world + t from three non-collinear pairs of congruent triangles.
RigidPose align_triangles(const std::array<Eigen::Vector3d, 3> &cam, const std::array<WorldPoint, 3> &world) {
    const Eigen::Matrix3d R = triangle_frame(cam[0], cam[1], cam[2]) *
                              triangle_frame(world[0], world[1], world[2]).transpose();
    const Eigen::Vector3d mc = (cam[0] + cam[1] + cam[2]) / 3.0;
    const Eigen::Vector3d mw = (world[0] + world[1] + world[2]) / 3.0;
    return RigidPose(R, mw - R.transpose() * mc);
}

Eigen::Vector3d bearing(const ImagePoint &x, const CameraIntrinsics &K) {
    return Eigen::Vector3d((x.x() - K.cx) / K.fx, (x.y() - K.cy) / K.fy, 1.0).normalized();
}

double triangle_area(const WorldPoint &a, const WorldPoint &b, const WorldPoint &c) {
    return 0.5 * (b - a).cross(c - a).norm();
}

} // namespace

std::vector<RigidPose> solve_p3p(const std::array<ImagePoint, 3> &pixels, const std::array<WorldPoint, 3> &points,
                                 const CameraIntrinsics &K) {
    if (!(triangle_area(points[0], points[1], points[2]) > 1e-12))
        throw std::invalid_argument("solve_p3p: world points are collinear");
    std::array<Eigen::Vector3d, 3> f;
    for (int i = 0; i < 3; ++i) {
        if (!pixels[i].allFinite() || !points[i].allFinite()) throw std::invalid_argument("solve_p3p: non-finite input");
        f[i] = bearing(pixels[i], K);
    }
    for (int i = 0; i < 3; ++i)
        for (int j = i + 1; j < 3; ++j)
            if (angle_between(f[i], f[j]) < 1e-9) throw std::invalid_argument("solve_p3p: degenerate bearing vectors");

    const double cos_a = f[1].dot(f[2]);
    const double cos_b = f[0].dot(f[2]);
    const double cos_g = f[0].dot(f[1]);
    const double a2 = (points[1] - points[2]).squaredNorm();
    const double b2 = (points[0] - points[2]).squaredNorm();
    const double c2 = (points[0] - points[1]).squaredNorm();

    // With s2 = u s1, s3 = v s1: eliminate u from the two ratios of the cosine laws.
    const double k = (c2 - a2) / b2;
    const Poly<3> Q = {1.0, -2.0 * cos_b, 1.0};
    const Poly<3> N = {k - 1.0, -2.0 * k * cos_b, 1.0 + k};
    const Poly<2> D = {-2.0 * cos_g, 2.0 * cos_a};
    const Poly<3> E = {1.0 - c2 / b2 * Q[0], -c2 / b2 * Q[1], -c2 / b2 * Q[2]};
    const Poly<5> NN = poly_mul(N, N);
    const Poly<4> ND = poly_mul(N, D);
    const Poly<5> EDD = poly_mul(E, poly_mul(D, D));
    Poly<5> F{};
    for (int i = 0; i < 5; ++i) F[i] = NN[i] + EDD[i] + (i < 4 ? -2.0 * cos_g * ND[i] : 0.0);

    const Eigen::Vector3d cosines(cos_a, cos_b, cos_g);
    const Eigen::Vector3d sq(a2, b2, c2);
    std::vector<RigidPose> out;
    std::array<double, 4> roots{};
    const int nroots = real_roots(F, roots);
    for (int r = 0; r < nroots; ++r) {
        const double v = roots[r];
        const double d = poly_eval(D, v);
        const double q = poly_eval(Q, v);
        if (!(q > 0)) continue;
        const double s1 = std::sqrt(b2 / q);
        std::array<double, 2> us{};
        int nu = 0;
        if (std::abs(d) > 1e-6) {
            us[nu++] = poly_eval(N, v) / d;
        } else {
            // u drops out of the elimination here (symmetric configurations); take it from the c^2 law instead.
            const double disc = cos_g * cos_g - 1.0 + c2 / (s1 * s1);
            if (disc < 0) continue;
            us[nu++] = cos_g + std::sqrt(disc);
            us[nu++] = cos_g - std::sqrt(disc);
        }
        for (int j = 0; j < nu; ++j) {
            Eigen::Vector3d s(s1, us[j] * s1, v * s1);
            if (!(s.minCoeff() > 0)) continue;
            s = polish_distances(s, cosines, sq);
            if (!s.allFinite() || !(s.minCoeff() > 0)) continue;
            const RigidPose pose = align_triangles({s[0] * f[0], s[1] * f[1], s[2] * f[2]}, points);
            bool ok = pose.rotation.allFinite() && pose.center.allFinite();
            for (int i = 0; ok && i < 3; ++i) ok = reprojection_error(pose, K, pixels[i], points[i]) < 1e-6;
            if (!ok) continue;
            const bool duplicate = std::any_of(out.begin(), out.end(), [&](const RigidPose &p) {
                return (p.rotation - pose.rotation).cwiseAbs().maxCoeff() < 1e-9 && (p.center - pose.center).norm() < 1e-9;
            });
            if (!duplicate) out.push_back(pose);
        }
    }
    return out;
}

std::vector<RigidPose> solve_p3p(std::span<const Correspondence2D3D, 3> corrs, const CameraIntrinsics &K) {
    return solve_p3p({corrs[0].query_pixel, corrs[1].query_pixel, corrs[2].query_pixel},
                     {corrs[0].world_point, corrs[1].world_point, corrs[2].world_point}, K);
}

std::optional<RigidPose> solve_dlt(std::span<const ImagePoint> pixels, std::span<const WorldPoint> points,
                                   const CameraIntrinsics &K) {
    const size_t n = pixels.size();
    if (n < 6 || points.size() != n) return std::nullopt;
    Eigen::Vector3d mean = Eigen::Vector3d::Zero();
    for (const auto &X : points) mean += X;
    mean /= static_cast<double>(n);
    double spread = 0.0;
    for (const auto &X : points) spread += (X - mean).norm();
    spread /= static_cast<double>(n);
    if (!(spread > 0)) return std::nullopt;

    Eigen::MatrixXd A(2 * n, 12);
    for (size_t i = 0; i < n; ++i) {
        const Eigen::Vector4d Xh(((points[i] - mean) / spread).homogeneous());
        const double mx = (pixels[i].x() - K.cx) / K.fx;
        const double my = (pixels[i].y() - K.cy) / K.fy;
        A.row(2 * i) << -Xh.transpose(), Eigen::RowVector4d::Zero(), mx * Xh.transpose();
        A.row(2 * i + 1) << Eigen::RowVector4d::Zero(), -Xh.transpose(), my * Xh.transpose();
    }
    Eigen::JacobiSVD<Eigen::MatrixXd> svd(A, Eigen::ComputeFullV);
    const Eigen::VectorXd p = svd.matrixV().col(11);
    Eigen::Matrix<double, 3, 4> P;
    P.row(0) = p.segment<4>(0).transpose();
    P.row(1) = p.segment<4>(4).transpose();
    P.row(2) = p.segment<4>(8).transpose();

    int in_front = 0;
    for (const auto &X : points) in_front += P.row(2).dot(((X - mean) / spread).homogeneous()) > 0 ? 1 : -1;
    if (in_front < 0) P = -P;

    const Eigen::Matrix3d M = P.leftCols<3>();
    Eigen::JacobiSVD<Eigen::Matrix3d> msvd(M, Eigen::ComputeFullU | Eigen::ComputeFullV);
    Eigen::Matrix3d Dg = Eigen::Matrix3d::Identity();
    Dg(2, 2) = (msvd.matrixU() * msvd.matrixV().transpose()).determinant() < 0 ? -1.0 : 1.0;
    const Eigen::Matrix3d R = msvd.matrixU() * Dg * msvd.matrixV().transpose();
    const double sv = msvd.singularValues().sum() / 3.0;
    if (!(sv > 0)) return std::nullopt;
    const double lambda = spread / sv;
    const Eigen::Vector3d t = lambda * (P.col(3) - M * mean / spread);
    RigidPose pose(R, -R.transpose() * t);
    if (!pose.valid(1e-6)) return std::nullopt;
    return pose;
}

// ---------------------------------------------------------------------------------------------
// Sampling

MinimalSampler::MinimalSampler(std::span<const double> weights, std::uint64_t seed)
    : weights_(weights.begin(), weights.end()), rng_(seed) {
    if (weights_.empty()) throw std::invalid_argument("MinimalSampler: no weights");
    double total = 0.0;
    cumulative_.reserve(weights_.size());
    for (double w : weights_) {
        if (!std::isfinite(w) || w < 0) throw std::invalid_argument("MinimalSampler: weights must be finite and >= 0");
        total += w;
        cumulative_.push_back(total);
        positive_ += w > 0;
        uniform_ = uniform_ && w == weights_.front();
    }
    if (uniform_ && weights_.front() == 0.0) positive_ = 0;
}

double MinimalSampler::uniform01() { return static_cast<double>(rng_() >> 11) * 0x1.0p-53; }

int MinimalSampler::draw_one() {
    const size_t n = weights_.size();
    if (uniform_) return static_cast<int>(std::min(n - 1, static_cast<size_t>(uniform01() * static_cast<double>(n))));
    const double r = uniform01() * cumulative_.back();
    const auto it = std::upper_bound(cumulative_.begin(), cumulative_.end(), r);
    size_t idx = static_cast<size_t>(it - cumulative_.begin());
    if (idx >= n) idx = n - 1;
    while (weights_[idx] == 0.0 && idx > 0) --idx; // r landed exactly on the total
    return static_cast<int>(idx);
}

void MinimalSampler::sample(std::span<int> out) {
    const size_t n = weights_.size();
    if (out.size() > n) throw std::invalid_argument("MinimalSampler: sample larger than population");
    size_t positive_left = uniform_ ? n : positive_;
    for (size_t k = 0; k < out.size(); ++k) {
        const auto taken = [&](int idx) { return std::find(out.begin(), out.begin() + k, idx) != out.begin() + k; };
        int idx;
        if (positive_left > 0) {
            // Rejecting repeats is the same as renormalizing over the remaining indices.
            do idx = draw_one();
            while (taken(idx));
        } else {
            // No weight left: uniform over the remaining indices.
            std::vector<int> rest;
            for (size_t i = 0; i < n; ++i)
                if (!taken(static_cast<int>(i))) rest.push_back(static_cast<int>(i));
            idx = rest[std::min(rest.size() - 1, static_cast<size_t>(uniform01() * static_cast<double>(rest.size())))];
        }
        out[k] = idx;
        if (uniform_ || weights_[idx] > 0) --positive_left;
    }
}

// ---------------------------------------------------------------------------------------------
// RANSAC

namespace {

struct Hypothesis {
    RigidPose pose;
    std::vector<int> inliers;
    double mean_error = std::numeric_limits<double>::infinity();
};

// Returns false when the pose cannot reach `to_beat` inliers.
bool score_hypothesis(const RigidPose &pose, std::span<const Correspondence2D3D> corrs, const CameraIntrinsics &K,
                      double threshold, Hypothesis &h, size_t to_beat = 0) {
    h.pose = pose;
    h.inliers.clear();
    const Eigen::Matrix3d &R = pose.rotation;
    const Eigen::Vector3d t = -(R * pose.center);
    const double t2 = threshold * threshold;
    const size_t n = corrs.size();
    double sum = 0.0;
    for (size_t i = 0; i < n; ++i) {
        if (h.inliers.size() + (n - i) < to_beat) return false;
        const Eigen::Vector3d p = R * corrs[i].world_point + t;
        if (!(p.z() > 0)) continue;
        const double dx = K.fx * p.x() / p.z() + K.cx - corrs[i].query_pixel.x();
        const double dy = K.fy * p.y() / p.z() + K.cy - corrs[i].query_pixel.y();
        const double e2 = dx * dx + dy * dy;
        if (e2 < t2) {
            h.inliers.push_back(static_cast<int>(i));
            sum += std::sqrt(e2);
        }
    }
    h.mean_error = h.inliers.empty() ? std::numeric_limits<double>::infinity()
                                     : sum / static_cast<double>(h.inliers.size());
    return true;
}

bool better(const Hypothesis &a, const Hypothesis &b) {
    if (a.inliers.size() != b.inliers.size()) return a.inliers.size() > b.inliers.size();
    return a.mean_error < b.mean_error;
}

bool degenerate_sample(std::span<const Correspondence2D3D> corrs, std::span<const int> idx, double min_spread_px) {
    const WorldPoint &A = corrs[idx[0]].world_point, &B = corrs[idx[1]].world_point, &C = corrs[idx[2]].world_point;
    const double longest = std::max({(B - A).squaredNorm(), (C - A).squaredNorm(), (C - B).squaredNorm()});
    const double area = triangle_area(A, B, C);
    if (!(area > 1e-12) || area < 1e-6 * longest) return true;
    double spread = 0.0;
    for (int i = 0; i < 3; ++i)
        for (int j = i + 1; j < 3; ++j)
            spread = std::max(spread, (corrs[idx[i]].query_pixel - corrs[idx[j]].query_pixel).norm());
    return spread < min_spread_px;
}

int required_iterations(double inlier_ratio, double confidence, int sample_size) {
    const double p = std::pow(inlier_ratio, sample_size);
    if (p >= 1.0) return 1;
    if (p <= 0.0) return std::numeric_limits<int>::max();
    const double n = std::log(1.0 - confidence) / std::log(1.0 - p);
    return n >= static_cast<double>(std::numeric_limits<int>::max()) ? std::numeric_limits<int>::max()
                                                                      : static_cast<int>(std::ceil(n));
}

std::optional<PnPSolution> ransac(std::span<const Correspondence2D3D> corrs, const CameraIntrinsics &K,
                                  const RansacConfig &cfg, std::span<const double> weights) {
    constexpr int kDegenerateBeforeDlt = 50;
    MinimalSampler sampler(weights, cfg.seed);
    Hypothesis best, candidate;
    int limit = cfg.max_iterations;
    int consecutive_degenerate = 0;
    int it = 0;
    std::array<int, 3> idx{};
    std::array<int, 6> idx6{};
    for (; it < limit; ++it) {
        std::vector<RigidPose> models;
        if (consecutive_degenerate >= kDegenerateBeforeDlt && corrs.size() >= 6) {
            sampler.sample(idx6);
            std::array<ImagePoint, 6> px;
            std::array<WorldPoint, 6> pts;
            for (int i = 0; i < 6; ++i) {
                px[i] = corrs[idx6[i]].query_pixel;
                pts[i] = corrs[idx6[i]].world_point;
            }
            if (auto p = solve_dlt(px, pts, K)) models.push_back(*p);
            consecutive_degenerate = 0;
        } else {
            sampler.sample(idx);
            if (degenerate_sample(corrs, idx, cfg.min_sample_spread_px)) {
                ++consecutive_degenerate;
                continue;
            }
            try {
                models = solve_p3p({corrs[idx[0]].query_pixel, corrs[idx[1]].query_pixel, corrs[idx[2]].query_pixel},
                                   {corrs[idx[0]].world_point, corrs[idx[1]].world_point, corrs[idx[2]].world_point}, K);
            } catch (const std::invalid_argument &) {
                ++consecutive_degenerate;
                continue;
            }
            consecutive_degenerate = 0;
        }
        for (const auto &m : models) {
            if (!score_hypothesis(m, corrs, K, cfg.inlier_threshold_px, candidate, best.inliers.size())) continue;
            if (better(candidate, best)) {
                std::swap(best, candidate);
                if (cfg.adaptive_stopping) {
                    const double ratio = static_cast<double>(best.inliers.size()) / static_cast<double>(corrs.size());
                    limit = std::min(cfg.max_iterations, std::max(it + 1, required_iterations(ratio, cfg.confidence, 3)));
                }
            }
        }
    }
    if (best.inliers.empty() || best.inliers.size() < static_cast<size_t>(cfg.min_inliers)) return std::nullopt;

    // Re-verify so the solution honours its own inlier contract.
    Hypothesis check;
    score_hypothesis(best.pose, corrs, K, cfg.inlier_threshold_px, check);
    PnPSolution sol;
    sol.pose = best.pose;
    sol.inliers = std::move(check.inliers);
    sol.mean_error_px = check.mean_error;
    sol.iterations = it;
    return sol;
}

} // namespace

std::optional<PnPSolution> estimate_temporary_pose(std::span<const Correspondence2D3D> corrs,
                                                   const CameraIntrinsics &K, const RansacConfig &cfg) {
    cfg.validate();
    if (corrs.size() < 4) return std::nullopt;
    const std::vector<double> weights(corrs.size(), 1.0);
    return ransac(corrs, K, cfg, weights);
}

std::optional<PnPSolution> weighted_ransac_pnp(std::span<const Correspondence2D3D> corrs, const CameraIntrinsics &K,
                                               const RansacConfig &cfg) {
    cfg.validate();
    if (corrs.size() < 4) throw std::invalid_argument("weighted_ransac_pnp: need at least 4 correspondences");
    std::vector<double> weights;
    weights.reserve(corrs.size());
    double total = 0.0;
    for (const auto &c : corrs) {
        if (!std::isfinite(c.weight) || c.weight < 0) throw std::invalid_argument("weighted_ransac_pnp: invalid weight");
        weights.push_back(c.weight);
        total += c.weight;
    }
    if (std::abs(total - 1.0) > 1e-6) throw std::invalid_argument("weighted_ransac_pnp: weights must sum to one");
    return ransac(corrs, K, cfg, weights);
}

// ---------------------------------------------------------------------------------------------
// Refinement

RigidPose apply_update(const RigidPose &pose, const PoseUpdate &delta) {
    RigidPose out(exp_so3(delta.head<3>()) * pose.rotation, pose.center + delta.tail<3>());
    // Re-orthonormalize to keep drift out of long runs.
    Eigen::JacobiSVD<Eigen::Matrix3d> svd(out.rotation, Eigen::ComputeFullU | Eigen::ComputeFullV);
    out.rotation = svd.matrixU() * svd.matrixV().transpose();
    return out;
}

Eigen::Vector2d reprojection_residual(const RigidPose &pose, const CameraIntrinsics &K, const ImagePoint &x,
                                      const WorldPoint &X) {
    const Eigen::Vector3d p = pose.to_camera(X);
    return Eigen::Vector2d(K.fx * p.x() / p.z() + K.cx - x.x(), K.fy * p.y() / p.z() + K.cy - x.y());
}

Eigen::Matrix<double, 2, 6> reprojection_jacobian(const RigidPose &pose, const CameraIntrinsics &K,
                                                  const WorldPoint &X) {
    const Eigen::Vector3d p = pose.to_camera(X);
    const double iz = 1.0 / p.z();
    Eigen::Matrix<double, 2, 3> dproj;
    dproj << K.fx * iz, 0.0, -K.fx * p.x() * iz * iz, 0.0, K.fy * iz, -K.fy * p.y() * iz * iz;
    Eigen::Matrix<double, 3, 6> dp;
    dp.leftCols<3>() = -skew(p);
    dp.rightCols<3>() = -pose.rotation;
    return dproj * dp;
}

namespace {
double total_cost(const RigidPose &pose, std::span<const Correspondence2D3D> corrs, std::span<const int> idx,
                  const CameraIntrinsics &K) {
    double c = 0.0;
    for (int i : idx) {
        if (!(pose.to_camera(corrs[i].world_point).z() > 0)) return std::numeric_limits<double>::infinity();
        c += reprojection_residual(pose, K, corrs[i].query_pixel, corrs[i].world_point).squaredNorm();
    }
    return c;
}
} // namespace

RefineReport refine_pose_report(const PnPSolution &initial, std::span<const Correspondence2D3D> corrs,
                                const CameraIntrinsics &K, const RefineOptions &opts) {
    RefineReport rep;
    rep.pose = initial.pose;
    std::vector<int> idx = initial.inliers;
    if (idx.empty()) {
        idx.resize(corrs.size());
        std::iota(idx.begin(), idx.end(), 0);
    }
    for (int i : idx)
        if (i < 0 || static_cast<size_t>(i) >= corrs.size()) throw std::out_of_range("refine_pose: inlier index");
    double cost = total_cost(rep.pose, corrs, idx, K);
    rep.initial_cost = cost;
    rep.accepted_costs.push_back(cost);
    if (!std::isfinite(cost)) {
        rep.final_cost = cost;
        return rep;
    }
    double lambda = 1e-3;
    bool converged = false;
    for (int it = 0; it < opts.max_iterations && cost > 0.0 && !converged; ++it) {
        rep.iterations = it + 1;
        Eigen::Matrix<double, 6, 6> H = Eigen::Matrix<double, 6, 6>::Zero();
        Eigen::Matrix<double, 6, 1> g = Eigen::Matrix<double, 6, 1>::Zero();
        for (int i : idx) {
            const auto J = reprojection_jacobian(rep.pose, K, corrs[i].world_point);
            const Eigen::Vector2d r = reprojection_residual(rep.pose, K, corrs[i].query_pixel, corrs[i].world_point);
            H.noalias() += J.transpose() * J;
            g.noalias() += J.transpose() * r;
        }
        bool accepted = false;
        while (lambda < 1e12) {
            Eigen::Matrix<double, 6, 6> A = H;
            A.diagonal() += lambda * H.diagonal().cwiseMax(1e-12);
            const PoseUpdate delta = A.ldlt().solve(-g);
            if (!delta.allFinite()) {
                lambda *= 10.0;
                continue;
            }
            const RigidPose trial = apply_update(rep.pose, delta);
            const double trial_cost = total_cost(trial, corrs, idx, K);
            if (trial_cost < cost) {
                const double rel = (cost - trial_cost) / cost;
                rep.pose = trial;
                cost = trial_cost;
                rep.accepted_costs.push_back(cost);
                lambda = std::max(lambda / 10.0, 1e-12);
                accepted = true;
                converged = rel < opts.relative_decrease_tol;
                break;
            }
            lambda *= 10.0;
        }
        if (!accepted) break;
    }
    rep.final_cost = cost;
    return rep;
}

RigidPose refine_pose(const PnPSolution &initial, std::span<const Correspondence2D3D> corrs, const CameraIntrinsics &K,
                      const RefineOptions &opts) {
    return refine_pose_report(initial, corrs, K, opts).pose;
}

} // namespace semloc
