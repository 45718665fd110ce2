#pragma once

#include <Eigen/Dense>
#include <boost/math/distributions/students_t.hpp>

#include <algorithm>
#include <cmath>
#include <span>
#include <string>
#include <vector>

#include "debias/error.hpp"

namespace debias {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;
using Index = Eigen::Index;

namespace stats {

/// Residual variances below this are treated as zero.
inline constexpr double kVarianceFloor = 1e-12;
/// Floor applied to p-values before taking logarithms.
inline constexpr double kPValueFloor = 1e-300;

inline double population_variance(const Eigen::Ref<const Vector>& v) {
    if (v.size() == 0) return 0.0;
    const double mean = v.mean();
    return (v.array() - mean).square().sum() / static_cast<double>(v.size());
}

// =============================================================================
// Residualization
// =============================================================================

/**
 * Least-squares projection basis: an intercept plus zero or more conditioning
 * columns. Residualizing against it removes the fitted OLS component, so the
 * result is centered and orthogonal to every column.
 *
 * The normal equations are solved on centered columns. A singular Gram matrix
 * is retried once with a ridge of 1e-10 * trace / cols before giving up.
 */
class ResidualizationBasis {
public:
    /// Intercept-only basis for `n` observations.
    explicit ResidualizationBasis(Index n = 0) : n_(n) {}

    explicit ResidualizationBasis(Matrix columns) : n_(columns.rows()), columns_(std::move(columns)) {
        factorize();
    }

    /// Observations the basis was built on.
    Index rows() const { return n_; }
    /// Conditioning-set size, intercept excluded.
    Index size() const { return columns_.cols(); }
    const Matrix& columns() const { return columns_; }
    bool used_ridge() const { return used_ridge_; }

    /// Residuals of each column of `target`; column vectors come back as Vector.
    template <class Derived>
    auto residualize(const Eigen::MatrixBase<Derived>& target) const {
        if constexpr (Derived::ColsAtCompileTime == 1) {
            return Vector(residualize_columns(target).col(0));
        } else {
            return residualize_columns(target);
        }
    }

private:
    Matrix residualize_columns(const Eigen::Ref<const Matrix>& target) const {
        if (target.rows() != n_) {
            fail(ErrorCode::DimensionMismatch, "target has " + std::to_string(target.rows()) +
                                                   " rows, basis has " + std::to_string(n_));
        }
        if (n_ <= size() + 1) {
            fail(ErrorCode::InsufficientSamples, "need more than " + std::to_string(size() + 1) +
                                                     " observations, got " + std::to_string(n_));
        }
        Matrix centered = target.rowwise() - target.colwise().mean();
        if (size() == 0) return centered;
        const Matrix coef = gram_llt_.solve(centered_.transpose() * centered);
        return centered - centered_ * coef;
    }

public:

private:
    void factorize() {
        const Index k = columns_.cols();
        if (k == 0) return;
        means_ = columns_.colwise().mean();
        centered_ = columns_.rowwise() - means_.transpose();
        Matrix gram = centered_.transpose() * centered_;
        if (try_factor(gram)) return;
        const double ridge = 1e-10 * gram.trace() / static_cast<double>(k);
        gram.diagonal().array() += ridge;
        if (ridge > 0.0 && try_factor(gram)) {
            used_ridge_ = true;
            return;
        }
        fail(ErrorCode::RankDeficientBasis, "conditioning columns are singular after ridge retry");
    }

    bool try_factor(const Matrix& gram) {
        gram_llt_.compute(gram);
        if (gram_llt_.info() != Eigen::Success) return false;
        const Vector diag = gram_llt_.matrixL().toDenseMatrix().diagonal();
        const double max_gram = gram.diagonal().maxCoeff();
        if (!(max_gram > 0.0)) return false;
        return diag.array().square().minCoeff() > 1e-14 * max_gram;
    }

    Index n_ = 0;
    Matrix columns_;
    Vector means_;
    Matrix centered_;
    Eigen::LLT<Matrix> gram_llt_;
    bool used_ridge_ = false;
};

/// Basis after pruning constant or collinear columns.
struct PrunedBasis {
    ResidualizationBasis basis;
    std::vector<Index> kept;
    std::vector<Index> dropped;
};

/**
 * Builds a basis from `columns`, greedily dropping any column that is constant
 * or (relative tolerance `tol`) a linear combination of the columns kept so far.
 */
inline PrunedBasis prune_basis(const Eigen::Ref<const Matrix>& columns, double tol = 1e-10) {
    PrunedBasis out;
    const Index n = columns.rows();
    Matrix ortho(n, 0);
    for (Index c = 0; c < columns.cols(); ++c) {
        Vector v = columns.col(c).array() - columns.col(c).mean();
        const double norm0 = v.squaredNorm();
        if (norm0 / std::max<double>(1.0, static_cast<double>(n)) < kVarianceFloor) {
            out.dropped.push_back(c);
            continue;
        }
        for (Index k = 0; k < ortho.cols(); ++k) v -= ortho.col(k).dot(v) * ortho.col(k);
        const double norm1 = v.squaredNorm();
        if (norm1 <= tol * norm0) {
            out.dropped.push_back(c);
            continue;
        }
        ortho.conservativeResize(Eigen::NoChange, ortho.cols() + 1);
        ortho.col(ortho.cols() - 1) = v / std::sqrt(norm1);
        out.kept.push_back(c);
    }
    Matrix kept(n, static_cast<Index>(out.kept.size()));
    for (std::size_t i = 0; i < out.kept.size(); ++i) kept.col(static_cast<Index>(i)) = columns.col(out.kept[i]);
    out.basis = kept.cols() > 0 ? ResidualizationBasis(std::move(kept)) : ResidualizationBasis(n);
    return out;
}

// =============================================================================
// Correlation and tests
// =============================================================================

struct PartialCorrelationResult {
    double r = 0.0;
    Index k = 0;
    Index n = 0;
    double p_value = 1.0;
    bool degenerate = false;
};

/// Two-sided p-value of a (partial) correlation `r` with `k` conditioning variables.
inline double correlation_p_value(double r, Index n, Index k) {
    const double df = static_cast<double>(n - 2 - k);
    if (!(df > 0.0)) fail(ErrorCode::InsufficientSamples, "correlation test needs n - 2 - k > 0");
    const double r2 = r * r;
    if (r2 >= 1.0) return 0.0;
    const double t = std::abs(r) * std::sqrt(df / (1.0 - r2));
    boost::math::students_t dist(df);
    const double p = 2.0 * boost::math::cdf(boost::math::complement(dist, t));
    return std::clamp(p, 0.0, 1.0);
}

/**
 * Pearson correlation of two already-centered vectors. Returns the degenerate
 * result (r = 0) when either has variance below the floor.
 */
inline PartialCorrelationResult centered_correlation(const Eigen::Ref<const Vector>& a,
                                                     const Eigen::Ref<const Vector>& b, Index k) {
    PartialCorrelationResult out;
    out.n = a.size();
    out.k = k;
    const double n = static_cast<double>(a.size());
    const double saa = a.squaredNorm();
    const double sbb = b.squaredNorm();
    if (saa / n < kVarianceFloor || sbb / n < kVarianceFloor) {
        out.degenerate = true;
        return out;
    }
    out.r = std::clamp(a.dot(b) / std::sqrt(saa * sbb), -1.0, 1.0);
    out.p_value = correlation_p_value(out.r, out.n, k);
    return out;
}

inline double pearson(const Eigen::Ref<const Vector>& a, const Eigen::Ref<const Vector>& b) {
    if (a.size() != b.size()) fail(ErrorCode::DimensionMismatch, "pearson: length mismatch");
    const Vector ca = a.array() - a.mean();
    const Vector cb = b.array() - b.mean();
    const double denom = std::sqrt(ca.squaredNorm() * cb.squaredNorm());
    if (!(denom > 0.0)) fail(ErrorCode::DegenerateVariance, "pearson: zero variance input");
    return std::clamp(ca.dot(cb) / denom, -1.0, 1.0);
}

/**
 * Correlation of `a` and `b` after residualizing both on `basis`.
 * Symmetric in (a, b) bit-for-bit; degenerate residual variance yields
 * r = 0, p = 1 with `degenerate` set instead of throwing.
 */
inline PartialCorrelationResult partial_correlation(const Eigen::Ref<const Vector>& a,
                                                    const Eigen::Ref<const Vector>& b,
                                                    const ResidualizationBasis& basis) {
    if (a.size() != b.size()) fail(ErrorCode::DimensionMismatch, "partial_correlation: length mismatch");
    if (a.size() <= basis.size() + 3) {
        fail(ErrorCode::InsufficientSamples, "partial_correlation needs n > k + 3");
    }
    const Vector ra = basis.residualize(a);
    const Vector rb = basis.residualize(b);
    return centered_correlation(ra, rb, basis.size());
}

/// Pearson correlation matrix of the columns of `items`.
inline Matrix correlation_matrix(const Eigen::Ref<const Matrix>& items) {
    const double n = static_cast<double>(items.rows());
    if (items.rows() < 2) fail(ErrorCode::InsufficientSamples, "correlation_matrix needs at least 2 rows");
    Matrix centered = items.rowwise() - items.colwise().mean();
    Vector sd(items.cols());
    for (Index c = 0; c < items.cols(); ++c) {
        const double var = centered.col(c).squaredNorm() / n;
        if (var < kVarianceFloor) {
            fail(ErrorCode::DegenerateVariance, "column " + std::to_string(c) + " has zero variance");
        }
        sd(c) = std::sqrt(var * n);
    }
    centered = centered * sd.cwiseInverse().asDiagonal();
    Matrix corr = centered.transpose() * centered;
    corr = 0.5 * (corr + corr.transpose()).eval();
    corr = corr.cwiseMax(-1.0).cwiseMin(1.0);
    corr.diagonal().setOnes();
    return corr;
}

// =============================================================================
// Effect sizes
// =============================================================================

inline bool is_binary(const Eigen::Ref<const Vector>& v) {
    return (v.array() == 0.0 || v.array() == 1.0).all();
}

/// Cohen's d with the proportion-weighted pooled population variance.
inline double cohen_d(const Eigen::Ref<const Vector>& outcome, const Eigen::Ref<const Vector>& treatment) {
    if (outcome.size() != treatment.size()) fail(ErrorCode::DimensionMismatch, "cohen_d: length mismatch");
    if (!is_binary(treatment)) fail(ErrorCode::InvalidArgument, "cohen_d: treatment must be 0/1");
    double s1 = 0, s0 = 0, ss1 = 0, ss0 = 0;
    Index n1 = 0, n0 = 0;
    for (Index i = 0; i < outcome.size(); ++i) {
        const double y = outcome(i);
        if (treatment(i) == 1.0) { s1 += y; ss1 += y * y; ++n1; }
        else { s0 += y; ss0 += y * y; ++n0; }
    }
    if (n1 == 0 || n0 == 0) fail(ErrorCode::SingleGroup, "cohen_d: a treatment level is absent");
    const double m1 = s1 / n1, m0 = s0 / n0;
    // two-pass variances for accuracy
    double v1 = 0, v0 = 0;
    for (Index i = 0; i < outcome.size(); ++i) {
        const double y = outcome(i);
        if (treatment(i) == 1.0) v1 += (y - m1) * (y - m1);
        else v0 += (y - m0) * (y - m0);
    }
    v1 /= n1;
    v0 /= n0;
    const double p = static_cast<double>(n1) / static_cast<double>(outcome.size());
    const double pooled = p * v1 + (1.0 - p) * v0;
    if (!(pooled > 0.0)) fail(ErrorCode::DegenerateVariance, "cohen_d: zero pooled variance");
    return (m1 - m0) / std::sqrt(pooled);
}

inline double d_to_r(double d, double p) {
    if (!(p > 0.0 && p < 1.0)) fail(ErrorCode::InvalidProportion, "proportion must lie in (0, 1)");
    const double a2 = p * (1.0 - p);
    return std::sqrt(a2) * d / std::sqrt(1.0 + a2 * d * d);
}

inline double r_to_d(double r, double p) {
    if (!(p > 0.0 && p < 1.0)) fail(ErrorCode::InvalidProportion, "proportion must lie in (0, 1)");
    if (!(std::abs(r) < 1.0)) fail(ErrorCode::InvalidArgument, "r_to_d requires |r| < 1");
    return r / (std::sqrt(p * (1.0 - p)) * std::sqrt(1.0 - r * r));
}

/// exp(mean(log v)); entries are floored at 1e-300 first.
inline double geometric_mean(std::span<const double> values) {
    if (values.empty()) fail(ErrorCode::EmptyList, "geometric_mean of an empty list");
    double acc = 0.0;
    for (double v : values) {
        if (!(v >= 0.0)) fail(ErrorCode::InvalidArgument, "geometric_mean requires non-negative values");
        acc += std::log(std::max(v, kPValueFloor));
    }
    return std::exp(acc / static_cast<double>(values.size()));
}

}  // namespace stats
}  // namespace debias
