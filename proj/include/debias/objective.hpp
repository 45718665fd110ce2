#pragma once

#include <algorithm>
#include <cmath>
#include <span>
#include <string>
#include <vector>

#include "debias/dataset.hpp"
#include "debias/stats.hpp"

namespace debias {

// =============================================================================
// Weight vectors
// =============================================================================

/// Non-negative outcome weights summing to one.
class WeightVector {
public:
    static constexpr double kSumTolerance = 1e-10;

    WeightVector() = default;

    static WeightVector uniform(Index q) {
        if (q < 1) fail(ErrorCode::InvalidArgument, "weight vector needs at least one item");
        return WeightVector(Vector::Constant(q, 1.0 / static_cast<double>(q)));
    }

    /// Validates non-negativity and unit L1 norm.
    static WeightVector from_values(Vector values) {
        if (values.size() < 1) fail(ErrorCode::InvalidArgument, "weight vector needs at least one item");
        if (!values.allFinite() || values.minCoeff() < 0.0) {
            fail(ErrorCode::InvalidArgument, "weights must be finite and non-negative");
        }
        if (std::abs(values.sum() - 1.0) > kSumTolerance) {
            fail(ErrorCode::InvalidArgument, "weights must sum to one");
        }
        return WeightVector(std::move(values));
    }

    const Vector& values() const { return alpha_; }
    Index size() const { return alpha_.size(); }
    double operator[](Index i) const { return alpha_(i); }

private:
    explicit WeightVector(Vector v) : alpha_(std::move(v)) {}
    friend WeightVector normalize_unchecked(Vector v);

    Vector alpha_;
};

/// For callers that have already clipped and normalized (the projection step).
inline WeightVector normalize_unchecked(Vector v) { return WeightVector(std::move(v)); }

// =============================================================================
// Prepared problem
// =============================================================================

/// Cached quantities for one outcome time point i > p.
struct TimePointBundle {
    Index time_index = 0;            // i, 1-based as in T_1..T_p, Y_{p+1}..Y_m
    Matrix items_given_first;        // Y_i residualized on {T_1, X}
    Matrix items_given_current;      // Y_i residualized on {T_p, X}
    Matrix item_correlation;         // M_i, from raw items
    Matrix gram_main;                // items_given_first' items_given_first
    Vector cross_main;               // items_given_first' T_p residual
    Matrix gram_confounding;         // items_given_current' items_given_current
    Matrix cross_confounding;        // items_given_current' T_j residuals, q x (p - 1)
};

/**
 * Residualized data for the objective. Built once by `prepare`; evaluation and
 * gradient calls afterwards only touch the cached Gram matrices.
 */
struct PreparedProblem {
    Index n = 0;
    Index q = 0;
    Index p = 0;
    Index m = 0;
    Vector current_given_first;      // T_p residualized on {T_1, X}
    Matrix history_given_current;    // T_1..T_{p-1} residualized on {T_p, X}
    double current_norm = 0.0;
    Vector history_norms;
    Matrix main_basis_columns;       // kept columns of {T_1, X}
    Matrix confounding_basis_columns;  // kept columns of {T_p, X}
    std::vector<TimePointBundle> bundles;
    std::vector<std::string> warnings;

    Index main_basis_size() const { return main_basis_columns.cols(); }
    Index confounding_basis_size() const { return confounding_basis_columns.cols(); }
    Index time_points() const { return static_cast<Index>(bundles.size()); }
    bool current_degenerate() const {
        return current_norm * current_norm / static_cast<double>(n) < stats::kVarianceFloor;
    }
};

namespace detail {

inline Matrix hstack(const Vector& first, const Matrix& rest) {
    Matrix out(first.size(), 1 + rest.cols());
    out.col(0) = first;
    out.rightCols(rest.cols()) = rest;
    return out;
}

inline stats::PrunedBasis pruned_with_warnings(const Matrix& columns, const std::vector<std::string>& names,
                                               std::vector<std::string>& warnings) {
    auto pruned = stats::prune_basis(columns);
    for (Index c : pruned.dropped) {
        warnings.push_back("dropped constant or collinear conditioning column '" +
                           names[static_cast<std::size_t>(c)] + "'");
    }
    return pruned;
}

}  // namespace detail

inline PreparedProblem prepare(const LongitudinalDataset& data) {
    if (data.p() < 2) fail(ErrorCode::Validation, "prepare requires p >= 2");
    if (data.time_points() < 1) fail(ErrorCode::Validation, "prepare requires m > p");
    PreparedProblem out;
    out.n = data.n();
    out.q = data.q();
    out.p = data.p();
    out.m = data.m();

    const Vector first = data.first_treatment();
    const Vector current = data.current_treatment();

    std::vector<std::string> names{"t1"};
    for (const auto& c : data.covariate_names) names.push_back(c);
    auto main_basis = detail::pruned_with_warnings(detail::hstack(first, data.covariates), names, out.warnings);
    names.front() = "t" + std::to_string(data.p());
    auto conf_basis = detail::pruned_with_warnings(detail::hstack(current, data.covariates), names, out.warnings);
    out.main_basis_columns = main_basis.basis.columns();
    out.confounding_basis_columns = conf_basis.basis.columns();

    out.current_given_first = main_basis.basis.residualize(current);
    out.current_norm = out.current_given_first.norm();
    if (out.current_degenerate()) out.warnings.push_back("current treatment has no variation given t1 and X");
    out.history_given_current = conf_basis.basis.residualize(data.treatments.leftCols(data.p() - 1));
    out.history_norms = out.history_given_current.colwise().norm().transpose();

    out.bundles.reserve(data.outcomes.size());
    for (std::size_t t = 0; t < data.outcomes.size(); ++t) {
        const Matrix& items = data.outcomes[t];
        TimePointBundle b;
        b.time_index = data.p() + 1 + static_cast<Index>(t);
        try {
            b.items_given_first = main_basis.basis.residualize(items);
            b.items_given_current = conf_basis.basis.residualize(items);
            b.item_correlation = stats::correlation_matrix(items);
        } catch (const Error& e) {
            throw Error(e.code(), "time point " + std::to_string(b.time_index) + ": " + e.what());
        }
        b.gram_main = b.items_given_first.transpose() * b.items_given_first;
        b.cross_main = b.items_given_first.transpose() * out.current_given_first;
        b.gram_confounding = b.items_given_current.transpose() * b.items_given_current;
        b.cross_confounding = b.items_given_current.transpose() * out.history_given_current;
        out.bundles.push_back(std::move(b));
    }
    return out;
}

// =============================================================================
// Objective
// =============================================================================

/// Which main term the objective maximizes: partial correlation, or negative MSE.
enum class MainTerm { correlation, mse };

struct TermValues {
    double main = 0.0;
    double confounding = 0.0;
    double orthogonality = 0.0;
};

/**
 * Objective value split into its three terms. Under `MainTerm::mse` the
 * `main_correlation` slot carries the negative mean squared error sum.
 */
struct ObjectiveBreakdown {
    double total = 0.0;
    double main_correlation = 0.0;
    double confounding_penalty = 0.0;
    double orthogonality_penalty = 0.0;
    std::vector<TermValues> per_time_point;
};

inline constexpr double kDenominatorFloor = 1e-12;

/**
 * The sequential objective for one score: main term minus lambda-scaled
 * confounding penalty minus mean Mahalanobis cosine similarity to `previous`.
 *
 * Works on any non-negative alpha, normalized or not; the correlation and
 * cosine terms are scale invariant in alpha.
 */
class Objective {
public:
    Objective(const PreparedProblem& problem, double lambda, std::span<const WeightVector> previous,
              MainTerm main = MainTerm::correlation)
        : problem_(&problem), lambda_(lambda), main_(main) {
        if (!(lambda >= 0.0)) fail(ErrorCode::InvalidArgument, "lambda must be non-negative");
        previous_.reserve(previous.size());
        for (const auto& w : previous) {
            if (w.size() != problem.q) fail(ErrorCode::DimensionMismatch, "previous score has wrong length");
            previous_.push_back(w.values());
        }
        prev_metric_.resize(problem.bundles.size());
        prev_norm_.resize(problem.bundles.size());
        for (std::size_t t = 0; t < problem.bundles.size(); ++t) {
            const Matrix& M = problem.bundles[t].item_correlation;
            for (const auto& a : previous_) {
                Vector Ma = M * a;
                prev_norm_[t].push_back(std::sqrt(std::max(a.dot(Ma), 0.0)));
                prev_metric_[t].push_back(std::move(Ma));
            }
        }
    }

    const PreparedProblem& problem() const { return *problem_; }
    double lambda() const { return lambda_; }
    MainTerm main_term() const { return main_; }
    std::size_t previous_count() const { return previous_.size(); }

    ObjectiveBreakdown evaluate(const Eigen::Ref<const Vector>& alpha) const {
        check(alpha);
        const auto& pr = *problem_;
        const double n = static_cast<double>(pr.n);
        const Index hist = pr.p - 1;
        ObjectiveBreakdown out;
        out.per_time_point.reserve(pr.bundles.size());
        for (std::size_t t = 0; t < pr.bundles.size(); ++t) {
            const auto& b = pr.bundles[t];
            TermValues v;

            const Vector Ga = b.gram_main * alpha;
            const double uu = alpha.dot(Ga);
            if (main_ == MainTerm::correlation) {
                if (uu / n >= stats::kVarianceFloor && !pr.current_degenerate()) {
                    v.main = alpha.dot(b.cross_main) / floor(std::sqrt(uu) * pr.current_norm);
                }
            } else {
                v.main = -(uu - 2.0 * alpha.dot(b.cross_main) + pr.current_norm * pr.current_norm) / n;
            }

            if (lambda_ != 0.0 && hist > 0) {
                const double ww = alpha.dot(b.gram_confounding * alpha);
                double sum = 0.0;
                if (ww / n >= stats::kVarianceFloor) {
                    for (Index j = 0; j < hist; ++j) {
                        if (!history_ok(j)) continue;
                        const double rho =
                            alpha.dot(b.cross_confounding.col(j)) / floor(std::sqrt(ww) * pr.history_norms(j));
                        sum += rho * rho;
                    }
                }
                v.confounding = lambda_ / static_cast<double>(hist) * sum;
            }

            if (!previous_.empty()) {
                const double aMa = alpha.dot(b.item_correlation * alpha);
                const double a_norm = std::sqrt(std::max(aMa, 0.0));
                double sum = 0.0;
                for (std::size_t k = 0; k < previous_.size(); ++k) {
                    sum += alpha.dot(prev_metric_[t][k]) / floor(prev_norm_[t][k] * a_norm);
                }
                v.orthogonality = sum / static_cast<double>(previous_.size());
            }

            out.main_correlation += v.main;
            out.confounding_penalty += v.confounding;
            out.orthogonality_penalty += v.orthogonality;
            out.per_time_point.push_back(v);
        }
        out.total = out.main_correlation - out.confounding_penalty - out.orthogonality_penalty;
        return out;
    }

    double value(const Eigen::Ref<const Vector>& alpha) const { return evaluate(alpha).total; }

    /// Analytic gradient of `value` with respect to alpha.
    Vector gradient(const Eigen::Ref<const Vector>& alpha) const {
        check(alpha);
        const auto& pr = *problem_;
        const double n = static_cast<double>(pr.n);
        const Index hist = pr.p - 1;
        Vector grad = Vector::Zero(pr.q);
        for (std::size_t t = 0; t < pr.bundles.size(); ++t) {
            const auto& b = pr.bundles[t];
            const Vector Ma = b.item_correlation * alpha;
            const double aMa = alpha.dot(Ma);
            if (!(aMa > 1e-12)) {
                fail(ErrorCode::DegenerateProjection,
                     "alpha' M alpha vanishes at time point " + std::to_string(b.time_index));
            }

            // (a)
            const Vector Ga = b.gram_main * alpha;
            const double uu = alpha.dot(Ga);
            if (main_ == MainTerm::correlation) {
                if (uu / n >= stats::kVarianceFloor && !pr.current_degenerate()) {
                    const double u = std::sqrt(uu);
                    const double tn = pr.current_norm;
                    grad += b.cross_main / floor(u * tn) - (alpha.dot(b.cross_main) / floor(uu * u * tn)) * Ga;
                }
            } else {
                grad -= (2.0 / n) * (Ga - b.cross_main);
            }

            // (b)
            if (lambda_ != 0.0 && hist > 0) {
                const Vector Gb = b.gram_confounding * alpha;
                const double ww = alpha.dot(Gb);
                if (ww / n >= stats::kVarianceFloor) {
                    const double w = std::sqrt(ww);
                    Vector acc = Vector::Zero(pr.q);
                    for (Index j = 0; j < hist; ++j) {
                        if (!history_ok(j)) continue;
                        const double tj = pr.history_norms(j);
                        const auto d = b.cross_confounding.col(j);
                        const double ad = alpha.dot(d);
                        const double rho = ad / floor(w * tj);
                        acc += 2.0 * rho * (d / floor(w * tj) - (ad / floor(ww * w * tj)) * Gb);
                    }
                    grad -= lambda_ / static_cast<double>(hist) * acc;
                }
            }

            // (c)
            if (!previous_.empty()) {
                Vector acc = Vector::Zero(pr.q);
                const double a_norm = std::sqrt(aMa);
                for (std::size_t k = 0; k < previous_.size(); ++k) {
                    const Vector& Mak = prev_metric_[t][k];
                    const double kn = prev_norm_[t][k];
                    acc += Mak / floor(kn * a_norm) - (alpha.dot(Mak) / floor(aMa * a_norm * kn)) * Ma;
                }
                grad -= acc / static_cast<double>(previous_.size());
            }
        }
        return grad;
    }

private:
    static double floor(double d) { return std::max(d, kDenominatorFloor); }

    bool history_ok(Index j) const {
        const double norm = problem_->history_norms(j);
        return norm * norm / static_cast<double>(problem_->n) >= stats::kVarianceFloor;
    }

    void check(const Eigen::Ref<const Vector>& alpha) const {
        if (alpha.size() != problem_->q) {
            fail(ErrorCode::DimensionMismatch, "alpha has " + std::to_string(alpha.size()) + " entries, expected " +
                                                   std::to_string(problem_->q));
        }
    }

    const PreparedProblem* problem_;
    double lambda_;
    MainTerm main_;
    std::vector<Vector> previous_;
    std::vector<std::vector<Vector>> prev_metric_;  // [time][k] = M_i alpha_k
    std::vector<std::vector<double>> prev_norm_;    // [time][k] = sqrt(alpha_k' M_i alpha_k)
};

inline ObjectiveBreakdown evaluate(const PreparedProblem& problem, const WeightVector& alpha, double lambda,
                                   std::span<const WeightVector> previous,
                                   MainTerm main = MainTerm::correlation) {
    return Objective(problem, lambda, previous, main).evaluate(alpha.values());
}

inline Vector gradient(const PreparedProblem& problem, const WeightVector& alpha, double lambda,
                       std::span<const WeightVector> previous, MainTerm main = MainTerm::correlation) {
    return Objective(problem, lambda, previous, main).gradient(alpha.values());
}

// =============================================================================
// Hypothesis tests on a projected outcome
// =============================================================================

/// cor(Y_i alpha, T_p | T_1, X) with its p-value, per time point.
inline std::vector<stats::PartialCorrelationResult> main_correlation_tests(const PreparedProblem& problem,
                                                                           const Eigen::Ref<const Vector>& alpha) {
    std::vector<stats::PartialCorrelationResult> out;
    const double n = static_cast<double>(problem.n);
    for (const auto& b : problem.bundles) {
        stats::PartialCorrelationResult res;
        res.n = problem.n;
        res.k = problem.main_basis_size();
        const double uu = alpha.dot(b.gram_main * alpha);
        if (uu / n < stats::kVarianceFloor || problem.current_degenerate()) {
            res.degenerate = true;
        } else {
            res.r = std::clamp(alpha.dot(b.cross_main) / (std::sqrt(uu) * problem.current_norm), -1.0, 1.0);
            res.p_value = stats::correlation_p_value(res.r, res.n, res.k);
        }
        out.push_back(res);
    }
    return out;
}

/// cor(Y_i alpha, T_j | T_p, X) with its p-value, indexed [time point][j].
inline std::vector<std::vector<stats::PartialCorrelationResult>> confounding_tests(
    const PreparedProblem& problem, const Eigen::Ref<const Vector>& alpha) {
    std::vector<std::vector<stats::PartialCorrelationResult>> out;
    const double n = static_cast<double>(problem.n);
    for (const auto& b : problem.bundles) {
        std::vector<stats::PartialCorrelationResult> row;
        const double ww = alpha.dot(b.gram_confounding * alpha);
        for (Index j = 0; j < problem.p - 1; ++j) {
            stats::PartialCorrelationResult res;
            res.n = problem.n;
            res.k = problem.confounding_basis_size();
            const double tj = problem.history_norms(j);
            if (ww / n < stats::kVarianceFloor || tj * tj / n < stats::kVarianceFloor) {
                res.degenerate = true;
            } else {
                res.r = std::clamp(alpha.dot(b.cross_confounding.col(j)) / (std::sqrt(ww) * tj), -1.0, 1.0);
                res.p_value = stats::correlation_p_value(res.r, res.n, res.k);
            }
            row.push_back(res);
        }
        out.push_back(std::move(row));
    }
    return out;
}

/// Smallest confounding-test p-value over time points and historical treatments.
inline double min_confounding_p_value(const PreparedProblem& problem, const Eigen::Ref<const Vector>& alpha) {
    double best = 1.0;
    for (const auto& row : confounding_tests(problem, alpha))
        for (const auto& res : row) best = std::min(best, res.p_value);
    return best;
}

}  // namespace debias
