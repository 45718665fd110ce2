#pragma once

#include <cstdint>
#include <functional>
#include <random>
#include <vector>

#include "debias/objective.hpp"

namespace debias {

/// Central finite differences of `objective.value` in unconstrained alpha space.
inline Vector finite_difference_gradient(const Objective& objective, const Eigen::Ref<const Vector>& alpha,
                                         double step = 1e-6) {
    Vector grad(alpha.size());
    Vector probe = alpha;
    for (Index l = 0; l < alpha.size(); ++l) {
        probe(l) = alpha(l) + step;
        const double up = objective.value(probe);
        probe(l) = alpha(l) - step;
        const double down = objective.value(probe);
        probe(l) = alpha(l);
        grad(l) = (up - down) / (2.0 * step);
    }
    return grad;
}

/// ||a - b|| / max(||a||, ||b||, 1e-6).
inline double relative_gradient_error(const Vector& analytic, const Vector& numeric) {
    const double scale = std::max({analytic.norm(), numeric.norm(), 1e-6});
    return (analytic - numeric).norm() / scale;
}

/// Uniform draw from the probability simplex.
inline Vector random_simplex_point(Index q, std::mt19937_64& rng) {
    std::exponential_distribution<double> expo(1.0);
    Vector v(q);
    for (Index l = 0; l < q; ++l) v(l) = expo(rng);
    return v / v.sum();
}

struct GradientCheckReport {
    double max_error_correlation = 0.0;
    double max_error_mse = 0.0;
    int points = 0;
};

using GradientFunction = std::function<Vector(const Objective&, const Eigen::Ref<const Vector>&)>;

/**
 * Compares the analytic gradient (or `override_gradient`, for negative
 * controls) with finite differences at random feasible points, for both
 * main-term variants, with `n_previous` random earlier scores.
 */
inline GradientCheckReport check_gradients(const PreparedProblem& problem, double lambda, int n_previous, int points,
                                           std::uint64_t seed, const GradientFunction& override_gradient = {}) {
    std::mt19937_64 rng(seed);
    std::vector<WeightVector> previous;
    for (int k = 0; k < n_previous; ++k)
        previous.push_back(WeightVector::from_values(random_simplex_point(problem.q, rng)));
    GradientCheckReport report;
    report.points = points;
    for (MainTerm main : {MainTerm::correlation, MainTerm::mse}) {
        const Objective objective(problem, lambda, previous, main);
        double worst = 0.0;
        for (int k = 0; k < points; ++k) {
            const Vector alpha = random_simplex_point(problem.q, rng);
            const Vector analytic = override_gradient ? override_gradient(objective, alpha) : objective.gradient(alpha);
            worst = std::max(worst, relative_gradient_error(analytic, finite_difference_gradient(objective, alpha)));
        }
        (main == MainTerm::correlation ? report.max_error_correlation : report.max_error_mse) = worst;
    }
    return report;
}

}  // namespace debias
