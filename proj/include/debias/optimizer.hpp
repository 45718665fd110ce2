#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "debias/objective.hpp"

namespace debias {

struct OptimizerConfig {
    int max_iterations = 1000;
    double convergence_tol = 1e-6;  // on the L-infinity change of alpha
    double armijo_c = 1e-4;
    double backtrack_factor = 0.5;
    double initial_step = 1.0;
    double min_step = 1e-12;
    double gradient_tol = 1e-12;    // L-infinity norm below which the gradient counts as zero
    std::uint64_t seed = 0;

    void validate() const {
        if (!(backtrack_factor > 0.0 && backtrack_factor < 1.0)) {
            fail(ErrorCode::InvalidArgument, "backtrack_factor must lie in (0, 1)");
        }
        if (!(armijo_c > 0.0 && armijo_c < 1.0)) fail(ErrorCode::InvalidArgument, "armijo_c must lie in (0, 1)");
        if (max_iterations < 1) fail(ErrorCode::InvalidArgument, "max_iterations must be positive");
        if (!(initial_step > 0.0) || !(min_step > 0.0)) fail(ErrorCode::InvalidArgument, "steps must be positive");
    }
};

struct Projection {
    WeightVector weights;
    bool collapsed = false;  // every entry was <= 0; uniform weights returned
};

/// Clips at zero, then rescales to unit L1 norm.
inline Projection project(const Eigen::Ref<const Vector>& v) {
    if (v.size() < 1) fail(ErrorCode::InvalidArgument, "cannot project an empty vector");
    Vector clipped = v.cwiseMax(0.0);
    const double total = clipped.sum();
    if (!(total > 0.0) || !std::isfinite(total)) return {WeightVector::uniform(v.size()), true};
    clipped /= total;
    return {normalize_unchecked(std::move(clipped)), false};
}

/// One accepted line-search step.
struct StepRecord {
    double step = 0.0;
    double objective_before = 0.0;
    double objective_after = 0.0;
    double directional_increase = 0.0;  // g . (P(alpha + step g) - alpha)
    double max_change = 0.0;
    double min_weight = 0.0;     // of the accepted iterate
    double sum_deviation = 0.0;  // |sum(alpha) - 1| of the accepted iterate
};

struct ScoreTrace {
    WeightVector alpha;
    int iterations_used = 0;
    ObjectiveBreakdown final_objective;
    bool converged = false;
    bool line_search_stalled = false;   // no acceptable step on the first iteration
    bool projection_collapsed = false;
    std::vector<StepRecord> steps;
};

/**
 * Projected gradient ascent for one score at fixed lambda.
 *
 * Starts from uniform weights. A trial step is accepted when the projected
 * point satisfies f(P) >= f + c * g.(P - alpha) and does not decrease f.
 */
inline ScoreTrace fit_score(const PreparedProblem& problem, double lambda, std::span<const WeightVector> previous,
                            const OptimizerConfig& config, MainTerm main = MainTerm::correlation) {
    config.validate();
    const Objective objective(problem, lambda, previous, main);
    ScoreTrace trace;
    trace.alpha = WeightVector::uniform(problem.q);
    if (problem.q == 1) {
        trace.converged = true;
        trace.final_objective = objective.evaluate(trace.alpha.values());
        return trace;
    }

    Vector alpha = trace.alpha.values();
    double f = objective.value(alpha);
    for (int iter = 0; iter < config.max_iterations; ++iter) {
        const Vector g = objective.gradient(alpha);
        trace.iterations_used = iter + 1;
        if (g.lpNorm<Eigen::Infinity>() <= config.gradient_tol) {
            trace.converged = true;
            break;
        }

        bool accepted = false;
        StepRecord rec;
        Vector next;
        for (double eta = config.initial_step; eta >= config.min_step; eta *= config.backtrack_factor) {
            Projection proj = project(alpha + eta * g);
            const Vector& cand = proj.weights.values();
            const double gain = g.dot(cand - alpha);
            const double f_cand = objective.value(cand);
            if (f_cand >= f + config.armijo_c * gain && f_cand >= f) {
                accepted = true;
                trace.projection_collapsed = trace.projection_collapsed || proj.collapsed;
                rec = {eta, f, f_cand, gain, (cand - alpha).lpNorm<Eigen::Infinity>(), cand.minCoeff(),
                       std::abs(cand.sum() - 1.0)};
                next = cand;
                break;
            }
        }
        if (!accepted) {
            // Nothing improves at the smallest step: stationary to working precision,
            // unless this happened before any progress was made.
            trace.line_search_stalled = (iter == 0);
            trace.converged = (iter != 0);
            break;
        }
        trace.steps.push_back(rec);
        alpha = std::move(next);
        f = rec.objective_after;
        if (rec.max_change < config.convergence_tol) {
            trace.converged = true;
            break;
        }
    }
    trace.alpha = normalize_unchecked(alpha);
    trace.final_objective = objective.evaluate(alpha);
    return trace;
}

/// Extracts `s` scores in sequence; score K is penalized against scores 1..K-1.
inline std::vector<ScoreTrace> fit_all(const PreparedProblem& problem, double lambda, int s,
                                       const OptimizerConfig& config, MainTerm main = MainTerm::correlation) {
    if (s < 1 || s > problem.q) {
        fail(ErrorCode::InvalidArgument, "number of scores must lie in [1, q]; got " + std::to_string(s));
    }
    std::vector<ScoreTrace> traces;
    std::vector<WeightVector> previous;
    for (int k = 0; k < s; ++k) {
        try {
            traces.push_back(fit_score(problem, lambda, previous, config, main));
        } catch (const Error& e) {
            throw Error(e.code(), "score " + std::to_string(k + 1) + ": " + e.what());
        }
        previous.push_back(traces.back().alpha);
    }
    return traces;
}

}  // namespace debias
