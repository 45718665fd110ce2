#pragma once

#include <cstdint>
#include <numeric>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "debias/optimizer.hpp"
#include "debias/parallel.hpp"

namespace debias {

// =============================================================================
// Fit results
// =============================================================================

/// Scores fitted at one lambda on one dataset, with their in-sample tests.
struct FitResult {
    double lambda = 0.0;
    MainTerm objective = MainTerm::correlation;
    std::vector<std::string> item_names;
    std::vector<Index> time_indices;
    std::vector<ScoreTrace> scores;
    /// [score][time point]
    std::vector<std::vector<stats::PartialCorrelationResult>> main_tests;
    /// [score][time point][historical treatment]
    std::vector<std::vector<std::vector<stats::PartialCorrelationResult>>> confounding;
    std::vector<std::string> warnings;
};

inline FitResult fit_at_lambda(const PreparedProblem& problem, double lambda, int s, const OptimizerConfig& config,
                               MainTerm main = MainTerm::correlation) {
    FitResult out;
    out.lambda = lambda;
    out.objective = main;
    for (const auto& b : problem.bundles) out.time_indices.push_back(b.time_index);
    out.scores = fit_all(problem, lambda, s, config, main);
    for (const auto& trace : out.scores) {
        out.main_tests.push_back(main_correlation_tests(problem, trace.alpha.values()));
        out.confounding.push_back(confounding_tests(problem, trace.alpha.values()));
    }
    out.warnings = problem.warnings;
    return out;
}

// =============================================================================
// Folds
// =============================================================================

/**
 * Assigns each of `n` rows to a fold in [0, folds). Binary treatments are
 * stratified: each level is shuffled separately and dealt round-robin, so fold
 * sizes differ by at most one and every fold sees both arms when possible.
 */
inline std::vector<int> make_folds(Index n, int folds, std::uint64_t seed, const Eigen::Ref<const Vector>& treatment) {
    if (folds < 1 || folds > n) fail(ErrorCode::InvalidArgument, "folds must lie in [1, n]");
    if (treatment.size() != n) fail(ErrorCode::DimensionMismatch, "treatment length must equal n");
    std::mt19937_64 rng(seed);
    std::vector<Index> order;
    order.reserve(static_cast<std::size_t>(n));
    const bool binary = stats::is_binary(treatment);
    if (binary) {
        std::vector<Index> treated, control;
        for (Index i = 0; i < n; ++i) (treatment(i) == 1.0 ? treated : control).push_back(i);
        std::shuffle(treated.begin(), treated.end(), rng);
        std::shuffle(control.begin(), control.end(), rng);
        order.insert(order.end(), treated.begin(), treated.end());
        order.insert(order.end(), control.begin(), control.end());
    } else {
        order.resize(static_cast<std::size_t>(n));
        std::iota(order.begin(), order.end(), Index{0});
        std::shuffle(order.begin(), order.end(), rng);
    }
    std::vector<int> assignment(static_cast<std::size_t>(n));
    for (std::size_t pos = 0; pos < order.size(); ++pos) {
        assignment[static_cast<std::size_t>(order[pos])] = static_cast<int>(pos % static_cast<std::size_t>(folds));
    }
    return assignment;
}

// =============================================================================
// Cross-validation over lambda
// =============================================================================

enum class FallbackMode { abstain, closest_below };

struct SelectionConfig {
    std::vector<double> lambda_grid{0, 1, 2, 3, 4, 5, 6, 7, 8, 9, 10};
    int folds = 5;
    double gamma = 0.05;
    int scores = 3;
    FallbackMode mode = FallbackMode::abstain;
    std::uint64_t seed = 0;
    MainTerm objective = MainTerm::correlation;
    unsigned threads = 1;

    void validate(Index n) const {
        if (lambda_grid.empty()) fail(ErrorCode::InvalidArgument, "lambda_grid must not be empty");
        for (double l : lambda_grid)
            if (!(l >= 0.0) || !std::isfinite(l)) fail(ErrorCode::InvalidArgument, "lambda values must be >= 0");
        if (folds < 2 || folds > n) fail(ErrorCode::InvalidArgument, "folds must lie in [2, n]");
        if (!(gamma > 0.0 && gamma < 1.0)) fail(ErrorCode::InvalidArgument, "gamma must lie in (0, 1)");
        if (scores < 1) fail(ErrorCode::InvalidArgument, "scores must be positive");
    }
};

struct LambdaRow {
    double lambda = 0.0;
    /// Mean over folds of the held-out main correlation summed over scores and time points.
    double heldout_correlation = 0.0;
    /// Geometric mean of `min_p_values`.
    double aggregate_p_value = 1.0;
    bool passes = false;
    /// [fold][score] held-out main correlation sum over time points.
    std::vector<std::vector<double>> fold_correlations;
    /// [fold][score] minimum held-out confounding p-value over (i, j).
    std::vector<std::vector<double>> min_p_values;
};

struct SelectionResult {
    std::optional<double> chosen_lambda;
    bool abstained = false;
    bool fallback_used = false;
    std::vector<LambdaRow> per_lambda;
    std::vector<int> fold_assignment;
    int fold_redraws = 0;
    std::optional<FitResult> final_fit;
};

namespace detail {

inline bool has_variation(const Vector& v) { return stats::population_variance(v) > stats::kVarianceFloor; }

struct FoldData {
    PreparedProblem train;
    PreparedProblem test;
};

/// Picks the row index to use, or nullopt when abstaining.
inline std::optional<std::size_t> choose_lambda(const std::vector<LambdaRow>& rows, FallbackMode mode,
                                                bool& fallback_used) {
    std::optional<std::size_t> best;
    for (std::size_t i = 0; i < rows.size(); ++i) {
        if (!rows[i].passes) continue;
        if (!best) { best = i; continue; }
        const auto& b = rows[*best];
        const auto& c = rows[i];
        if (c.heldout_correlation > b.heldout_correlation ||
            (c.heldout_correlation == b.heldout_correlation && c.lambda > b.lambda)) {
            best = i;
        }
    }
    fallback_used = false;
    if (best || mode == FallbackMode::abstain) return best;
    fallback_used = true;
    for (std::size_t i = 0; i < rows.size(); ++i) {
        if (!best) { best = i; continue; }
        const auto& b = rows[*best];
        const auto& c = rows[i];
        if (c.aggregate_p_value > b.aggregate_p_value ||
            (c.aggregate_p_value == b.aggregate_p_value && c.lambda > b.lambda)) {
            best = i;
        }
    }
    return best;
}

}  // namespace detail

/**
 * k-fold cross-validation over the lambda grid. Each lambda must keep the
 * geometric mean of held-out minimum confounding p-values above gamma; among
 * passing values the largest held-out correlation wins (ties go to the larger
 * lambda). The winner is refit on all of `data`.
 */
inline SelectionResult cross_validate(const LongitudinalDataset& data, const SelectionConfig& sel,
                                      const OptimizerConfig& opt) {
    const Index n = data.n();
    sel.validate(n);
    opt.validate();
    if (n < static_cast<Index>(sel.folds) * (data.r() + 4)) {
        fail(ErrorCode::InsufficientSamples, "need n >= folds * (covariates + 4)");
    }

    SelectionResult out;
    const Vector current = data.current_treatment();
    std::vector<detail::FoldData> folds;
    for (int attempt = 0;; ++attempt) {
        if (attempt >= 20) fail(ErrorCode::FoldDegeneracy, "no fold assignment with treatment variation after 20 draws");
        out.fold_assignment = make_folds(n, sel.folds, sel.seed + static_cast<std::uint64_t>(attempt), current);
        out.fold_redraws = attempt;
        folds.clear();
        bool ok = true;
        for (int f = 0; f < sel.folds && ok; ++f) {
            std::vector<Index> train, test;
            for (Index i = 0; i < n; ++i) (out.fold_assignment[static_cast<std::size_t>(i)] == f ? test : train).push_back(i);
            auto train_data = data.subset(train);
            auto test_data = data.subset(test);
            if (!detail::has_variation(train_data.current_treatment()) ||
                !detail::has_variation(test_data.current_treatment())) {
                ok = false;
                break;
            }
            folds.push_back({prepare(train_data), prepare(test_data)});
        }
        if (ok) break;
    }

    const std::size_t n_lambda = sel.lambda_grid.size();
    const std::size_t n_folds = folds.size();
    out.per_lambda.resize(n_lambda);
    for (std::size_t l = 0; l < n_lambda; ++l) {
        out.per_lambda[l].lambda = sel.lambda_grid[l];
        out.per_lambda[l].fold_correlations.assign(n_folds, {});
        out.per_lambda[l].min_p_values.assign(n_folds, {});
    }
    const int s = std::min<int>(sel.scores, static_cast<int>(data.q()));
    parallel_for(n_lambda * n_folds, sel.threads, [&](std::size_t task) {
        const std::size_t l = task / n_folds;
        const std::size_t f = task % n_folds;
        const auto traces = fit_all(folds[f].train, sel.lambda_grid[l], s, opt, sel.objective);
        std::vector<double> corr, min_p;
        for (const auto& trace : traces) {
            double sum = 0.0;
            for (const auto& res : main_correlation_tests(folds[f].test, trace.alpha.values())) sum += res.r;
            corr.push_back(sum);
            min_p.push_back(min_confounding_p_value(folds[f].test, trace.alpha.values()));
        }
        out.per_lambda[l].fold_correlations[f] = std::move(corr);
        out.per_lambda[l].min_p_values[f] = std::move(min_p);
    });

    for (auto& row : out.per_lambda) {
        double total = 0.0;
        std::vector<double> all_p;
        for (std::size_t f = 0; f < n_folds; ++f) {
            for (double c : row.fold_correlations[f]) total += c;
            all_p.insert(all_p.end(), row.min_p_values[f].begin(), row.min_p_values[f].end());
        }
        row.heldout_correlation = total / static_cast<double>(n_folds);
        row.aggregate_p_value = stats::geometric_mean(all_p);
        row.passes = row.aggregate_p_value > sel.gamma;
    }

    const auto chosen = detail::choose_lambda(out.per_lambda, sel.mode, out.fallback_used);
    if (!chosen) {
        out.abstained = true;
        return out;
    }
    out.chosen_lambda = out.per_lambda[*chosen].lambda;
    const PreparedProblem full = prepare(data);
    out.final_fit = fit_at_lambda(full, *out.chosen_lambda, s, opt, sel.objective);
    out.final_fit->item_names = data.item_names;
    return out;
}

}  // namespace debias
