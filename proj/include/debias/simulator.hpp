#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "debias/dataset.hpp"

namespace debias {

enum class FirstTreatmentKind { binary, count };

/**
 * Synthetic longitudinal study with an injected latent confounder C.
 *
 * Binary treatments are drawn as randomized assignments B_j, then C is added
 * and the sum re-thresholded at `binarize_threshold`. Later assignments lean
 * on the previous treatment by `treatment_carryover`, so T_1 reaches the
 * outcomes only through T_p. A uniformly drawn subset of items receives
 * C * w[item, time] with w ~ U(confounder_weight_range).
 */
struct SimulationSpec {
    std::string name = "custom";
    Index n_subjects = 323;
    Index q_items = 17;
    Index m_timepoints = 8;
    Index p_treatment_index = 2;
    Index n_covariates = 2;
    std::pair<Index, Index> confounded_item_range{5, 12};
    std::pair<double, double> confounder_weight_range{0.2, 1.0};
    double binarize_threshold = 0.25;
    /// Effect of T_p on each item at each outcome time point, q x (m - p). Empty means zero.
    Matrix treatment_effect_profile;
    /// Shift of P(B_j = 1) when the previous treatment was given.
    double treatment_carryover = 0.3;
    double treatment_probability = 0.5;
    double noise_sd = 1.0;
    double factor_loading = 0.5;
    double covariate_effect = 0.2;
    double time_trend = 0.1;
    double confounder_in_treatment = 1.0;
    FirstTreatmentKind first_treatment = FirstTreatmentKind::binary;
    std::uint64_t seed = 0;

    Index outcome_time_points() const { return m_timepoints - p_treatment_index; }

    void validate() const {
        auto bad = [](const std::string& field, const std::string& why) {
            fail(ErrorCode::InvalidSpec, field + ": " + why);
        };
        if (n_subjects < 20) bad("n_subjects", "must be at least 20");
        if (q_items < 1) bad("q_items", "must be positive");
        if (p_treatment_index < 2) bad("p_treatment_index", "must be at least 2");
        if (m_timepoints <= p_treatment_index) bad("m_timepoints", "must exceed p_treatment_index");
        if (n_covariates < 0) bad("n_covariates", "must be non-negative");
        const auto [lo, hi] = confounded_item_range;
        const bool none = lo == 0 && hi == 0;
        if (!none && !(0 < lo && lo <= hi && hi <= q_items)) {
            bad("confounded_item_range", "need 0 < low <= high <= q_items (or 0, 0 for none)");
        }
        const auto [wlo, whi] = confounder_weight_range;
        if (!(0.0 <= wlo && wlo <= whi && std::isfinite(whi))) {
            bad("confounder_weight_range", "need 0 <= low <= high");
        }
        if (!(binarize_threshold >= 0.0)) bad("binarize_threshold", "must be >= 0");
        if (binarize_threshold > 1.0) bad("binarize_threshold", "exceeds the maximum base propensity 1");
        if (treatment_effect_profile.size() != 0 &&
            (treatment_effect_profile.rows() != q_items || treatment_effect_profile.cols() != outcome_time_points())) {
            bad("treatment_effect_profile", "must be q_items x (m_timepoints - p_treatment_index)");
        }
        if (!(treatment_probability > 0.0 && treatment_probability < 1.0)) {
            bad("treatment_probability", "must lie in (0, 1)");
        }
        if (!(treatment_carryover >= 0.0 && treatment_carryover <= 1.0)) {
            bad("treatment_carryover", "must lie in [0, 1]");
        }
        if (!(noise_sd >= 0.0) || !std::isfinite(noise_sd)) bad("noise_sd", "must be finite and >= 0");
        if (!std::isfinite(factor_loading) || !std::isfinite(covariate_effect) || !std::isfinite(time_trend) ||
            !std::isfinite(confounder_in_treatment)) {
            bad("base_process", "coefficients must be finite");
        }
    }
};

struct GroundTruth {
    std::vector<Index> time_indices;
    /// [time point] 0-based item indices carrying the confounder.
    std::vector<std::vector<Index>> confounded_items;
    std::vector<double> confounder_values;
    /// Normalized positive part of the summed treatment-effect profile (zeros if none).
    std::vector<double> true_weights;
};

struct Simulation {
    LongitudinalDataset data;
    GroundTruth truth;
};

namespace detail {

inline std::string two_digit(Index i) {
    return (i < 10 ? "0" : "") + std::to_string(i);
}

}  // namespace detail

inline Simulation simulate(const SimulationSpec& spec) {
    spec.validate();
    const Index n = spec.n_subjects;
    const Index q = spec.q_items;
    const Index p = spec.p_treatment_index;
    const Index steps = spec.outcome_time_points();
    std::mt19937_64 rng(spec.seed);
    std::normal_distribution<double> normal(0.0, 1.0);
    std::uniform_real_distribution<double> unit(0.0, 1.0);

    Simulation sim;
    auto& data = sim.data;
    auto& truth = sim.truth;

    data.subject_ids.reserve(static_cast<std::size_t>(n));
    for (Index i = 0; i < n; ++i) data.subject_ids.push_back("s" + std::to_string(i + 1));

    data.covariates.resize(n, spec.n_covariates);
    for (Index c = 0; c < spec.n_covariates; ++c) {
        const bool continuous = (c % 2 == 0);
        data.covariate_names.push_back(c == 0 ? "x_age" : c == 1 ? "x_sex" : "x_cov" + std::to_string(c + 1));
        for (Index i = 0; i < n; ++i) data.covariates(i, c) = continuous ? normal(rng) : (unit(rng) < 0.5 ? 1.0 : 0.0);
    }

    Vector confounder(n);
    for (Index i = 0; i < n; ++i) confounder(i) = normal(rng);

    // Treatments; redrawn if a binary arm comes out empty.
    data.treatments.resize(n, p);
    auto binarize = [&](double base, double c) {
        return base + spec.confounder_in_treatment * c > spec.binarize_threshold ? 1.0 : 0.0;
    };
    for (int attempt = 0;; ++attempt) {
        for (Index i = 0; i < n; ++i) {
            if (spec.first_treatment == FirstTreatmentKind::binary) {
                const double base = unit(rng) < spec.treatment_probability ? 1.0 : 0.0;
                data.treatments(i, 0) = binarize(base, confounder(i));
            } else {
                const double latent = 0.5 * (normal(rng) + spec.confounder_in_treatment * confounder(i));
                std::poisson_distribution<int> visits(std::exp(latent));
                data.treatments(i, 0) = static_cast<double>(visits(rng));
            }
            for (Index j = 1; j < p; ++j) {
                const double shift = data.treatments(i, j - 1) > 0.0 ? 0.5 : -0.5;
                const double prob =
                    std::clamp(spec.treatment_probability + spec.treatment_carryover * shift, 0.05, 0.95);
                const double base = unit(rng) < prob ? 1.0 : 0.0;
                data.treatments(i, j) = binarize(base, confounder(i));
            }
        }
        bool both_levels = true;
        if (n >= 50) {
            for (Index j = 0; j < p; ++j) {
                if (j == 0 && spec.first_treatment == FirstTreatmentKind::count) continue;
                const double s = data.treatments.col(j).sum();
                if (s == 0.0 || s == static_cast<double>(n)) both_levels = false;
            }
        }
        if (both_levels) break;
        if (attempt >= 20) fail(ErrorCode::InvalidSpec, "binarize_threshold: a treatment arm stayed empty");
    }

    // Confounded item subset, shared across time points, with time-varying weights.
    Index n_conf = 0;
    if (spec.confounded_item_range.second > 0) {
        std::uniform_int_distribution<Index> size_dist(spec.confounded_item_range.first,
                                                       spec.confounded_item_range.second);
        n_conf = size_dist(rng);
    }
    std::vector<Index> items(static_cast<std::size_t>(q));
    std::iota(items.begin(), items.end(), Index{0});
    std::shuffle(items.begin(), items.end(), rng);
    std::vector<Index> confounded(items.begin(), items.begin() + n_conf);
    std::sort(confounded.begin(), confounded.end());
    std::uniform_real_distribution<double> weight_dist(spec.confounder_weight_range.first,
                                                       spec.confounder_weight_range.second);
    Matrix conf_weight = Matrix::Zero(q, steps);
    for (Index l : confounded)
        for (Index t = 0; t < steps; ++t) conf_weight(l, t) = weight_dist(rng);

    const Matrix effect = spec.treatment_effect_profile.size() ? spec.treatment_effect_profile : Matrix::Zero(q, steps);

    Vector factor(n);
    for (Index i = 0; i < n; ++i) factor(i) = normal(rng);
    Vector covariate_shift = Vector::Zero(n);
    if (spec.n_covariates > 0) covariate_shift = spec.covariate_effect * data.covariates.rowwise().sum();

    const Vector current = data.treatments.col(p - 1);
    data.outcomes.assign(static_cast<std::size_t>(steps), Matrix(n, q));
    for (Index t = 0; t < steps; ++t) {
        Matrix& y = data.outcomes[static_cast<std::size_t>(t)];
        const double trend = spec.time_trend * static_cast<double>(t + 1);
        for (Index i = 0; i < n; ++i) {
            for (Index l = 0; l < q; ++l) {
                y(i, l) = trend + spec.factor_loading * factor(i) + covariate_shift(i) + effect(l, t) * current(i) +
                          conf_weight(l, t) * confounder(i) + spec.noise_sd * normal(rng);
            }
        }
    }
    for (Index l = 0; l < q; ++l) data.item_names.push_back("item" + detail::two_digit(l + 1));

    for (Index t = 0; t < steps; ++t) {
        truth.time_indices.push_back(p + 1 + t);
        truth.confounded_items.push_back(confounded);
    }
    truth.confounder_values.assign(confounder.data(), confounder.data() + n);
    const Vector pos = effect.rowwise().sum().cwiseMax(0.0);
    truth.true_weights.assign(static_cast<std::size_t>(q), 0.0);
    if (pos.sum() > 0.0) {
        for (Index l = 0; l < q; ++l) truth.true_weights[static_cast<std::size_t>(l)] = pos(l) / pos.sum();
    }
    data.validate();
    return sim;
}

/// Desk-scale stand-ins for the two cohorts: "tads-like" and "catie-like".
inline SimulationSpec preset(const std::string& name) {
    SimulationSpec spec;
    spec.name = name;
    if (name == "tads-like") {
        // 17 rating items; outcome weeks 6..36 after assignment at t2.
        spec.n_subjects = 323;
        spec.q_items = 17;
        spec.m_timepoints = 8;
        spec.p_treatment_index = 2;
        spec.n_covariates = 2;
        spec.confounded_item_range = {5, 12};
        spec.first_treatment = FirstTreatmentKind::binary;
        const double decay[] = {1.0, 1.0, 0.8, 0.6, 0.3, 0.1};
        spec.treatment_effect_profile = Matrix::Zero(spec.q_items, 6);
        for (Index l = 0; l < 6; ++l)
            for (Index t = 0; t < 6; ++t) spec.treatment_effect_profile(l, t) = 0.5 * decay[t];
    } else if (name == "catie-like") {
        // 30 rating items; quarterly visits over 15 months after assignment at t2.
        spec.n_subjects = 664;
        spec.q_items = 30;
        spec.m_timepoints = 7;
        spec.p_treatment_index = 2;
        spec.n_covariates = 2;
        spec.confounded_item_range = {15, 25};
        spec.first_treatment = FirstTreatmentKind::count;
        const double growth[] = {0.6, 0.8, 1.0, 1.0, 1.0};
        spec.treatment_effect_profile = Matrix::Zero(spec.q_items, 5);
        for (Index l = 0; l < 7; ++l)
            for (Index t = 0; t < 5; ++t) spec.treatment_effect_profile(l, t) = 0.4 * growth[t];
    } else {
        fail(ErrorCode::UnknownPreset, "unknown preset '" + name + "' (expected tads-like or catie-like)");
    }
    return spec;
}

}  // namespace debias
