#pragma once

#include <chrono>
#include <cstdint>
#include <functional>
#include <random>
#include <set>
#include <span>
#include <string>
#include <vector>

#include "debias/selection.hpp"
#include "debias/simulator.hpp"

namespace debias {

// =============================================================================
// Metrics
// =============================================================================

/// Sum of alpha over the union (across time points) of confounded items.
inline double sum_confounded_coefficients(const WeightVector& alpha, const GroundTruth& truth) {
    std::set<Index> items;
    for (const auto& per_time : truth.confounded_items) {
        for (Index l : per_time) {
            if (l < 0 || l >= alpha.size()) {
                fail(ErrorCode::IndexOutOfRange, "confounded item " + std::to_string(l) + " outside [0, " +
                                                     std::to_string(alpha.size()) + ")");
            }
            items.insert(l);
        }
    }
    double sum = 0.0;
    for (Index l : items) sum += alpha[l];
    return sum;
}

struct PairedTestResult {
    double t = 0.0;
    double df = 0.0;
    double p_value = 1.0;
    double mean_difference = 0.0;
    bool zero_variance = false;
};

/// Two-sided paired t-test of a - b. Constant differences give p = 1 with the flag set.
inline PairedTestResult paired_t_test(std::span<const double> a, std::span<const double> b) {
    if (a.size() != b.size()) fail(ErrorCode::DimensionMismatch, "paired_t_test: length mismatch");
    if (a.size() < 2) fail(ErrorCode::InvalidArgument, "paired_t_test needs at least two pairs");
    const double n = static_cast<double>(a.size());
    PairedTestResult out;
    out.df = n - 1.0;
    double mean = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) mean += a[i] - b[i];
    mean /= n;
    double ss = 0.0;
    bool identical = true;
    const double first = a[0] - b[0];
    for (std::size_t i = 0; i < a.size(); ++i) {
        const double d = a[i] - b[i];
        ss += (d - mean) * (d - mean);
        identical = identical && d == first;
    }
    out.mean_difference = mean;
    if (identical || !(ss > 0.0)) {
        out.zero_variance = true;
        return out;
    }
    const double se = std::sqrt(ss / (n - 1.0)) / std::sqrt(n);
    out.t = mean / se;
    boost::math::students_t dist(out.df);
    out.p_value = std::clamp(2.0 * boost::math::cdf(boost::math::complement(dist, std::abs(out.t))), 0.0, 1.0);
    return out;
}

/// One-sided p-value for mean(a - b) > 0 from a two-sided result.
inline double one_sided_greater(const PairedTestResult& test) {
    if (test.zero_variance) return 1.0;
    return test.t > 0.0 ? test.p_value / 2.0 : 1.0 - test.p_value / 2.0;
}

/// The MSE ablation: term (a) becomes the negative mean squared residual gap.
inline ScoreTrace mse_objective_variant(const PreparedProblem& problem, double lambda,
                                        std::span<const WeightVector> previous, const OptimizerConfig& config) {
    return fit_score(problem, lambda, previous, config, MainTerm::mse);
}

// =============================================================================
// Methods
// =============================================================================

enum class MethodKind { debias, no_conf, no_corr, no_corr_no_conf };

struct Method {
    MethodKind kind = MethodKind::debias;

    std::string name() const {
        switch (kind) {
        case MethodKind::debias: return "debias";
        case MethodKind::no_conf: return "no-conf";
        case MethodKind::no_corr: return "no-corr";
        case MethodKind::no_corr_no_conf: return "no-corr-no-conf";
        }
        return "unknown";
    }
    MainTerm objective() const {
        return (kind == MethodKind::no_corr || kind == MethodKind::no_corr_no_conf) ? MainTerm::mse
                                                                                  : MainTerm::correlation;
    }
    bool penalized() const { return kind == MethodKind::debias || kind == MethodKind::no_corr; }

    /// Selection settings for this method; unpenalized variants pin lambda to 0.
    SelectionConfig selection(SelectionConfig base) const {
        base.objective = objective();
        if (!penalized()) base.lambda_grid = {0.0};
        return base;
    }

    static Method parse(const std::string& name) {
        for (auto k : {MethodKind::debias, MethodKind::no_conf, MethodKind::no_corr, MethodKind::no_corr_no_conf}) {
            if (Method{k}.name() == name) return Method{k};
        }
        fail(ErrorCode::InvalidArgument, "unknown method '" + name + "'");
    }
};

inline std::vector<Method> all_methods() {
    return {{MethodKind::debias}, {MethodKind::no_conf}, {MethodKind::no_corr}, {MethodKind::no_corr_no_conf}};
}

// =============================================================================
// Bootstrap harness
// =============================================================================

struct MethodOutcome {
    std::string method;
    double lambda = 0.0;
    bool fallback_used = false;
    /// [score][time point] held-out cor(Y_i alpha, T_p | T_1, X)
    std::vector<std::vector<double>> correlation;
    /// [score][time point] held-out confounding p-value, minimum over j
    std::vector<std::vector<double>> confounding_p;
    std::vector<double> min_confounding_p;   // [score], min over (i, j)
    std::vector<double> mean_confounding_p;  // [score], mean over (i, j)
    std::vector<double> confounded_sum;      // [score]
    std::vector<Vector> weights;
    double fit_seconds = 0.0;
};

struct ReplicateResult {
    int replicate_id = 0;
    Index train_size = 0;
    Index test_size = 0;
    std::vector<MethodOutcome> methods;
};

struct BootstrapSplit {
    std::vector<Index> train;  // unique subjects drawn at least once
    std::vector<Index> test;   // subjects never drawn
};

/// Draws n rows with replacement; drawn rows train, the rest test.
inline BootstrapSplit bootstrap_split(Index n, std::mt19937_64& rng) {
    std::uniform_int_distribution<Index> pick(0, n - 1);
    std::vector<char> drawn(static_cast<std::size_t>(n), 0);
    for (Index i = 0; i < n; ++i) drawn[static_cast<std::size_t>(pick(rng))] = 1;
    BootstrapSplit split;
    for (Index i = 0; i < n; ++i) (drawn[static_cast<std::size_t>(i)] ? split.train : split.test).push_back(i);
    return split;
}

struct MetricSummary {
    double mean = 0.0;
    double half_width = 0.0;  // 1.96 * standard error of the mean
    std::size_t count = 0;
};

inline MetricSummary summarize(std::span<const double> values) {
    MetricSummary s;
    s.count = values.size();
    if (values.empty()) return s;
    const double n = static_cast<double>(values.size());
    for (double v : values) s.mean += v;
    s.mean /= n;
    if (values.size() > 1) {
        double ss = 0.0;
        for (double v : values) ss += (v - s.mean) * (v - s.mean);
        s.half_width = 1.96 * std::sqrt(ss / (n - 1.0)) / std::sqrt(n);
    }
    return s;
}

struct ScoreSummary {
    MetricSummary mean_correlation;
    MetricSummary min_confounding_p;
    MetricSummary mean_confounding_p;
    MetricSummary confounded_sum;
};

struct MethodSummary {
    std::string method;
    std::vector<ScoreSummary> per_score;
    std::vector<MetricSummary> correlation;  // per time point, first score
    MetricSummary mean_correlation;          // averaged over time points, first score
    MetricSummary min_confounding_p;
    MetricSummary mean_confounding_p;
    MetricSummary confounded_sum;
    MetricSummary fit_seconds;
};

struct Comparison {
    std::string reference;
    std::string other;
    std::string metric;
    PairedTestResult test;
    bool significant = false;
};

struct EvaluationReport {
    std::vector<std::string> methods;
    std::vector<Index> time_indices;
    int requested_replicates = 0;
    int skipped_replicates = 0;
    double bonferroni_threshold = 0.05;
    std::vector<ReplicateResult> replicates;
    std::vector<MethodSummary> summaries;
    std::vector<Comparison> comparisons;
};

/// Observer for audits; receives the rows used for fitting and for metrics.
struct EvaluationHooks {
    std::function<void(int replicate, std::span<const Index> train_rows, std::span<const Index> metric_rows)> on_split;
};

namespace detail {

inline bool usable_split(const LongitudinalDataset& data, const BootstrapSplit& split) {
    const Index need = data.r() + 6;
    if (static_cast<Index>(split.test.size()) < need || static_cast<Index>(split.train.size()) < need) return false;
    for (const auto* rows : {&split.train, &split.test}) {
        const auto part = data.subset(*rows);
        if (!has_variation(part.current_treatment()) || !has_variation(part.first_treatment())) return false;
        for (const auto& y : part.outcomes)
            for (Index l = 0; l < y.cols(); ++l)
                if (stats::population_variance(y.col(l)) < stats::kVarianceFloor) return false;
    }
    return true;
}

inline MethodOutcome run_method(const Method& method, const LongitudinalDataset& train,
                                const PreparedProblem& test, const GroundTruth& truth,
                                const SelectionConfig& sel, const OptimizerConfig& opt) {
    MethodOutcome out;
    out.method = method.name();
    const auto start = std::chrono::steady_clock::now();
    auto selection = cross_validate(train, method.selection(sel), opt);
    out.fit_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    if (!selection.final_fit) fail(ErrorCode::AllAbstained, "harness selection abstained");
    out.lambda = *selection.chosen_lambda;
    out.fallback_used = selection.fallback_used;
    for (const auto& trace : selection.final_fit->scores) {
        const Vector& a = trace.alpha.values();
        std::vector<double> corr;
        for (const auto& res : main_correlation_tests(test, a)) corr.push_back(res.r);
        std::vector<double> conf_by_time;
        double min_p = 1.0, sum_p = 0.0;
        std::size_t count = 0;
        for (const auto& row : confounding_tests(test, a)) {
            double time_min = 1.0;
            for (const auto& res : row) {
                time_min = std::min(time_min, res.p_value);
                sum_p += res.p_value;
                ++count;
            }
            min_p = std::min(min_p, time_min);
            conf_by_time.push_back(time_min);
        }
        out.correlation.push_back(std::move(corr));
        out.confounding_p.push_back(std::move(conf_by_time));
        out.min_confounding_p.push_back(min_p);
        out.mean_confounding_p.push_back(count ? sum_p / static_cast<double>(count) : 1.0);
        out.confounded_sum.push_back(sum_confounded_coefficients(trace.alpha, truth));
        out.weights.push_back(a);
    }
    return out;
}

inline double mean_of(const std::vector<double>& v) {
    double s = 0.0;
    for (double x : v) s += x;
    return v.empty() ? 0.0 : s / static_cast<double>(v.size());
}

}  // namespace detail

/**
 * Bootstrap comparison of fit modes on held-out subjects. Every method sees
 * the same resample and fold seeds within a replicate. The first method is
 * the reference in paired tests; significance uses 0.05 / (methods - 1).
 */
inline EvaluationReport bootstrap_evaluate(const LongitudinalDataset& data, const GroundTruth& truth,
                                           const std::vector<Method>& methods, int replicates,
                                           SelectionConfig sel, const OptimizerConfig& opt, std::uint64_t seed,
                                           const EvaluationHooks& hooks = {}) {
    if (replicates < 2) fail(ErrorCode::InvalidArgument, "need at least 2 replicates");
    if (methods.empty()) fail(ErrorCode::InvalidArgument, "need at least one method");
    sel.mode = FallbackMode::closest_below;
    const unsigned threads = sel.threads;
    sel.threads = 1;

    std::vector<std::optional<ReplicateResult>> slots(static_cast<std::size_t>(replicates));
    parallel_for(slots.size(), threads, [&](std::size_t r) {
        std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                          static_cast<std::uint32_t>(r)};
        std::mt19937_64 rng(seq);
        BootstrapSplit split;
        bool ok = false;
        for (int attempt = 0; attempt < 20 && !ok; ++attempt) {
            split = bootstrap_split(data.n(), rng);
            ok = detail::usable_split(data, split);
        }
        if (!ok) return;
        if (hooks.on_split) hooks.on_split(static_cast<int>(r), split.train, split.test);
        const auto train = data.subset(split.train);
        const auto test = prepare(data.subset(split.test));
        SelectionConfig rep_sel = sel;
        rep_sel.seed = sel.seed + r;
        ReplicateResult result;
        result.replicate_id = static_cast<int>(r);
        result.train_size = static_cast<Index>(split.train.size());
        result.test_size = static_cast<Index>(split.test.size());
        try {
            for (const auto& m : methods) result.methods.push_back(detail::run_method(m, train, test, truth, rep_sel, opt));
        } catch (const Error&) {
            return;  // counted as skipped
        }
        slots[r] = std::move(result);
    });

    EvaluationReport report;
    report.requested_replicates = replicates;
    for (const auto& m : methods) report.methods.push_back(m.name());
    for (Index t = 0; t < data.time_points(); ++t) report.time_indices.push_back(data.p() + 1 + t);
    for (auto& slot : slots) {
        if (slot) report.replicates.push_back(std::move(*slot));
        else ++report.skipped_replicates;
    }
    const std::size_t u = methods.size() > 1 ? methods.size() - 1 : 1;
    report.bonferroni_threshold = 0.05 / static_cast<double>(u);

    // Headline metrics use the first score.
    auto column = [&](std::size_t method, auto&& metric) {
        std::vector<double> values;
        for (const auto& rep : report.replicates) values.push_back(metric(rep.methods[method]));
        return values;
    };
    const auto n_times = static_cast<std::size_t>(data.time_points());
    using Extractor = std::function<double(const MethodOutcome&)>;
    std::vector<std::pair<std::string, Extractor>> metrics = {
        {"mean_correlation", [](const MethodOutcome& o) { return detail::mean_of(o.correlation.front()); }},
        {"min_confounding_p", [](const MethodOutcome& o) { return o.min_confounding_p.front(); }},
        {"mean_confounding_p", [](const MethodOutcome& o) { return o.mean_confounding_p.front(); }},
        {"confounded_sum", [](const MethodOutcome& o) { return o.confounded_sum.front(); }},
    };
    for (std::size_t t = 0; t < n_times; ++t) {
        metrics.emplace_back("correlation_t" + std::to_string(data.p() + 1 + static_cast<Index>(t)),
                             [t](const MethodOutcome& o) { return o.correlation.front()[t]; });
    }

    for (std::size_t m = 0; m < methods.size(); ++m) {
        MethodSummary s;
        s.method = methods[m].name();
        for (std::size_t t = 0; t < n_times; ++t)
            s.correlation.push_back(summarize(column(m, [t](const MethodOutcome& o) { return o.correlation.front()[t]; })));
        s.mean_correlation = summarize(column(m, metrics[0].second));
        s.min_confounding_p = summarize(column(m, metrics[1].second));
        s.mean_confounding_p = summarize(column(m, metrics[2].second));
        s.confounded_sum = summarize(column(m, metrics[3].second));
        s.fit_seconds = summarize(column(m, [](const MethodOutcome& o) { return o.fit_seconds; }));
        const std::size_t n_scores = report.replicates.empty() ? 0 : report.replicates.front().methods[m].correlation.size();
        for (std::size_t k = 0; k < n_scores; ++k) {
            ScoreSummary ks;
            ks.mean_correlation = summarize(column(m, [k](const MethodOutcome& o) { return detail::mean_of(o.correlation[k]); }));
            ks.min_confounding_p = summarize(column(m, [k](const MethodOutcome& o) { return o.min_confounding_p[k]; }));
            ks.mean_confounding_p = summarize(column(m, [k](const MethodOutcome& o) { return o.mean_confounding_p[k]; }));
            ks.confounded_sum = summarize(column(m, [k](const MethodOutcome& o) { return o.confounded_sum[k]; }));
            s.per_score.push_back(ks);
        }
        report.summaries.push_back(std::move(s));
    }

    if (report.replicates.size() >= 2) {
        for (std::size_t m = 1; m < methods.size(); ++m) {
            for (const auto& [name, metric] : metrics) {
                Comparison c;
                c.reference = methods[0].name();
                c.other = methods[m].name();
                c.metric = name;
                const auto a = column(0, metric);
                const auto b = column(m, metric);
                c.test = paired_t_test(a, b);
                c.significant = !c.test.zero_variance && c.test.p_value < report.bonferroni_threshold;
                report.comparisons.push_back(std::move(c));
            }
        }
    }
    return report;
}

}  // namespace debias
