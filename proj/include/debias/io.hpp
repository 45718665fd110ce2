#pragma once

#include <cstdio>
#include <fstream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"

#include "debias/evaluation.hpp"

namespace debias::io {

using nlohmann::json;

inline constexpr int kSchemaVersion = 1;

// =============================================================================
// CSV
// =============================================================================

namespace detail {

inline std::string trim(std::string s) {
    const auto first = s.find_first_not_of(" \t\r\n");
    if (first == std::string::npos) return {};
    const auto last = s.find_last_not_of(" \t\r\n");
    return s.substr(first, last - first + 1);
}

inline std::vector<std::string> split_row(const std::string& line) {
    std::vector<std::string> cells;
    std::string cell;
    std::istringstream in(line);
    while (std::getline(in, cell, ',')) cells.push_back(trim(cell));
    if (!line.empty() && line.back() == ',') cells.emplace_back();
    return cells;
}

inline bool is_missing(const std::string& cell) {
    return cell.empty() || cell == "NA" || cell == "NaN" || cell == "nan" || cell == "na";
}

inline std::optional<Index> parse_index(const std::string& digits) {
    if (digits.empty() || digits.size() > 6) return std::nullopt;
    for (char c : digits)
        if (c < '0' || c > '9') return std::nullopt;
    return static_cast<Index>(std::stol(digits));
}

inline std::string format_number(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

struct ColumnMap {
    Index subject = -1;
    std::map<Index, Index> treatment;                      // t index -> column
    std::vector<std::pair<std::string, Index>> covariate;  // name -> column
    std::map<Index, std::vector<std::pair<std::string, Index>>> items;  // time -> (item, column)
};

inline ColumnMap map_header(const std::vector<std::string>& header) {
    ColumnMap map;
    for (Index c = 0; c < static_cast<Index>(header.size()); ++c) {
        const std::string& h = header[static_cast<std::size_t>(c)];
        if (h == "subject_id") {
            if (map.subject >= 0) fail(ErrorCode::Validation, "duplicate subject_id column");
            map.subject = c;
        } else if (h.size() > 1 && h[0] == 't' && parse_index(h.substr(1))) {
            const Index t = *parse_index(h.substr(1));
            if (t < 1 || !map.treatment.emplace(t, c).second) fail(ErrorCode::Validation, "bad treatment column '" + h + "'");
        } else if (h.rfind("x_", 0) == 0 && h.size() > 2) {
            map.covariate.emplace_back(h, c);
        } else if (h.size() > 2 && h[0] == 'y' && h.find('_') != std::string::npos) {
            const auto us = h.find('_');
            const auto t = parse_index(h.substr(1, us - 1));
            const std::string item = h.substr(us + 1);
            if (!t || item.empty()) fail(ErrorCode::Validation, "unrecognized column '" + h + "'");
            map.items[*t].emplace_back(item, c);
        } else {
            fail(ErrorCode::Validation, "unrecognized column '" + h + "'");
        }
    }
    if (map.subject < 0) fail(ErrorCode::Validation, "missing subject_id column");
    return map;
}

}  // namespace detail

/**
 * Reads the wide CSV layout: subject_id, t1..t<p>, x_*, y<i>_<item>.
 * Rows with any missing field are dropped (complete-case analysis). Items in
 * severity orientation are negated so that higher means improvement.
 */
inline LongitudinalDataset read_dataset_csv(std::istream& in, Orientation orientation = Orientation::improvement) {
    std::string line;
    if (!std::getline(in, line)) fail(ErrorCode::Validation, "empty CSV: header row required");
    if (line.rfind("\xEF\xBB\xBF", 0) == 0) line.erase(0, 3);
    const auto header = detail::split_row(line);
    const auto map = detail::map_header(header);

    const Index p = static_cast<Index>(map.treatment.size());
    if (p < 2) fail(ErrorCode::Validation, "need at least two treatment columns t1, t2");
    for (Index t = 1; t <= p; ++t)
        if (!map.treatment.count(t)) fail(ErrorCode::Validation, "treatment columns must be t1..t" + std::to_string(p));
    if (map.items.empty()) fail(ErrorCode::Validation, "no outcome columns y<i>_<item>");
    Index expected = p + 1;
    for (const auto& [t, cols] : map.items) {
        if (t != expected) {
            fail(ErrorCode::Validation, "outcome time points must be contiguous from " + std::to_string(p + 1) +
                                            "; found y" + std::to_string(t));
        }
        ++expected;
    }

    // Item order follows the first time point; later time points must name the same items.
    std::vector<std::string> item_names;
    for (const auto& [name, col] : map.items.begin()->second) item_names.push_back(name);
    std::vector<std::vector<Index>> item_cols;
    for (const auto& [t, cols] : map.items) {
        if (cols.size() != item_names.size()) {
            fail(ErrorCode::Validation, "time point " + std::to_string(t) + " has a different number of items");
        }
        std::vector<Index> ordered;
        for (const auto& name : item_names) {
            auto it = std::find_if(cols.begin(), cols.end(), [&](const auto& c) { return c.first == name; });
            if (it == cols.end()) {
                fail(ErrorCode::Validation, "time point " + std::to_string(t) + " lacks item '" + name + "'");
            }
            ordered.push_back(it->second);
        }
        item_cols.push_back(std::move(ordered));
    }

    std::vector<std::string> ids;
    std::vector<std::vector<double>> rows;
    std::size_t line_no = 1;
    while (std::getline(in, line)) {
        ++line_no;
        if (detail::trim(line).empty()) continue;
        auto cells = detail::split_row(line);
        if (cells.size() != header.size()) {
            fail(ErrorCode::Validation, "line " + std::to_string(line_no) + ": expected " +
                                            std::to_string(header.size()) + " fields, got " + std::to_string(cells.size()));
        }
        bool complete = true;
        std::vector<double> values(cells.size(), 0.0);
        for (std::size_t c = 0; c < cells.size(); ++c) {
            if (static_cast<Index>(c) == map.subject) continue;
            if (detail::is_missing(cells[c])) { complete = false; continue; }
            std::size_t used = 0;
            try {
                values[c] = std::stod(cells[c], &used);
            } catch (const std::exception&) {
                used = 0;
            }
            if (used != cells[c].size() || !std::isfinite(values[c])) {
                fail(ErrorCode::Validation, "line " + std::to_string(line_no) + ": column '" + header[c] +
                                                "' is not a number: '" + cells[c] + "'");
            }
        }
        if (detail::is_missing(cells[static_cast<std::size_t>(map.subject)])) complete = false;
        if (!complete) continue;
        ids.push_back(cells[static_cast<std::size_t>(map.subject)]);
        rows.push_back(std::move(values));
    }

    LongitudinalDataset data;
    const Index n = static_cast<Index>(rows.size());
    const Index q = static_cast<Index>(item_names.size());
    data.subject_ids = std::move(ids);
    data.item_names = item_names;
    data.treatments.resize(n, p);
    data.covariates.resize(n, static_cast<Index>(map.covariate.size()));
    for (const auto& [name, col] : map.covariate) data.covariate_names.push_back(name);
    data.outcomes.assign(item_cols.size(), Matrix(n, q));
    const double sign = orientation == Orientation::severity ? -1.0 : 1.0;
    for (Index i = 0; i < n; ++i) {
        const auto& v = rows[static_cast<std::size_t>(i)];
        for (Index t = 1; t <= p; ++t) data.treatments(i, t - 1) = v[static_cast<std::size_t>(map.treatment.at(t))];
        for (std::size_t c = 0; c < map.covariate.size(); ++c)
            data.covariates(i, static_cast<Index>(c)) = v[static_cast<std::size_t>(map.covariate[c].second)];
        for (std::size_t t = 0; t < item_cols.size(); ++t)
            for (Index l = 0; l < q; ++l)
                data.outcomes[t](i, l) = sign * v[static_cast<std::size_t>(item_cols[t][static_cast<std::size_t>(l)])];
    }
    data.validate();
    return data;
}

inline LongitudinalDataset read_dataset_csv(const std::string& path, Orientation orientation = Orientation::improvement) {
    std::ifstream in(path);
    if (!in) fail(ErrorCode::Io, "cannot open '" + path + "'");
    return read_dataset_csv(in, orientation);
}

inline void write_dataset_csv(std::ostream& out, const LongitudinalDataset& data) {
    out << "subject_id";
    for (Index t = 1; t <= data.p(); ++t) out << ",t" << t;
    for (const auto& name : data.covariate_names) out << ',' << name;
    for (Index t = 0; t < data.time_points(); ++t)
        for (const auto& item : data.item_names) out << ",y" << (data.p() + 1 + t) << '_' << item;
    out << '\n';
    for (Index i = 0; i < data.n(); ++i) {
        out << data.subject_ids[static_cast<std::size_t>(i)];
        for (Index t = 0; t < data.p(); ++t) out << ',' << detail::format_number(data.treatments(i, t));
        for (Index c = 0; c < data.r(); ++c) out << ',' << detail::format_number(data.covariates(i, c));
        for (const auto& y : data.outcomes)
            for (Index l = 0; l < y.cols(); ++l) out << ',' << detail::format_number(y(i, l));
        out << '\n';
    }
}

// =============================================================================
// JSON
// =============================================================================

inline json to_json(const GroundTruth& truth) {
    return {{"schema_version", kSchemaVersion},
            {"time_indices", truth.time_indices},
            {"confounded_items", truth.confounded_items},
            {"confounder_values", truth.confounder_values},
            {"true_weights", truth.true_weights}};
}

inline GroundTruth ground_truth_from_json(const json& j) {
    GroundTruth truth;
    try {
        truth.time_indices = j.at("time_indices").get<std::vector<Index>>();
        truth.confounded_items = j.at("confounded_items").get<std::vector<std::vector<Index>>>();
        truth.confounder_values = j.value("confounder_values", std::vector<double>{});
        truth.true_weights = j.value("true_weights", std::vector<double>{});
    } catch (const json::exception& e) {
        fail(ErrorCode::Validation, std::string("truth file: ") + e.what());
    }
    return truth;
}

inline std::vector<double> to_std(const Vector& v) { return {v.data(), v.data() + v.size()}; }

inline json to_json(const stats::PartialCorrelationResult& r) {
    return {{"r", r.r}, {"p_value", r.p_value}, {"k", r.k}, {"n", r.n}, {"degenerate", r.degenerate}};
}

inline stats::PartialCorrelationResult correlation_from_json(const json& j) {
    stats::PartialCorrelationResult r;
    r.r = j.at("r").get<double>();
    r.p_value = j.at("p_value").get<double>();
    r.k = j.at("k").get<Index>();
    r.n = j.at("n").get<Index>();
    r.degenerate = j.at("degenerate").get<bool>();
    return r;
}

inline json to_json(const ObjectiveBreakdown& b) {
    json per = json::array();
    for (const auto& t : b.per_time_point)
        per.push_back({{"main", t.main}, {"confounding", t.confounding}, {"orthogonality", t.orthogonality}});
    return {{"total", b.total},
            {"main_correlation", b.main_correlation},
            {"confounding_penalty", b.confounding_penalty},
            {"orthogonality_penalty", b.orthogonality_penalty},
            {"per_time_point", per}};
}

inline ObjectiveBreakdown breakdown_from_json(const json& j) {
    ObjectiveBreakdown b;
    b.total = j.at("total").get<double>();
    b.main_correlation = j.at("main_correlation").get<double>();
    b.confounding_penalty = j.at("confounding_penalty").get<double>();
    b.orthogonality_penalty = j.at("orthogonality_penalty").get<double>();
    for (const auto& t : j.at("per_time_point"))
        b.per_time_point.push_back({t.at("main").get<double>(), t.at("confounding").get<double>(),
                                    t.at("orthogonality").get<double>()});
    return b;
}

inline json to_json(const ScoreTrace& s, const std::vector<std::string>& item_names) {
    json weights = json::object();
    for (Index l = 0; l < s.alpha.size() && l < static_cast<Index>(item_names.size()); ++l)
        weights[item_names[static_cast<std::size_t>(l)]] = s.alpha[l];
    json steps = json::array();
    for (const auto& st : s.steps) {
        steps.push_back({{"step", st.step},
                         {"objective_before", st.objective_before},
                         {"objective_after", st.objective_after},
                         {"directional_increase", st.directional_increase},
                         {"max_change", st.max_change},
                         {"min_weight", st.min_weight},
                         {"sum_deviation", st.sum_deviation}});
    }
    return {{"alpha", to_std(s.alpha.values())},
            {"named_weights", weights},
            {"iterations_used", s.iterations_used},
            {"converged", s.converged},
            {"line_search_stalled", s.line_search_stalled},
            {"projection_collapsed", s.projection_collapsed},
            {"final_objective", to_json(s.final_objective)},
            {"steps", steps}};
}

inline ScoreTrace score_from_json(const json& j) {
    ScoreTrace s;
    const auto alpha = j.at("alpha").get<std::vector<double>>();
    s.alpha = normalize_unchecked(Eigen::Map<const Vector>(alpha.data(), static_cast<Index>(alpha.size())));
    s.iterations_used = j.at("iterations_used").get<int>();
    s.converged = j.at("converged").get<bool>();
    s.line_search_stalled = j.at("line_search_stalled").get<bool>();
    s.projection_collapsed = j.at("projection_collapsed").get<bool>();
    s.final_objective = breakdown_from_json(j.at("final_objective"));
    for (const auto& st : j.at("steps")) {
        s.steps.push_back({st.at("step").get<double>(), st.at("objective_before").get<double>(),
                           st.at("objective_after").get<double>(), st.at("directional_increase").get<double>(),
                           st.at("max_change").get<double>(), st.at("min_weight").get<double>(),
                           st.at("sum_deviation").get<double>()});
    }
    return s;
}

inline json to_json(const FitResult& fit) {
    json scores = json::array();
    for (const auto& s : fit.scores) scores.push_back(to_json(s, fit.item_names));
    json main = json::array();
    for (const auto& per_score : fit.main_tests) {
        json row = json::array();
        for (const auto& r : per_score) row.push_back(to_json(r));
        main.push_back(row);
    }
    json conf = json::array();
    for (const auto& per_score : fit.confounding) {
        json by_time = json::array();
        for (const auto& per_time : per_score) {
            json row = json::array();
            for (const auto& r : per_time) row.push_back(to_json(r));
            by_time.push_back(row);
        }
        conf.push_back(by_time);
    }
    return {{"lambda", fit.lambda},
            {"objective", fit.objective == MainTerm::correlation ? "correlation" : "mse"},
            {"item_names", fit.item_names},
            {"time_indices", fit.time_indices},
            {"scores", scores},
            {"main_tests", main},
            {"confounding_tests", conf},
            {"warnings", fit.warnings}};
}

inline FitResult fit_result_from_json(const json& j) {
    FitResult fit;
    fit.lambda = j.at("lambda").get<double>();
    fit.objective = j.at("objective").get<std::string>() == "mse" ? MainTerm::mse : MainTerm::correlation;
    fit.item_names = j.at("item_names").get<std::vector<std::string>>();
    fit.time_indices = j.at("time_indices").get<std::vector<Index>>();
    for (const auto& s : j.at("scores")) fit.scores.push_back(score_from_json(s));
    for (const auto& per_score : j.at("main_tests")) {
        std::vector<stats::PartialCorrelationResult> row;
        for (const auto& r : per_score) row.push_back(correlation_from_json(r));
        fit.main_tests.push_back(std::move(row));
    }
    for (const auto& per_score : j.at("confounding_tests")) {
        std::vector<std::vector<stats::PartialCorrelationResult>> by_time;
        for (const auto& per_time : per_score) {
            std::vector<stats::PartialCorrelationResult> row;
            for (const auto& r : per_time) row.push_back(correlation_from_json(r));
            by_time.push_back(std::move(row));
        }
        fit.confounding.push_back(std::move(by_time));
    }
    fit.warnings = j.at("warnings").get<std::vector<std::string>>();
    return fit;
}

inline json to_json(const SelectionResult& sel) {
    json rows = json::array();
    for (const auto& row : sel.per_lambda) {
        rows.push_back({{"lambda", row.lambda},
                        {"heldout_correlation", row.heldout_correlation},
                        {"aggregate_p_value", row.aggregate_p_value},
                        {"passes", row.passes},
                        {"fold_correlations", row.fold_correlations},
                        {"min_p_values", row.min_p_values}});
    }
    json out = {{"abstained", sel.abstained},
                {"fallback_used", sel.fallback_used},
                {"fold_redraws", sel.fold_redraws},
                {"per_lambda", rows}};
    out["chosen_lambda"] = sel.chosen_lambda ? json(*sel.chosen_lambda) : json(nullptr);
    return out;
}

inline json to_json(const MetricSummary& s) {
    return {{"mean", s.mean}, {"ci_low", s.mean - s.half_width}, {"ci_high", s.mean + s.half_width}, {"count", s.count}};
}

inline json to_json(const EvaluationReport& report) {
    json summaries = json::array();
    for (const auto& s : report.summaries) {
        json per_time = json::array();
        for (const auto& c : s.correlation) per_time.push_back(to_json(c));
        json per_score = json::array();
        for (const auto& k : s.per_score) {
            per_score.push_back({{"mean_correlation", to_json(k.mean_correlation)},
                                 {"min_confounding_p", to_json(k.min_confounding_p)},
                                 {"mean_confounding_p", to_json(k.mean_confounding_p)},
                                 {"confounded_sum", to_json(k.confounded_sum)}});
        }
        summaries.push_back({{"method", s.method},
                             {"correlation_by_time", per_time},
                             {"mean_correlation", to_json(s.mean_correlation)},
                             {"min_confounding_p", to_json(s.min_confounding_p)},
                             {"mean_confounding_p", to_json(s.mean_confounding_p)},
                             {"confounded_sum", to_json(s.confounded_sum)},
                             {"fit_seconds", to_json(s.fit_seconds)},
                             {"per_score", per_score}});
    }
    json comparisons = json::array();
    for (const auto& c : report.comparisons) {
        comparisons.push_back({{"reference", c.reference},
                               {"other", c.other},
                               {"metric", c.metric},
                               {"mean_difference", c.test.mean_difference},
                               {"t", c.test.t},
                               {"df", c.test.df},
                               {"p_value", c.test.p_value},
                               {"zero_variance", c.test.zero_variance},
                               {"significant", c.significant}});
    }
    return {{"schema_version", kSchemaVersion},
            {"methods", report.methods},
            {"time_indices", report.time_indices},
            {"requested_replicates", report.requested_replicates},
            {"completed_replicates", report.replicates.size()},
            {"skipped_replicates", report.skipped_replicates},
            {"bonferroni_threshold", report.bonferroni_threshold},
            {"summaries", summaries},
            {"comparisons", comparisons}};
}

/// First-score metrics, one row per replicate x method x time point x metric;
/// scalar metrics use time_point "all".
inline void write_tidy_csv(std::ostream& out, const EvaluationReport& report) {
    out << "replicate,method,time_point,metric,value\n";
    for (const auto& rep : report.replicates) {
        for (const auto& m : rep.methods) {
            const auto row = [&](const std::string& time, const char* metric, double v) {
                out << rep.replicate_id << ',' << m.method << ',' << time << ',' << metric << ','
                    << detail::format_number(v) << '\n';
            };
            for (std::size_t t = 0; t < m.correlation.front().size(); ++t) {
                const auto ti = std::to_string(report.time_indices[t]);
                row(ti, "correlation", m.correlation.front()[t]);
                row(ti, "confounding_p", m.confounding_p.front()[t]);
            }
            row("all", "min_confounding_p", m.min_confounding_p.front());
            row("all", "mean_confounding_p", m.mean_confounding_p.front());
            row("all", "confounded_sum", m.confounded_sum.front());
            row("all", "lambda", m.lambda);
            row("all", "fit_seconds", m.fit_seconds);
        }
    }
}

}  // namespace debias::io
