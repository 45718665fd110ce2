// Command-line front end: simulate, fit, evaluate, gradcheck.
//
// Exit codes: 0 success, 1 I/O, 2 validation, 3 abstention, 4 gradcheck failure.

#include <algorithm>
#include <chrono>
#include <cstdint>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"

#include "debias/debias.hpp"
#include "debias/io.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr const char* kToolVersion = "1.0.0";

enum ExitCode : int { kOk = 0, kIo = 1, kValidation = 2, kAbstained = 3, kGradient = 4 };

int exit_code_for(const debias::Error& e) {
    return e.code() == debias::ErrorCode::Io ? kIo : kValidation;
}

std::uint64_t fnv1a(const std::string& text) {
    std::uint64_t h = 1469598103934665603ULL;
    for (unsigned char c : text) {
        h ^= c;
        h *= 1099511628211ULL;
    }
    return h;
}

std::string hex(std::uint64_t v) {
    std::ostringstream out;
    out << std::hex << v;
    return out.str();
}

std::string utc_timestamp() {
    const std::time_t now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
    char buf[32];
    std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", std::gmtime(&now));
    return buf;
}

std::ofstream open_output(const fs::path& path) {
    if (path.has_parent_path()) {
        std::error_code ec;
        fs::create_directories(path.parent_path(), ec);
    }
    std::ofstream out(path, std::ios::binary);
    if (!out) debias::fail(debias::ErrorCode::Io, "cannot write '" + path.string() + "'");
    return out;
}

std::vector<double> parse_grid(const std::string& text) {
    std::vector<double> grid;
    std::stringstream in(text);
    std::string tok;
    while (std::getline(in, tok, ',')) {
        try {
            std::size_t used = 0;
            grid.push_back(std::stod(tok, &used));
            if (used != tok.size()) throw std::invalid_argument(tok);
        } catch (const std::exception&) {
            debias::fail(debias::ErrorCode::Validation, "lambda-grid: '" + tok + "' is not a number");
        }
    }
    if (grid.empty()) debias::fail(debias::ErrorCode::Validation, "lambda-grid: empty");
    return grid;
}

/// Options shared by fit and evaluate.
struct SelectionOptions {
    std::string lambda_grid = "0,1,2,3,4,5,6,7,8,9,10";
    int folds = 5;
    double gamma = 0.05;
    int scores = 3;
    std::string mode = "abstain";
    std::uint64_t seed = 0;
    unsigned threads = debias::default_thread_count();
    std::string orientation = "improvement";
    int max_iterations = 1000;
    double convergence_tol = 1e-6;

    void add_to(CLI::App& app) {
        app.add_option("--lambda-grid", lambda_grid, "Comma-separated lambda values")->capture_default_str();
        app.add_option("--folds", folds, "Cross-validation folds")->capture_default_str();
        app.add_option("--gamma", gamma, "Confounding p-value threshold")->capture_default_str();
        app.add_option("--scores", scores, "Number of scores to extract")->capture_default_str();
        app.add_option("--mode", mode, "Fallback when no lambda passes")
            ->check(CLI::IsMember({"abstain", "closest-below"}))
            ->capture_default_str();
        app.add_option("--seed", seed, "Random seed")->capture_default_str();
        app.add_option("--threads", threads, "Worker threads")->capture_default_str();
        app.add_option("--orientation", orientation, "Item orientation in the CSV")
            ->check(CLI::IsMember({"improvement", "severity"}))
            ->capture_default_str();
        app.add_option("--max-iterations", max_iterations)->capture_default_str();
        app.add_option("--convergence-tol", convergence_tol)->capture_default_str();
    }

    debias::SelectionConfig selection() const {
        debias::SelectionConfig sel;
        sel.lambda_grid = parse_grid(lambda_grid);
        sel.folds = folds;
        sel.gamma = gamma;
        sel.scores = scores;
        sel.mode = mode == "abstain" ? debias::FallbackMode::abstain : debias::FallbackMode::closest_below;
        sel.seed = seed;
        sel.threads = std::max(1u, threads);
        return sel;
    }

    debias::OptimizerConfig optimizer() const {
        debias::OptimizerConfig opt;
        opt.max_iterations = max_iterations;
        opt.convergence_tol = convergence_tol;
        opt.seed = seed;
        return opt;
    }

    debias::Orientation parsed_orientation() const {
        return orientation == "severity" ? debias::Orientation::severity : debias::Orientation::improvement;
    }

    json echo() const {
        return {{"lambda_grid", parse_grid(lambda_grid)}, {"folds", folds},       {"gamma", gamma},
                {"scores", scores},                       {"mode", mode},         {"seed", seed},
                {"orientation", orientation},             {"max_iterations", max_iterations},
                {"convergence_tol", convergence_tol}};
    }
};

debias::LongitudinalDataset load_data(const std::string& path, debias::Orientation orientation) {
    if (!fs::exists(path)) debias::fail(debias::ErrorCode::Io, "data file '" + path + "' not found");
    return debias::io::read_dataset_csv(path, orientation);
}

// -----------------------------------------------------------------------------
// simulate
// -----------------------------------------------------------------------------

struct SimulateOptions {
    std::string preset = "tads-like";
    std::string out = "sim/";
    std::uint64_t seed = 0;
    std::optional<long> n_subjects, q_items, m_timepoints, p_treatment_index, n_covariates;
    std::optional<long> confounded_low, confounded_high;
    std::optional<double> weight_low, weight_high, binarize_threshold, noise_sd, effect_scale, carryover;
};

int run_simulate(const SimulateOptions& o) {
    auto spec = debias::preset(o.preset);
    spec.seed = o.seed;
    const auto old_steps = spec.outcome_time_points();
    if (o.n_subjects) spec.n_subjects = *o.n_subjects;
    if (o.q_items) spec.q_items = *o.q_items;
    if (o.m_timepoints) spec.m_timepoints = *o.m_timepoints;
    if (o.p_treatment_index) spec.p_treatment_index = *o.p_treatment_index;
    if (o.n_covariates) spec.n_covariates = *o.n_covariates;
    if (o.confounded_low) spec.confounded_item_range.first = *o.confounded_low;
    if (o.confounded_high) spec.confounded_item_range.second = *o.confounded_high;
    if (o.weight_low) spec.confounder_weight_range.first = *o.weight_low;
    if (o.weight_high) spec.confounder_weight_range.second = *o.weight_high;
    if (o.binarize_threshold) spec.binarize_threshold = *o.binarize_threshold;
    if (o.noise_sd) spec.noise_sd = *o.noise_sd;
    if (o.carryover) spec.treatment_carryover = *o.carryover;
    if (o.effect_scale) spec.treatment_effect_profile *= *o.effect_scale;
    if (spec.q_items != spec.treatment_effect_profile.rows() || spec.outcome_time_points() != old_steps) {
        // Geometry changed: keep the preset's per-item effect on the leading items.
        const double effect = spec.treatment_effect_profile.size() ? spec.treatment_effect_profile.maxCoeff() : 0.0;
        const debias::Index steps = std::max<debias::Index>(spec.outcome_time_points(), 0);
        spec.treatment_effect_profile = debias::Matrix::Zero(std::max<debias::Index>(spec.q_items, 0), steps);
        const debias::Index responsive = std::min<debias::Index>(spec.q_items / 3 + 1, spec.q_items);
        if (steps > 0 && responsive > 0) spec.treatment_effect_profile.topRows(responsive).setConstant(effect);
    }

    const auto sim = debias::simulate(spec);

    fs::path prefix(o.out);
    if (o.out.empty() || o.out.back() == '/' || fs::is_directory(prefix)) prefix /= o.preset;
    const fs::path data_path = prefix.string() + "_data.csv";
    const fs::path truth_path = prefix.string() + "_truth.json";
    {
        auto out = open_output(data_path);
        debias::io::write_dataset_csv(out, sim.data);
    }
    {
        auto out = open_output(truth_path);
        json truth = debias::io::to_json(sim.truth);
        truth["preset"] = o.preset;
        truth["seed"] = o.seed;
        out << truth.dump(2) << '\n';
    }
    std::cout << "wrote " << data_path.string() << " (" << sim.data.n() << " subjects) and " << truth_path.string()
              << '\n';
    return kOk;
}

// -----------------------------------------------------------------------------
// fit
// -----------------------------------------------------------------------------

int run_fit(const std::string& data_path, const std::string& out_path, const SelectionOptions& o) {
    const auto data = load_data(data_path, o.parsed_orientation());
    const auto sel = o.selection();
    const auto result = debias::cross_validate(data, sel, o.optimizer());

    const json config = o.echo();
    json doc = {{"schema_version", debias::io::kSchemaVersion},
                {"tool", "debias"},
                {"tool_version", kToolVersion},
                {"created_at", utc_timestamp()},
                {"seed", o.seed},
                {"config_hash", hex(fnv1a(config.dump()))},
                {"config", config},
                {"data", {{"path", data_path}, {"n", data.n()}, {"q", data.q()}, {"p", data.p()}, {"m", data.m()}}},
                {"selection", debias::io::to_json(result)}};
    doc["status"] = result.abstained ? "abstained" : "ok";
    if (result.final_fit) {
        doc["fit"] = debias::io::to_json(*result.final_fit);
    } else {
        doc["fit"] = nullptr;
    }
    auto out = open_output(out_path);
    out << doc.dump(2) << '\n';
    if (result.abstained) {
        std::cerr << "no lambda satisfied the confounding constraint; abstaining\n";
        return kAbstained;
    }
    std::cout << "chosen lambda " << *result.chosen_lambda << "; wrote " << out_path << '\n';
    return kOk;
}

// -----------------------------------------------------------------------------
// evaluate
// -----------------------------------------------------------------------------

int run_evaluate(const std::string& data_path, const std::string& truth_path, const std::string& out_prefix,
                 int replicates, const std::vector<std::string>& method_names, const SelectionOptions& o) {
    const auto data = load_data(data_path, o.parsed_orientation());
    std::ifstream truth_in(truth_path);
    if (!truth_in) debias::fail(debias::ErrorCode::Io, "truth file '" + truth_path + "' not found");
    json truth_json;
    try {
        truth_in >> truth_json;
    } catch (const json::exception& e) {
        debias::fail(debias::ErrorCode::Validation, std::string("truth file: ") + e.what());
    }
    const auto truth = debias::io::ground_truth_from_json(truth_json);
    if (static_cast<debias::Index>(truth.confounded_items.size()) != data.time_points()) {
        debias::fail(debias::ErrorCode::Validation, "truth file time points do not match the dataset");
    }
    for (const auto& items : truth.confounded_items)
        for (auto l : items)
            if (l < 0 || l >= data.q()) debias::fail(debias::ErrorCode::Validation, "truth item index out of range");

    std::vector<debias::Method> methods;
    for (const auto& name : method_names) methods.push_back(debias::Method::parse(name));
    const auto report =
        debias::bootstrap_evaluate(data, truth, methods, replicates, o.selection(), o.optimizer(), o.seed);

    json doc = debias::io::to_json(report);
    doc["tool_version"] = kToolVersion;
    doc["created_at"] = utc_timestamp();
    doc["seed"] = o.seed;
    doc["config"] = o.echo();
    doc["config_hash"] = hex(fnv1a(o.echo().dump()));
    {
        auto out = open_output(out_prefix + "_report.json");
        out << doc.dump(2) << '\n';
    }
    {
        auto out = open_output(out_prefix + "_tidy.csv");
        debias::io::write_tidy_csv(out, report);
    }
    std::cout << report.replicates.size() << " replicates (" << report.skipped_replicates << " skipped); wrote "
              << out_prefix << "_report.json and " << out_prefix << "_tidy.csv\n";
    return kOk;
}

// -----------------------------------------------------------------------------
// gradcheck
// -----------------------------------------------------------------------------

int run_gradcheck(const std::string& data_path, double lambda, int points, const SelectionOptions& o,
                  bool inject_fault) {
    const auto data = load_data(data_path, o.parsed_orientation());
    const auto problem = debias::prepare(data);
    debias::GradientFunction override_gradient;
    if (inject_fault) {
        // Negative control: a deliberately wrong first coordinate.
        override_gradient = [](const debias::Objective& obj, const Eigen::Ref<const debias::Vector>& a) {
            debias::Vector g = obj.gradient(a);
            g(0) += 0.5 + std::abs(g(0));
            return g;
        };
    }
    const int previous = static_cast<int>(std::min<debias::Index>(2, std::max<debias::Index>(problem.q - 1, 0)));
    const auto report = debias::check_gradients(problem, lambda, previous, points, o.seed, override_gradient);
    const bool ok = report.max_error_correlation < 1e-3 && report.max_error_mse < 1e-3;
    json doc = {{"max_relative_error_correlation", report.max_error_correlation},
                {"max_relative_error_mse", report.max_error_mse},
                {"points", report.points},
                {"lambda", lambda},
                {"previous_scores", previous},
                {"threshold", 1e-3},
                {"passed", ok}};
    std::cout << doc.dump(2) << '\n';
    return ok ? kOk : kGradient;
}

/// Subcommand config files are not read by the parser, so their entries are
/// spliced in as "--key=value" right after the subcommand name. Keys also
/// given on the command line are skipped so the command line wins.
std::vector<std::string> expand_config_file(int argc, char** argv) {
    std::vector<std::string> args(argv, argv + argc);
    if (args.size() < 2) return args;
    const std::string flag = args[1] == "simulate" ? "--spec" : "--config";
    std::string path;
    for (std::size_t i = 2; i < args.size(); ++i) {
        if (args[i] == flag && i + 1 < args.size()) path = args[i + 1];
        else if (args[i].rfind(flag + "=", 0) == 0) path = args[i].substr(flag.size() + 1);
    }
    if (path.empty()) return args;
    if (!std::filesystem::is_regular_file(path)) throw CLI::FileError::Missing(path);
    std::vector<std::string> injected;
    for (const auto& item : CLI::ConfigINI{}.from_file(path)) {
        if (item.name.empty() || item.name == "++" || item.name == "--") continue;
        const std::string key = "--" + item.name;
        const bool on_command_line = std::any_of(args.begin() + 2, args.end(), [&](const std::string& a) {
            return a == key || a.rfind(key + "=", 0) == 0;
        });
        if (on_command_line) continue;
        std::string value;
        for (const auto& v : item.inputs) value += (value.empty() ? "" : ",") + v;
        injected.push_back("--" + item.name + "=" + value);
    }
    args.insert(args.begin() + 2, injected.begin(), injected.end());
    return args;
}

}  // namespace

int main(int argc, char** argv) {
    std::string config_path;
    std::vector<std::string> args;
    try {
        args = expand_config_file(argc, argv);
    } catch (const CLI::FileError& e) {
        std::cerr << "error: " << e.what() << '\n';
        return kIo;
    }

    CLI::App app{"Learns non-negative outcome weights robust to latent confounding"};
    app.require_subcommand(1);

    SimulateOptions sim;
    auto* simulate = app.add_subcommand("simulate", "Generate a synthetic longitudinal dataset");
    simulate->add_option("--spec", config_path, "Simulation spec file (key = value)");
    simulate->add_option("--preset", sim.preset)->check(CLI::IsMember({"tads-like", "catie-like"}))->capture_default_str();
    simulate->add_option("--seed", sim.seed)->capture_default_str();
    simulate->add_option("--out", sim.out, "Output prefix or directory")->capture_default_str();
    simulate->add_option("--n-subjects", sim.n_subjects);
    simulate->add_option("--q-items", sim.q_items);
    simulate->add_option("--m-timepoints", sim.m_timepoints);
    simulate->add_option("--p-treatment-index", sim.p_treatment_index);
    simulate->add_option("--n-covariates", sim.n_covariates);
    simulate->add_option("--confounded-low", sim.confounded_low);
    simulate->add_option("--confounded-high", sim.confounded_high);
    simulate->add_option("--weight-low", sim.weight_low);
    simulate->add_option("--weight-high", sim.weight_high);
    simulate->add_option("--binarize-threshold", sim.binarize_threshold);
    simulate->add_option("--noise-sd", sim.noise_sd);
    simulate->add_option("--effect-scale", sim.effect_scale, "Multiplier on the preset treatment effects");
    simulate->add_option("--carryover", sim.carryover);

    SelectionOptions fit_opts;
    std::string fit_data, fit_out = "fit.json";
    auto* fit = app.add_subcommand("fit", "Select lambda by cross-validation and fit scores");
    fit->add_option("--config", config_path, "Config file (key = value)");
    fit->add_option("--data", fit_data, "Dataset CSV")->required();
    fit->add_option("--out", fit_out, "FitResult JSON path")->capture_default_str();
    fit_opts.add_to(*fit);

    SelectionOptions eval_opts;
    eval_opts.mode = "closest-below";
    std::string eval_data, eval_truth, eval_out = "eval";
    int replicates = 1000;
    std::vector<std::string> method_names{"debias", "no-conf", "no-corr", "no-corr-no-conf"};
    auto* evaluate = app.add_subcommand("evaluate", "Bootstrap comparison against the ablations");
    evaluate->add_option("--config", config_path, "Config file (key = value)");
    evaluate->add_option("--data", eval_data, "Dataset CSV")->required();
    evaluate->add_option("--truth", eval_truth, "Ground-truth JSON")->required();
    evaluate->add_option("--out", eval_out, "Output prefix")->capture_default_str();
    evaluate->add_option("--replicates", replicates)->check(CLI::Range(2, 1000000))->capture_default_str();
    evaluate->add_option("--methods", method_names)->delimiter(',')->capture_default_str();
    eval_opts.add_to(*evaluate);

    SelectionOptions grad_opts;
    std::string grad_data;
    double grad_lambda = 1.0;
    int grad_points = 20;
    bool inject_fault = false;
    auto* gradcheck = app.add_subcommand("gradcheck", "Check analytic gradients against finite differences");
    gradcheck->add_option("--config", config_path, "Config file (key = value)");
    gradcheck->add_option("--data", grad_data, "Dataset CSV")->required();
    gradcheck->add_option("--lambda", grad_lambda)->capture_default_str();
    gradcheck->add_option("--points", grad_points)->check(CLI::PositiveNumber)->capture_default_str();
    gradcheck->add_flag("--inject-gradient-fault", inject_fault)->group("");
    grad_opts.add_to(*gradcheck);

    try {
        std::vector<std::string> reversed(args.rbegin(), args.rend() - 1);
        app.parse(std::move(reversed));
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return kValidation;
    }

    try {
        if (*simulate) return run_simulate(sim);
        if (*fit) return run_fit(fit_data, fit_out, fit_opts);
        if (*evaluate) return run_evaluate(eval_data, eval_truth, eval_out, replicates, method_names, eval_opts);
        if (*gradcheck) return run_gradcheck(grad_data, grad_lambda, grad_points, grad_opts, inject_fault);
    } catch (const debias::Error& e) {
        std::cerr << "error: " << e.what() << '\n';
        return exit_code_for(e);
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return kIo;
    }
    return kValidation;
}
