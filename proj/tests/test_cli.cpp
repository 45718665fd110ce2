#include <catch_amalgamated.hpp>

#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>

#include "debias/io.hpp"
#include "support.hpp"

namespace fs = std::filesystem;
using namespace debias;
using nlohmann::json;

namespace {

const fs::path kWork = fs::path(DEBIAS_TEST_WORKDIR) / "cli";

int run(const std::string& args, const std::string& log = "last.log") {
    fs::create_directories(kWork);
    const std::string cmd = "cd '" + kWork.string() + "' && '" + std::string(DEBIAS_CLI_PATH) + "' " + args + " > '" +
                            log + "' 2>&1";
    const int status = std::system(cmd.c_str());
    return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

std::string slurp(const fs::path& p) {
    std::ifstream in(kWork / p, std::ios::binary);
    std::stringstream buf;
    buf << in.rdbuf();
    return buf.str();
}

json load(const fs::path& p) { return json::parse(slurp(p)); }

void ensure_tads() {
    if (!fs::exists(kWork / "sim/tads-like_data.csv")) REQUIRE(run("simulate --preset tads-like --seed 7 --out sim/") == 0);
}

}  // namespace

TEST_CASE("simulate writes data and truth") {
    REQUIRE(run("simulate --preset tads-like --seed 7 --out sim/") == 0);
    const std::string data = slurp("sim/tads-like_data.csv");
    CHECK(std::count(data.begin(), data.end(), '\n') == 324);
    const auto truth = load("sim/tads-like_truth.json");
    CHECK(truth.at("schema_version") == io::kSchemaVersion);
    CHECK(truth.at("confounded_items").size() == 6);

    REQUIRE(run("simulate --preset tads-like --seed 7 --out again/") == 0);
    CHECK(slurp("again/tads-like_data.csv") == data);
    CHECK(slurp("again/tads-like_truth.json") == slurp("sim/tads-like_truth.json"));
    REQUIRE(run("simulate --preset tads-like --seed 8 --out other/") == 0);
    CHECK(slurp("other/tads-like_data.csv") != data);
}

TEST_CASE("simulate rejects invalid specs with exit 2") {
    CHECK(run("simulate --preset tads-like --binarize-threshold 1.5 --out bad/", "bad.log") == 2);
    CHECK(slurp("bad.log").find("binarize_threshold") != std::string::npos);
    CHECK(run("simulate --preset nope --out bad/") == 2);

    std::ofstream(kWork / "spec.ini") << "preset = tads-like\nn-subjects = 80\nseed = 3\nout = spec_run\n";
    REQUIRE(run("simulate --spec spec.ini") == 0);
    const std::string data = slurp("spec_run_data.csv");
    CHECK(std::count(data.begin(), data.end(), '\n') == 81);
}

TEST_CASE("fit writes a full report") {
    ensure_tads();
    REQUIRE(run("fit --data sim/tads-like_data.csv --out fit_a.json --seed 3") == 0);
    const auto a = load("fit_a.json");
    CHECK(a.at("schema_version") == io::kSchemaVersion);
    CHECK(a.at("seed") == 3);
    CHECK(a.at("status") == "ok");
    CHECK(a.at("config").at("folds") == 5);
    CHECK(a.at("selection").at("per_lambda").size() == 11);
    CHECK(a.at("fit").at("scores").size() == 3);
    CHECK(a.at("fit").at("item_names").size() == 17);
    CHECK_FALSE(a.at("config_hash").get<std::string>().empty());

    REQUIRE(run("fit --data sim/tads-like_data.csv --out fit_b.json --seed 3") == 0);
    auto b = load("fit_b.json");
    auto a2 = a;
    a2.erase("created_at");
    b.erase("created_at");
    CHECK(a2 == b);
}

TEST_CASE("fit with one score at lambda 0 matches the library") {
    ensure_tads();
    REQUIRE(run("fit --data sim/tads-like_data.csv --out fit0.json --scores 1 --lambda-grid 0 --mode closest-below") == 0);
    const auto doc = load("fit0.json");
    const auto weights = doc.at("fit").at("scores").at(0).at("alpha").get<std::vector<double>>();
    const auto data = io::read_dataset_csv((kWork / "sim/tads-like_data.csv").string());
    const auto trace = fit_score(prepare(data), 0.0, {}, OptimizerConfig{});
    REQUIRE(static_cast<Index>(weights.size()) == trace.alpha.size());
    for (Index l = 0; l < trace.alpha.size(); ++l)
        CHECK(std::abs(weights[static_cast<std::size_t>(l)] - trace.alpha[l]) < 1e-12);
}

TEST_CASE("fit exit codes") {
    ensure_tads();
    CHECK(run("fit --data missing.csv --out x.json") == 1);
    CHECK(run("fit --data sim/tads-like_data.csv --out abst.json --gamma 0.999 --lambda-grid 0 --scores 1") == 3);
    CHECK(load("abst.json").at("status") == "abstained");
    CHECK(load("abst.json").at("fit").is_null());
    CHECK(run("fit --data sim/tads-like_data.csv --mode sometimes") == 2);
    CHECK(run("fit --data sim/tads-like_data.csv --lambda-grid 1,x") == 2);

    std::string csv = slurp("sim/tads-like_data.csv");
    csv.replace(csv.find("x_age"), 5, "age");
    std::ofstream(kWork / "badcol.csv") << csv;
    CHECK(run("fit --data badcol.csv --out x.json", "badcol.log") == 2);
    CHECK(slurp("badcol.log").find("age") != std::string::npos);

    std::ofstream(kWork / "fit.ini") << "folds = 3\nscores = 2\nlambda-grid = 0,4\n";
    REQUIRE(run("fit --data sim/tads-like_data.csv --config fit.ini --out cfg.json") == 0);
    const auto cfg = load("cfg.json");
    CHECK(cfg.at("config").at("folds") == 3);
    CHECK(cfg.at("selection").at("per_lambda").size() == 2);
    CHECK(cfg.at("fit").at("scores").size() == 2);

    REQUIRE(run("fit --data sim/tads-like_data.csv --config fit.ini --folds 4 --out cfg4.json") == 0);
    CHECK(load("cfg4.json").at("config").at("folds") == 4);
    CHECK(load("cfg4.json").at("selection").at("per_lambda").size() == 2);
    CHECK(run("fit --data sim/tads-like_data.csv --config absent.ini") == 1);
}

TEST_CASE("fit on unconfounded data chooses a small lambda") {
    std::map<double, int> counts;
    for (int s = 0; s < 20; ++s) {
        const std::string seed = std::to_string(300 + s);
        REQUIRE(run("simulate --preset tads-like --confounded-low 0 --confounded-high 0 --weight-low 0 --weight-high 0 "
                    "--seed " + seed + " --out null/s" + seed) == 0);
        const int code = run("fit --data null/s" + seed + "_data.csv --mode closest-below --seed " + seed +
                             " --out null/fit" + seed + ".json");
        REQUIRE(code == 0);
        ++counts[load("null/fit" + seed + ".json").at("selection").at("chosen_lambda").get<double>()];
    }
    const auto mode = std::max_element(counts.begin(), counts.end(),
                                       [](const auto& a, const auto& b) { return a.second < b.second; });
    INFO("mode lambda " << mode->first << " chosen " << mode->second << " times");
    CHECK(mode->first <= 1.0);
}

TEST_CASE("evaluate emits report and tidy rows") {
    ensure_tads();
    REQUIRE(run("evaluate --data sim/tads-like_data.csv --truth sim/tads-like_truth.json --replicates 50 "
                "--lambda-grid 0,3,6 --out ev") == 0);
    const auto report = load("ev_report.json");
    CHECK(report.at("methods").size() == 4);
    CHECK(report.at("completed_replicates") == 50);
    const std::string tidy = slurp("ev_tidy.csv");
    std::istringstream lines(tidy);
    std::string line;
    int correlation_rows = 0;
    while (std::getline(lines, line))
        if (line.find(",correlation,") != std::string::npos) ++correlation_rows;
    CHECK(correlation_rows == 50 * 4 * 6);

    CHECK(run("evaluate --data sim/tads-like_data.csv --truth nowhere.json --replicates 2") == 1);
    REQUIRE(run("evaluate --help", "help.log") == 0);
    CHECK(slurp("help.log").find("1000") != std::string::npos);
}

TEST_CASE("gradcheck exit codes") {
    ensure_tads();
    REQUIRE(run("gradcheck --data sim/tads-like_data.csv", "grad.log") == 0);
    const auto doc = json::parse(slurp("grad.log"));
    CHECK(doc.at("max_relative_error_correlation").get<double>() < 1e-4);
    CHECK(doc.at("max_relative_error_mse").get<double>() < 1e-4);
    CHECK(run("gradcheck --data sim/tads-like_data.csv --inject-gradient-fault") == 4);

    auto single = testing_support::random_dataset(40, 1, 4, 2, 1, 3);
    single.item_names = {"only"};
    single.covariate_names = {"x_a"};
    std::ofstream out(kWork / "single.csv");
    io::write_dataset_csv(out, single);
    out.close();
    CHECK(run("gradcheck --data single.csv") == 0);
}
