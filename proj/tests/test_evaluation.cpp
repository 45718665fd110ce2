#include <catch_amalgamated.hpp>

#include <mutex>
#include <set>

#include "support.hpp"

using namespace debias;
using namespace testing_support;
using Catch::Matchers::WithinAbs;

TEST_CASE("sum of confounded coefficients") {
    GroundTruth truth;
    truth.confounded_items = {{}, {}};
    const auto uniform = WeightVector::uniform(6);
    CHECK(sum_confounded_coefficients(uniform, truth) == 0.0);
    truth.confounded_items = {{0, 1, 2, 3, 4, 5}};
    CHECK_THAT(sum_confounded_coefficients(uniform, truth), WithinAbs(1.0, 1e-15));
    truth.confounded_items = {{0, 2}, {2, 4}};
    CHECK_THAT(sum_confounded_coefficients(uniform, truth), WithinAbs(0.5, 1e-15));
    truth.confounded_items = {{6}};
    CHECK_THROWS_AS(sum_confounded_coefficients(uniform, truth), Error);
}

TEST_CASE("paired t-test") {
    SECTION("a = b") {
        const std::vector<double> a{1, 2, 3};
        const auto res = paired_t_test(a, a);
        CHECK(res.p_value == 1.0);
        CHECK(res.zero_variance);
    }
    SECTION("zero mean difference") {
        const std::vector<double> a{1, 0, 1, 0}, b{0, 1, 0, 1};
        const auto res = paired_t_test(a, b);
        CHECK(res.t == 0.0);
        CHECK_THAT(res.p_value, WithinAbs(1.0, 1e-15));
    }
    SECTION("six pairs by hand") {
        const std::vector<double> a{5.1, 4.8, 6.0, 5.5, 4.9, 5.7};
        const std::vector<double> b{4.9, 4.9, 5.2, 5.0, 4.4, 5.1};
        // d = (0.2, -0.1, 0.8, 0.5, 0.5, 0.6); mean 2.5/6
        const double d[] = {0.2, -0.1, 0.8, 0.5, 0.5, 0.6};
        const double mean = 2.5 / 6.0;
        double ss = 0;
        for (double x : d) ss += (x - mean) * (x - mean);
        const double sd = std::sqrt(ss / 5.0);
        const double t = mean / (sd / std::sqrt(6.0));
        const auto res = paired_t_test(a, b);
        CHECK_THAT(res.t, WithinAbs(t, 1e-10));
        CHECK(res.df == 5.0);
        boost::math::students_t dist(5.0);
        CHECK_THAT(res.p_value, WithinAbs(2 * boost::math::cdf(boost::math::complement(dist, t)), 1e-10));
        CHECK_THAT(one_sided_greater(res), WithinAbs(res.p_value / 2, 1e-12));
    }
    SECTION("length checks") {
        const std::vector<double> a{1.0}, b{2.0, 3.0};
        CHECK_THROWS_AS(paired_t_test(a, a), Error);
        CHECK_THROWS_AS(paired_t_test(a, b), Error);
    }
}

TEST_CASE("bootstrap split covers about 63.2% of subjects") {
    std::mt19937_64 rng(1);
    const auto split = bootstrap_split(1000, rng);
    std::set<Index> all(split.train.begin(), split.train.end());
    all.insert(split.test.begin(), split.test.end());
    CHECK(all.size() == 1000);
    CHECK(split.train.size() + split.test.size() == 1000);
    CHECK(std::abs(static_cast<double>(split.train.size()) / 1000.0 - 0.632) < 0.05);
}

TEST_CASE("summaries use 1.96 standard errors") {
    const std::vector<double> v{1, 2, 3, 4};
    const auto s = summarize(v);
    CHECK(s.mean == 2.5);
    const double sd = std::sqrt((2.25 + 0.25 + 0.25 + 2.25) / 3.0);
    CHECK_THAT(s.half_width, WithinAbs(1.96 * sd / 2.0, 1e-12));
}

TEST_CASE("mse variant reaches zero on a perfect fit") {
    const auto d = planted_dataset(200, 6, 2, 3);
    const auto pr = prepare(d);
    Vector planted = Vector::Zero(6);
    planted(2) = 1.0;
    const auto b = evaluate(pr, WeightVector::from_values(planted), 0.0, {}, MainTerm::mse);
    CHECK(std::abs(b.main_correlation) < 1e-12);
    const auto trace = mse_objective_variant(pr, 0.0, {}, OptimizerConfig{});
    CHECK(trace.alpha[2] > 0.9);
}

TEST_CASE("methods") {
    CHECK(Method::parse("no-corr-no-conf").objective() == MainTerm::mse);
    CHECK_FALSE(Method::parse("no-corr-no-conf").penalized());
    CHECK(Method::parse("no-conf").selection(SelectionConfig{}).lambda_grid == std::vector<double>{0.0});
    CHECK(Method::parse("debias").selection(SelectionConfig{}).lambda_grid.size() == 11);
    CHECK_THROWS_AS(Method::parse("rboost"), Error);
}

namespace {

Simulation small_sim(std::uint64_t seed) {
    auto spec = preset("tads-like");
    spec.n_subjects = 200;
    spec.seed = seed;
    return simulate(spec);
}

SelectionConfig quick_selection() {
    SelectionConfig sel;
    sel.lambda_grid = {0, 5};
    sel.scores = 2;
    return sel;
}

}  // namespace

TEST_CASE("bootstrap evaluation shape") {
    const auto sim = small_sim(5);
    SECTION("two replicates, one method: no tests") {
        const auto report = bootstrap_evaluate(sim.data, sim.truth, {Method::parse("debias")}, 2, quick_selection(),
                                               OptimizerConfig{}, 1);
        CHECK(report.replicates.size() + static_cast<std::size_t>(report.skipped_replicates) == 2);
        CHECK(report.comparisons.empty());
        REQUIRE(report.summaries.size() == 1);
        CHECK(report.summaries[0].mean_correlation.count == report.replicates.size());
    }
    SECTION("self-comparison") {
        const auto report = bootstrap_evaluate(sim.data, sim.truth, {Method::parse("debias"), Method::parse("debias")},
                                               4, quick_selection(), OptimizerConfig{}, 2);
        REQUIRE_FALSE(report.comparisons.empty());
        for (const auto& c : report.comparisons) {
            CHECK(c.test.p_value == 1.0);
            CHECK_FALSE(c.significant);
        }
        CHECK(report.bonferroni_threshold == 0.05);
    }
    SECTION("four methods, thread-count independent") {
        auto sel = quick_selection();
        const auto one = bootstrap_evaluate(sim.data, sim.truth, all_methods(), 4, sel, OptimizerConfig{}, 3);
        sel.threads = 3;
        const auto many = bootstrap_evaluate(sim.data, sim.truth, all_methods(), 4, sel, OptimizerConfig{}, 3);
        CHECK_THAT(one.bonferroni_threshold, WithinAbs(0.05 / 3.0, 1e-15));
        REQUIRE(one.replicates.size() == many.replicates.size());
        for (std::size_t r = 0; r < one.replicates.size(); ++r) {
            REQUIRE(one.replicates[r].methods.size() == 4);
            for (std::size_t m = 0; m < 4; ++m) {
                CHECK(one.replicates[r].methods[m].correlation == many.replicates[r].methods[m].correlation);
                CHECK(one.replicates[r].methods[m].confounded_sum == many.replicates[r].methods[m].confounded_sum);
                for (const auto& row : one.replicates[r].methods[m].correlation)
                    for (double c : row) {
                        CHECK(c >= -1.0);
                        CHECK(c <= 1.0);
                    }
            }
            CHECK(one.replicates[r].methods[1].lambda == 0.0);
            CHECK(one.replicates[r].methods[3].lambda == 0.0);
        }
    }
}

TEST_CASE("metrics read only never-drawn subjects") {
    const auto sim = small_sim(6);
    std::mutex mu;
    int audited = 0;
    EvaluationHooks hooks;
    hooks.on_split = [&](int, std::span<const Index> train, std::span<const Index> test) {
        std::set<Index> seen(train.begin(), train.end());
        std::lock_guard lock(mu);
        for (Index i : test) CHECK(seen.count(i) == 0);
        ++audited;
    };
    auto sel = quick_selection();
    sel.threads = 2;
    const auto report =
        bootstrap_evaluate(sim.data, sim.truth, {Method::parse("debias")}, 3, sel, OptimizerConfig{}, 9, hooks);
    CHECK(audited == 3);
    for (const auto& rep : report.replicates) {
        CHECK(rep.train_size + rep.test_size == sim.data.n());
    }
}

TEST_CASE("evaluation argument checks") {
    const auto sim = small_sim(7);
    CHECK_THROWS_AS(bootstrap_evaluate(sim.data, sim.truth, {Method::parse("debias")}, 1, quick_selection(),
                                       OptimizerConfig{}, 1),
                    Error);
    CHECK_THROWS_AS(bootstrap_evaluate(sim.data, sim.truth, {}, 3, quick_selection(), OptimizerConfig{}, 1), Error);
}
