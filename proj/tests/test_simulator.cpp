#include <catch_amalgamated.hpp>

#include "support.hpp"

using namespace debias;
using namespace testing_support;

TEST_CASE("presets") {
    const auto tads = preset("tads-like");
    CHECK(tads.n_subjects == 323);
    CHECK(tads.confounded_item_range == std::pair<Index, Index>{5, 12});
    CHECK(tads.first_treatment == FirstTreatmentKind::binary);
    const auto catie = preset("catie-like");
    CHECK(catie.n_subjects == 664);
    CHECK(catie.q_items == 30);
    CHECK(catie.confounded_item_range == std::pair<Index, Index>{15, 25});
    CHECK(catie.first_treatment == FirstTreatmentKind::count);
    try {
        (void)preset("star-d");
        FAIL("expected a throw");
    } catch (const Error& e) {
        CHECK(e.code() == ErrorCode::UnknownPreset);
    }
}

TEST_CASE("simulated dimensions and ground truth") {
    auto spec = preset("tads-like");
    spec.seed = 7;
    const auto sim = simulate(spec);
    CHECK(sim.data.n() == 323);
    CHECK(sim.data.q() == 17);
    CHECK(sim.data.p() == 2);
    CHECK(sim.data.time_points() == 6);
    CHECK(sim.data.r() == 2);
    REQUIRE(sim.truth.confounded_items.size() == 6);
    for (const auto& items : sim.truth.confounded_items) {
        CHECK(items.size() >= 5);
        CHECK(items.size() <= 12);
    }
    CHECK(sim.truth.confounder_values.size() == 323);
    for (Index j = 0; j < 2; ++j) {
        const double s = sim.data.treatments.col(j).sum();
        CHECK(s > 0.0);
        CHECK(s < 323.0);
        CHECK(stats::is_binary(sim.data.treatments.col(j)));
    }

    auto catie = preset("catie-like");
    catie.seed = 7;
    const auto c = simulate(catie);
    CHECK(c.data.q() == 30);
    CHECK_FALSE(stats::is_binary(c.data.first_treatment()));
    for (const auto& items : c.truth.confounded_items) {
        CHECK(items.size() >= 15);
        CHECK(items.size() <= 25);
    }
}

TEST_CASE("seed determinism") {
    auto spec = preset("catie-like");
    spec.seed = 99;
    const auto a = simulate(spec);
    const auto b = simulate(spec);
    CHECK(a.data.treatments == b.data.treatments);
    CHECK(a.data.covariates == b.data.covariates);
    for (std::size_t t = 0; t < a.data.outcomes.size(); ++t) CHECK(a.data.outcomes[t] == b.data.outcomes[t]);
    CHECK(a.truth.confounded_items == b.truth.confounded_items);
    CHECK(a.truth.confounder_values == b.truth.confounder_values);
    spec.seed = 100;
    CHECK(simulate(spec).data.treatments != a.data.treatments);
}

TEST_CASE("spec validation names the field") {
    auto expect_field = [](SimulationSpec spec, const std::string& field) {
        try {
            spec.validate();
            FAIL("expected a throw for " + field);
        } catch (const Error& e) {
            CHECK(e.code() == ErrorCode::InvalidSpec);
            CHECK(std::string(e.what()).find(field + ": ") != std::string::npos);
        }
    };
    auto spec = preset("tads-like");
    auto s = spec;
    s.binarize_threshold = 1.5;
    expect_field(s, "binarize_threshold");
    s = spec;
    s.confounded_item_range = {4, 30};
    expect_field(s, "confounded_item_range");
    s = spec;
    s.m_timepoints = 2;
    expect_field(s, "m_timepoints");
    s = spec;
    s.p_treatment_index = 1;
    expect_field(s, "p_treatment_index");
    s = spec;
    s.confounded_item_range = {0, 0};
    CHECK_NOTHROW(s.validate());
}

TEST_CASE("unconfounded items carry no confounder given the treatment and covariates") {
    auto spec = preset("tads-like");
    spec.n_subjects = 100000;
    spec.seed = 21;
    const auto sim = simulate(spec);
    Vector c(sim.data.n());
    for (Index i = 0; i < sim.data.n(); ++i) c(i) = sim.truth.confounder_values[static_cast<std::size_t>(i)];
    const Matrix z = hcat(sim.data.current_treatment(), sim.data.covariates);
    stats::ResidualizationBasis basis(z);
    const auto& confounded = sim.truth.confounded_items.front();
    const Vector c_res = basis.residualize(c);
    int checked = 0;
    for (Index l = 0; l < sim.data.q(); ++l) {
        const bool in = std::find(confounded.begin(), confounded.end(), l) != confounded.end();
        const Vector y_res = basis.residualize(Vector(sim.data.outcomes[0].col(l)));
        const double r = oracle_pearson(y_res, c_res);
        if (in) {
            CHECK(std::abs(r) > 0.05);
        } else {
            CHECK(std::abs(r) < 0.02);
            ++checked;
        }
    }
    CHECK(checked > 0);
}

TEST_CASE("the first treatment reaches outcomes only through the current treatment") {
    // Given T_p, X and the confounder, outcomes carry no trace of T_1.
    auto spec = preset("tads-like");
    spec.n_subjects = 100000;
    spec.seed = 22;
    const auto sim = simulate(spec);
    Vector c(sim.data.n());
    for (Index i = 0; i < sim.data.n(); ++i) c(i) = sim.truth.confounder_values[static_cast<std::size_t>(i)];
    Matrix z(sim.data.n(), 2 + sim.data.r());
    z.col(0) = sim.data.current_treatment();
    z.col(1) = c;
    z.rightCols(sim.data.r()) = sim.data.covariates;
    stats::ResidualizationBasis basis(z);
    const Vector t1 = basis.residualize(sim.data.first_treatment());
    for (const auto& y : sim.data.outcomes) {
        for (Index l = 0; l < y.cols(); l += 4) {
            CHECK(std::abs(oracle_pearson(basis.residualize(Vector(y.col(l))), t1)) < 0.02);
        }
    }
    // And T_1 does shift T_p.
    CHECK(std::abs(oracle_pearson(sim.data.first_treatment(), sim.data.current_treatment())) > 0.1);
}

TEST_CASE("null construction has no confounding") {
    auto spec = preset("tads-like");
    spec.confounded_item_range = {0, 0};
    spec.confounder_weight_range = {0, 0};
    spec.seed = 3;
    const auto sim = simulate(spec);
    for (const auto& items : sim.truth.confounded_items) CHECK(items.empty());
}
