#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "qsheet/baselines.hpp"
#include "oracles.hpp"

#include <cmath>

using namespace qsheet;

namespace {

Dataset linear_gaussian(oracles::Rng& rng, int n, double sigma = 0.2) {
    Dataset d;
    for (int i = 0; i < n; ++i) {
        const double x = rng.uniform();
        d.xs.push_back(x);
        d.ys.push_back(0.2 + 0.4 * x + sigma * rng.normal());
    }
    return d;
}

int crossings(const SheetModel& m) {
    const SheetSpec spec = m.spec();
    const CoefficientState st = m.state();
    int bad = 0;
    for (int c = 0; c <= 30; ++c) {
        double prev = -std::numeric_limits<double>::infinity();
        for (int r = 0; r <= 30; ++r) {
            const double q = eval_point(spec, st, r / 30.0, c / 30.0);
            if (q < prev - 1e-10) ++bad;
            prev = q;
        }
    }
    return bad;
}

}  // namespace

TEST_CASE("default tau grid") {
    const std::vector<double> g = default_tau_grid();
    REQUIRE(g.size() == 19);
    CHECK(g.front() == doctest::Approx(0.05));
    CHECK(g.back() == doctest::Approx(0.95));
    CHECK(g[9] == doctest::Approx(0.5));
}

TEST_CASE("reweighting formula") {
    CHECK(irls_weight(2.0, 0.9, 1e-6) == doctest::Approx(0.45));
    CHECK(irls_weight(-2.0, 0.9, 1e-6) == doctest::Approx(0.05));
    CHECK(irls_weight(2.0, 0.5, 1e-6) == doctest::Approx(0.25));
    // floor prevents blowup at tiny residuals
    CHECK(irls_weight(1e-15, 0.5, 1e-3) == doctest::Approx(500.0));
    CHECK(irls_weight(0.0, 0.3, 1e-3) == doctest::Approx(300.0));
}

TEST_CASE("tau grid validation") {
    const SheetSpec spec = make_sheet_spec(2, 3, 2, 3);
    oracles::Rng rng(127);
    const Dataset d = linear_gaussian(rng, 64);
    const PenaltyConfig pen = build_penalty(spec, 0.1, 0.1, 0.1);
    IrlsConfig cfg;
    cfg.tau_grid = {0.2, 0.2, 0.8};
    CHECK_THROWS_AS(fit_irls_sheet(spec, d, pen, cfg), std::invalid_argument);
    cfg.tau_grid = {0.0, 0.5};
    CHECK_THROWS_AS(fit_irls_sheet(spec, d, pen, cfg), std::invalid_argument);
    cfg.tau_grid = {};
    CHECK_THROWS_AS(fit_irls_sheet(spec, d, pen, cfg), std::invalid_argument);
    CHECK_THROWS_AS(fit_two_step(spec, d, pen, {0.5}, 0.0), std::invalid_argument);
    CHECK_THROWS_AS(fit_two_step(spec, d, pen, {}, 0.2), std::invalid_argument);
}

TEST_CASE("reweighted sheet fit: non-crossing and near the true median") {
    oracles::Rng rng(131);
    const SheetSpec spec = make_sheet_spec(2, 4, 2, 4);
    const Dataset d = linear_gaussian(rng, 256);
    const PenaltyConfig pen = build_penalty(spec, 0.5, 0.5, 0.5);
    const SheetModel m = fit_irls_sheet(spec, d, pen);
    CHECK(m.method == "irls");
    CHECK(m.converged);
    CHECK(crossings(m) == 0);
    double err = 0.0;
    for (int i = 0; i <= 20; ++i) {
        const double x = 0.05 + 0.9 * i / 20.0;
        err = std::max(err, std::abs(m.predict(0.5, x) - (0.2 + 0.4 * x)));
    }
    CHECK(err < 0.1);
}

TEST_CASE("reweighted fit is comparable to the exact-loss fit") {
    oracles::Rng rng(137);
    const SheetSpec spec = make_sheet_spec(2, 4, 2, 4);
    const Dataset d = linear_gaussian(rng, 256);
    const PenaltyConfig pen = build_penalty(spec, 0.5, 0.5, 0.5);

    const SheetModel irls = fit_irls_sheet(spec, d, pen);
    OptimConfig cfg;
    cfg.max_iters = 500;
    const FitReport exact = fit_backtracking(spec, d, pen, cfg, LossKind::exact);

    const GradientWorkspace w = make_workspace(spec, d);
    const double loss_irls = loss_R(spec, irls.state(), d, pen, w);
    const double loss_exact = loss_R(spec, exact.final_state, d, pen, w);
    // the direct minimizer wins, but the reweighted fit should be close
    CHECK(loss_irls >= loss_exact - 1e-9);
    CHECK(loss_irls <= 1.5 * loss_exact + 0.02);
}

TEST_CASE("two-step on noiseless linear data recovers the line") {
    const SheetSpec spec = make_sheet_spec(2, 4, 2, 4);
    Dataset d;
    const int n = 200;
    for (int i = 0; i < n; ++i) {
        const double x = (i + 0.5) / n;
        d.xs.push_back(x);
        d.ys.push_back(0.2 + 0.4 * x);
    }
    const PenaltyConfig pen = build_penalty(spec, 1e-6, 1e-6, 1e-6);
    const SheetModel m = fit_two_step(spec, d, pen, default_tau_grid(), 0.2);
    CHECK(m.method == "two_step");
    CHECK(crossings(m) == 0);
    // in the degenerate (noiseless) case every local quantile sits on the
    // line, so all quantile curves nearly coincide with it
    for (double tau : {0.1, 0.5, 0.9})
        for (int i = 2; i <= 18; ++i) {
            const double x = i / 20.0;
            CHECK(std::abs(m.predict(tau, x) - (0.2 + 0.4 * x)) < 0.06);
        }
}

TEST_CASE("two-step rejects windows with insufficient data") {
    const SheetSpec spec = make_sheet_spec(2, 3, 2, 3);
    Dataset d;
    d.xs = {0.0, 0.01, 0.02, 0.5, 0.98, 0.99, 1.0};
    d.ys = {0.0, 0.1, 0.2, 0.3, 0.4, 0.5, 0.6};
    const PenaltyConfig pen = build_penalty(spec, 0.1, 0.1, 0.1);
    // span 0.1: the window around x = 0.5 holds a single point
    CHECK_THROWS_WITH_AS(fit_two_step(spec, d, pen, {0.5}, 0.1),
                         doctest::Contains("insufficient data"), std::runtime_error);
}

TEST_CASE("packed model round-trips basis and penalty metadata") {
    oracles::Rng rng(139);
    const SheetSpec spec = make_sheet_spec(2, 4, 3, 3);
    const Dataset d = linear_gaussian(rng, 128);
    const PenaltyConfig pen = build_penalty(spec, 0.4, 0.3, 0.2);
    const SheetModel m = fit_irls_sheet(spec, d, pen);
    CHECK(m.K0_tau == 2);
    CHECK(m.m_tau == 4);
    CHECK(m.K0_x == 3);
    CHECK(m.m_x == 3);
    CHECK(m.lambda_tau == 0.4);
    CHECK(m.lambda_11 == 0.3);
    CHECK(m.lambda_12 == 0.2);
    CHECK(m.beta.size() == spec.dim());
    CHECK(m.spec().dim() == spec.dim());
}
