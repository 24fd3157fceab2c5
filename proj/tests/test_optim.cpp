#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "qsheet/optim.hpp"
#include "oracles.hpp"

#include <cmath>

using namespace qsheet;

namespace {

// linear signal with gaussian noise, constant scale
Dataset linear_gaussian(oracles::Rng& rng, int n, double sigma = 0.2) {
    Dataset d;
    for (int i = 0; i < n; ++i) {
        const double x = rng.uniform();
        d.xs.push_back(x);
        d.ys.push_back(0.2 + 0.4 * x + sigma * rng.normal());
    }
    return d;
}

bool noncrossing_on_grid(const SheetSpec& spec, const CoefficientState& st) {
    std::vector<double> taus, xs;
    for (int i = 0; i <= 40; ++i) taus.push_back(i / 40.0);
    for (int i = 0; i <= 40; ++i) xs.push_back(i / 40.0);
    const Eigen::MatrixXd q = eval_sheet(spec, st, taus, xs);
    for (int c = 0; c < q.cols(); ++c)
        for (int r = 1; r < q.rows(); ++r)
            if (q(r, c) < q(r - 1, c) - 1e-10) return false;
    return true;
}

}  // namespace

TEST_CASE("config validation") {
    OptimConfig c;
    CHECK_NOTHROW(c.validate());
    c.armijo_alpha = 0.5;
    CHECK_THROWS_AS(c.validate(), std::invalid_argument);
    c = {};
    c.shrink_beta = 1.0;
    CHECK_THROWS_AS(c.validate(), std::invalid_argument);
    c = {};
    c.max_iters = 0;
    CHECK_THROWS_AS(c.validate(), std::invalid_argument);
    c = {};
    c.loss_tol = 0.0;
    CHECK_THROWS_AS(c.validate(), std::invalid_argument);
}

TEST_CASE("stop_check rules") {
    OptimConfig c;
    c.grad_tol = 0.1;
    c.loss_tol = 1e-3;
    CoefficientState st = map_beta(Eigen::VectorXd::Ones(4), 2);
    Eigen::VectorXd g = Eigen::VectorXd::Ones(4);

    // ||g|| / ||beta|| = 1 > 0.1, relative decrease (1 - 0.5)/1 > 1e-3
    CHECK(stop_check(st, g, 1.0, 0.5, c) == StopDecision::go_on);
    // gradient rule fires: ||g||/||beta|| = 0.05
    CHECK(stop_check(st, 0.1 * g, 1.0, 0.5, c) == StopDecision::grad_ratio);
    // loss rule fires: decrease 5e-4 relative to 1.0
    CHECK(stop_check(st, g, 1.0, 1.0 - 5e-4, c) == StopDecision::loss_decrease);
    // gradient rule takes precedence when both would fire
    CHECK(stop_check(st, 0.1 * g, 1.0, 1.0, c) == StopDecision::grad_ratio);
    // zero beta: ||g|| itself is compared, and the rule is <=
    const CoefficientState z = map_beta(Eigen::VectorXd::Zero(4), 2);
    CHECK(stop_check(z, 0.05 * g, 1.0, 0.5, c) == StopDecision::grad_ratio);  // ||g|| = 0.1
    CHECK(stop_check(z, 0.2 * g, 1.0, 0.5, c) == StopDecision::go_on);        // ||g|| = 0.4
}

TEST_CASE("bb_step arithmetic") {
    Eigen::VectorXd d(2), g(2);
    d << 1.0, 2.0;

    // dgrad = dbeta: eta1 = eta2 = 1
    CHECK(bb_step(d, d, 100.0) == doctest::Approx(1.0));
    // <dbeta, dgrad> <= 0: default 1
    CHECK(bb_step(d, -d, 100.0) == 1.0);
    CHECK(bb_step(d, Eigen::VectorXd::Zero(2), 100.0) == 1.0);
    // dgrad = 2 dbeta: eta1 = 1/2, eta2 = 1/2
    CHECK(bb_step(d, 2.0 * d, 100.0) == doctest::Approx(0.5));
    // cap at u
    CHECK(bb_step(d, 0.001 * d, 100.0) == doctest::Approx(100.0));
    // eta2 < eta1 when dgrad is not collinear
    g << 2.0, 1.0;  // dg = 4, eta1 = 5/4, eta2 = 4/5
    CHECK(bb_step(d, g, 100.0) == doctest::Approx(0.8));
}

TEST_CASE("tau_tilde: ranks, ties, clamping") {
    Dataset d;
    const int n = 10;
    for (int i = 0; i < n; ++i) {
        d.xs.push_back(0.5);  // every point in every window
        d.ys.push_back(static_cast<double>(i));
    }
    const Eigen::VectorXd tau = estimate_tau_tilde(d);
    for (int i = 0; i < n; ++i)
        CHECK(tau[i] == doctest::Approx(std::clamp((i + 0.5) / n, 0.5 / n, 1.0 - 0.5 / n)));

    Dataset ties;
    for (int i = 0; i < 4; ++i) {
        ties.xs.push_back(0.3);
        ties.ys.push_back(7.0);
    }
    const Eigen::VectorXd taut = estimate_tau_tilde(ties);
    for (int i = 0; i < 4; ++i) CHECK(taut[i] == doctest::Approx(0.5));
}

TEST_CASE("tau_tilde is local in x") {
    // two clusters far apart; ranks are computed within each cluster
    Dataset d;
    d.xs = {0.0, 0.0, 1.0, 1.0};
    d.ys = {10.0, 20.0, 1.0, 2.0};
    const Eigen::VectorXd tau = estimate_tau_tilde(d);
    CHECK(tau[0] == doctest::Approx(0.25));
    CHECK(tau[1] == doctest::Approx(0.75));
    CHECK(tau[2] == doctest::Approx(0.25));  // rank within its own cluster {1, 2}
    CHECK(tau[3] == doctest::Approx(0.75));
}

TEST_CASE("constrained penalized least squares") {
    SUBCASE("interior solution matches the normal equations") {
        oracles::Rng rng(91);
        Eigen::MatrixXd m(12, 3);
        Eigen::VectorXd y(12);
        for (int i = 0; i < 12; ++i) {
            for (int j = 0; j < 3; ++j) m(i, j) = rng.uniform(0.0, 1.0);
            y[i] = 2.0 + rng.uniform(0.0, 1.0);  // keeps the minimizer positive
        }
        const Eigen::MatrixXd p = 0.1 * Eigen::MatrixXd::Identity(3, 3);
        const Eigen::VectorXd got = constrained_penalized_ls(m, y, p, 0);
        const Eigen::VectorXd want =
            (m.transpose() * m + p).ldlt().solve(m.transpose() * y);
        if (want.minCoeff() > 1e-6) CHECK((got - want).norm() < 1e-8);
    }
    SUBCASE("active floor") {
        // minimize (x - (-3))^2 with x >= 1e-8: solution is the floor
        Eigen::MatrixXd m = Eigen::MatrixXd::Identity(1, 1);
        Eigen::VectorXd y(1);
        y << -3.0;
        const Eigen::VectorXd got =
            constrained_penalized_ls(m, y, Eigen::MatrixXd::Zero(1, 1), 0);
        CHECK(got[0] == doctest::Approx(1e-8).epsilon(1e-6));
    }
    SUBCASE("identity block is unconstrained") {
        Eigen::MatrixXd m = Eigen::MatrixXd::Identity(2, 2);
        Eigen::VectorXd y(2);
        y << -3.0, -3.0;
        const Eigen::VectorXd got =
            constrained_penalized_ls(m, y, Eigen::MatrixXd::Zero(2, 2), 1);
        CHECK(got[0] == doctest::Approx(-3.0).epsilon(1e-6));
        CHECK(got[1] == doctest::Approx(1e-8).epsilon(1e-6));
    }
}

TEST_CASE("initialization produces a feasible state that beats zero") {
    oracles::Rng rng(97);
    const SheetSpec spec = make_sheet_spec(2, 4, 2, 4);
    const Dataset d = linear_gaussian(rng, 128);
    const PenaltyConfig pen = build_penalty(spec, 0.1, 0.1, 0.1);
    const InitResult init = initialize_beta(spec, d, pen);
    CHECK_FALSE(init.fallback);
    CHECK(noncrossing_on_grid(spec, init.state));
    const GradientWorkspace w = make_workspace(spec, d);
    const double at_init = loss_R(spec, init.state, d, pen, w);
    const double at_zero = loss_R(spec, map_beta(Eigen::VectorXd::Zero(spec.dim()), spec.k_x()), d, pen, w);
    CHECK(at_init < at_zero);
}

TEST_CASE("backtracking accepts exactly the hand-simulated Armijo step") {
    oracles::Rng rng(101);
    const SheetSpec spec = make_sheet_spec(2, 3, 2, 3);
    const Dataset d = linear_gaussian(rng, 64);
    const PenaltyConfig pen = build_penalty(spec, 0.1, 0.05, 0.05);
    OptimConfig cfg;
    cfg.max_iters = 1;
    Eigen::VectorXd beta0 = Eigen::VectorXd::Constant(spec.dim(), -0.2);

    const FitReport rep = fit_backtracking(spec, d, pen, cfg, LossKind::exact, {},
                                           QuadratureGrid::midpoints(256), beta0);

    // independent replay of one Armijo backtracking step
    const GradientWorkspace w = make_workspace(spec, d);
    const CoefficientState st0 = map_beta(beta0, spec.k_x());
    const double f0 = loss_R(spec, st0, d, pen, w);
    const Eigen::VectorXd g = gradient_R(spec, st0, d, pen, w);
    double t = 1.0;
    while (loss_R(spec, map_beta(beta0 - t * g, spec.k_x()), d, pen, w) >
           f0 - cfg.armijo_alpha * t * g.squaredNorm())
        t *= cfg.shrink_beta;
    CHECK(rep.iterations == 1);
    CHECK((rep.final_state.beta - (beta0 - t * g)).norm() == 0.0);  // bitwise
    CHECK(rep.loss_trace.size() == 2);
    CHECK(rep.loss_trace[1] < rep.loss_trace[0]);
}

TEST_CASE("backtracking trace is monotone and the fit is non-crossing") {
    oracles::Rng rng(103);
    const SheetSpec spec = make_sheet_spec(2, 4, 2, 4);
    const Dataset d = linear_gaussian(rng, 128);
    const PenaltyConfig pen = build_penalty(spec, 0.5, 0.5, 0.5);
    OptimConfig cfg;
    cfg.max_iters = 200;
    for (LossKind kind : {LossKind::exact, LossKind::smoothed}) {
        const FitReport rep = fit_backtracking(spec, d, pen, cfg, kind,
                                               make_kernel(KernelKind::gaussian, 0.1));
        for (size_t i = 1; i < rep.loss_trace.size(); ++i)
            CHECK(rep.loss_trace[i] <= rep.loss_trace[i - 1] + 1e-14);
        CHECK(noncrossing_on_grid(spec, rep.final_state));
        CHECK(rep.stop_reason != StopReason::max_iters);
    }
}

TEST_CASE("workspace-dependent terms are built once per fit") {
    oracles::Rng rng(107);
    const SheetSpec spec = make_sheet_spec(2, 3, 2, 3);
    const Dataset d = linear_gaussian(rng, 64);
    const PenaltyConfig pen = build_penalty(spec, 0.2, 0.2, 0.2);
    OptimConfig cfg;
    cfg.max_iters = 50;
    const long before = workspace_build_count();
    const FitReport rep = fit_backtracking(spec, d, pen, cfg, LossKind::exact, {},
                                           QuadratureGrid::midpoints(256),
                                           Eigen::VectorXd(Eigen::VectorXd::Zero(spec.dim())));
    CHECK(rep.iterations > 1);
    CHECK(workspace_build_count() - before == 1);
}

TEST_CASE("BB reaches the gradient tolerance and restarting converges immediately") {
    oracles::Rng rng(109);
    const SheetSpec spec = make_sheet_spec(2, 4, 2, 4);
    const Dataset d = linear_gaussian(rng, 256);
    const PenaltyConfig pen = build_penalty(spec, 0.5, 0.5, 0.5);
    OptimConfig cfg;
    cfg.max_iters = 2000;
    const KernelSpec kern = make_kernel(KernelKind::gaussian, default_bandwidth(d.n()));
    const FitReport rep =
        fit_bb(spec, d, pen, cfg, LossKind::smoothed, kern, QuadratureGrid::midpoints(128));
    CHECK(rep.stop_reason == StopReason::grad_ratio);
    const double delta =
        std::min(cfg.bb_grad_tol, std::sqrt(static_cast<double>(spec.dim()) / d.n()));
    CHECK(rep.grad_norm_trace.back() < delta);
    CHECK(noncrossing_on_grid(spec, rep.final_state));

    // restart at the solution: the gradient test fires before any step
    const FitReport again = fit_bb(spec, d, pen, cfg, LossKind::smoothed, kern,
                                   QuadratureGrid::midpoints(128), rep.final_state.beta);
    CHECK(again.iterations == 0);
    CHECK(again.stop_reason == StopReason::grad_ratio);
}

TEST_CASE("fits are deterministic") {
    oracles::Rng rng(113);
    const SheetSpec spec = make_sheet_spec(2, 3, 2, 3);
    const Dataset d = linear_gaussian(rng, 96);
    const PenaltyConfig pen = build_penalty(spec, 0.3, 0.3, 0.3);
    OptimConfig cfg;
    cfg.max_iters = 100;
    const FitReport a = fit_backtracking(spec, d, pen, cfg, LossKind::exact);
    const FitReport b = fit_backtracking(spec, d, pen, cfg, LossKind::exact);
    CHECK((a.final_state.beta - b.final_state.beta).norm() == 0.0);
    CHECK(a.iterations == b.iterations);
    const FitReport c = fit_bb(spec, d, pen, cfg, LossKind::smoothed,
                               make_kernel(KernelKind::gaussian, 0.1));
    const FitReport e = fit_bb(spec, d, pen, cfg, LossKind::smoothed,
                               make_kernel(KernelKind::gaussian, 0.1));
    CHECK((c.final_state.beta - e.final_state.beta).norm() == 0.0);
}
