#ifndef QSHEET_SIMULATION_HPP
#define QSHEET_SIMULATION_HPP

#include "qsheet/baselines.hpp"
#include "qsheet/constraint.hpp"
#include "qsheet/loss_exact.hpp"
#include "qsheet/model.hpp"
#include "qsheet/optim.hpp"

#include <boost/math/distributions/cauchy.hpp>
#include <boost/math/distributions/chi_squared.hpp>
#include <boost/math/distributions/laplace.hpp>
#include <boost/math/distributions/normal.hpp>
#include <boost/math/distributions/students_t.hpp>

#include <chrono>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numbers>
#include <stdexcept>
#include <string>
#include <vector>

namespace qsheet {

// Counter-based splittable RNG: every (seed, stream, index) triple is
// reproducible in isolation.
struct SplitMix64 {
    std::uint64_t state;

    explicit SplitMix64(std::uint64_t seed) : state(seed) {}

    std::uint64_t next() {
        std::uint64_t z = (state += 0x9e3779b97f4a7c15ULL);
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
        return z ^ (z >> 31);
    }

    // uniform in (0, 1)
    double uniform() {
        while (true) {
            const double u = (next() >> 11) * 0x1.0p-53;
            if (u > 0.0 && u < 1.0) return u;
        }
    }

    static std::uint64_t mix(std::uint64_t seed, std::uint64_t stream) {
        SplitMix64 g(seed ^ (0x9e3779b97f4a7c15ULL * (stream + 1)));
        return g.next();
    }
};

enum class Signal { g1_linear, g2_logarithm, g3_sinusoidal, g4_linear_sinusoidal, g5_sqrt_sinusoidal };
enum class Noise { gaussian, t3, t1, laplace, chisq3 };
enum class ScaleKind { constant, linear, quadratic };

inline Signal signal_from_name(const std::string& s) {
    if (s == "g1") return Signal::g1_linear;
    if (s == "g2") return Signal::g2_logarithm;
    if (s == "g3") return Signal::g3_sinusoidal;
    if (s == "g4") return Signal::g4_linear_sinusoidal;
    if (s == "g5") return Signal::g5_sqrt_sinusoidal;
    throw std::invalid_argument("unknown signal: " + s);
}

inline Noise noise_from_name(const std::string& s) {
    if (s == "gaussian") return Noise::gaussian;
    if (s == "t3") return Noise::t3;
    if (s == "t1") return Noise::t1;
    if (s == "laplace") return Noise::laplace;
    if (s == "chisq3") return Noise::chisq3;
    throw std::invalid_argument("unknown noise: " + s);
}

inline ScaleKind scale_from_name(const std::string& s) {
    if (s == "constant") return ScaleKind::constant;
    if (s == "linear") return ScaleKind::linear;
    if (s == "quadratic") return ScaleKind::quadratic;
    throw std::invalid_argument("unknown scale: " + s);
}

inline const char* signal_name(Signal s) {
    switch (s) {
        case Signal::g1_linear: return "g1";
        case Signal::g2_logarithm: return "g2";
        case Signal::g3_sinusoidal: return "g3";
        case Signal::g4_linear_sinusoidal: return "g4";
        default: return "g5";
    }
}

inline const char* noise_name(Noise s) {
    switch (s) {
        case Noise::gaussian: return "gaussian";
        case Noise::t3: return "t3";
        case Noise::t1: return "t1";
        case Noise::laplace: return "laplace";
        default: return "chisq3";
    }
}

inline const char* scale_name(ScaleKind s) {
    switch (s) {
        case ScaleKind::constant: return "constant";
        case ScaleKind::linear: return "linear";
        default: return "quadratic";
    }
}

struct Scenario {
    Signal signal = Signal::g1_linear;
    Noise noise = Noise::gaussian;
    ScaleKind scale = ScaleKind::constant;
    int n = 128;
    int replications = 100;
    std::uint64_t seed = 1;
    bool center_median = false;
};

inline double signal_value(Signal s, double x) {
    switch (s) {
        case Signal::g1_linear: return 0.2 + 0.4 * x;
        case Signal::g2_logarithm: return std::log(x);
        case Signal::g3_sinusoidal: return std::sin(2.0 * std::numbers::pi * x);
        case Signal::g4_linear_sinusoidal:
            return 0.5 + 2.0 * x + std::sin(2.0 * std::numbers::pi * x - 0.5);
        default: {
            // Doppler: sqrt(x(1-x)) sin(2 pi (1 + c) / (x + c)), c = 2^{-7/5}
            const double c = std::pow(2.0, -7.0 / 5.0);
            return std::sqrt(x * (1.0 - x)) *
                   std::sin(2.0 * std::numbers::pi * (1.0 + c) / (x + c));
        }
    }
}

inline double scale_value(ScaleKind s, double x) {
    switch (s) {
        case ScaleKind::constant: return 0.2;
        case ScaleKind::linear: return 0.2 * (1.0 + x);
        default: return 0.5 * (1.0 + (x - 1.0) * (x - 1.0));
    }
}

inline double noise_quantile(Noise noise, double tau) {
    switch (noise) {
        case Noise::gaussian: return boost::math::quantile(boost::math::normal_distribution<>(), tau);
        case Noise::t3: return boost::math::quantile(boost::math::students_t_distribution<>(3.0), tau);
        case Noise::t1: return boost::math::quantile(boost::math::cauchy_distribution<>(), tau);
        case Noise::laplace: return boost::math::quantile(boost::math::laplace_distribution<>(), tau);
        default: return boost::math::quantile(boost::math::chi_squared_distribution<>(3.0), tau);
    }
}

inline double noise_median(Noise noise) { return noise_quantile(noise, 0.5); }

inline double true_quantile(const Scenario& sc, double tau, double x) {
    if (!(tau > 0.0 && tau < 1.0))
        throw std::domain_error("true_quantile: tau must lie in (0,1)");
    double q = noise_quantile(sc.noise, tau);
    if (sc.center_median) q -= noise_median(sc.noise);
    return signal_value(sc.signal, x) + scale_value(sc.scale, x) * q;
}

// y_i = g(x_i) + sigma(x_i) eps_i, x ~ U(0,1), eps by inverse-CDF sampling.
// Errors are not recentered unless center_median is set.
inline Dataset gen_data(const Scenario& sc, std::uint64_t replicate = 0) {
    SplitMix64 rng(SplitMix64::mix(sc.seed, replicate));
    Dataset d;
    d.xs.resize(sc.n);
    d.ys.resize(sc.n);
    const double med = sc.center_median ? noise_median(sc.noise) : 0.0;
    for (int i = 0; i < sc.n; ++i) {
        double x = rng.uniform();
        while (x < 1e-12) x = rng.uniform();
        const double eps = noise_quantile(sc.noise, rng.uniform()) - med;
        d.xs[i] = x;
        d.ys[i] = signal_value(sc.signal, x) + scale_value(sc.scale, x) * eps;
    }
    return d;
}

// Interior equally spaced tau levels (endpoints excluded: unbounded noises
// have infinite quantiles at 0 and 1).
inline std::vector<double> interior_tau_grid(int count) {
    std::vector<double> g(count);
    for (int j = 0; j < count; ++j) g[j] = (j + 1.0) / (count + 1.0);
    return g;
}

inline std::vector<double> linspace(double a, double b, int count) {
    std::vector<double> g(count);
    for (int j = 0; j < count; ++j)
        g[j] = count == 1 ? a : a + (b - a) * j / (count - 1.0);
    return g;
}

// MISE(tau_j) = mean over the x grid of (Qhat - Qtrue)^2, one row of the
// evaluation at a time to keep memory flat.
inline Eigen::VectorXd mise(const SheetSpec& spec, const CoefficientState& state,
                            const Scenario& sc, const std::vector<double>& tau_grid,
                            const std::vector<double>& x_grid) {
    const int nx = static_cast<int>(x_grid.size());
    const Eigen::MatrixXd bx = eval_basis(spec.x_basis, x_grid).values;  // nx x K_1
    const Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>
        theta(state.gamma.data(), spec.k_tau(), spec.k_x());
    Eigen::VectorXd gvals(nx), svals(nx);
    for (int i = 0; i < nx; ++i) {
        gvals[i] = signal_value(sc.signal, x_grid[i]);
        svals[i] = scale_value(sc.scale, x_grid[i]);
    }
    const double med = sc.center_median ? noise_median(sc.noise) : 0.0;
    Eigen::VectorXd out(static_cast<Eigen::Index>(tau_grid.size()));
    for (std::size_t j = 0; j < tau_grid.size(); ++j) {
        const Eigen::VectorXd bt = eval_row(spec.tau_basis, tau_grid[j]);
        const Eigen::VectorXd qhat = bx * (theta.transpose() * bt);
        const double qn = noise_quantile(sc.noise, tau_grid[j]) - med;
        out[static_cast<Eigen::Index>(j)] =
            (qhat - gvals - qn * svals).squaredNorm() / nx;
    }
    return out;
}

// Counts contiguous runs of x where Q(tau_{j+1}, x) < Q(tau_j, x) - 1e-12,
// one crossing per run per neighbor pair. Rows of q index tau.
inline int count_crossings(const Eigen::MatrixXd& q) {
    int crossings = 0;
    for (Eigen::Index j = 0; j + 1 < q.rows(); ++j) {
        bool in_run = false;
        for (Eigen::Index i = 0; i < q.cols(); ++i) {
            const bool violated = q(j + 1, i) < q(j, i) - 1e-12;
            if (violated && !in_run) ++crossings;
            in_run = violated;
        }
    }
    return crossings;
}

inline int count_crossings(const SheetSpec& spec, const CoefficientState& state,
                           const std::vector<double>& tau_grid,
                           const std::vector<double>& x_grid) {
    return count_crossings(eval_sheet(spec, state, tau_grid, x_grid));
}

struct SimResult {
    std::string method;
    Scenario scenario;
    int replicate = 0;
    std::uint64_t seed = 0;
    double lambda_tau = 0.0, lambda_x = 0.0;
    Eigen::VectorXd mise_by_tau;
    double mise_mean_full = 0.0;
    double mise_mean_trimmed = 0.0;  // tau in [0.05, 0.95]
    int crossings = 0;
    double fit_seconds = 0.0;
    bool ok = true;
    std::string message;
};

struct SweepConfig {
    int K0_tau = 2, m_tau = 4;
    int K0_x = 4, m_x = 4;
    OptimConfig optim;
    KernelKind kernel = KernelKind::gaussian;
    double bandwidth = 0.0;  // 0: default rule
    int n_tau_quadrature = 128;
    int n_tau_mise = 1024;
    int n_x_mise = 10000;
    std::vector<double> baseline_tau_grid = default_tau_grid();
    double two_step_span = 0.2;
};

inline SheetModel fit_method(const std::string& method, const SheetSpec& spec,
                             const Dataset& data, const PenaltyConfig& penalty,
                             const SweepConfig& cfg) {
    if (method == "exact") {
        const FitReport r = fit_backtracking(spec, data, penalty, cfg.optim, LossKind::exact);
        SheetModel m = detail::pack_model(spec, r.final_state.beta, penalty, method, true,
                                          r.iterations);
        m.stop_reason = stop_reason_name(r.stop_reason);
        m.final_loss = r.loss_trace.back();
        m.wall_time = r.wall_time;
        return m;
    }
    if (method == "smoothed") {
        const double h = cfg.bandwidth > 0.0 ? cfg.bandwidth : default_bandwidth(data.n());
        const FitReport r =
            fit_bb(spec, data, penalty, cfg.optim, LossKind::smoothed,
                   make_kernel(cfg.kernel, h), QuadratureGrid::midpoints(cfg.n_tau_quadrature));
        SheetModel m = detail::pack_model(spec, r.final_state.beta, penalty, method, true,
                                          r.iterations);
        m.stop_reason = stop_reason_name(r.stop_reason);
        m.final_loss = r.loss_trace.back();
        m.wall_time = r.wall_time;
        return m;
    }
    if (method == "irls") {
        IrlsConfig ic;
        ic.tau_grid = cfg.baseline_tau_grid;
        return fit_irls_sheet(spec, data, penalty, ic);
    }
    if (method == "two_step")
        return fit_two_step(spec, data, penalty, cfg.baseline_tau_grid, cfg.two_step_span);
    throw std::invalid_argument("unknown method: " + method);
}

inline double trimmed_mean_mise(const Eigen::VectorXd& by_tau, const std::vector<double>& taus) {
    double acc = 0.0;
    int cnt = 0;
    for (std::size_t j = 0; j < taus.size(); ++j)
        if (taus[j] >= 0.05 && taus[j] <= 0.95) {
            acc += by_tau[static_cast<Eigen::Index>(j)];
            ++cnt;
        }
    return cnt ? acc / cnt : 0.0;
}

// Deterministic per (seed, scenario, method, replicate). When lambda_grid has
// more than one entry, lambda is chosen per (scenario, method) by validation
// MISE on a held-out replicate.
inline std::vector<SimResult> run_sweep(const std::vector<Scenario>& scenarios,
                                        const std::vector<std::string>& methods,
                                        const std::vector<double>& lambda_grid,
                                        const SweepConfig& cfg = {}) {
    if (lambda_grid.empty()) throw std::invalid_argument("run_sweep: empty lambda grid");
    const SheetSpec spec = make_sheet_spec(cfg.K0_tau, cfg.m_tau, cfg.K0_x, cfg.m_x);
    const std::vector<double> taus = interior_tau_grid(cfg.n_tau_mise);
    const std::vector<double> xg = linspace(0.0, 1.0, cfg.n_x_mise);
    const std::vector<double> tau_cross = linspace(0.0, 1.0, 101);
    const std::vector<double> x_cross = linspace(0.0, 1.0, 101);

    std::vector<SimResult> results;
    for (std::size_t si = 0; si < scenarios.size(); ++si) {
        const Scenario& sc = scenarios[si];
        for (const std::string& method : methods) {
            double lambda = lambda_grid[0];
            if (lambda_grid.size() > 1) {
                // held-out replicate: index one past the replication range
                const Dataset val =
                    gen_data(sc, static_cast<std::uint64_t>(sc.replications) + 1);
                double best = std::numeric_limits<double>::infinity();
                for (double cand : lambda_grid) {
                    try {
                        const PenaltyConfig pen = build_penalty(spec, cand, cand, cand);
                        const SheetModel m = fit_method(method, spec, val, pen, cfg);
                        const double score = trimmed_mean_mise(
                            mise(spec, m.state(), sc, taus, xg), taus);
                        if (score < best) {
                            best = score;
                            lambda = cand;
                        }
                    } catch (const std::exception&) {
                    }
                }
            }
            const PenaltyConfig pen = build_penalty(spec, lambda, lambda, lambda);
            for (int rep = 0; rep < sc.replications; ++rep) {
                SimResult r;
                r.method = method;
                r.scenario = sc;
                r.replicate = rep;
                r.seed = SplitMix64::mix(sc.seed, static_cast<std::uint64_t>(rep));
                r.lambda_tau = lambda;
                r.lambda_x = lambda;
                try {
                    const Dataset d = gen_data(sc, static_cast<std::uint64_t>(rep));
                    const auto t0 = std::chrono::steady_clock::now();
                    const SheetModel m = fit_method(method, spec, d, pen, cfg);
                    r.fit_seconds = std::chrono::duration<double>(
                                        std::chrono::steady_clock::now() - t0)
                                        .count();
                    const CoefficientState st = m.state();
                    r.mise_by_tau = mise(spec, st, sc, taus, xg);
                    r.mise_mean_full = r.mise_by_tau.mean();
                    r.mise_mean_trimmed = trimmed_mean_mise(r.mise_by_tau, taus);
                    r.crossings = count_crossings(spec, st, tau_cross, x_cross);
                } catch (const std::exception& e) {
                    r.ok = false;
                    r.message = e.what();
                }
                results.push_back(std::move(r));
            }
        }
    }
    return results;
}

}  // namespace qsheet

#endif  // QSHEET_SIMULATION_HPP
