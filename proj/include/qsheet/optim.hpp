#ifndef QSHEET_OPTIM_HPP
#define QSHEET_OPTIM_HPP

#include "qsheet/constraint.hpp"
#include "qsheet/loss_exact.hpp"
#include "qsheet/loss_smoothed.hpp"

#include <Eigen/Dense>

#include <chrono>
#include <cmath>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

namespace qsheet {

enum class LossKind { exact, smoothed };

inline LossKind loss_kind_from_name(const std::string& name) {
    if (name == "exact") return LossKind::exact;
    if (name == "smoothed") return LossKind::smoothed;
    throw std::invalid_argument("unknown loss kind: " + name);
}

struct OptimConfig {
    double armijo_alpha = 0.1;   // in (0, 0.5)
    double shrink_beta = 0.5;    // line-search shrink, in (0, 1)
    double grad_tol = 1e-4;      // eta: ||grad||/||beta|| rule
    double loss_tol = 1e-8;      // epsilon: relative loss decrease rule
    int max_iters = 5000;
    double bb_max_step = 100.0;  // u
    double bb_grad_tol = 1e-4;   // delta, capped at sqrt(p/n)
    double min_step = 1e-10;

    void validate() const {
        if (!(armijo_alpha > 0.0 && armijo_alpha < 0.5))
            throw std::invalid_argument("armijo_alpha must be in (0, 0.5)");
        if (!(shrink_beta > 0.0 && shrink_beta < 1.0))
            throw std::invalid_argument("shrink_beta must be in (0, 1)");
        if (!(grad_tol > 0.0 && loss_tol > 0.0 && bb_max_step > 0.0 && bb_grad_tol > 0.0 &&
              min_step > 0.0))
            throw std::invalid_argument("tolerances must be > 0");
        if (max_iters < 1) throw std::invalid_argument("max_iters must be >= 1");
    }
};

enum class StopReason { grad_ratio, loss_decrease, max_iters, step_floor };

inline const char* stop_reason_name(StopReason r) {
    switch (r) {
        case StopReason::grad_ratio: return "grad_ratio";
        case StopReason::loss_decrease: return "loss_decrease";
        case StopReason::max_iters: return "max_iters";
        default: return "step_floor";
    }
}

struct FitReport {
    CoefficientState final_state;
    int iterations = 0;
    StopReason stop_reason = StopReason::max_iters;
    std::vector<double> loss_trace;
    std::vector<double> grad_norm_trace;
    double wall_time = 0.0;
    bool init_fallback = false;
    int floor_steps = 0;  // Armijo failures accepted at min_step
};

// One evaluation surface over both losses; H1 is built exactly once here.
class SheetObjective {
  public:
    SheetObjective(const SheetSpec& spec, const Dataset& data, const PenaltyConfig& penalty,
                   LossKind kind, const KernelSpec& kernel = {},
                   const QuadratureGrid& grid = QuadratureGrid::midpoints(256))
        : spec_(spec), data_(data), penalty_(penalty), kind_(kind), kernel_(kernel) {
        if (kind_ == LossKind::exact) {
            exact_ws_ = make_workspace(spec, data);
        } else {
            smoothed_ws_ = make_smoothed_workspace(spec, data, grid);
        }
    }

    double value(const CoefficientState& st) const {
        return kind_ == LossKind::exact
                   ? loss_R(spec_, st, data_, penalty_, *exact_ws_)
                   : smoothed_loss(spec_, st, data_, penalty_, kernel_, *smoothed_ws_);
    }

    Eigen::VectorXd gradient(const CoefficientState& st) const {
        return kind_ == LossKind::exact
                   ? gradient_R(spec_, st, data_, penalty_, *exact_ws_)
                   : smoothed_gradient(spec_, st, data_, penalty_, kernel_, *smoothed_ws_);
    }

    const SheetSpec& spec() const { return spec_; }
    int k_x() const { return spec_.k_x(); }

  private:
    SheetSpec spec_;
    Dataset data_;
    PenaltyConfig penalty_;
    LossKind kind_;
    KernelSpec kernel_;
    std::optional<GradientWorkspace> exact_ws_;
    std::optional<SmoothedWorkspace> smoothed_ws_;
};

// Barzilai-Borwein step from the last displacement and gradient change:
// eta = min{eta1, eta2, u} when eta1 > 0, else 1 (also 1 when <dbeta,dgrad> <= 0).
inline double bb_step(const Eigen::VectorXd& dbeta, const Eigen::VectorXd& dgrad, double u) {
    const double dg = dbeta.dot(dgrad);
    if (dg <= 0.0) return 1.0;
    const double eta1 = dbeta.squaredNorm() / dg;
    if (!(eta1 > 0.0)) return 1.0;
    return std::min({eta1, dg / dgrad.squaredNorm(), u});
}

enum class StopDecision { go_on, grad_ratio, loss_decrease };

inline StopDecision stop_check(const CoefficientState& state, const Eigen::VectorXd& grad,
                               double prev_loss, double cur_loss, const OptimConfig& config) {
    const double bn = state.beta.norm();
    const double gn = grad.norm();
    if ((bn > 0.0 ? gn / bn : gn) <= config.grad_tol) return StopDecision::grad_ratio;
    const double denom = std::abs(prev_loss);
    const double dec = std::abs(prev_loss - cur_loss);
    if ((denom > 0.0 ? dec / denom : dec) <= config.loss_tol) return StopDecision::loss_decrease;
    return StopDecision::go_on;
}

// --- initialization ------------------------------------------------------

// Local-window empirical CDF rank of y_i, uniform kernel, span 0.1 of range(x).
inline Eigen::VectorXd estimate_tau_tilde(const Dataset& data, double span = 0.1) {
    const int n = data.n();
    double xmin = data.xs[0], xmax = data.xs[0];
    for (double x : data.xs) {
        xmin = std::min(xmin, x);
        xmax = std::max(xmax, x);
    }
    const double half = 0.5 * std::max(span * (xmax - xmin), 1e-12);
    Eigen::VectorXd tau(n);
    for (int i = 0; i < n; ++i) {
        double below = 0.0, total = 0.0;
        for (int j = 0; j < n; ++j) {
            if (std::abs(data.xs[j] - data.xs[i]) > half) continue;
            total += 1.0;
            if (data.ys[j] < data.ys[i])
                below += 1.0;
            else if (data.ys[j] == data.ys[i])
                below += 0.5;
        }
        tau[i] = std::clamp(below / total, 0.5 / n, 1.0 - 0.5 / n);
    }
    return tau;
}

// min ||y - M beta_tilde||^2 + beta_tilde' P beta_tilde subject to
// beta_tilde_j >= floor on the exp block (j >= K_1). FISTA with projection.
inline Eigen::VectorXd constrained_penalized_ls(const Eigen::MatrixXd& m,
                                                const Eigen::VectorXd& y,
                                                const Eigen::MatrixXd& p_mat, int K_1,
                                                double floor = 1e-8, int max_iters = 10000) {
    const Eigen::Index p = m.cols();
    const Eigen::MatrixXd a = m.transpose() * m + p_mat;
    const Eigen::VectorXd b = m.transpose() * y;
    const double lip =
        2.0 * Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd>(a).eigenvalues().maxCoeff();
    const double step = lip > 0.0 ? 1.0 / lip : 1.0;

    const auto project = [&](Eigen::VectorXd v) {
        for (Eigen::Index j = K_1; j < p; ++j) v[j] = std::max(v[j], floor);
        return v;
    };

    Eigen::VectorXd x = project(Eigen::VectorXd::Ones(p));
    Eigen::VectorXd z = x;
    double t = 1.0;
    for (int it = 0; it < max_iters; ++it) {
        const Eigen::VectorXd grad = 2.0 * (a * z - b);
        Eigen::VectorXd xn = project(z - step * grad);
        if (!xn.allFinite()) throw numeric_error("constrained_penalized_ls: diverged");
        const double tn = 0.5 * (1.0 + std::sqrt(1.0 + 4.0 * t * t));
        z = xn + ((t - 1.0) / tn) * (xn - x);
        const double move = (xn - x).norm();
        x = xn;
        t = tn;
        if (move <= 1e-12 * (1.0 + x.norm())) break;
    }
    return x;
}

struct InitResult {
    CoefficientState state;
    bool fallback = false;
};

// Penalized constrained least squares at (tau_tilde_i, x_i) pseudo-design.
inline InitResult initialize_beta(const SheetSpec& spec, const Dataset& data,
                                  const PenaltyConfig& penalty) {
    validate_dataset(spec, data);
    const int n = data.n();
    const int kx = spec.k_x();
    const Eigen::VectorXd tau_tilde = estimate_tau_tilde(data);
    Eigen::MatrixXd t(n, spec.dim());
    for (int i = 0; i < n; ++i)
        t.row(i) = tensor_row(spec, tau_tilde[i], data.xs[i]).transpose();
    const Eigen::MatrixXd sigma = build_sigma(spec.k_tau(), kx);
    const Eigen::Map<const Eigen::VectorXd> y(data.ys.data(), n);

    InitResult out;
    try {
        const Eigen::VectorXd bt = constrained_penalized_ls(
            Eigen::MatrixXd(t * sigma), y, Eigen::MatrixXd(n * penalty.S), kx);
        Eigen::VectorXd beta = bt;
        for (Eigen::Index j = kx; j < beta.size(); ++j)
            beta[j] = std::log(std::max(bt[j], 1e-8));
        out.state = map_beta(beta, kx);
    } catch (const numeric_error&) {
        out.state = map_beta(Eigen::VectorXd::Zero(spec.dim()), kx);
        out.fallback = true;
    }
    return out;
}

// --- drivers --------------------------------------------------------------

inline FitReport fit_backtracking(const SheetSpec& spec, const Dataset& data,
                                  const PenaltyConfig& penalty, const OptimConfig& config,
                                  LossKind kind, const KernelSpec& kernel = {},
                                  const QuadratureGrid& grid = QuadratureGrid::midpoints(256),
                                  const std::optional<Eigen::VectorXd>& beta0 = std::nullopt) {
    config.validate();
    const auto t0 = std::chrono::steady_clock::now();
    const SheetObjective obj(spec, data, penalty, kind, kernel, grid);

    FitReport rep;
    if (beta0) {
        rep.final_state = map_beta(*beta0, spec.k_x());
    } else {
        const InitResult init = initialize_beta(spec, data, penalty);
        rep.final_state = init.state;
        rep.init_fallback = init.fallback;
    }

    double loss = obj.value(rep.final_state);
    rep.loss_trace.push_back(loss);
    for (int it = 0; it < config.max_iters; ++it) {
        const Eigen::VectorXd g = obj.gradient(rep.final_state);
        rep.grad_norm_trace.push_back(g.norm());
        const double bn = rep.final_state.beta.norm();
        if ((bn > 0.0 ? g.norm() / bn : g.norm()) <= config.grad_tol) {
            rep.stop_reason = StopReason::grad_ratio;
            break;
        }

        const Eigen::VectorXd dir = -g;
        const double slope = g.dot(dir);  // = -||g||^2
        double t = 1.0;
        bool floored = false;
        CoefficientState trial;
        double trial_loss = 0.0;
        while (true) {
            trial = map_beta(rep.final_state.beta + t * dir, spec.k_x());
            trial_loss = obj.value(trial);
            if (trial_loss <= loss + config.armijo_alpha * t * slope) break;
            t *= config.shrink_beta;
            if (t < config.min_step) {
                t = config.min_step;
                trial = map_beta(rep.final_state.beta + t * dir, spec.k_x());
                trial_loss = obj.value(trial);
                floored = true;
                break;
            }
        }
        rep.final_state = trial;
        rep.iterations = it + 1;
        rep.loss_trace.push_back(trial_loss);
        if (floored) ++rep.floor_steps;

        const StopDecision d = stop_check(rep.final_state, g, loss, trial_loss, config);
        loss = trial_loss;
        if (floored && trial_loss >= rep.loss_trace[rep.loss_trace.size() - 2]) {
            rep.stop_reason = StopReason::step_floor;
            break;
        }
        if (d == StopDecision::loss_decrease) {
            rep.stop_reason = StopReason::loss_decrease;
            break;
        }
        if (it + 1 == config.max_iters) rep.stop_reason = StopReason::max_iters;
    }
    rep.wall_time = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    return rep;
}

inline FitReport fit_bb(const SheetSpec& spec, const Dataset& data, const PenaltyConfig& penalty,
                        const OptimConfig& config, LossKind kind, const KernelSpec& kernel = {},
                        const QuadratureGrid& grid = QuadratureGrid::midpoints(256),
                        const std::optional<Eigen::VectorXd>& beta0 = std::nullopt) {
    config.validate();
    const auto t0 = std::chrono::steady_clock::now();
    const SheetObjective obj(spec, data, penalty, kind, kernel, grid);
    const int p = spec.dim();
    const double delta =
        std::min(config.bb_grad_tol, std::sqrt(static_cast<double>(p) / data.n()));

    FitReport rep;
    if (beta0) {
        rep.final_state = map_beta(*beta0, spec.k_x());
    } else {
        const InitResult init = initialize_beta(spec, data, penalty);
        rep.final_state = init.state;
        rep.init_fallback = init.fallback;
    }

    Eigen::VectorXd g = obj.gradient(rep.final_state);
    rep.loss_trace.push_back(obj.value(rep.final_state));
    rep.grad_norm_trace.push_back(g.norm());
    if (g.norm() < delta) {
        rep.stop_reason = StopReason::grad_ratio;
        rep.wall_time =
            std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        return rep;
    }

    // beta^1 by one backtracking step.
    Eigen::VectorXd beta_prev = rep.final_state.beta;
    Eigen::VectorXd g_prev = g;
    {
        const double loss = rep.loss_trace.back();
        double t = 1.0;
        while (t >= config.min_step) {
            const CoefficientState trial = map_beta(beta_prev - t * g_prev, spec.k_x());
            if (obj.value(trial) <= loss - config.armijo_alpha * t * g_prev.squaredNorm()) break;
            t *= config.shrink_beta;
        }
        t = std::max(t, config.min_step);
        rep.final_state = map_beta(beta_prev - t * g_prev, spec.k_x());
        rep.iterations = 1;
        rep.loss_trace.push_back(obj.value(rep.final_state));
        g = obj.gradient(rep.final_state);
        rep.grad_norm_trace.push_back(g.norm());
    }

    for (int it = 1; it < config.max_iters; ++it) {
        if (g.norm() < delta) {
            rep.stop_reason = StopReason::grad_ratio;
            break;
        }
        const Eigen::VectorXd dbeta = rep.final_state.beta - beta_prev;
        const Eigen::VectorXd dgrad = g - g_prev;
        const double eta = bb_step(dbeta, dgrad, config.bb_max_step);
        beta_prev = rep.final_state.beta;
        g_prev = g;
        rep.final_state = map_beta(beta_prev - eta * g, spec.k_x());
        rep.iterations = it + 1;
        rep.loss_trace.push_back(obj.value(rep.final_state));
        g = obj.gradient(rep.final_state);
        rep.grad_norm_trace.push_back(g.norm());
        if (it + 1 == config.max_iters) rep.stop_reason = StopReason::max_iters;
    }
    if (g.norm() < delta) rep.stop_reason = StopReason::grad_ratio;
    rep.wall_time = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    return rep;
}

}  // namespace qsheet

#endif  // QSHEET_OPTIM_HPP
