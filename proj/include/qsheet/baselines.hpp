#ifndef QSHEET_BASELINES_HPP
#define QSHEET_BASELINES_HPP

#include "qsheet/constraint.hpp"
#include "qsheet/loss_exact.hpp"
#include "qsheet/model.hpp"
#include "qsheet/optim.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <vector>

namespace qsheet {

inline std::vector<double> default_tau_grid() {
    std::vector<double> g;
    for (int k = 1; k <= 19; ++k) g.push_back(0.05 * k);
    return g;
}

struct IrlsConfig {
    std::vector<double> tau_grid = default_tau_grid();
    double weight_floor_scale = 1e-6;  // floor = scale * sd(y)
    int max_iters = 100;
    // pinball IRLS oscillates at the 1e-4 scale once residuals reach the
    // weight floor, so a tighter default stop is unattainable
    double tol = 1e-4;
};

// Pinball-as-weighted-L2 reweighting for residual r at level tau.
inline double irls_weight(double r, double tau, double floor) {
    return std::abs(tau - (r < 0.0 ? 1.0 : 0.0)) / std::max(std::abs(r), floor);
}

namespace detail {

inline double sd(const std::vector<double>& v) {
    double mean = 0.0;
    for (double x : v) mean += x;
    mean /= v.size();
    double acc = 0.0;
    for (double x : v) acc += (x - mean) * (x - mean);
    return std::sqrt(acc / std::max<std::size_t>(v.size() - 1, 1));
}

inline SheetModel pack_model(const SheetSpec& spec, const Eigen::VectorXd& beta,
                             const PenaltyConfig& penalty, const std::string& method,
                             bool converged, int iterations) {
    SheetModel m;
    m.K0_tau = spec.tau_basis.interior_count;
    m.m_tau = spec.tau_basis.order;
    m.K0_x = spec.x_basis.interior_count;
    m.m_x = spec.x_basis.order;
    m.beta = beta;
    m.lambda_tau = penalty.lambda_tau;
    m.lambda_11 = penalty.lambda_11;
    m.lambda_12 = penalty.lambda_12;
    m.x_lo = spec.x_basis.a;
    m.x_hi = spec.x_basis.b;
    m.method = method;
    m.converged = converged;
    m.iterations = iterations;
    m.stop_reason = converged ? "converged" : "max_iters";
    return m;
}

}  // namespace detail

// Schlossmacher IRLS on the pseudo-data grid (x_i, tau_k), solved through the
// reparametrized sheet so the fit stays non-crossing.
inline SheetModel fit_irls_sheet(const SheetSpec& spec, const Dataset& data,
                                 const PenaltyConfig& penalty, const IrlsConfig& config = {}) {
    validate_dataset(spec, data);
    if (config.tau_grid.empty()) throw std::invalid_argument("irls: empty tau grid");
    for (std::size_t k = 1; k < config.tau_grid.size(); ++k)
        if (config.tau_grid[k] <= config.tau_grid[k - 1] || config.tau_grid[k] >= 1.0 ||
            config.tau_grid[0] <= 0.0)
            throw std::invalid_argument("irls: tau grid must be strictly increasing in (0,1)");

    const int n = data.n();
    const int nk = static_cast<int>(config.tau_grid.size());
    const int rows = n * nk;
    const int kx = spec.k_x();
    const double floor = std::max(config.weight_floor_scale * detail::sd(data.ys), 1e-300);

    Eigen::MatrixXd m(rows, spec.dim());
    Eigen::VectorXd y(rows);
    for (int i = 0; i < n; ++i)
        for (int k = 0; k < nk; ++k) {
            m.row(i * nk + k) =
                tensor_row(spec, config.tau_grid[k], data.xs[i]).transpose();
            y[i * nk + k] = data.ys[i];
        }
    const Eigen::MatrixXd sigma = build_sigma(spec.k_tau(), kx);
    const Eigen::MatrixXd design = m * sigma;
    const Eigen::MatrixXd pen = static_cast<double>(rows) * penalty.S;

    Eigen::VectorXd bt = constrained_penalized_ls(design, y, pen, kx);
    bool converged = false;
    int it = 0;
    for (; it < config.max_iters; ++it) {
        const Eigen::VectorXd fitted = design * bt;
        Eigen::VectorXd w(rows);
        for (int i = 0; i < n; ++i)
            for (int k = 0; k < nk; ++k) {
                const int r = i * nk + k;
                w[r] = irls_weight(y[r] - fitted[r], config.tau_grid[k], floor);
            }
        const Eigen::VectorXd sw = w.array().sqrt();
        const Eigen::VectorXd bt_new = constrained_penalized_ls(
            Eigen::MatrixXd(sw.asDiagonal() * design), Eigen::VectorXd(sw.asDiagonal() * y),
            pen, kx);
        const double move = (bt_new - bt).norm() / (1.0 + bt.norm());
        bt = bt_new;
        if (move < config.tol) {
            converged = true;
            ++it;
            break;
        }
    }

    Eigen::VectorXd beta = bt;
    for (Eigen::Index j = kx; j < beta.size(); ++j) beta[j] = std::log(std::max(bt[j], 1e-8));
    return detail::pack_model(spec, beta, penalty, "irls", converged, it);
}

// Step 1: local-window empirical quantiles at each x_i; step 2: penalized
// constrained least squares of the sheet on the pseudo-observations.
inline SheetModel fit_two_step(const SheetSpec& spec, const Dataset& data,
                               const PenaltyConfig& penalty, const std::vector<double>& tau_grid,
                               double span) {
    validate_dataset(spec, data);
    if (!(span > 0.0 && span <= 1.0)) throw std::invalid_argument("two_step: span must be in (0,1]");
    if (tau_grid.empty()) throw std::invalid_argument("two_step: empty tau grid");

    const int n = data.n();
    const int nk = static_cast<int>(tau_grid.size());
    const int kx = spec.k_x();
    double xmin = data.xs[0], xmax = data.xs[0];
    for (double x : data.xs) {
        xmin = std::min(xmin, x);
        xmax = std::max(xmax, x);
    }
    const double half = 0.5 * span * (xmax - xmin);

    Eigen::MatrixXd m(n * nk, spec.dim());
    Eigen::VectorXd q(n * nk);
    std::vector<double> window;
    for (int i = 0; i < n; ++i) {
        window.clear();
        for (int j = 0; j < n; ++j)
            if (std::abs(data.xs[j] - data.xs[i]) <= half) window.push_back(data.ys[j]);
        if (window.size() < 5)
            throw std::runtime_error("two_step: insufficient data, window at x=" +
                                     std::to_string(data.xs[i]) + " holds fewer than 5 points");
        std::sort(window.begin(), window.end());
        for (int k = 0; k < nk; ++k) {
            // type-7 empirical quantile
            const double pos = tau_grid[k] * (window.size() - 1);
            const std::size_t lo = static_cast<std::size_t>(pos);
            const double frac = pos - lo;
            const double qk = lo + 1 < window.size()
                                  ? (1.0 - frac) * window[lo] + frac * window[lo + 1]
                                  : window[lo];
            m.row(i * nk + k) = tensor_row(spec, tau_grid[k], data.xs[i]).transpose();
            q[i * nk + k] = qk;
        }
    }

    const Eigen::MatrixXd sigma = build_sigma(spec.k_tau(), kx);
    const Eigen::VectorXd bt =
        constrained_penalized_ls(Eigen::MatrixXd(m * sigma), q,
                                 Eigen::MatrixXd(static_cast<double>(n * nk) * penalty.S), kx);
    Eigen::VectorXd beta = bt;
    for (Eigen::Index j = kx; j < beta.size(); ++j) beta[j] = std::log(std::max(bt[j], 1e-8));
    return detail::pack_model(spec, beta, penalty, "two_step", true, 1);
}

}  // namespace qsheet

#endif  // QSHEET_BASELINES_HPP
