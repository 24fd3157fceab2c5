#ifndef QSHEET_LOSS_SMOOTHED_HPP
#define QSHEET_LOSS_SMOOTHED_HPP

#include "qsheet/constraint.hpp"
#include "qsheet/loss_exact.hpp"
#include "qsheet/splines.hpp"

#include <Eigen/Dense>

#include <cmath>
#include <numbers>
#include <stdexcept>
#include <string>
#include <vector>

namespace qsheet {

enum class KernelKind { gaussian, uniform, epanechnikov };

inline KernelKind kernel_from_name(const std::string& name) {
    if (name == "gaussian") return KernelKind::gaussian;
    if (name == "uniform") return KernelKind::uniform;
    if (name == "epanechnikov") return KernelKind::epanechnikov;
    throw std::invalid_argument("unknown kernel: " + name);
}

inline const char* kernel_name(KernelKind k) {
    switch (k) {
        case KernelKind::gaussian: return "gaussian";
        case KernelKind::uniform: return "uniform";
        default: return "epanechnikov";
    }
}

struct KernelSpec {
    KernelKind kind = KernelKind::gaussian;
    double bandwidth = 0.05;  // h > 0

    // density K(t)
    double density(double t) const {
        switch (kind) {
            case KernelKind::gaussian:
                return std::exp(-0.5 * t * t) / std::sqrt(2.0 * std::numbers::pi);
            case KernelKind::uniform:
                return std::abs(t) <= 1.0 ? 0.5 : 0.0;
            default:
                return std::abs(t) <= 1.0 ? 0.75 * (1.0 - t * t) : 0.0;
        }
    }

    // CDF of K at t
    double cdf(double t) const {
        switch (kind) {
            case KernelKind::gaussian:
                return 0.5 * std::erfc(-t / std::numbers::sqrt2);
            case KernelKind::uniform:
                return t <= -1.0 ? 0.0 : (t >= 1.0 ? 1.0 : 0.5 * (t + 1.0));
            default:
                return t <= -1.0 ? 0.0 : (t >= 1.0 ? 1.0 : 0.25 * (2.0 + 3.0 * t - t * t * t));
        }
    }

    // (max(-., 0) * K)(t) at unit scale: the tau-free part of the smoothed
    // check loss, so that l_{h,tau}(u) = tau u + h s(u/h).
    double ramp(double t) const {
        switch (kind) {
            case KernelKind::gaussian:
                return density(t) - t * cdf(-t);
            case KernelKind::uniform:
                if (t >= 1.0) return 0.0;
                if (t <= -1.0) return -t;
                return 0.25 * (1.0 - t) * (1.0 - t);
            default:
                if (t >= 1.0) return 0.0;
                if (t <= -1.0) return -t;
                return -t * cdf(-t) + (3.0 / 16.0) * (1.0 - t * t) * (1.0 - t * t);
        }
    }
};

inline KernelSpec make_kernel(KernelKind kind, double h) {
    if (!(h > 0.0)) throw std::invalid_argument("kernel bandwidth must be > 0");
    return {kind, h};
}

// Default bandwidth, conquer-style: max{0.05, sqrt(log n / n)}.
inline double default_bandwidth(int n) {
    return std::max(0.05, std::sqrt(std::log(static_cast<double>(n)) / n));
}

// Equally spaced midpoint nodes on [0,1], weight 1/n_tau each.
struct QuadratureGrid {
    int n_tau = 256;
    std::vector<double> nodes;

    static QuadratureGrid midpoints(int n_tau) {
        if (n_tau < 8) throw std::invalid_argument("quadrature grid: need n_tau >= 8");
        QuadratureGrid g;
        g.n_tau = n_tau;
        g.nodes.resize(n_tau);
        for (int j = 0; j < n_tau; ++j) g.nodes[j] = (j + 0.5) / n_tau;
        return g;
    }
};

// l_{h,tau}(u) = (rho_tau * K_h)(u)
inline double smoothed_check(double u, double tau, const KernelSpec& kernel) {
    const double h = kernel.bandwidth;
    return tau * u + h * kernel.ramp(u / h);
}

struct SmoothedWorkspace {
    GradientWorkspace base;   // nx, tau moments, H1
    QuadratureGrid grid;
    Eigen::MatrixXd btau;     // n_tau x K_tau basis at the grid nodes
};

inline SmoothedWorkspace make_smoothed_workspace(const SheetSpec& spec, const Dataset& data,
                                                 const QuadratureGrid& grid) {
    SmoothedWorkspace w;
    w.base = make_workspace(spec, data);
    w.grid = grid;
    w.btau = eval_basis(spec.tau_basis, grid.nodes).values;
    return w;
}

namespace detail {

// Q(tau_j, x_i) over the grid: n_tau x n.
inline Eigen::MatrixXd sheet_at_grid(const SheetSpec& spec, const CoefficientState& state,
                                     const SmoothedWorkspace& w) {
    const Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>
        theta(state.gamma.data(), spec.k_tau(), spec.k_x());
    return w.btau * theta * w.base.nx.transpose();
}

}  // namespace detail

// Smoothed criterion with the linear-in-tau part integrated analytically and
// the kernel part on the grid; smoothed_gradient below is its exact gradient.
inline double smoothed_loss(const SheetSpec& spec, const CoefficientState& state,
                            const Dataset& data, const PenaltyConfig& penalty,
                            const KernelSpec& kernel, const SmoothedWorkspace& w) {
    const int n = data.n();
    const double h = kernel.bandwidth;
    const Eigen::MatrixXd q = detail::sheet_at_grid(spec, state, w);
    double acc = 0.0;
    for (int i = 0; i < n; ++i) {
        double s = 0.0;
        for (int j = 0; j < w.grid.n_tau; ++j) s += kernel.ramp((data.ys[i] - q(j, i)) / h);
        acc += 0.5 * data.ys[i] + h * s / w.grid.n_tau;
    }
    const double val = acc / n - w.base.H1.dot(state.gamma) / n + penalty.value(state.beta);
    if (!std::isfinite(val)) throw numeric_error("smoothed_loss: non-finite value");
    return val;
}

// (1/n) C Sigma^T [h_tau - h_1] + penalty gradient; h_1 analytic (= H1),
// h_tau by the midpoint rule over the grid.
inline Eigen::VectorXd smoothed_gradient(const SheetSpec& spec, const CoefficientState& state,
                                         const Dataset& data, const PenaltyConfig& penalty,
                                         const KernelSpec& kernel, const SmoothedWorkspace& w) {
    const int n = data.n();
    const int kt = spec.k_tau();
    const int kx = spec.k_x();
    const double h = kernel.bandwidth;
    Eigen::MatrixXd kmat = detail::sheet_at_grid(spec, state, w);  // n_tau x n
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < w.grid.n_tau; ++j)
            kmat(j, i) = kernel.cdf((kmat(j, i) - data.ys[i]) / h);
    const Eigen::MatrixXd htau_m = w.btau.transpose() * (kmat * w.base.nx) / w.grid.n_tau;
    Eigen::VectorXd htau(kt * kx);
    for (int j = 0; j < kt; ++j) htau.segment(j * kx, kx) = htau_m.row(j).transpose();

    const Eigen::VectorXd c = jacobian_C(state);
    Eigen::VectorXd g =
        (c.array() * sigma_t_apply(htau - w.base.H1, kx).array()).matrix() / n +
        penalty.grad(state.beta);
    if (!g.allFinite()) throw numeric_error("smoothed_gradient: non-finite gradient");
    return g;
}

// nabla^2 L_h = C Sigma^T W Sigma C + J (penalty excluded),
// W = (1/n) avg_j sum_i K_h(Q - y) N N^T.
inline Eigen::MatrixXd smoothed_hessian(const SheetSpec& spec, const CoefficientState& state,
                                        const Dataset& data, const KernelSpec& kernel,
                                        const SmoothedWorkspace& w) {
    const int n = data.n();
    const int kt = spec.k_tau();
    const int kx = spec.k_x();
    const int p = kt * kx;
    const double h = kernel.bandwidth;
    const Eigen::MatrixXd q = detail::sheet_at_grid(spec, state, w);

    Eigen::MatrixXd wmat = Eigen::MatrixXd::Zero(p, p);
    for (int j = 0; j < w.grid.n_tau; ++j) {
        Eigen::VectorXd wt(n);
        for (int i = 0; i < n; ++i) wt[i] = kernel.density((q(j, i) - data.ys[i]) / h) / h;
        const Eigen::MatrixXd mx =
            w.base.nx.transpose() * wt.asDiagonal() * w.base.nx;  // kx x kx
        const Eigen::VectorXd bt = w.btau.row(j).transpose();
        for (int r = 0; r < kt; ++r)
            for (int c = 0; c < kt; ++c)
                if (bt[r] != 0.0 && bt[c] != 0.0)
                    wmat.block(r * kx, c * kx, kx, kx) += (bt[r] * bt[c]) * mx;
    }
    wmat /= static_cast<double>(n) * w.grid.n_tau;

    const Eigen::MatrixXd sigma = build_sigma(kt, kx);
    const Eigen::VectorXd c = jacobian_C(state);
    Eigen::MatrixXd hess =
        c.asDiagonal() * sigma.transpose() * wmat * sigma * c.asDiagonal();

    const PenaltyConfig no_pen = zero_penalty(spec);
    const Eigen::VectorXd g =
        smoothed_gradient(spec, state, data, no_pen, kernel, w);
    for (int j = kx; j < p; ++j) hess(j, j) += g[j];
    return hess;
}

}  // namespace qsheet

#endif  // QSHEET_LOSS_SMOOTHED_HPP
