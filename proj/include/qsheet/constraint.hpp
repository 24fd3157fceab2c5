#ifndef QSHEET_CONSTRAINT_HPP
#define QSHEET_CONSTRAINT_HPP

#include "qsheet/splines.hpp"

#include <Eigen/Dense>

#include <cmath>
#include <stdexcept>

namespace qsheet {

// Tensor-product sheet Q(tau, x) monotone nondecreasing in tau by construction.
struct SheetSpec {
    KnotVector tau_basis;  // K_tau functions on [0,1]
    KnotVector x_basis;    // K_1 functions on [a,b]

    int k_tau() const { return tau_basis.size(); }
    int k_x() const { return x_basis.size(); }
    int dim() const { return k_tau() * k_x(); }
};

inline SheetSpec make_sheet_spec(int K0_tau, int m_tau, int K0_x, int m_x, double xa = 0.0,
                                 double xb = 1.0) {
    SheetSpec s;
    s.tau_basis = build_knots(K0_tau, m_tau, 0.0, 1.0);
    s.x_basis = build_knots(K0_x, m_x, xa, xb);
    return s;
}

// Unconstrained beta, its exp image beta_tilde, and gamma = Sigma beta_tilde.
// Ordering is vec(Theta^T): tau-major blocks of length K_1. The first block is
// exempt from exp; every later block is exponentiated, so consecutive tau-blocks
// of gamma are nondecreasing coordinatewise.
struct CoefficientState {
    Eigen::VectorXd beta;
    Eigen::VectorXd beta_tilde;
    Eigen::VectorXd gamma;
    int k_x = 0;
};

// exp clamp: keeps line-search iterates finite.
inline double guarded_exp(double v) { return std::exp(v > 50.0 ? 50.0 : v); }

inline CoefficientState map_beta(const Eigen::VectorXd& beta, int K_1) {
    if (K_1 < 1 || beta.size() % K_1 != 0)
        throw std::invalid_argument("map_beta: length(beta) not divisible by K_1");
    CoefficientState st;
    st.k_x = K_1;
    st.beta = beta;
    st.beta_tilde = beta;
    for (Eigen::Index j = K_1; j < beta.size(); ++j) st.beta_tilde[j] = guarded_exp(beta[j]);
    // gamma = (Sigma_tau kron I) beta_tilde: running block sums.
    st.gamma = st.beta_tilde;
    for (Eigen::Index j = K_1; j < beta.size(); ++j) st.gamma[j] += st.gamma[j - K_1];
    return st;
}

// Sigma = Sigma_tau kron I_{K_1}, Sigma_tau lower-triangular ones.
inline Eigen::MatrixXd build_sigma(int K_tau, int K_1) {
    if (K_tau < 1 || K_1 < 1) throw std::invalid_argument("build_sigma: sizes must be >= 1");
    const int p = K_tau * K_1;
    Eigen::MatrixXd s = Eigen::MatrixXd::Zero(p, p);
    for (int bi = 0; bi < K_tau; ++bi)
        for (int bj = 0; bj <= bi; ++bj)
            for (int k = 0; k < K_1; ++k) s(bi * K_1 + k, bj * K_1 + k) = 1.0;
    return s;
}

// Diagonal of C = d beta_tilde / d beta.
inline Eigen::VectorXd jacobian_C(const CoefficientState& state) {
    Eigen::VectorXd c = Eigen::VectorXd::Ones(state.beta.size());
    for (Eigen::Index j = state.k_x; j < state.beta.size(); ++j)
        c[j] = guarded_exp(state.beta[j]);
    return c;
}

// N(tau, x) = N^{[m_tau]}(tau) kron N^{[m_1]}(x).
inline Eigen::VectorXd tensor_row(const SheetSpec& spec, double tau, double x) {
    const Eigen::VectorXd rt = eval_row(spec.tau_basis, tau);
    const Eigen::VectorXd rx = eval_row(spec.x_basis, x);
    Eigen::VectorXd out(spec.dim());
    for (int j = 0; j < spec.k_tau(); ++j) out.segment(j * spec.k_x(), spec.k_x()) = rt[j] * rx;
    return out;
}

struct PenaltyConfig {
    double lambda_tau = 0.0;
    double lambda_11 = 0.0;
    double lambda_12 = 0.0;
    Eigen::MatrixXd S;  // symmetric PSD, (K_tau K_1)^2

    Eigen::VectorXd grad(const Eigen::VectorXd& beta) const { return 2.0 * (S * beta); }
    double value(const Eigen::VectorXd& beta) const { return beta.dot(S * beta); }
};

// S = lambda_tau D_tau' D_tau + lambda_11 D_11' D_11 + lambda_12 D_12' D_12,
// D_tau = F kron I, D_11 = E kron Delta2, D_12 = (I - E) kron Delta1,
// F = first-order difference operator on tau blocks without its first row,
// E = e_1 e_1'.
inline PenaltyConfig build_penalty(const SheetSpec& spec, double lambda_tau, double lambda_11,
                                   double lambda_12) {
    const int kt = spec.k_tau();
    const int kx = spec.k_x();
    if (kt < 3 || kx < 3) throw std::invalid_argument("build_penalty: need K_tau >= 3, K_1 >= 3");
    if (lambda_tau < 0 || lambda_11 < 0 || lambda_12 < 0)
        throw std::invalid_argument("build_penalty: lambdas must be >= 0");
    PenaltyConfig pc;
    pc.lambda_tau = lambda_tau;
    pc.lambda_11 = lambda_11;
    pc.lambda_12 = lambda_12;

    const Eigen::MatrixXd d1t = difference_matrix(kt, 1);
    const Eigen::MatrixXd f = d1t.bottomRows(kt - 2);
    const Eigen::MatrixXd ikx = Eigen::MatrixXd::Identity(kx, kx);
    const Eigen::MatrixXd ikt = Eigen::MatrixXd::Identity(kt, kt);
    Eigen::MatrixXd e = Eigen::MatrixXd::Zero(kt, kt);
    e(0, 0) = 1.0;

    const auto kron = [](const Eigen::MatrixXd& a, const Eigen::MatrixXd& b) {
        Eigen::MatrixXd out(a.rows() * b.rows(), a.cols() * b.cols());
        for (Eigen::Index i = 0; i < a.rows(); ++i)
            for (Eigen::Index j = 0; j < a.cols(); ++j)
                out.block(i * b.rows(), j * b.cols(), b.rows(), b.cols()) = a(i, j) * b;
        return out;
    };

    const Eigen::MatrixXd d_tau = kron(f, ikx);
    const Eigen::MatrixXd d_11 = kron(e, difference_matrix(kx, 2));
    const Eigen::MatrixXd d_12 = kron(Eigen::MatrixXd(ikt - e), difference_matrix(kx, 1));

    pc.S = lambda_tau * d_tau.transpose() * d_tau + lambda_11 * d_11.transpose() * d_11 +
           lambda_12 * d_12.transpose() * d_12;
    pc.S = 0.5 * (pc.S + pc.S.transpose().eval());
    return pc;
}

inline PenaltyConfig zero_penalty(const SheetSpec& spec) {
    PenaltyConfig pc;
    pc.S = Eigen::MatrixXd::Zero(spec.dim(), spec.dim());
    return pc;
}

// Q(tau, x) = N^T(tau, x) gamma at a grid, taus x xs.
inline Eigen::MatrixXd eval_sheet(const SheetSpec& spec, const CoefficientState& state,
                                  const std::vector<double>& taus, const std::vector<double>& xs) {
    const BasisMatrix bt = eval_basis(spec.tau_basis, taus);
    const BasisMatrix bx = eval_basis(spec.x_basis, xs);
    const Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>
        theta(state.gamma.data(), spec.k_tau(), spec.k_x());
    return bt.values * theta * bx.values.transpose();
}

inline double eval_point(const SheetSpec& spec, const CoefficientState& state, double tau,
                         double x) {
    return tensor_row(spec, tau, x).dot(state.gamma);
}

}  // namespace qsheet

#endif  // QSHEET_CONSTRAINT_HPP
