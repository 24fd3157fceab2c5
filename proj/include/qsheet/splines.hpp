#ifndef QSHEET_SPLINES_HPP
#define QSHEET_SPLINES_HPP

#include <Eigen/Dense>

#include <cmath>
#include <stdexcept>
#include <string>
#include <vector>

namespace qsheet {

struct numeric_error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// B-spline basis of order m (degree m-1) on equally spaced knots over [a, b],
// with K0 interior knots and uniformly extended boundary knots, so that
// K = K0 + m basis functions form a partition of unity on [a, b].
struct KnotVector {
    int interior_count = 0;  // K0
    int order = 0;           // m
    double a = 0.0;
    double b = 1.0;
    double spacing = 0.0;             // h = (b - a) / (K0 + 1)
    std::vector<double> knots;        // size K0 + 2m, knots[i] = a + (i - m + 1) h

    int size() const { return interior_count + order; }  // K

    // Knot by extended index (valid beyond the stored range, grid is uniform).
    double knot(int i) const { return a + (i - order + 1) * spacing; }
};

struct BasisMatrix {
    Eigen::MatrixXd values;       // n x K
    std::vector<double> points;   // the n evaluation abscissae
};

struct IntegrationMatrices {
    Eigen::VectorXd g1;        // diag of G1, (t_{i+m} - t_i)/m
    Eigen::VectorXd g2;        // diag of G2, (t_{i+m+1} - t_i)/(m+1)
    KnotVector raised1;        // order m+1 grid; drop the leading function
    KnotVector raised2;        // order m+2 grid; drop the two leading functions
};

inline KnotVector build_knots(int K0, int m, double a = 0.0, double b = 1.0) {
    if (m < 1) throw std::invalid_argument("build_knots: order m must be >= 1");
    if (K0 < 0) throw std::invalid_argument("build_knots: K0 must be >= 0");
    if (!(b > a)) throw std::invalid_argument("build_knots: degenerate domain");
    KnotVector kv;
    kv.interior_count = K0;
    kv.order = m;
    kv.a = a;
    kv.b = b;
    kv.spacing = (b - a) / (K0 + 1);
    kv.knots.resize(K0 + 2 * m);
    for (int i = 0; i < static_cast<int>(kv.knots.size()); ++i)
        kv.knots[i] = a + (i - m + 1) * kv.spacing;
    return kv;
}

namespace detail {

inline void check_in_domain(const KnotVector& kv, double x) {
    const double eps = 1e-12 * (std::abs(kv.a) + std::abs(kv.b) + 1.0);
    if (x < kv.a - eps || x > kv.b + eps)
        throw std::domain_error("point " + std::to_string(x) + " outside basis domain [" +
                                std::to_string(kv.a) + ", " + std::to_string(kv.b) + "]");
}

// de Boor triangular scheme: writes the m nonzero values N_{first..first+m-1}(x)
// into vals and returns first. The last knot interval is treated as closed at b.
inline int eval_local(const KnotVector& kv, double x, double* vals) {
    const int m = kv.order;
    const int K = kv.size();
    int span = m - 1 + static_cast<int>(std::floor((x - kv.a) / kv.spacing));
    if (span < m - 1) span = m - 1;
    if (span > K - 1) span = K - 1;  // x == b lands here
    vals[0] = 1.0;
    for (int d = 1; d < m; ++d) {
        double saved = 0.0;
        for (int r = 0; r < d; ++r) {
            const double tl = kv.knots[span + r + 1 - d];
            const double tr = kv.knots[span + r + 1];
            const double term = vals[r] / (tr - tl);
            vals[r] = saved + (tr - x) * term;
            saved = (x - tl) * term;
        }
        vals[d] = saved;
    }
    return span - m + 1;
}

}  // namespace detail

inline Eigen::VectorXd eval_row(const KnotVector& kv, double x) {
    detail::check_in_domain(kv, x);
    Eigen::VectorXd row = Eigen::VectorXd::Zero(kv.size());
    std::vector<double> vals(kv.order);
    const int first = detail::eval_local(kv, x, vals.data());
    for (int j = 0; j < kv.order; ++j) row[first + j] = vals[j];
    return row;
}

inline BasisMatrix eval_basis(const KnotVector& kv, const std::vector<double>& points) {
    BasisMatrix bm;
    bm.points = points;
    bm.values.resize(static_cast<Eigen::Index>(points.size()), kv.size());
    bm.values.setZero();
    std::vector<double> vals(kv.order);
    for (std::size_t i = 0; i < points.size(); ++i) {
        detail::check_in_domain(kv, points[i]);
        const int first = detail::eval_local(kv, points[i], vals.data());
        for (int j = 0; j < kv.order; ++j) bm.values(static_cast<Eigen::Index>(i), first + j) = vals[j];
    }
    return bm;
}

inline IntegrationMatrices build_integration(const KnotVector& kv) {
    IntegrationMatrices im;
    const int K = kv.size();
    const int m = kv.order;
    im.g1.resize(K);
    im.g2.resize(K);
    for (int i = 0; i < K; ++i) {
        im.g1[i] = (kv.knot(i + m) - kv.knot(i)) / m;
        im.g2[i] = (kv.knot(i + m + 1) - kv.knot(i)) / (m + 1);
    }
    im.raised1 = build_knots(kv.interior_count, m + 1, kv.a, kv.b);
    im.raised2 = build_knots(kv.interior_count, m + 2, kv.a, kv.b);
    return im;
}

namespace detail {

// Sigma_tau^T v: suffix sums of v.
inline Eigen::VectorXd suffix_sum(const Eigen::VectorXd& v) {
    Eigen::VectorXd out(v.size());
    double acc = 0.0;
    for (Eigen::Index j = v.size() - 1; j >= 0; --j) {
        acc += v[j];
        out[j] = acc;
    }
    return out;
}

// Values of the K intact integrals \int_{-inf}^x N_k spelled through the
// raised order-(m+1) basis without its leading function:
// P(x) = G1 Sigma^T Ntilde(x).
inline Eigen::VectorXd prefix_unbounded(const IntegrationMatrices& im, const Eigen::VectorXd& g1,
                                        double x) {
    const Eigen::VectorXd raised = eval_row(im.raised1, x);  // K+1 values
    const Eigen::Index K = raised.size() - 1;
    Eigen::VectorXd dropped = raised.tail(K);
    Eigen::VectorXd out = suffix_sum(dropped);
    return g1.array() * out.array();
}

}  // namespace detail

// \int_a^upper N_k(t) dt for every basis function, via the raised-order identity.
inline Eigen::VectorXd integrate_basis_prefix(const KnotVector& kv, double upper) {
    detail::check_in_domain(kv, upper);
    const IntegrationMatrices im = build_integration(kv);
    return detail::prefix_unbounded(im, im.g1, upper) - detail::prefix_unbounded(im, im.g1, kv.a);
}

// Same, reusing precomputed matrices (hot path for the loss gradient).
inline Eigen::VectorXd integrate_basis_prefix(const KnotVector& kv, const IntegrationMatrices& im,
                                              double upper) {
    detail::check_in_domain(kv, upper);
    return detail::prefix_unbounded(im, im.g1, upper) - detail::prefix_unbounded(im, im.g1, kv.a);
}

// \int_0^1 t N_k(t) dt on the [0,1] domain. Integration by parts pushes the
// weight onto the order-(m+1) and order-(m+2) raised bases:
//   G1 Sigma^T [ Ntilde(1) - G2 Sigma^T (Ndd(1) - Ndd(0)) ].
inline Eigen::VectorXd integrate_tau_weighted(const KnotVector& kv) {
    if (std::abs(kv.a) > 1e-14 || std::abs(kv.b - 1.0) > 1e-14)
        throw std::invalid_argument("integrate_tau_weighted: domain must be [0,1]");
    const IntegrationMatrices im = build_integration(kv);
    const int K = kv.size();

    const Eigen::VectorXd r1_hi = eval_row(im.raised1, 1.0);
    const Eigen::VectorXd r2_hi = eval_row(im.raised2, 1.0);
    const Eigen::VectorXd r2_lo = eval_row(im.raised2, 0.0);

    Eigen::VectorXd inner = detail::suffix_sum(Eigen::VectorXd(r2_hi.tail(K) - r2_lo.tail(K)));
    inner = im.g2.array() * inner.array();
    Eigen::VectorXd outer = r1_hi.tail(K) - inner;
    outer = detail::suffix_sum(outer);
    return im.g1.array() * outer.array();
}

// q-th order difference operator, (K-q) x K.
inline Eigen::MatrixXd difference_matrix(int K, int q) {
    if (q <= 0 || q >= K) throw std::invalid_argument("difference_matrix: need 0 < q < K");
    Eigen::MatrixXd d = Eigen::MatrixXd::Zero(K - 1, K);
    for (int i = 0; i < K - 1; ++i) {
        d(i, i) = -1.0;
        d(i, i + 1) = 1.0;
    }
    Eigen::MatrixXd out = d;
    for (int level = 1; level < q; ++level) {
        const int rows = static_cast<int>(out.rows());
        Eigen::MatrixXd d1 = Eigen::MatrixXd::Zero(rows - 1, rows);
        for (int i = 0; i < rows - 1; ++i) {
            d1(i, i) = -1.0;
            d1(i, i + 1) = 1.0;
        }
        out = d1 * out;
    }
    return out;
}

}  // namespace qsheet

#endif  // QSHEET_SPLINES_HPP
