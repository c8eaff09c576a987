#ifndef SEPSTAT_COVARIANCE_HPP
#define SEPSTAT_COVARIANCE_HPP

#include <array>
#include <cmath>
#include <cstddef>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "sepstat/errors.hpp"
#include "sepstat/reduction.hpp"
#include "sepstat/tensor.hpp"

namespace sepstat {

/// Truncated lag-h covariance of the score panel and its two partial-trace
/// factors. C1 carries the trace normalization (Tr(C1) = 1); C2 carries the
/// full trace (Tr(C2) = Tr(C)).
struct LagCovariance {
    std::size_t h = 0;
    Tensor C;     // (K,J,K,J)
    Matrix C1;    // K x K
    Matrix C2;    // J x J
    double trace = 0.0;

    [[nodiscard]] std::size_t K() const { return C.shape()[0]; }
    [[nodiscard]] std::size_t J() const { return C.shape()[1]; }
};

/// Bartlett long-run covariance of the demeaned lag products, stored as the
/// split-4 flattening of the order-8 tensor.
struct LongRunCov {
    Matrix gamma;                // (KJ)^2 x (KJ)^2
    std::size_t bandwidth = 0;   // q
    std::vector<double> weights; // omega_0..omega_{N-h-1}
    std::size_t K = 0;
    std::size_t J = 0;
};

/// Derivative arrays of the separable reconstruction map, in the plug-in
/// form with the estimated covariance substituted for the truth.
struct DerivativeTensors {
    Tensor M1; // (K,K,K,J,K,J)
    Tensor M2; // (J,J,K,J,K,J)
    Tensor M3; // (K,J,K,J,K,J,K,J), the identity
};

/// The nine flattened blocks W_ab = flat(M_a) * flat(Gamma) * flat(M_b)^T.
struct WBlocks {
    Matrix W11, W12, W13;
    Matrix W21, W22, W23;
    Matrix W31, W32, W33;
};

/// Covariance operator of the limiting Gaussian, with the nine assembly
/// addends retained for diagnostics.
struct QOperator {
    Matrix Q; // (KJ)^2 x (KJ)^2, symmetrized
    std::array<Matrix, 9> components;
    std::size_t K = 0;
    std::size_t J = 0;
};

namespace detail {

// Row-major vectorization of a K x J score matrix: v[k*J + j] = Z(k,j).
inline Vector vec_row_major(const Matrix& m) {
    Vector v(m.size());
    Eigen::Index pos = 0;
    for (Eigen::Index i = 0; i < m.rows(); ++i)
        for (Eigen::Index j = 0; j < m.cols(); ++j) v(pos++) = m(i, j);
    return v;
}

// Columns n = 0..N-1 hold vec(Z_n).
inline Matrix score_vectors(const ScorePanel& z) {
    const Eigen::Index KJ = static_cast<Eigen::Index>(z.K * z.J);
    Matrix zm(KJ, static_cast<Eigen::Index>(z.n_series));
    for (std::size_t n = 0; n < z.n_series; ++n) {
        zm.col(static_cast<Eigen::Index>(n)) = vec_row_major(z.Z[n]);
    }
    return zm;
}

inline void check_scores(const ScorePanel& z) {
    if (z.Z.size() != z.n_series || z.n_series < 2 || z.K < 1 || z.J < 1) {
        throw DimensionError("score panel is inconsistent or has fewer than 2 series");
    }
    for (const Matrix& m : z.Z) {
        if (static_cast<std::size_t>(m.rows()) != z.K ||
            static_cast<std::size_t>(m.cols()) != z.J) {
            throw DimensionError("score matrix shape does not match the declared K x J");
        }
    }
}

} // namespace detail

/// Step 5: C = (1/(N-h)) sum_n Z_n (x) Z_{n+h}, with the partial-trace
/// factors C1 = Tr2(C)/Tr(C) and C2 = Tr1(C).
[[nodiscard]] inline LagCovariance lag_covariance(const ScorePanel& z, std::size_t h) {
    detail::check_scores(z);
    const std::size_t N = z.n_series;
    if (h + 2 > N) {
        throw NumericError("insufficient lag: h=" + std::to_string(h) +
                           " requires at least N=" + std::to_string(h + 2) + " series, got " +
                           std::to_string(N));
    }
    const std::size_t m = N - h;
    const Eigen::Index KJ = static_cast<Eigen::Index>(z.K * z.J);

    const Matrix zm = detail::score_vectors(z);
    Matrix cm = Matrix::Zero(KJ, KJ);
    cm.noalias() = zm.leftCols(static_cast<Eigen::Index>(m)) *
                   zm.rightCols(static_cast<Eigen::Index>(m)).transpose();
    cm /= static_cast<double>(m);

    LagCovariance out;
    out.h = h;
    out.C = reshape(cm, {z.K, z.J, z.K, z.J}, 2);
    out.trace = full_trace(out.C);
    const double scale = out.C.frobenius_norm();
    if (std::abs(out.trace) <= 1e-12 * scale || scale == 0.0) {
        throw NumericError("degenerate covariance: Tr(C) is below the numerical floor "
                           "relative to the tensor norm");
    }
    out.C2 = partial_trace_over_first(out.C);
    out.C1 = partial_trace_over_second(out.C) / out.trace;
    return out;
}

/// Bandwidth rule q = floor(1.1447 (N/4)^(1/3)), floored at 1.
[[nodiscard]] inline std::size_t bartlett_bandwidth(std::size_t n_series) {
    if (n_series < 2) {
        throw ConfigError("bandwidth rule requires N >= 2, got " + std::to_string(n_series));
    }
    const double q = std::floor(1.1447 * std::cbrt(static_cast<double>(n_series) / 4.0));
    return q < 1.0 ? 1 : static_cast<std::size_t>(q);
}

/// Bartlett taper omega_i = 1 - i/(1+q) for i <= q, 0 beyond, returned for
/// i = 0..max_lag (omega_0 = 1).
[[nodiscard]] inline std::vector<double> bartlett_weights(std::size_t q, std::size_t max_lag) {
    if (q < 1) throw ConfigError("Bartlett bandwidth must be at least 1");
    std::vector<double> w(max_lag + 1, 0.0);
    for (std::size_t i = 0; i <= max_lag; ++i) {
        if (i <= q) w[i] = 1.0 - static_cast<double>(i) / (1.0 + static_cast<double>(q));
    }
    return w;
}

/// Steps 6-7: Gamma = R_0 + sum_{i=1}^{q} omega_i (R_i + R_i*), where
/// R_i = (1/(N-i-h)) sum_n p_n p_{n+i}^T on the demeaned lag products
/// p_n = vec(Z_n (x) Z_{n+h} - C), and R_i* is the index-swap adjoint
/// (equal to the transpose of the flattening, bit-exact).
[[nodiscard]] inline LongRunCov long_run_cov(const ScorePanel& z, const LagCovariance& cov,
                                             std::size_t h,
                                             std::optional<std::size_t> q_override = {}) {
    detail::check_scores(z);
    const std::size_t N = z.n_series;
    if (cov.h != h || cov.K() != z.K || cov.J() != z.J) {
        throw DimensionError("lag covariance does not match the score panel and lag");
    }
    const std::size_t q = q_override ? *q_override : bartlett_bandwidth(N);
    if (q < 1) throw ConfigError("Bartlett bandwidth must be at least 1");
    const std::size_t max_lag = N - h - 1;
    if (max_lag < q) {
        throw NumericError("bandwidth q=" + std::to_string(q) + " exceeds N-h-1=" +
                           std::to_string(max_lag) + "; choose a smaller q");
    }

    const std::size_t m = N - h;
    const Eigen::Index KJ = static_cast<Eigen::Index>(z.K * z.J);
    const Eigen::Index KJ2 = KJ * KJ;

    const Matrix zm = detail::score_vectors(z);
    const Vector cvec = detail::vec_row_major(flatten(cov.C, 2));
    Matrix products(KJ2, static_cast<Eigen::Index>(m));
    for (std::size_t n = 0; n < m; ++n) {
        const auto head = zm.col(static_cast<Eigen::Index>(n));
        const auto tail = zm.col(static_cast<Eigen::Index>(n + h));
        auto col = products.col(static_cast<Eigen::Index>(n));
        for (Eigen::Index p = 0; p < KJ; ++p) {
            col.segment(p * KJ, KJ) = head(p) * tail;
        }
        col -= cvec;
    }

    LongRunCov out;
    out.bandwidth = q;
    out.weights = bartlett_weights(q, max_lag);
    out.K = z.K;
    out.J = z.J;
    out.gamma = Matrix::Zero(KJ2, KJ2);
    out.gamma.noalias() = products * products.transpose();
    out.gamma /= static_cast<double>(m);
    for (std::size_t i = 1; i <= q; ++i) {
        const Eigen::Index terms = static_cast<Eigen::Index>(m - i);
        Matrix ri = products.leftCols(terms) *
                    products.middleCols(static_cast<Eigen::Index>(i), terms).transpose();
        ri /= static_cast<double>(terms);
        out.gamma.noalias() += out.weights[i] * (ri + ri.transpose());
    }
    return out;
}

/// Plug-in derivative arrays of the factor estimators with respect to the
/// covariance entries. M1 differentiates the normalized panel factor
/// Tr2(C)/Tr(C); M2 differentiates the temporal factor Tr1(C); M3 is the
/// order-8 identity.
[[nodiscard]] inline DerivativeTensors derivative_tensors(const LagCovariance& cov) {
    const std::size_t K = cov.K(), J = cov.J();
    const double tr = cov.trace;
    const double scale = cov.C.frobenius_norm();
    if (std::abs(tr) <= 1e-12 * scale || scale == 0.0) {
        throw NumericError("degenerate covariance trace in derivative computation");
    }
    const Matrix t2 = partial_trace_over_second(cov.C);
    const double tr2 = tr * tr;

    DerivativeTensors out;
    out.M1 = Tensor({K, K, K, J, K, J});
    {
        double* d = out.M1.data();
        std::size_t pos = 0;
        for (std::size_t i = 0; i < K; ++i)
            for (std::size_t k = 0; k < K; ++k) {
                const double t2ik = t2(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(k));
                for (std::size_t i2 = 0; i2 < K; ++i2)
                    for (std::size_t j = 0; j < J; ++j)
                        for (std::size_t k2 = 0; k2 < K; ++k2)
                            for (std::size_t l = 0; l < J; ++l, ++pos) {
                                if (j != l) continue; // delta_{jl} kills the rest
                                const double lead = (i == i2 && k == k2) ? tr : 0.0;
                                const double sub = (i2 == k2) ? t2ik : 0.0;
                                d[pos] = (lead - sub) / tr2;
                            }
            }
    }
    out.M2 = Tensor({J, J, K, J, K, J});
    {
        double* d = out.M2.data();
        std::size_t pos = 0;
        for (std::size_t j = 0; j < J; ++j)
            for (std::size_t l = 0; l < J; ++l)
                for (std::size_t i = 0; i < K; ++i)
                    for (std::size_t j2 = 0; j2 < J; ++j2)
                        for (std::size_t k = 0; k < K; ++k)
                            for (std::size_t l2 = 0; l2 < J; ++l2, ++pos) {
                                d[pos] = (j == j2 && l == l2 && i == k) ? 1.0 : 0.0;
                            }
    }
    out.M3 = Tensor({K, J, K, J, K, J, K, J});
    {
        const std::size_t KJ2 = K * J * K * J;
        double* d = out.M3.data();
        for (std::size_t a = 0; a < KJ2; ++a) d[a * KJ2 + a] = 1.0;
    }
    return out;
}

/// W_ab = flat(M_a) * flat(Gamma) * flat(M_b)^T. The M3 factors reduce to
/// identity, so the third row and column come out as plain products and
/// W33 is Gamma itself.
[[nodiscard]] inline WBlocks w_blocks(const DerivativeTensors& d, const LongRunCov& lrc) {
    const std::size_t K = d.M1.shape()[0];
    const std::size_t J = d.M2.shape()[0];
    if (lrc.K != K || lrc.J != J) {
        throw DimensionError("derivative tensors and long-run covariance disagree on K, J");
    }
    const Matrix m1 = flatten(d.M1, 2); // K^2 x (KJ)^2
    const Matrix m2 = flatten(d.M2, 2); // J^2 x (KJ)^2
    const Matrix& g = lrc.gamma;
    if (m1.cols() != g.rows() || g.rows() != g.cols()) {
        throw DimensionError("long-run covariance shape does not match the derivative arrays");
    }

    WBlocks w;
    w.W11 = compose(m1, g, m1);
    w.W12 = compose(m1, g, m2);
    w.W13 = m1 * g;
    w.W21 = compose(m2, g, m1);
    w.W22 = compose(m2, g, m2);
    w.W23 = m2 * g;
    w.W31 = g * m1.transpose();
    w.W32 = g * m2.transpose();
    w.W33 = g;
    return w;
}

namespace detail {

// G1[(i,j,k,l),(i2,k2)] = delta_{i i2} delta_{k k2} C2(j,l):
// the derivative of the separable reconstruction in its panel factor.
inline Matrix g1_matrix(const Matrix& c2, std::size_t K, std::size_t J) {
    const std::size_t KJ2 = K * J * K * J;
    Matrix g = Matrix::Zero(static_cast<Eigen::Index>(KJ2), static_cast<Eigen::Index>(K * K));
    for (std::size_t i = 0; i < K; ++i)
        for (std::size_t j = 0; j < J; ++j)
            for (std::size_t k = 0; k < K; ++k)
                for (std::size_t l = 0; l < J; ++l) {
                    const std::size_t row = ((i * J + j) * K + k) * J + l;
                    g(static_cast<Eigen::Index>(row), static_cast<Eigen::Index>(i * K + k)) =
                        c2(static_cast<Eigen::Index>(j), static_cast<Eigen::Index>(l));
                }
    return g;
}

// G2[(i,j,k,l),(j2,l2)] = delta_{j j2} delta_{l l2} C1(i,k).
inline Matrix g2_matrix(const Matrix& c1, std::size_t K, std::size_t J) {
    const std::size_t KJ2 = K * J * K * J;
    Matrix g = Matrix::Zero(static_cast<Eigen::Index>(KJ2), static_cast<Eigen::Index>(J * J));
    for (std::size_t i = 0; i < K; ++i)
        for (std::size_t j = 0; j < J; ++j)
            for (std::size_t k = 0; k < K; ++k)
                for (std::size_t l = 0; l < J; ++l) {
                    const std::size_t row = ((i * J + j) * K + k) * J + l;
                    g(static_cast<Eigen::Index>(row), static_cast<Eigen::Index>(j * J + l)) =
                        c1(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(k));
                }
    return g;
}

} // namespace detail

/// Nine-term assembly of the limiting covariance operator, symmetrized at
/// the end. The unsymmetrized addends are kept for diagnostics.
[[nodiscard]] inline QOperator q_assemble(const LagCovariance& cov, const WBlocks& w) {
    const std::size_t K = cov.K(), J = cov.J();
    const Eigen::Index KJ2 = static_cast<Eigen::Index>(K * J * K * J);
    if (w.W33.rows() != KJ2 || w.W33.cols() != KJ2) {
        throw DimensionError("W blocks do not match the covariance dimensions");
    }
    const Matrix g1 = detail::g1_matrix(cov.C2, K, J);
    const Matrix g2 = detail::g2_matrix(cov.C1, K, J);

    QOperator out;
    out.K = K;
    out.J = J;
    out.components[0] = compose(g1, w.W11, g1);
    out.components[1] = compose(g2, w.W21, g1);
    out.components[2] = -(w.W31 * g1.transpose());
    out.components[3] = compose(g1, w.W12, g2);
    out.components[4] = compose(g2, w.W22, g2);
    out.components[5] = -(w.W32 * g2.transpose());
    out.components[6] = -(g1 * w.W13);
    out.components[7] = -(g2 * w.W23);
    out.components[8] = w.W33;

    Matrix raw = Matrix::Zero(KJ2, KJ2);
    for (const Matrix& term : out.components) {
        if (term.rows() != KJ2 || term.cols() != KJ2) {
            throw DimensionError("Q component has inconsistent dimensions");
        }
        raw += term;
    }
    out.Q = 0.5 * (raw + raw.transpose());
    return out;
}

} // namespace sepstat

#endif // SEPSTAT_COVARIANCE_HPP
