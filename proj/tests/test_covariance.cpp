#include <cmath>
#include <cstddef>
#include <random>
#include <vector>

#include <gtest/gtest.h>

#include "oracles.hpp"
#include "sepstat/covariance.hpp"
#include "sepstat/errors.hpp"
#include "sepstat/reduction.hpp"
#include "sepstat/tensor.hpp"

namespace {

using sepstat::Matrix;
using sepstat::Tensor;
using sepstat::Vector;

sepstat::ScorePanel make_scores(std::vector<Matrix> z) {
    sepstat::ScorePanel p;
    p.n_series = z.size();
    p.K = static_cast<std::size_t>(z.front().rows());
    p.J = static_cast<std::size_t>(z.front().cols());
    p.Z = std::move(z);
    return p;
}

// Mildly dependent scores: Z_n = 0.5 Z_{n-1} + E_n with iid Gaussian E_n.
sepstat::ScorePanel var1_scores(std::size_t n, std::size_t K, std::size_t J, unsigned seed) {
    std::mt19937_64 rng(seed);
    std::vector<Matrix> z;
    z.reserve(n);
    Matrix prev = Matrix::Zero(static_cast<Eigen::Index>(K), static_cast<Eigen::Index>(J));
    for (std::size_t i = 0; i < n; ++i) {
        Matrix cur = 0.5 * prev + oracle::random_matrix(static_cast<Eigen::Index>(K),
                                                        static_cast<Eigen::Index>(J), rng);
        z.push_back(cur);
        prev = cur;
    }
    return make_scores(std::move(z));
}

sepstat::ScorePanel iid_scores(std::size_t n, std::size_t K, std::size_t J, unsigned seed) {
    std::mt19937_64 rng(seed);
    std::vector<Matrix> z;
    z.reserve(n);
    for (std::size_t i = 0; i < n; ++i) {
        z.push_back(oracle::random_matrix(static_cast<Eigen::Index>(K),
                                          static_cast<Eigen::Index>(J), rng));
    }
    return make_scores(std::move(z));
}

Tensor cov_oracle(const sepstat::ScorePanel& z, std::size_t h) {
    const std::size_t K = z.K, J = z.J, m = z.n_series - h;
    Tensor c({K, J, K, J});
    std::size_t pos = 0;
    for (std::size_t i = 0; i < K; ++i)
        for (std::size_t j = 0; j < J; ++j)
            for (std::size_t k = 0; k < K; ++k)
                for (std::size_t l = 0; l < J; ++l, ++pos) {
                    double acc = 0.0;
                    for (std::size_t n = 0; n < m; ++n) {
                        acc += z.Z[n](static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) *
                               z.Z[n + h](static_cast<Eigen::Index>(k),
                                          static_cast<Eigen::Index>(l));
                    }
                    c.data()[pos] = acc / static_cast<double>(m);
                }
    return c;
}

// Demeaned lag products p_n as rows of an (N-h) x (KJ)^2 array.
std::vector<std::vector<double>> lag_products_oracle(const sepstat::ScorePanel& z, std::size_t h,
                                                     const Tensor& c) {
    const std::size_t K = z.K, J = z.J, m = z.n_series - h;
    std::vector<std::vector<double>> p(m, std::vector<double>(K * J * K * J, 0.0));
    for (std::size_t n = 0; n < m; ++n) {
        std::size_t pos = 0;
        for (std::size_t i = 0; i < K; ++i)
            for (std::size_t j = 0; j < J; ++j)
                for (std::size_t k = 0; k < K; ++k)
                    for (std::size_t l = 0; l < J; ++l, ++pos) {
                        p[n][pos] =
                            z.Z[n](static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) *
                                z.Z[n + h](static_cast<Eigen::Index>(k),
                                           static_cast<Eigen::Index>(l)) -
                            c.data()[pos];
                    }
    }
    return p;
}

Matrix autocov_oracle(const std::vector<std::vector<double>>& p, std::size_t lag) {
    const std::size_t dim = p.front().size();
    const std::size_t terms = p.size() - lag;
    Matrix r = Matrix::Zero(static_cast<Eigen::Index>(dim), static_cast<Eigen::Index>(dim));
    for (std::size_t a = 0; a < dim; ++a)
        for (std::size_t b = 0; b < dim; ++b) {
            double acc = 0.0;
            for (std::size_t n = 0; n < terms; ++n) acc += p[n][a] * p[n + lag][b];
            r(static_cast<Eigen::Index>(a), static_cast<Eigen::Index>(b)) =
                acc / static_cast<double>(terms);
        }
    return r;
}

Matrix long_run_oracle(const sepstat::ScorePanel& z, std::size_t h, const Tensor& c,
                       std::size_t q) {
    const auto p = lag_products_oracle(z, h, c);
    Matrix gamma = autocov_oracle(p, 0);
    for (std::size_t i = 1; i <= q; ++i) {
        const double w = 1.0 - static_cast<double>(i) / (1.0 + static_cast<double>(q));
        const Matrix ri = autocov_oracle(p, i);
        gamma += w * (ri + ri.transpose());
    }
    return gamma;
}

Matrix mm(const Matrix& a, const Matrix& b) {
    Matrix out = Matrix::Zero(a.rows(), b.cols());
    for (Eigen::Index i = 0; i < a.rows(); ++i)
        for (Eigen::Index j = 0; j < b.cols(); ++j) {
            double acc = 0.0;
            for (Eigen::Index p = 0; p < a.cols(); ++p) acc += a(i, p) * b(p, j);
            out(i, j) = acc;
        }
    return out;
}

// Independent builds of the derivative and reconstruction blocks, straight
// from their entrywise definitions.
Matrix m1_oracle(const Tensor& c) {
    const std::size_t K = c.shape()[0], J = c.shape()[1];
    const Matrix t2 = oracle::trace_over_second(c);
    const double tr = oracle::full_trace(c);
    Matrix m = Matrix::Zero(static_cast<Eigen::Index>(K * K),
                            static_cast<Eigen::Index>(K * J * K * J));
    for (std::size_t i = 0; i < K; ++i)
        for (std::size_t k = 0; k < K; ++k)
            for (std::size_t i2 = 0; i2 < K; ++i2)
                for (std::size_t j = 0; j < J; ++j)
                    for (std::size_t k2 = 0; k2 < K; ++k2)
                        for (std::size_t l = 0; l < J; ++l) {
                            if (j != l) continue;
                            const double lead = (i == i2 && k == k2) ? tr : 0.0;
                            const double sub =
                                (i2 == k2)
                                    ? t2(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(k))
                                    : 0.0;
                            m(static_cast<Eigen::Index>(i * K + k),
                              static_cast<Eigen::Index>(((i2 * J + j) * K + k2) * J + l)) =
                                (lead - sub) / (tr * tr);
                        }
    return m;
}

Matrix m2_oracle(std::size_t K, std::size_t J) {
    Matrix m = Matrix::Zero(static_cast<Eigen::Index>(J * J),
                            static_cast<Eigen::Index>(K * J * K * J));
    for (std::size_t j = 0; j < J; ++j)
        for (std::size_t l = 0; l < J; ++l)
            for (std::size_t i = 0; i < K; ++i)
                m(static_cast<Eigen::Index>(j * J + l),
                  static_cast<Eigen::Index>(((i * J + j) * K + i) * J + l)) = 1.0;
    return m;
}

Matrix g1_oracle(const Matrix& c2, std::size_t K, std::size_t J) {
    Matrix g = Matrix::Zero(static_cast<Eigen::Index>(K * J * K * J),
                            static_cast<Eigen::Index>(K * K));
    for (std::size_t i = 0; i < K; ++i)
        for (std::size_t j = 0; j < J; ++j)
            for (std::size_t k = 0; k < K; ++k)
                for (std::size_t l = 0; l < J; ++l)
                    g(static_cast<Eigen::Index>(((i * J + j) * K + k) * J + l),
                      static_cast<Eigen::Index>(i * K + k)) =
                        c2(static_cast<Eigen::Index>(j), static_cast<Eigen::Index>(l));
    return g;
}

Matrix g2_oracle(const Matrix& c1, std::size_t K, std::size_t J) {
    Matrix g = Matrix::Zero(static_cast<Eigen::Index>(K * J * K * J),
                            static_cast<Eigen::Index>(J * J));
    for (std::size_t i = 0; i < K; ++i)
        for (std::size_t j = 0; j < J; ++j)
            for (std::size_t k = 0; k < K; ++k)
                for (std::size_t l = 0; l < J; ++l)
                    g(static_cast<Eigen::Index>(((i * J + j) * K + k) * J + l),
                      static_cast<Eigen::Index>(j * J + l)) =
                        c1(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(k));
    return g;
}

Matrix q_oracle(const Tensor& c, const Matrix& gamma) {
    const std::size_t K = c.shape()[0], J = c.shape()[1];
    const double tr = oracle::full_trace(c);
    const Matrix c1 = oracle::trace_over_second(c) / tr;
    const Matrix c2 = oracle::trace_over_first(c);
    const Matrix m1 = m1_oracle(c);
    const Matrix m2 = m2_oracle(K, J);
    const Matrix g1 = g1_oracle(c2, K, J);
    const Matrix g2 = g2_oracle(c1, K, J);

    const Matrix w11 = oracle::triple_product(m1, gamma, m1);
    const Matrix w12 = oracle::triple_product(m1, gamma, m2);
    const Matrix w21 = oracle::triple_product(m2, gamma, m1);
    const Matrix w22 = oracle::triple_product(m2, gamma, m2);
    const Matrix w13 = mm(m1, gamma);
    const Matrix w23 = mm(m2, gamma);
    const Matrix w31 = mm(gamma, m1.transpose());
    const Matrix w32 = mm(gamma, m2.transpose());

    Matrix raw = mm(mm(g1, w11), g1.transpose());
    raw += mm(mm(g2, w21), g1.transpose());
    raw -= mm(w31, g1.transpose());
    raw += mm(mm(g1, w12), g2.transpose());
    raw += mm(mm(g2, w22), g2.transpose());
    raw -= mm(w32, g2.transpose());
    raw -= mm(g1, w13);
    raw -= mm(g2, w23);
    raw += gamma;
    return 0.5 * (raw + raw.transpose());
}

sepstat::LagCovariance cov_from_tensor(const Tensor& c) {
    sepstat::LagCovariance cov;
    cov.h = 0;
    cov.C = c;
    cov.trace = sepstat::full_trace(c);
    cov.C2 = sepstat::partial_trace_over_first(c);
    cov.C1 = sepstat::partial_trace_over_second(c) / cov.trace;
    return cov;
}

Tensor random_psd_cov(std::size_t K, std::size_t J, std::mt19937_64& rng) {
    const Eigen::Index d = static_cast<Eigen::Index>(K * J);
    const Matrix a = oracle::random_matrix(d, d, rng);
    Matrix s = a * a.transpose() / static_cast<double>(d);
    s += 0.1 * Matrix::Identity(d, d);
    return sepstat::reshape(s, {K, J, K, J}, 2);
}

TEST(LagCovariance, MatchesLoopOracle) {
    const auto z = var1_scores(11, 2, 3, 901);
    for (std::size_t h : {0u, 1u, 2u}) {
        const auto cov = sepstat::lag_covariance(z, h);
        const Tensor want = cov_oracle(z, h);
        EXPECT_LT(oracle::rel_error(cov.C, want), 1e-12) << "h=" << h;
        EXPECT_LT(oracle::rel_error(cov.C2, oracle::trace_over_first(want)), 1e-12);
        const double tr = oracle::full_trace(want);
        EXPECT_LT(oracle::rel_error(cov.C1, oracle::trace_over_second(want) / tr), 1e-12);
        EXPECT_NEAR(cov.trace, tr, 1e-12 * std::abs(tr));
    }
}

TEST(LagCovariance, LagOneAveragesAdjacentOuterProducts) {
    Matrix z1(2, 2), z2(2, 2), z3(2, 2);
    z1 << 1.0, -2.0, 0.5, 3.0;
    z2 << -1.5, 0.25, 2.0, 1.0;
    z3 << 0.75, 1.5, -0.5, -2.0;
    const auto z = make_scores({z1, z2, z3});
    const auto cov = sepstat::lag_covariance(z, 1);
    for (std::size_t i = 0; i < 2; ++i)
        for (std::size_t j = 0; j < 2; ++j)
            for (std::size_t k = 0; k < 2; ++k)
                for (std::size_t l = 0; l < 2; ++l) {
                    const auto ei = static_cast<Eigen::Index>(i);
                    const auto ej = static_cast<Eigen::Index>(j);
                    const auto ek = static_cast<Eigen::Index>(k);
                    const auto el = static_cast<Eigen::Index>(l);
                    EXPECT_DOUBLE_EQ(cov.C(i, j, k, l),
                                     (z1(ei, ej) * z2(ek, el) + z2(ei, ej) * z3(ek, el)) / 2.0);
                }
}

TEST(LagCovariance, FactorialDesignIsExactlySeparable) {
    // Score matrices x y^T over a balanced sign design make the empirical
    // covariance an exact tensor product of the two factor covariances.
    Vector x1(2), x2(2), y1(3), y2(3);
    x1 << 1.0, 0.5;
    x2 << -0.25, 2.0;
    y1 << 0.5, 1.0, -1.5;
    y2 << 2.0, -0.5, 0.25;
    std::vector<Matrix> zs;
    for (double sx : {1.0, -1.0})
        for (const Vector& x : {x1, x2})
            for (const Vector& y : {y1, y2}) zs.push_back((sx * x) * y.transpose());
    const auto cov = sepstat::lag_covariance(make_scores(std::move(zs)), 0);

    const Tensor recon = sepstat::separable_product(cov.C1, cov.C2);
    EXPECT_LT(oracle::rel_error(recon, cov.C), 1e-12);
}

TEST(LagCovariance, PanelFactorHasUnitTrace) {
    for (std::size_t h : {0u, 1u}) {
        const auto cov = sepstat::lag_covariance(var1_scores(30, 3, 2, 77), h);
        EXPECT_NEAR(cov.C1.trace(), 1.0, 1e-12);
        EXPECT_NEAR(cov.C2.trace(), cov.trace, 1e-12 * std::abs(cov.trace));
    }
}

TEST(LagCovariance, LagZeroIsSymmetric) {
    const auto cov = sepstat::lag_covariance(var1_scores(25, 2, 2, 33), 0);
    double worst = 0.0;
    for (std::size_t i = 0; i < 2; ++i)
        for (std::size_t j = 0; j < 2; ++j)
            for (std::size_t k = 0; k < 2; ++k)
                for (std::size_t l = 0; l < 2; ++l)
                    worst = std::max(worst, std::abs(cov.C(i, j, k, l) - cov.C(k, l, i, j)));
    EXPECT_LE(worst, 1e-10 * cov.C.frobenius_norm());
}

TEST(LagCovariance, RejectsInsufficientLag) {
    const auto z = var1_scores(5, 2, 2, 5);
    EXPECT_NO_THROW(sepstat::lag_covariance(z, 3));
    EXPECT_THROW(sepstat::lag_covariance(z, 4), sepstat::NumericError);
    EXPECT_THROW(sepstat::lag_covariance(z, 10), sepstat::NumericError);
}

TEST(LagCovariance, RejectsDegenerateTrace) {
    std::vector<Matrix> zs(6, Matrix::Zero(2, 2));
    EXPECT_THROW(sepstat::lag_covariance(make_scores(std::move(zs)), 0), sepstat::NumericError);
}

TEST(LagCovariance, PowerOfTwoScalingIsExact) {
    const auto z = var1_scores(14, 2, 2, 404);
    auto scaled = z;
    for (Matrix& m : scaled.Z) m *= 2.0;
    const auto cov = sepstat::lag_covariance(z, 1);
    const auto cov2 = sepstat::lag_covariance(scaled, 1);
    for (std::size_t p = 0; p < cov.C.size(); ++p) {
        EXPECT_EQ(cov2.C.data()[p], 4.0 * cov.C.data()[p]);
    }
    EXPECT_TRUE((cov2.C1.array() == cov.C1.array()).all());
    EXPECT_TRUE((cov2.C2.array() == (4.0 * cov.C2).array()).all());
}

TEST(Bandwidth, MatchesRuleExamples) {
    EXPECT_EQ(sepstat::bartlett_bandwidth(100), 3u);
    EXPECT_EQ(sepstat::bartlett_bandwidth(4), 1u);
    EXPECT_EQ(sepstat::bartlett_bandwidth(200), 4u);
    EXPECT_EQ(sepstat::bartlett_bandwidth(2), 1u);
    EXPECT_EQ(sepstat::bartlett_bandwidth(8), 1u);
    EXPECT_THROW((void)sepstat::bartlett_bandwidth(1), sepstat::ConfigError);
    std::size_t prev = 1;
    for (std::size_t n = 2; n <= 2000; ++n) {
        const std::size_t q = sepstat::bartlett_bandwidth(n);
        EXPECT_GE(q, prev);
        prev = q;
    }
}

TEST(Bandwidth, WeightsFollowTaper) {
    const auto w = sepstat::bartlett_weights(3, 6);
    ASSERT_EQ(w.size(), 7u);
    EXPECT_DOUBLE_EQ(w[0], 1.0);
    EXPECT_DOUBLE_EQ(w[1], 0.75);
    EXPECT_DOUBLE_EQ(w[2], 0.5);
    EXPECT_DOUBLE_EQ(w[3], 0.25);
    EXPECT_DOUBLE_EQ(w[4], 0.0);
    EXPECT_DOUBLE_EQ(w[5], 0.0);
    EXPECT_DOUBLE_EQ(w[6], 0.0);
    EXPECT_DOUBLE_EQ(sepstat::bartlett_weights(1, 2)[1], 0.5);
    EXPECT_THROW(sepstat::bartlett_weights(0, 3), sepstat::ConfigError);
}

TEST(LongRunCov, MatchesLoopOracle) {
    const auto z = var1_scores(9, 2, 2, 555);
    for (std::size_t h : {0u, 1u}) {
        const auto cov = sepstat::lag_covariance(z, h);
        const auto lrc = sepstat::long_run_cov(z, cov, h);
        EXPECT_EQ(lrc.bandwidth, sepstat::bartlett_bandwidth(9));
        const Matrix want = long_run_oracle(z, h, cov.C, lrc.bandwidth);
        EXPECT_LT(oracle::rel_error(lrc.gamma, want), 1e-12) << "h=" << h;
    }
    // A wider taper exercises several autocovariance lags at once.
    const auto cov = sepstat::lag_covariance(z, 1);
    const auto lrc = sepstat::long_run_cov(z, cov, 1, 3);
    EXPECT_EQ(lrc.bandwidth, 3u);
    EXPECT_LT(oracle::rel_error(lrc.gamma, long_run_oracle(z, 1, cov.C, 3)), 1e-12);
}

TEST(LongRunCov, AdjointEqualsTransposeBitExact) {
    const auto z = var1_scores(10, 2, 2, 808);
    const auto cov = sepstat::lag_covariance(z, 0);
    const auto p = lag_products_oracle(z, 0, cov.C);
    const std::size_t dim = p.front().size(), lag = 1, terms = p.size() - lag;
    Matrix r1 = Matrix::Zero(static_cast<Eigen::Index>(dim), static_cast<Eigen::Index>(dim));
    Matrix r1adj = r1;
    for (std::size_t a = 0; a < dim; ++a)
        for (std::size_t b = 0; b < dim; ++b) {
            double fwd = 0.0, swp = 0.0;
            for (std::size_t n = 0; n < terms; ++n) {
                fwd += p[n][a] * p[n + lag][b];
                swp += p[n + lag][a] * p[n][b];
            }
            r1(static_cast<Eigen::Index>(a), static_cast<Eigen::Index>(b)) = fwd;
            r1adj(static_cast<Eigen::Index>(a), static_cast<Eigen::Index>(b)) = swp;
        }
    EXPECT_TRUE((r1adj.array() == r1.transpose().array()).all());
}

TEST(LongRunCov, ScalarCaseMatchesDirectFormula) {
    const auto z = var1_scores(40, 1, 1, 99);
    const auto cov = sepstat::lag_covariance(z, 1);
    const std::size_t q = 2;
    const auto lrc = sepstat::long_run_cov(z, cov, 1, q);
    const std::size_t m = 39;
    std::vector<double> p(m);
    for (std::size_t n = 0; n < m; ++n) p[n] = z.Z[n](0, 0) * z.Z[n + 1](0, 0) - cov.C(0, 0, 0, 0);
    double want = 0.0;
    for (std::size_t n = 0; n < m; ++n) want += p[n] * p[n];
    want /= static_cast<double>(m);
    for (std::size_t i = 1; i <= q; ++i) {
        double acc = 0.0;
        for (std::size_t n = 0; n + i < m; ++n) acc += p[n] * p[n + i];
        acc /= static_cast<double>(m - i);
        want += (1.0 - static_cast<double>(i) / (1.0 + q)) * 2.0 * acc;
    }
    EXPECT_NEAR(lrc.gamma(0, 0), want, 1e-13 * std::abs(want));
}

TEST(LongRunCov, IidScoresStayCloseToLagZeroTerm) {
    const auto z = iid_scores(4000, 2, 2, 2024);
    const auto cov = sepstat::lag_covariance(z, 0);
    const auto lrc = sepstat::long_run_cov(z, cov, 0, 1);
    const auto p = lag_products_oracle(z, 0, cov.C);
    const Matrix r0 = autocov_oracle(p, 0);
    EXPECT_LT((lrc.gamma - r0).norm() / r0.norm(), 0.2);
}

TEST(LongRunCov, RejectsBandwidthBeyondAvailableLags) {
    const auto z = var1_scores(6, 2, 2, 3);
    const auto cov = sepstat::lag_covariance(z, 0);
    EXPECT_NO_THROW((void)sepstat::long_run_cov(z, cov, 0, 5));
    try {
        (void)sepstat::long_run_cov(z, cov, 0, 6);
        FAIL() << "expected NumericError";
    } catch (const sepstat::NumericError& e) {
        EXPECT_NE(std::string(e.what()).find("smaller q"), std::string::npos);
    }
}

TEST(LongRunCov, SymmetricAndNearPsdAtLagZero) {
    const auto z = var1_scores(200, 2, 2, 4242);
    const auto cov = sepstat::lag_covariance(z, 0);
    const auto lrc = sepstat::long_run_cov(z, cov, 0);
    EXPECT_LE((lrc.gamma - lrc.gamma.transpose()).norm(), 1e-12 * lrc.gamma.norm());
    const auto eig = sepstat::sym_eigen(lrc.gamma);
    const double top = eig.eigenvalues(0);
    EXPECT_GT(top, 0.0);
    EXPECT_GE(eig.eigenvalues(eig.eigenvalues.size() - 1), -1e-8 * top);
}

TEST(DerivativeTensors, M3IsIdentity) {
    std::mt19937_64 rng(11);
    const auto cov = cov_from_tensor(random_psd_cov(2, 3, rng));
    const auto d = sepstat::derivative_tensors(cov);
    const Matrix m3 = sepstat::flatten(d.M3, 4);
    EXPECT_TRUE((m3.array() == Matrix::Identity(36, 36).array()).all());
}

TEST(DerivativeTensors, M2ContractsToFirstPartialTrace) {
    std::mt19937_64 rng(12);
    const auto cov = cov_from_tensor(random_psd_cov(3, 2, rng));
    const auto d = sepstat::derivative_tensors(cov);
    const Matrix m2 = sepstat::flatten(d.M2, 2);
    Vector cvec(cov.C.size());
    for (std::size_t p = 0; p < cov.C.size(); ++p) cvec(static_cast<Eigen::Index>(p)) = cov.C.data()[p];
    const Vector got = m2 * cvec;
    const Matrix want = oracle::trace_over_first(cov.C);
    for (std::size_t j = 0; j < 2; ++j)
        for (std::size_t l = 0; l < 2; ++l)
            EXPECT_NEAR(got(static_cast<Eigen::Index>(j * 2 + l)),
                        want(static_cast<Eigen::Index>(j), static_cast<Eigen::Index>(l)),
                        1e-13 * std::abs(cov.trace));
}

TEST(DerivativeTensors, M1MatchesFiniteDifferences) {
    std::mt19937_64 rng(13);
    const double eps = 1e-6;
    const std::vector<std::pair<std::size_t, std::size_t>> shapes = {
        {2, 2}, {2, 3}, {3, 2}, {1, 3}, {3, 1}, {3, 3}};
    for (const auto& [K, J] : shapes) {
        const Tensor c = random_psd_cov(K, J, rng);
        const auto cov = cov_from_tensor(c);
        const Matrix analytic = sepstat::flatten(sepstat::derivative_tensors(cov).M1, 2);
        const std::size_t cols = K * J * K * J;
        Matrix fd(static_cast<Eigen::Index>(K * K), static_cast<Eigen::Index>(cols));
        for (std::size_t col = 0; col < cols; ++col) {
            Tensor up = c, dn = c;
            up.data()[col] += eps;
            dn.data()[col] -= eps;
            const Matrix f_up = oracle::trace_over_second(up) / oracle::full_trace(up);
            const Matrix f_dn = oracle::trace_over_second(dn) / oracle::full_trace(dn);
            for (std::size_t i = 0; i < K; ++i)
                for (std::size_t k = 0; k < K; ++k)
                    fd(static_cast<Eigen::Index>(i * K + k), static_cast<Eigen::Index>(col)) =
                        (f_up(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(k)) -
                         f_dn(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(k))) /
                        (2.0 * eps);
        }
        EXPECT_LT(oracle::rel_error(analytic, fd), 1e-4) << "K=" << K << " J=" << J;
        EXPECT_LT(oracle::rel_error(analytic, m1_oracle(c)), 1e-14);
    }
}

TEST(DerivativeTensors, ScalarM1IsExactlyZero) {
    std::mt19937_64 rng(14);
    const auto cov = cov_from_tensor(random_psd_cov(1, 1, rng));
    const auto d = sepstat::derivative_tensors(cov);
    for (std::size_t p = 0; p < d.M1.size(); ++p) EXPECT_EQ(d.M1.data()[p], 0.0);
}

TEST(DerivativeTensors, RejectsDegenerateTrace) {
    sepstat::LagCovariance cov;
    cov.C = Tensor({2, 1, 2, 1});
    cov.C(0, 0, 0, 0) = 1.0;
    cov.C(1, 0, 1, 0) = -1.0;
    cov.trace = sepstat::full_trace(cov.C);
    EXPECT_THROW(sepstat::derivative_tensors(cov), sepstat::NumericError);
}

TEST(WBlocks, ThirdBlockIsGammaBitExact) {
    const auto z = var1_scores(20, 2, 2, 21);
    const auto cov = sepstat::lag_covariance(z, 0);
    const auto lrc = sepstat::long_run_cov(z, cov, 0);
    const auto w = sepstat::w_blocks(sepstat::derivative_tensors(cov), lrc);
    EXPECT_TRUE((w.W33.array() == lrc.gamma.array()).all());
}

TEST(WBlocks, CrossBlocksAreTransposes) {
    const auto z = var1_scores(24, 2, 3, 22);
    const auto cov = sepstat::lag_covariance(z, 1);
    const auto lrc = sepstat::long_run_cov(z, cov, 1);
    const auto w = sepstat::w_blocks(sepstat::derivative_tensors(cov), lrc);
    EXPECT_LE((w.W12 - w.W21.transpose()).norm(), 1e-12 * std::max(w.W12.norm(), 1e-300));
    EXPECT_LE((w.W13 - w.W31.transpose()).norm(), 1e-12 * std::max(w.W13.norm(), 1e-300));
    EXPECT_LE((w.W23 - w.W32.transpose()).norm(), 1e-12 * std::max(w.W23.norm(), 1e-300));
}

TEST(WBlocks, ScalarFirstBlockIsZero) {
    const auto z = var1_scores(30, 1, 1, 23);
    const auto cov = sepstat::lag_covariance(z, 0);
    const auto lrc = sepstat::long_run_cov(z, cov, 0);
    const auto w = sepstat::w_blocks(sepstat::derivative_tensors(cov), lrc);
    EXPECT_EQ(w.W11(0, 0), 0.0);
    EXPECT_EQ(w.W12(0, 0), 0.0);
    EXPECT_EQ(w.W13(0, 0), 0.0);
}

TEST(WBlocks, ShapesFollowFactorDimensions) {
    const auto z = var1_scores(18, 2, 3, 24);
    const auto cov = sepstat::lag_covariance(z, 0);
    const auto lrc = sepstat::long_run_cov(z, cov, 0);
    const auto w = sepstat::w_blocks(sepstat::derivative_tensors(cov), lrc);
    EXPECT_EQ(w.W11.rows(), 4);
    EXPECT_EQ(w.W11.cols(), 4);
    EXPECT_EQ(w.W12.rows(), 4);
    EXPECT_EQ(w.W12.cols(), 9);
    EXPECT_EQ(w.W13.rows(), 4);
    EXPECT_EQ(w.W13.cols(), 36);
    EXPECT_EQ(w.W22.rows(), 9);
    EXPECT_EQ(w.W22.cols(), 9);
    EXPECT_EQ(w.W23.rows(), 9);
    EXPECT_EQ(w.W23.cols(), 36);
    EXPECT_EQ(w.W31.rows(), 36);
    EXPECT_EQ(w.W31.cols(), 4);
    EXPECT_EQ(w.W33.rows(), 36);
    EXPECT_EQ(w.W33.cols(), 36);
}

TEST(QOperator, ZeroGammaGivesZeroQ) {
    std::mt19937_64 rng(31);
    const auto cov = cov_from_tensor(random_psd_cov(2, 2, rng));
    sepstat::LongRunCov lrc;
    lrc.K = 2;
    lrc.J = 2;
    lrc.bandwidth = 1;
    lrc.weights = {1.0, 0.5};
    lrc.gamma = Matrix::Zero(16, 16);
    const auto w = sepstat::w_blocks(sepstat::derivative_tensors(cov), lrc);
    const auto q = sepstat::q_assemble(cov, w);
    EXPECT_EQ(q.Q.cwiseAbs().maxCoeff(), 0.0);
}

TEST(QOperator, ScalarCaseCollapsesToZero) {
    // With K = J = 1 the reconstruction is exact for every input, so the
    // limiting covariance of the discrepancy must vanish identically.
    const auto z = var1_scores(50, 1, 1, 32);
    const auto cov = sepstat::lag_covariance(z, 0);
    const auto lrc = sepstat::long_run_cov(z, cov, 0);
    const auto w = sepstat::w_blocks(sepstat::derivative_tensors(cov), lrc);
    const auto q = sepstat::q_assemble(cov, w);
    EXPECT_EQ(q.Q(0, 0), 0.0);
}

TEST(QOperator, MatchesLoopOracle) {
    for (const auto& [K, J] : std::vector<std::pair<std::size_t, std::size_t>>{{2, 2}, {2, 3}}) {
        const auto z = var1_scores(40, K, J, 33 + static_cast<unsigned>(K * 10 + J));
        const auto cov = sepstat::lag_covariance(z, 0);
        const auto lrc = sepstat::long_run_cov(z, cov, 0);
        const auto w = sepstat::w_blocks(sepstat::derivative_tensors(cov), lrc);
        const auto q = sepstat::q_assemble(cov, w);
        const Matrix want = q_oracle(cov.C, lrc.gamma);
        EXPECT_LT(oracle::rel_error(q.Q, want), 1e-10) << "K=" << K << " J=" << J;
    }
}

TEST(QOperator, MatchesSandwichFactorization) {
    // Q must equal D Gamma D^T for D = G1 M1 + G2 M2 - I, an algebraically
    // independent grouping of the nine terms.
    const auto z = var1_scores(35, 2, 2, 34);
    const auto cov = sepstat::lag_covariance(z, 1);
    const auto lrc = sepstat::long_run_cov(z, cov, 1);
    const auto d = sepstat::derivative_tensors(cov);
    const auto w = sepstat::w_blocks(d, lrc);
    const auto q = sepstat::q_assemble(cov, w);

    const Matrix m1 = sepstat::flatten(d.M1, 2);
    const Matrix m2 = sepstat::flatten(d.M2, 2);
    const Matrix g1 = g1_oracle(cov.C2, 2, 2);
    const Matrix g2 = g2_oracle(cov.C1, 2, 2);
    const Matrix dd = g1 * m1 + g2 * m2 - Matrix::Identity(16, 16);
    const Matrix want = dd * lrc.gamma * dd.transpose();
    EXPECT_LT(oracle::rel_error(q.Q, 0.5 * (want + want.transpose())), 1e-10);
}

TEST(QOperator, ComponentsSumToUnsymmetrizedQ) {
    const auto z = var1_scores(28, 2, 2, 35);
    const auto cov = sepstat::lag_covariance(z, 0);
    const auto lrc = sepstat::long_run_cov(z, cov, 0);
    const auto w = sepstat::w_blocks(sepstat::derivative_tensors(cov), lrc);
    const auto q = sepstat::q_assemble(cov, w);
    Matrix raw = Matrix::Zero(16, 16);
    for (const Matrix& term : q.components) raw += term;
    const Matrix sym = 0.5 * (raw + raw.transpose());
    EXPECT_LE((q.Q - sym).norm(), 1e-15 * std::max(sym.norm(), 1e-300));
    EXPECT_TRUE((q.Q.array() == q.Q.transpose().array()).all());
}

TEST(QOperator, PowerOfTwoScalingIsExactThroughTheChain) {
    const auto z = var1_scores(26, 2, 2, 36);
    auto scaled = z;
    for (Matrix& m : scaled.Z) m *= 2.0;

    const auto cov = sepstat::lag_covariance(z, 0);
    const auto lrc = sepstat::long_run_cov(z, cov, 0);
    const auto q = sepstat::q_assemble(cov, sepstat::w_blocks(sepstat::derivative_tensors(cov), lrc));

    const auto cov2 = sepstat::lag_covariance(scaled, 0);
    const auto lrc2 = sepstat::long_run_cov(scaled, cov2, 0);
    const auto q2 =
        sepstat::q_assemble(cov2, sepstat::w_blocks(sepstat::derivative_tensors(cov2), lrc2));

    EXPECT_TRUE((lrc2.gamma.array() == (16.0 * lrc.gamma).array()).all());
    EXPECT_TRUE((q2.Q.array() == (16.0 * q.Q).array()).all());
}

} // namespace
