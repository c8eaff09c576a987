#ifndef SEPSTAT_REDUCTION_HPP
#define SEPSTAT_REDUCTION_HPP

#include <cmath>
#include <cstddef>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "sepstat/errors.hpp"
#include "sepstat/panel.hpp"
#include "sepstat/tensor.hpp"

namespace sepstat {

/// Temporal FPCA output: eigenfunction values on the grid (columns, unit
/// norm under the quadrature), their eigenvalues, and the fraction of
/// pooled variance the retained J components explain.
struct TemporalBasis {
    Matrix eigenfunctions; // T x J
    Vector eigenvalues;    // J, non-increasing, clamped at 0
    double cpv_time = 0.0;
};

/// Panel PCA output: orthonormal S-vectors (columns), eigenvalues of the
/// variance-adjusted pooled matrix, and the retained variance fraction.
struct PanelBasis {
    Matrix eigenvectors; // S x K
    Vector eigenvalues;  // K, non-increasing, clamped at 0
    double cpv_panel = 0.0;
};

/// Reduced panel: one K x J score matrix per series, plus the bases that
/// produced it.
struct ScorePanel {
    std::vector<Matrix> Z; // N matrices, each K x J
    std::size_t n_series = 0;
    std::size_t K = 0;
    std::size_t J = 0;
    TemporalBasis temporal;
    PanelBasis panel;
};

namespace detail {

// Smallest count whose cumulative share of `total` reaches target, capped.
inline std::size_t cpv_select(const Vector& values, double total, double target_cpv,
                              std::size_t cap) {
    std::size_t chosen = cap;
    double cum = 0.0;
    for (std::size_t j = 0; j < cap; ++j) {
        cum += values(static_cast<Eigen::Index>(j));
        if (cum / total >= target_cpv) {
            chosen = j + 1;
            break;
        }
    }
    return chosen;
}

inline void check_cpv_target(double target_cpv) {
    if (!(target_cpv > 0.0) || target_cpv > 1.0) {
        throw ConfigError("CPV target must lie in (0,1], got " + std::to_string(target_cpv));
    }
}

} // namespace detail

/// Pooled temporal FPCA (the across-coordinates covariance of the curves).
/// Retains the smallest J whose cumulative variance fraction reaches
/// target_cpv, capped at J_max; forced_j overrides the selection.
[[nodiscard]] inline TemporalBasis temporal_fpca(const FunctionalPanel& p, double target_cpv,
                                                 std::size_t J_max,
                                                 std::optional<std::size_t> forced_j = {}) {
    validate_panel(p);
    detail::check_cpv_target(target_cpv);
    if (J_max < 1) throw ConfigError("J_max must be at least 1");
    const std::size_t N = p.n_series, S = p.n_coords, T = p.n_points;
    if (forced_j && (*forced_j < 1 || *forced_j > T)) {
        throw ConfigError("forced J=" + std::to_string(*forced_j) +
                          " must lie in [1, T=" + std::to_string(T) + "]");
    }

    // pooled covariance c2(t,t') = (1/(NS)) sum_{n,s} X_ns(t) X_ns(t')
    Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>> X(
        p.values.data(), static_cast<Eigen::Index>(N * S), static_cast<Eigen::Index>(T));
    Matrix pooled = (X.transpose() * X) / static_cast<double>(N * S);

    // Uniform quadrature: the weighted eigenproblem reduces to the plain
    // symmetric one on pooled/T, and eigenfunctions are sqrt(T) times the
    // Euclidean eigenvectors.
    SymEigen eig = sym_eigen(pooled / static_cast<double>(T));
    Vector lam = eig.eigenvalues.cwiseMax(0.0);
    const double total = lam.sum();
    if (!(total > 0.0)) {
        throw DataError("degenerate panel: pooled temporal covariance is zero");
    }

    const std::size_t cap = std::min<std::size_t>(J_max, T);
    const std::size_t J = forced_j ? *forced_j : detail::cpv_select(lam, total, target_cpv, cap);

    TemporalBasis basis;
    basis.eigenvalues = lam.head(static_cast<Eigen::Index>(J));
    basis.eigenfunctions = std::sqrt(static_cast<double>(T)) *
                           eig.eigenvectors.leftCols(static_cast<Eigen::Index>(J));
    basis.cpv_time = basis.eigenvalues.sum() / total;
    return basis;
}

/// Scores xi(n,s,j) = <X_ns, v_j> under the uniform quadrature.
[[nodiscard]] inline Tensor temporal_scores(const FunctionalPanel& p, const TemporalBasis& basis) {
    validate_panel(p);
    const std::size_t N = p.n_series, S = p.n_coords, T = p.n_points;
    if (static_cast<std::size_t>(basis.eigenfunctions.rows()) != T) {
        throw DimensionError("temporal basis lives on a grid of " +
                             std::to_string(basis.eigenfunctions.rows()) +
                             " points, panel has T=" + std::to_string(T));
    }
    const std::size_t J = static_cast<std::size_t>(basis.eigenfunctions.cols());

    Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>> X(
        p.values.data(), static_cast<Eigen::Index>(N * S), static_cast<Eigen::Index>(T));
    Matrix scores = (X * basis.eigenfunctions) / static_cast<double>(T); // (NS) x J

    Tensor xi({N, S, J});
    Eigen::Map<Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>> view(
        xi.data(), static_cast<Eigen::Index>(N * S), static_cast<Eigen::Index>(J));
    view = scores;
    return xi;
}

/// Panel PCA of the variance-adjusted pooled matrix
/// c1(s,s') = (1/(NJ)) sum_{n,j} xi(n,s,j) xi(n,s',j) / lambda_j.
[[nodiscard]] inline PanelBasis panel_pca(const Tensor& xi, const Vector& lambdas,
                                          double target_cpv, std::size_t K_max,
                                          std::optional<std::size_t> forced_k = {}) {
    detail::check_cpv_target(target_cpv);
    if (xi.order() != 3) {
        throw DimensionError("scores must be an (N,S,J) array, got order " +
                             std::to_string(xi.order()));
    }
    const std::size_t N = xi.shape()[0], S = xi.shape()[1], J = xi.shape()[2];
    if (static_cast<std::size_t>(lambdas.size()) != J) {
        throw DimensionError("need one eigenvalue per retained component: got " +
                             std::to_string(lambdas.size()) + " for J=" + std::to_string(J));
    }
    if (K_max < 1) throw ConfigError("K_max must be at least 1");
    if (forced_k && (*forced_k < 1 || *forced_k > S)) {
        throw ConfigError("forced K=" + std::to_string(*forced_k) +
                          " must lie in [1, S=" + std::to_string(S) + "]");
    }
    const double lam1 = lambdas(0);
    for (Eigen::Index j = 0; j < lambdas.size(); ++j) {
        if (!(lambdas(j) > 1e-12 * lam1)) {
            throw NumericError("ill-conditioned scores: lambda_" + std::to_string(j + 1) +
                               " is below the 1e-12*lambda_1 floor");
        }
    }

    Matrix adjusted = Matrix::Zero(static_cast<Eigen::Index>(S), static_cast<Eigen::Index>(S));
    const Vector inv_lam = lambdas.cwiseInverse();
    for (std::size_t n = 0; n < N; ++n) {
        Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>
            Xi(xi.data() + n * S * J, static_cast<Eigen::Index>(S), static_cast<Eigen::Index>(J));
        adjusted.noalias() += Xi * inv_lam.asDiagonal() * Xi.transpose();
    }
    adjusted /= static_cast<double>(N * J);

    SymEigen eig = sym_eigen(adjusted);
    Vector mu = eig.eigenvalues.cwiseMax(0.0);
    const double total = mu.sum();
    if (!(total > 0.0)) {
        throw DataError("degenerate scores: variance-adjusted panel matrix is zero");
    }

    const std::size_t cap = std::min<std::size_t>(K_max, S);
    const std::size_t K = forced_k ? *forced_k : detail::cpv_select(mu, total, target_cpv, cap);

    PanelBasis basis;
    basis.eigenvalues = mu.head(static_cast<Eigen::Index>(K));
    basis.eigenvectors = eig.eigenvectors.leftCols(static_cast<Eigen::Index>(K));
    basis.cpv_panel = basis.eigenvalues.sum() / total;
    return basis;
}

/// Identity panel basis for the small-S skip rule: K=S, no reduction, and
/// by convention a flat unit spectrum with cpv_panel = 1.
[[nodiscard]] inline PanelBasis passthrough_basis(std::size_t S) {
    if (S < 1) throw ConfigError("passthrough basis requires S >= 1");
    PanelBasis basis;
    basis.eigenvectors = Matrix::Identity(static_cast<Eigen::Index>(S),
                                          static_cast<Eigen::Index>(S));
    basis.eigenvalues = Vector::Ones(static_cast<Eigen::Index>(S));
    basis.cpv_panel = 1.0;
    return basis;
}

/// Project scores onto the panel basis: Z_n = U^T Xi_n, each K x J.
[[nodiscard]] inline ScorePanel build_scores(const Tensor& xi, const TemporalBasis& temporal,
                                             const PanelBasis& panel) {
    if (xi.order() != 3) {
        throw DimensionError("scores must be an (N,S,J) array, got order " +
                             std::to_string(xi.order()));
    }
    const std::size_t N = xi.shape()[0], S = xi.shape()[1], J = xi.shape()[2];
    if (static_cast<std::size_t>(panel.eigenvectors.rows()) != S) {
        throw DimensionError("panel basis has " + std::to_string(panel.eigenvectors.rows()) +
                             " coordinates, scores have S=" + std::to_string(S));
    }
    if (static_cast<std::size_t>(temporal.eigenfunctions.cols()) != J) {
        throw DimensionError("temporal basis retains " +
                             std::to_string(temporal.eigenfunctions.cols()) +
                             " components, scores have J=" + std::to_string(J));
    }
    const std::size_t K = static_cast<std::size_t>(panel.eigenvectors.cols());

    ScorePanel out;
    out.n_series = N;
    out.K = K;
    out.J = J;
    out.temporal = temporal;
    out.panel = panel;
    out.Z.reserve(N);
    for (std::size_t n = 0; n < N; ++n) {
        Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>
            Xi(xi.data() + n * S * J, static_cast<Eigen::Index>(S), static_cast<Eigen::Index>(J));
        out.Z.emplace_back(panel.eigenvectors.transpose() * Xi);
    }
    return out;
}

/// Combined explained-variance fraction of the double truncation.
[[nodiscard]] inline double combined_cpv(const TemporalBasis& t, const PanelBasis& p) {
    return t.cpv_time * p.cpv_panel;
}

} // namespace sepstat

#endif // SEPSTAT_REDUCTION_HPP
