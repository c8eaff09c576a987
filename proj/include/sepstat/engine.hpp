#ifndef SEPSTAT_ENGINE_HPP
#define SEPSTAT_ENGINE_HPP

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include <boost/math/special_functions/gamma.hpp>

#include "sepstat/covariance.hpp"
#include "sepstat/errors.hpp"
#include "sepstat/panel.hpp"
#include "sepstat/reduction.hpp"
#include "sepstat/rng.hpp"
#include "sepstat/tensor.hpp"

namespace sepstat {

enum class PValueMethod { MonteCarlo, Satterthwaite };

[[nodiscard]] inline std::string method_name(PValueMethod m) {
    return m == PValueMethod::MonteCarlo ? "monte-carlo" : "satterthwaite";
}

/// Outcome of the separability test on one panel.
struct TestResult {
    double statistic = 0.0;
    std::vector<double> eigenvalues;
    double p_value = 1.0;
    double effect_size = 0.0;
    std::size_t h = 0;
    std::size_t J = 0;
    std::size_t K = 0;
    double cpv = 0.0;
    std::size_t n_used = 0;
    std::string method;
    std::size_t mc_draws = 0;
    std::uint64_t seed = 0;
    std::vector<std::string> warnings; // advisory only, not part of the JSON schema
};

/// Knobs for run_test. Defaults follow the reference procedure: lag 0,
/// CPV targeting 0.85 with caps of 6 in each direction, Monte Carlo
/// p-values from 100k draws.
struct TestConfig {
    std::size_t h = 0;
    double target_cpv = 0.85;
    std::size_t J_max = 6;
    std::size_t K_max = 6;
    std::optional<std::size_t> forced_J;
    std::optional<std::size_t> forced_K;
    bool passthrough = false; // keep raw panel coordinates (K = S)
    std::optional<std::size_t> q_override;
    PValueMethod method = PValueMethod::MonteCarlo;
    std::size_t mc_draws = 100000;
    std::uint64_t seed = 0;
};

/// Frobenius norms of the intermediate estimates, for diagnostic output.
struct TestDiagnostics {
    double c_norm = 0.0;
    double c1_norm = 0.0;
    double c2_norm = 0.0;
    double gamma_norm = 0.0;
    std::array<double, 9> q_component_norms{};
    std::size_t bandwidth = 0;
};

/// N times the squared Frobenius norm of the separable reconstruction
/// residual C1 (x) C2 - C.
[[nodiscard]] inline double statistic(const LagCovariance& cov, std::size_t n_used) {
    if (n_used < 2) throw DimensionError("statistic requires N >= 2");
    const Tensor recon = separable_product(cov.C1, cov.C2);
    double acc = 0.0;
    for (std::size_t p = 0; p < cov.C.size(); ++p) {
        const double d = recon.data()[p] - cov.C.data()[p];
        acc += d * d;
    }
    return static_cast<double>(n_used) * acc;
}

/// Eigenvalues of the symmetrized flattened Q, clamped at zero and sorted
/// non-increasing. A strongly negative eigenvalue (< -1e-6 of the largest)
/// signals an ill-conditioned long-run estimate and appends a warning.
[[nodiscard]] inline std::vector<double> null_eigenvalues(const QOperator& q,
                                                          std::vector<std::string>* warnings =
                                                              nullptr) {
    const SymEigen eig = sym_eigen(q.Q);
    const double top = std::max(eig.eigenvalues(0), 0.0);
    std::vector<double> out(static_cast<std::size_t>(eig.eigenvalues.size()));
    bool ill = false;
    for (std::size_t r = 0; r < out.size(); ++r) {
        const double g = eig.eigenvalues(static_cast<Eigen::Index>(r));
        if (g < -1e-6 * top || (top == 0.0 && g < 0.0)) ill = true;
        out[r] = std::max(g, 0.0);
    }
    if (ill && warnings != nullptr) {
        warnings->push_back("strongly negative eigenvalue in the null law; the long-run "
                            "covariance may be ill-conditioned (N small relative to (KJ)^2)");
    }
    return out;
}

namespace detail {

// Threshold below which a statistic counts as exactly zero when every
// weight in the null law vanishes.
constexpr double kDegenerateStatistic = 1e-12;

inline void check_pvalue_inputs(double t, const std::vector<double>& gammas) {
    if (gammas.empty()) throw DimensionError("eigenvalue list is empty");
    if (!(t >= 0.0) || !std::isfinite(t)) {
        throw NumericError("statistic must be finite and nonnegative");
    }
    for (double g : gammas) {
        if (!std::isfinite(g) || g < 0.0) {
            throw NumericError("null-law eigenvalues must be finite and nonnegative");
        }
    }
}

} // namespace detail

/// Monte Carlo tail probability of sum_r gamma_r Z_r^2 at t, with the
/// add-one estimator (never exactly 0 or 1 excluded). Draws come from
/// fixed-size substream chunks so the count is scheduling-independent.
[[nodiscard]] inline double mc_pvalue(double t, const std::vector<double>& gammas,
                                      std::size_t mc_draws, std::uint64_t seed) {
    detail::check_pvalue_inputs(t, gammas);
    if (mc_draws < 1) throw ConfigError("mc_draws must be at least 1");
    std::vector<double> active;
    for (double g : gammas) {
        if (g > 0.0) active.push_back(g);
    }
    if (active.empty()) return t <= detail::kDegenerateStatistic ? 1.0 : 0.0;

    constexpr std::size_t kChunk = 8192;
    std::size_t exceed = 0;
    const std::size_t n_chunks = (mc_draws + kChunk - 1) / kChunk;
    for (std::size_t c = 0; c < n_chunks; ++c) {
        std::mt19937_64 rng(split_seed(seed, c));
        std::normal_distribution<double> gauss(0.0, 1.0);
        const std::size_t todo = std::min(kChunk, mc_draws - c * kChunk);
        for (std::size_t d = 0; d < todo; ++d) {
            double s = 0.0;
            for (double g : active) {
                const double z = gauss(rng);
                s += g * z * z;
            }
            if (s >= t) ++exceed;
        }
    }
    return (1.0 + static_cast<double>(exceed)) / (1.0 + static_cast<double>(mc_draws));
}

/// Two-moment approximation: match sum_r gamma_r Z_r^2 to a * chi^2_b with
/// a = sum g^2 / sum g and b = (sum g)^2 / sum g^2, then return the exact
/// tail of the matched law.
[[nodiscard]] inline double satterthwaite_pvalue(double t, const std::vector<double>& gammas) {
    detail::check_pvalue_inputs(t, gammas);
    double s1 = 0.0, s2 = 0.0;
    for (double g : gammas) {
        s1 += g;
        s2 += g * g;
    }
    if (s1 <= 0.0 || s2 <= 0.0) return t <= detail::kDegenerateStatistic ? 1.0 : 0.0;
    const double a = s2 / s1;
    const double b = s1 * s1 / s2;
    return boost::math::gamma_q(b / 2.0, t / (2.0 * a));
}

[[nodiscard]] inline double weighted_chisq_pvalue(double t, const std::vector<double>& gammas,
                                                  PValueMethod method, std::size_t mc_draws,
                                                  std::uint64_t seed) {
    if (method == PValueMethod::MonteCarlo) return mc_pvalue(t, gammas, mc_draws, seed);
    return satterthwaite_pvalue(t, gammas);
}

/// End-to-end test: center, reduce, estimate, assemble the null law, and
/// compute the p-value. Deterministic given (panel, config, seed).
[[nodiscard]] inline TestResult run_test(const FunctionalPanel& panel, const TestConfig& config,
                                         TestDiagnostics* diag = nullptr) {
    validate_panel(panel);
    const FunctionalPanel centered = center(panel);

    const TemporalBasis temporal =
        temporal_fpca(centered, config.target_cpv, config.J_max, config.forced_J);
    const Tensor xi = temporal_scores(centered, temporal);
    const PanelBasis basis =
        config.passthrough
            ? passthrough_basis(panel.n_coords)
            : panel_pca(xi, temporal.eigenvalues, config.target_cpv, config.K_max,
                        config.forced_K);
    const ScorePanel z = build_scores(xi, temporal, basis);

    const LagCovariance cov = lag_covariance(z, config.h);
    const LongRunCov lrc = long_run_cov(z, cov, config.h, config.q_override);
    const QOperator q = q_assemble(cov, w_blocks(derivative_tensors(cov), lrc));

    TestResult out;
    out.h = config.h;
    out.J = z.J;
    out.K = z.K;
    out.n_used = z.n_series;
    out.cpv = combined_cpv(temporal, basis);
    out.statistic = statistic(cov, z.n_series);
    out.effect_size = out.statistic / static_cast<double>(z.n_series);
    out.eigenvalues = null_eigenvalues(q, &out.warnings);
    out.method = method_name(config.method);
    out.mc_draws = config.method == PValueMethod::MonteCarlo ? config.mc_draws : 0;
    out.seed = config.seed;
    out.p_value = weighted_chisq_pvalue(out.statistic, out.eigenvalues, config.method,
                                        config.mc_draws, config.seed);
    if (out.cpv < 0.85) {
        out.warnings.push_back("combined cumulative proportion of variance " +
                               std::to_string(out.cpv) +
                               " is below 0.85; consider raising the truncation levels");
    }

    if (diag != nullptr) {
        diag->c_norm = cov.C.frobenius_norm();
        diag->c1_norm = cov.C1.norm();
        diag->c2_norm = cov.C2.norm();
        diag->gamma_norm = lrc.gamma.norm();
        for (std::size_t i = 0; i < q.components.size(); ++i) {
            diag->q_component_norms[i] = q.components[i].norm();
        }
        diag->bandwidth = lrc.bandwidth;
    }
    return out;
}

} // namespace sepstat

#endif // SEPSTAT_ENGINE_HPP
