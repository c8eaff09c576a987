#ifndef SEPSTAT_SIMULATE_HPP
#define SEPSTAT_SIMULATE_HPP

#include <atomic>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <exception>
#include <mutex>
#include <random>
#include <string>
#include <thread>
#include <vector>

#include <Eigen/Cholesky>
#include <Eigen/Dense>

#include "sepstat/engine.hpp"
#include "sepstat/errors.hpp"
#include "sepstat/panel.hpp"
#include "sepstat/rng.hpp"
#include "sepstat/tensor.hpp"

namespace sepstat {

enum class KernelFamily { Cov1, Cov2, CovH1 };

[[nodiscard]] inline std::string family_name(KernelFamily f) {
    switch (f) {
    case KernelFamily::Cov1: return "cov1";
    case KernelFamily::Cov2: return "cov2";
    default: return "covh1";
    }
}

[[nodiscard]] inline KernelFamily parse_family(const std::string& s) {
    if (s == "cov1") return KernelFamily::Cov1;
    if (s == "cov2") return KernelFamily::Cov2;
    if (s == "covh1") return KernelFamily::CovH1;
    throw ConfigError("unknown kernel family '" + s + "' (expected cov1, cov2, or covh1)");
}

/// Space-time covariance of the Gaussian innovation fields. Time lives on
/// the uniform [0,1] grid; coordinate differences |s-s'| are rescaled by
/// S-1 so both arguments range over [0,1]. covh1 admits S=1 (the rescaling
/// is moot when s-s' is identically zero), cov1/cov2 require S >= 2.
struct KernelSpec {
    KernelFamily family = KernelFamily::Cov1;
    double a = 3.0;
    double b = 2.0;
    double sigma2 = 1.0;
    double c = 0.0;    // separability parameter of cov1/cov2, in [0,1]
    double beta = 0.0; // separability parameter of covh1, in [0,1)
    std::size_t S = 4;
    std::size_t T = 50;
};

inline void validate_kernel(const KernelSpec& spec) {
    if (!(spec.sigma2 > 0.0)) throw ConfigError("sigma2 must be positive");
    if (spec.a < 0.0 || spec.b < 0.0) throw ConfigError("a and b must be nonnegative");
    if (spec.c < 0.0 || spec.c > 1.0) throw ConfigError("c must lie in [0,1]");
    if (spec.beta < 0.0 || spec.beta >= 1.0) throw ConfigError("beta must lie in [0,1)");
    if (spec.T < 2) throw ConfigError("kernel requires T >= 2 grid points");
    const std::size_t min_s = spec.family == KernelFamily::CovH1 ? 1 : 2;
    if (spec.S < min_s) {
        throw ConfigError("the coordinate rescaling of this family requires S >= 2");
    }
}

/// Kernel evaluations over all (s,t) pairs, flattened s-major: row/column
/// index = s*T + t. Built on the upper triangle and mirrored, so the
/// result is exactly symmetric.
[[nodiscard]] inline Matrix kernel_matrix(const KernelSpec& spec) {
    validate_kernel(spec);
    const std::vector<double> grid = uniform_grid(spec.T);
    const Eigen::Index dim = static_cast<Eigen::Index>(spec.S * spec.T);
    Matrix m(dim, dim);
    for (std::size_t s = 0; s < spec.S; ++s)
        for (std::size_t t = 0; t < spec.T; ++t) {
            const Eigen::Index row = static_cast<Eigen::Index>(s * spec.T + t);
            for (std::size_t s2 = 0; s2 < spec.S; ++s2)
                for (std::size_t t2 = 0; t2 < spec.T; ++t2) {
                    const Eigen::Index col = static_cast<Eigen::Index>(s2 * spec.T + t2);
                    if (col < row) continue;
                    const double dt = grid[t] - grid[t2];
                    double v = 0.0;
                    if (spec.family == KernelFamily::CovH1) {
                        const double ds =
                            spec.S > 1 ? (static_cast<double>(s) - static_cast<double>(s2)) /
                                             static_cast<double>(spec.S - 1)
                                       : 0.0;
                        v = spec.sigma2 *
                            std::exp(-spec.a * (dt * dt + 2.0 * spec.beta * dt * ds + ds * ds));
                    } else {
                        const double tdist = spec.family == KernelFamily::Cov1 ? std::abs(dt)
                                                                               : dt * dt;
                        const double u = spec.a * tdist + 1.0;
                        const double ds = std::abs(static_cast<double>(s) -
                                                   static_cast<double>(s2)) /
                                          static_cast<double>(spec.S - 1);
                        v = spec.sigma2 / std::sqrt(u) *
                            std::exp(-spec.b * spec.b * ds * ds / std::pow(u, spec.c));
                    }
                    m(row, col) = v;
                    m(col, row) = v;
                }
        }
    return m;
}

/// MA mixing weights Psi(s,s') = exp(-25 (s-s')^2 / (S-1)^2); the single
/// coordinate degenerates to [1].
[[nodiscard]] inline Matrix psi_matrix(std::size_t S) {
    if (S < 1) throw ConfigError("mixing matrix requires S >= 1");
    Matrix psi(static_cast<Eigen::Index>(S), static_cast<Eigen::Index>(S));
    for (std::size_t s = 0; s < S; ++s)
        for (std::size_t s2 = 0; s2 < S; ++s2) {
            if (s == s2) {
                psi(static_cast<Eigen::Index>(s), static_cast<Eigen::Index>(s2)) = 1.0;
            } else {
                const double d = (static_cast<double>(s) - static_cast<double>(s2)) /
                                 static_cast<double>(S - 1);
                psi(static_cast<Eigen::Index>(s), static_cast<Eigen::Index>(s2)) =
                    std::exp(-25.0 * d * d);
            }
        }
    return psi;
}

/// Draws Gaussian innovation fields from a factored kernel. Factoring once
/// and reusing the sampler amortizes the Cholesky across replicates.
class KernelSampler {
  public:
    explicit KernelSampler(const KernelSpec& spec) : spec_(spec) {
        const Matrix m = kernel_matrix(spec);
        const double diag_mean = m.diagonal().mean();
        for (double jitter : {0.0, 1e-12, 1e-10, 1e-8}) {
            Matrix shifted = m;
            if (jitter > 0.0) {
                shifted.diagonal().array() += jitter * diag_mean;
            }
            Eigen::LLT<Matrix> llt(shifted);
            if (llt.info() == Eigen::Success) {
                lower_ = llt.matrixL();
                jitter_ = jitter;
                return;
            }
        }
        throw KernelError("kernel matrix is not positive semi-definite even after the "
                          "largest diagonal jitter (1e-8 relative)");
    }

    [[nodiscard]] const KernelSpec& spec() const { return spec_; }
    [[nodiscard]] double jitter() const { return jitter_; }

    /// `count` independent zero-mean fields, each S x T, deterministic in
    /// the seed.
    [[nodiscard]] std::vector<Matrix> draw(std::size_t count, std::uint64_t seed) const {
        const Eigen::Index dim = lower_.rows();
        std::mt19937_64 rng(seed);
        std::normal_distribution<double> gauss(0.0, 1.0);
        std::vector<Matrix> fields;
        fields.reserve(count);
        Vector g(dim);
        for (std::size_t n = 0; n < count; ++n) {
            for (Eigen::Index i = 0; i < dim; ++i) g(i) = gauss(rng);
            const Vector flat = lower_ * g;
            Matrix field(static_cast<Eigen::Index>(spec_.S), static_cast<Eigen::Index>(spec_.T));
            for (std::size_t s = 0; s < spec_.S; ++s)
                for (std::size_t t = 0; t < spec_.T; ++t) {
                    field(static_cast<Eigen::Index>(s), static_cast<Eigen::Index>(t)) =
                        flat(static_cast<Eigen::Index>(s * spec_.T + t));
                }
            fields.push_back(std::move(field));
        }
        return fields;
    }

  private:
    KernelSpec spec_;
    Matrix lower_;
    double jitter_ = 0.0;
};

[[nodiscard]] inline std::vector<Matrix> sample_innovations(const KernelSpec& spec,
                                                            std::size_t count,
                                                            std::uint64_t seed) {
    return KernelSampler(spec).draw(count, seed);
}

/// MA(1) panel X_n = Psi (e_n + e_{n-1}) built from N+1 innovation fields
/// e_0..e_N, so the first series already has a full lagged innovation.
/// covh1 panels skip the mixing (identity), matching their 1-dependent
/// construction.
[[nodiscard]] inline FunctionalPanel ma1_panel(const KernelSampler& sampler, std::size_t n_series,
                                               std::uint64_t seed) {
    if (n_series < 2) throw ConfigError("panel simulation requires N >= 2");
    const KernelSpec& spec = sampler.spec();
    const std::vector<Matrix> fields = sampler.draw(n_series + 1, seed);
    const bool mix = spec.family != KernelFamily::CovH1;
    const Matrix psi = mix ? psi_matrix(spec.S) : Matrix();

    FunctionalPanel p;
    p.n_series = n_series;
    p.n_coords = spec.S;
    p.n_points = spec.T;
    p.grid = uniform_grid(spec.T);
    p.values.resize(n_series * spec.S * spec.T);
    for (std::size_t n = 0; n < n_series; ++n) {
        Matrix x = fields[n + 1] + fields[n];
        if (mix) x = psi * x;
        for (std::size_t s = 0; s < spec.S; ++s)
            for (std::size_t t = 0; t < spec.T; ++t) {
                p.at(n, s, t) = x(static_cast<Eigen::Index>(s), static_cast<Eigen::Index>(t));
            }
    }
    return p;
}

[[nodiscard]] inline FunctionalPanel ma1_panel(const KernelSpec& spec, std::size_t n_series,
                                               std::uint64_t seed) {
    return ma1_panel(KernelSampler(spec), n_series, seed);
}

/// A size/power experiment: `replications` independent MA(1) panels, each
/// run through the full test.
struct StudyConfig {
    KernelSpec kernel;
    std::size_t n_series = 100;
    std::size_t replications = 200;
    double alpha = 0.05;
    std::uint64_t master_seed = 0;
    TestConfig test;           // per-replicate seeds override test.seed
    std::size_t threads = 1;   // worker count; never affects the results
};

struct ReplicateOutcome {
    std::size_t replicate = 0;
    double p_value = 1.0;
    double statistic = 0.0;
    std::size_t J = 0;
    std::size_t K = 0;
    double cpv = 0.0;
};

struct StudyResult {
    double rejection_rate = 0.0;
    double mean_cpv = 0.0;
    std::vector<ReplicateOutcome> outcomes; // ordered by replicate index
};

/// Runs the study. Replicate r draws its panel from split(split(master,r),0)
/// and its Monte Carlo p-value from split(split(master,r),1), so the result
/// is a pure function of the config regardless of thread count.
[[nodiscard]] inline StudyResult size_power_study(const StudyConfig& cfg) {
    if (cfg.replications < 1) throw ConfigError("study requires at least one replication");
    if (!(cfg.alpha > 0.0) || !(cfg.alpha < 1.0)) {
        throw ConfigError("nominal level alpha must lie in (0,1)");
    }
    const KernelSampler sampler(cfg.kernel);

    StudyResult result;
    result.outcomes.resize(cfg.replications);

    std::atomic<std::size_t> next{0};
    std::mutex fail_mutex;
    std::exception_ptr failure;

    const auto worker = [&]() {
        for (;;) {
            const std::size_t rep = next.fetch_add(1);
            if (rep >= cfg.replications) return;
            {
                std::lock_guard<std::mutex> lock(fail_mutex);
                if (failure) return;
            }
            try {
                const std::uint64_t rep_seed = split_seed(cfg.master_seed, rep);
                const FunctionalPanel panel =
                    ma1_panel(sampler, cfg.n_series, split_seed(rep_seed, 0));
                TestConfig tcfg = cfg.test;
                tcfg.seed = split_seed(rep_seed, 1);
                const TestResult r = run_test(panel, tcfg);
                result.outcomes[rep] = {rep, r.p_value, r.statistic, r.J, r.K, r.cpv};
            } catch (const std::exception& e) {
                std::lock_guard<std::mutex> lock(fail_mutex);
                if (!failure) {
                    failure = std::make_exception_ptr(
                        Error("replicate " + std::to_string(rep) + " failed: " + e.what()));
                }
                return;
            }
        }
    };

    if (cfg.threads <= 1) {
        worker();
    } else {
        std::vector<std::thread> pool;
        pool.reserve(cfg.threads);
        for (std::size_t i = 0; i < cfg.threads; ++i) pool.emplace_back(worker);
        for (std::thread& th : pool) th.join();
    }
    if (failure) std::rethrow_exception(failure);

    std::size_t rejections = 0;
    double cpv_sum = 0.0;
    for (const ReplicateOutcome& o : result.outcomes) {
        if (o.p_value < cfg.alpha) ++rejections;
        cpv_sum += o.cpv;
    }
    result.rejection_rate =
        static_cast<double>(rejections) / static_cast<double>(cfg.replications);
    result.mean_cpv = cpv_sum / static_cast<double>(cfg.replications);
    return result;
}

} // namespace sepstat

#endif // SEPSTAT_SIMULATE_HPP
