#ifndef SEPSTAT_REPORT_HPP
#define SEPSTAT_REPORT_HPP

#include <ostream>

#include <nlohmann/json.hpp>

#include "sepstat/engine.hpp"
#include "sepstat/simulate.hpp"

namespace sepstat {

/// Stable JSON form of a TestResult. Field order is fixed so identical
/// results serialize to identical bytes.
[[nodiscard]] inline nlohmann::ordered_json to_json(const TestResult& r) {
    nlohmann::ordered_json j;
    j["schema"] = "sepstat/1";
    j["statistic"] = r.statistic;
    j["eigenvalues"] = r.eigenvalues;
    j["p_value"] = r.p_value;
    j["effect_size"] = r.effect_size;
    j["h"] = r.h;
    j["J"] = r.J;
    j["K"] = r.K;
    j["cpv"] = r.cpv;
    j["n_used"] = r.n_used;
    j["method"] = r.method;
    j["mc_draws"] = r.mc_draws;
    j["seed"] = r.seed;
    return j;
}

/// Per-replicate study rows, shortest-round-trip numbers so a reload is
/// bit-exact.
inline void write_study_csv(std::ostream& os, const StudyResult& r) {
    os << "replicate,p_value,statistic,J,K,cpv\n";
    std::string row;
    for (const ReplicateOutcome& o : r.outcomes) {
        row.clear();
        row.append(std::to_string(o.replicate));
        row.push_back(',');
        detail::format_value(o.p_value, row);
        row.push_back(',');
        detail::format_value(o.statistic, row);
        row.push_back(',');
        row.append(std::to_string(o.J));
        row.push_back(',');
        row.append(std::to_string(o.K));
        row.push_back(',');
        detail::format_value(o.cpv, row);
        row.push_back('\n');
        os << row;
    }
}

namespace detail {

[[nodiscard]] inline nlohmann::ordered_json optional_json(const std::optional<std::size_t>& v) {
    if (v) return *v;
    return nullptr;
}

} // namespace detail

/// Study summary: headline rates plus a full echo of the configuration.
/// Worker count is omitted on purpose; it never changes the numbers.
[[nodiscard]] inline nlohmann::ordered_json study_summary_json(const StudyConfig& cfg,
                                                               const StudyResult& r) {
    nlohmann::ordered_json j;
    j["schema"] = "sepstat/1";
    j["rejection_rate"] = r.rejection_rate;
    j["mean_cpv"] = r.mean_cpv;
    j["replications"] = cfg.replications;
    j["alpha"] = cfg.alpha;
    j["master_seed"] = cfg.master_seed;
    nlohmann::ordered_json kernel;
    kernel["family"] = family_name(cfg.kernel.family);
    kernel["a"] = cfg.kernel.a;
    kernel["b"] = cfg.kernel.b;
    kernel["sigma2"] = cfg.kernel.sigma2;
    kernel["c"] = cfg.kernel.c;
    kernel["beta"] = cfg.kernel.beta;
    kernel["S"] = cfg.kernel.S;
    kernel["T"] = cfg.kernel.T;
    nlohmann::ordered_json config;
    config["kernel"] = kernel;
    config["n_series"] = cfg.n_series;
    config["h"] = cfg.test.h;
    config["target_cpv"] = cfg.test.target_cpv;
    config["J_max"] = cfg.test.J_max;
    config["K_max"] = cfg.test.K_max;
    config["forced_J"] = detail::optional_json(cfg.test.forced_J);
    config["forced_K"] = detail::optional_json(cfg.test.forced_K);
    config["passthrough"] = cfg.test.passthrough;
    config["q_override"] = detail::optional_json(cfg.test.q_override);
    config["method"] = method_name(cfg.test.method);
    config["mc_draws"] = cfg.test.mc_draws;
    j["config"] = config;
    return j;
}

[[nodiscard]] inline nlohmann::ordered_json to_json(const TestDiagnostics& d) {
    nlohmann::ordered_json j;
    j["schema"] = "sepstat/1";
    j["c_norm"] = d.c_norm;
    j["c1_norm"] = d.c1_norm;
    j["c2_norm"] = d.c2_norm;
    j["gamma_norm"] = d.gamma_norm;
    j["q_component_norms"] = d.q_component_norms;
    j["bandwidth"] = d.bandwidth;
    return j;
}

} // namespace sepstat

#endif // SEPSTAT_REPORT_HPP
