// Command-line front end: `sepstat test|simulate|study`. Exit codes are
// 0 for success, 1 for data or numeric failures, 2 for usage errors.

#include <charconv>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>

#include "CLI11.hpp"

#include "sepstat/engine.hpp"
#include "sepstat/errors.hpp"
#include "sepstat/panel.hpp"
#include "sepstat/report.hpp"
#include "sepstat/simulate.hpp"

namespace {

struct KernelFlags {
    std::string family = "cov1";
    double a = 3.0;
    double b = 2.0;
    double sigma2 = 1.0;
    double c = 0.0;
    double beta = 0.0;
    std::size_t S = 4;
    std::size_t T = 50;
};

void add_kernel_flags(CLI::App* cmd, KernelFlags& kf) {
    cmd->add_option("--family", kf.family, "innovation kernel: cov1, cov2, or covh1")
        ->default_val("cov1")
        ->check(CLI::IsMember({"cov1", "cov2", "covh1"}));
    cmd->add_option("--a", kf.a, "time scale parameter")->default_val(3.0);
    cmd->add_option("--b", kf.b, "coordinate scale parameter (cov1/cov2)")->default_val(2.0);
    cmd->add_option("--sigma2", kf.sigma2, "overall variance, must be positive")
        ->default_val(1.0);
    cmd->add_option("--c", kf.c, "separability parameter of cov1/cov2, in [0,1]")
        ->default_val(0.0);
    cmd->add_option("--beta", kf.beta, "separability parameter of covh1, in [0,1)")
        ->default_val(0.0);
    cmd->add_option("--S", kf.S, "number of panel coordinates")->default_val(4);
    cmd->add_option("--T", kf.T, "number of time grid points on [0,1]")->default_val(50);
}

sepstat::KernelSpec to_kernel_spec(const KernelFlags& kf) {
    sepstat::KernelSpec spec;
    spec.family = sepstat::parse_family(kf.family);
    spec.a = kf.a;
    spec.b = kf.b;
    spec.sigma2 = kf.sigma2;
    spec.c = kf.c;
    spec.beta = kf.beta;
    spec.S = kf.S;
    spec.T = kf.T;
    sepstat::validate_kernel(spec);
    return spec;
}

struct TestFlags {
    std::size_t h = 0;
    double cpv = 0.85;
    std::optional<std::size_t> J;
    std::string K; // a positive integer or "passthrough"
    std::optional<std::size_t> q;
    std::string method = "monte-carlo";
    std::size_t mc_draws = 100000;
    std::uint64_t seed = 0;
    CLI::Option* cpv_opt = nullptr;
};

void add_test_flags(CLI::App* cmd, TestFlags& tf, bool with_seed = true) {
    cmd->add_option("--h", tf.h, "covariance lag to test")->default_val(0);
    tf.cpv_opt = cmd->add_option("--cpv", tf.cpv,
                                 "target cumulative proportion of variance for choosing J and "
                                 "K; mutually exclusive with fixing them")
                     ->default_val(0.85);
    cmd->add_option("--J", tf.J, "fix the number of temporal components");
    cmd->add_option("--K", tf.K,
                    "fix the number of coordinate components, or 'passthrough' to keep all S "
                    "coordinates");
    cmd->add_option("--q", tf.q, "override the Bartlett bandwidth");
    cmd->add_option("--method", tf.method, "p-value method")
        ->default_val("monte-carlo")
        ->check(CLI::IsMember({"monte-carlo", "satterthwaite"}));
    cmd->add_option("--mc-draws", tf.mc_draws, "Monte Carlo draws for the p-value")
        ->default_val(100000);
    if (with_seed) {
        cmd->add_option("--seed", tf.seed,
                        "random seed; identical seeds reproduce outputs exactly")
            ->default_val(0);
    }
}

sepstat::TestConfig to_test_config(const TestFlags& tf) {
    sepstat::TestConfig config;
    config.h = tf.h;
    config.target_cpv = tf.cpv;
    config.forced_J = tf.J;
    bool fixed_k = false;
    if (!tf.K.empty()) {
        if (tf.K == "passthrough") {
            config.passthrough = true;
        } else {
            std::size_t k = 0;
            const auto* end = tf.K.data() + tf.K.size();
            const auto [ptr, ec] = std::from_chars(tf.K.data(), end, k);
            if (ec != std::errc() || ptr != end || k < 1) {
                throw sepstat::ConfigError("--K expects a positive integer or 'passthrough', got '" +
                                           tf.K + "'");
            }
            config.forced_K = k;
            fixed_k = true;
        }
    }
    if (tf.cpv_opt != nullptr && tf.cpv_opt->count() > 0 && (tf.J.has_value() || fixed_k)) {
        throw sepstat::ConfigError("--cpv is mutually exclusive with fixed --J/--K");
    }
    config.q_override = tf.q;
    config.method = tf.method == "monte-carlo" ? sepstat::PValueMethod::MonteCarlo
                                               : sepstat::PValueMethod::Satterthwaite;
    config.mc_draws = tf.mc_draws;
    config.seed = tf.seed;
    return config;
}

std::ifstream open_input(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw sepstat::DataError("cannot open input file '" + path + "'");
    return in;
}

void write_text(const std::string& path, const std::string& text) {
    if (path.empty() || path == "-") {
        std::cout << text;
        return;
    }
    std::ofstream out(path);
    if (!out) throw sepstat::DataError("cannot open output file '" + path + "'");
    out << text;
    if (!out) throw sepstat::DataError("failed writing to '" + path + "'");
}

std::size_t default_threads() {
    if (const char* env = std::getenv("SEPSTAT_THREADS")) {
        std::size_t v = 0;
        const std::string s(env);
        const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
        if (ec == std::errc() && ptr == s.data() + s.size() && v >= 1) return v;
    }
    return 1;
}

struct TestCmd {
    std::string input;
    std::string format = "long";
    std::string season;
    std::string output = "-";
    std::string diagnostics;
    TestFlags flags;
};

int cmd_test(const TestCmd& cmd) {
    auto in = open_input(cmd.input);
    const sepstat::PanelFormat fmt =
        cmd.format == "wide" ? sepstat::PanelFormat::Wide : sepstat::PanelFormat::Long;
    sepstat::FunctionalPanel panel = sepstat::load_panel(in, fmt);
    if (!cmd.season.empty()) {
        auto season_in = open_input(cmd.season);
        const auto seasons = sepstat::load_season_map(season_in, panel.n_series);
        panel = sepstat::deseasonalize(panel, seasons);
    }
    const sepstat::TestConfig config = to_test_config(cmd.flags);
    sepstat::TestDiagnostics diag;
    const sepstat::TestResult result =
        sepstat::run_test(panel, config, cmd.diagnostics.empty() ? nullptr : &diag);
    for (const std::string& w : result.warnings) std::cerr << "warning: " << w << '\n';
    write_text(cmd.output, sepstat::to_json(result).dump(2) + "\n");
    if (!cmd.diagnostics.empty()) {
        write_text(cmd.diagnostics, sepstat::to_json(diag).dump(2) + "\n");
    }
    return 0;
}

struct SimulateCmd {
    KernelFlags kernel;
    std::size_t n_series = 100;
    std::uint64_t seed = 0;
    std::string output = "-";
};

int cmd_simulate(const SimulateCmd& cmd) {
    const sepstat::KernelSpec spec = to_kernel_spec(cmd.kernel);
    const sepstat::FunctionalPanel panel = sepstat::ma1_panel(spec, cmd.n_series, cmd.seed);
    if (cmd.output.empty() || cmd.output == "-") {
        sepstat::write_panel(panel, std::cout);
        return 0;
    }
    std::ofstream out(cmd.output);
    if (!out) throw sepstat::DataError("cannot open output file '" + cmd.output + "'");
    sepstat::write_panel(panel, out);
    if (!out) throw sepstat::DataError("failed writing to '" + cmd.output + "'");
    return 0;
}

struct StudyCmd {
    KernelFlags kernel;
    std::size_t n_series = 100;
    std::size_t reps = 200;
    double alpha = 0.05;
    std::uint64_t master_seed = 0;
    std::size_t threads = default_threads();
    bool paper_format = false;
    std::string output_csv;
    std::string output_json = "-";
    TestFlags flags;
};

int cmd_study(const StudyCmd& cmd) {
    sepstat::StudyConfig cfg;
    cfg.kernel = to_kernel_spec(cmd.kernel);
    cfg.n_series = cmd.n_series;
    cfg.replications = cmd.reps;
    cfg.alpha = cmd.alpha;
    cfg.master_seed = cmd.master_seed;
    cfg.test = to_test_config(cmd.flags);
    cfg.threads = cmd.threads;
    const sepstat::StudyResult result = sepstat::size_power_study(cfg);

    if (!cmd.output_csv.empty()) {
        std::ofstream out(cmd.output_csv);
        if (!out) throw sepstat::DataError("cannot open output file '" + cmd.output_csv + "'");
        sepstat::write_study_csv(out, result);
        if (!out) throw sepstat::DataError("failed writing to '" + cmd.output_csv + "'");
    }
    write_text(cmd.output_json, sepstat::study_summary_json(cfg, result).dump(2) + "\n");

    char row[128];
    if (cmd.paper_format) {
        std::snprintf(row, sizeof(row), "%.1f (%.0f%%)", 100.0 * result.rejection_rate,
                      100.0 * result.mean_cpv);
    } else {
        std::snprintf(row, sizeof(row),
                      "rejection rate %.2f%% (mean CPV %.1f%%) over %zu replications at level %g",
                      100.0 * result.rejection_rate, 100.0 * result.mean_cpv, cmd.reps,
                      cmd.alpha);
    }
    std::cerr << row << '\n';
    return 0;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"Separability test for the lag-h covariance of functional panels"};
    // The lag option is spelled --h, so help keeps only its long form.
    app.set_help_flag("--help", "print help and exit");
    app.require_subcommand(1);

    TestCmd test_cmd;
    CLI::App* test_app = app.add_subcommand(
        "test", "run the separability test on a panel CSV and emit a JSON result");
    test_app->set_help_flag("--help", "print help and exit");
    test_app->add_option("--input,-i", test_cmd.input, "panel CSV path")->required();
    test_app->add_option("--format", test_cmd.format, "input layout")
        ->default_val("long")
        ->check(CLI::IsMember({"long", "wide"}));
    test_app->add_option("--season", test_cmd.season,
                         "per-series season CSV; enables seasonal demeaning");
    test_app->add_option("--output,-o", test_cmd.output, "result JSON path, '-' for stdout")
        ->default_val("-");
    test_app->add_option("--diagnostics", test_cmd.diagnostics,
                         "also write estimator norms to this JSON path");
    add_test_flags(test_app, test_cmd.flags);

    SimulateCmd sim_cmd;
    CLI::App* sim_app =
        app.add_subcommand("simulate", "generate an MA(1) functional panel as long CSV");
    sim_app->set_help_flag("--help", "print help and exit");
    add_kernel_flags(sim_app, sim_cmd.kernel);
    sim_app->add_option("--N", sim_cmd.n_series, "number of series")->default_val(100);
    sim_app->add_option("--seed", sim_cmd.seed, "random seed")->default_val(0);
    sim_app->add_option("--output,-o", sim_cmd.output, "panel CSV path, '-' for stdout")
        ->default_val("-");

    StudyCmd study_cmd;
    CLI::App* study_app = app.add_subcommand(
        "study", "estimate empirical size or power over simulated replicates");
    study_app->set_help_flag("--help", "print help and exit");
    add_kernel_flags(study_app, study_cmd.kernel);
    study_app->add_option("--N", study_cmd.n_series, "series per replicate")->default_val(100);
    study_app->add_option("--reps", study_cmd.reps, "number of replicates")->default_val(200);
    study_app->add_option("--alpha", study_cmd.alpha, "nominal test level")->default_val(0.05);
    study_app->add_option("--seed", study_cmd.master_seed, "master seed; replicate seeds derive "
                                                           "from it deterministically")
        ->default_val(0);
    study_app->add_option("--threads", study_cmd.threads,
                          "worker threads (default from SEPSTAT_THREADS, else 1); never "
                          "affects the numbers");
    study_app->add_flag("--paper-format", study_cmd.paper_format,
                        "print the summary row as 'rate (cpv%)'");
    study_app->add_option("--output-csv", study_cmd.output_csv,
                          "write per-replicate results to this CSV path");
    study_app->add_option("--output-json", study_cmd.output_json,
                          "summary JSON path, '-' for stdout")
        ->default_val("-");
    add_test_flags(study_app, study_cmd.flags, /*with_seed=*/false);

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 2;
    }

    try {
        if (test_app->parsed()) return cmd_test(test_cmd);
        if (sim_app->parsed()) return cmd_simulate(sim_cmd);
        return cmd_study(study_cmd);
    } catch (const sepstat::ConfigError& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 1;
    }
}
