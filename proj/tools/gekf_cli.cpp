// Command-line front end: stability checks, critical-rate bounds, Monte Carlo
// simulation and sweeps, and the library's property suite.

#include <cstdlib>
#include <fstream>
#include <iostream>
#include <memory>
#include <sstream>
#include <string>

#include <CLI11.hpp>

#include "gekf/io.hpp"
#include "gekf/montecarlo.hpp"
#include "gekf/stability.hpp"
#include "gekf/verify.hpp"

namespace {

constexpr int kExitOk = 0;
constexpr int kExitUsage = 1;
constexpr int kExitInconclusive = 2;

struct Output {
    std::string path;  // empty: stdout

    void write(const std::string& text) const {
        if (path.empty()) {
            std::cout << text;
            if (!text.empty() && text.back() != '\n') std::cout << '\n';
            return;
        }
        std::ofstream out(path, std::ios::binary);
        if (!out) throw std::runtime_error("cannot open output file: " + path);
        out << text;
    }
};

int thread_default() {
    if (const char* env = std::getenv("GEKF_THREADS")) {
        const int value = std::atoi(env);
        if (value > 0) return value;
    }
    return 0;  // resolve to hardware concurrency
}

int run_check(const std::string& system_path, double p, double q, const Output& out) {
    const gekf::LtiSystem sys = gekf::load_system(system_path);
    const gekf::StabilityReport report = gekf::full_report(sys, p, q);
    out.write(gekf::to_json(report).dump(2));
    return (report.spectral_test_ok || report.closed_form.ok) ? kExitOk : kExitInconclusive;
}

int run_bound(const std::string& system_path, double q, double tol, const Output& out) {
    const gekf::LtiSystem sys = gekf::load_system(system_path);
    const gekf::NecessaryCheck necessary = gekf::necessary_check(sys, q);
    if (!necessary.ok) {
        std::cerr << "necessary condition fails: rho(A)^2 (1-q) = " << necessary.value
                  << " >= 1, no failure rate can be certified at q = " << q << "\n";
        return kExitInconclusive;
    }
    const gekf::StackedMatrices stacks = gekf::build_stacks(sys);
    const gekf::LowerBoundResult bound =
        gekf::critical_rate_lower_bound(sys, stacks, q, tol);
    gekf::Json doc;
    doc["q"] = q;
    doc["p_lower_bound"] = bound.value;
    doc["closed_form_max_p"] = gekf::closed_form_max_p(sys, q);
    doc["feasible_at_one"] = bound.feasible_at_one;
    doc["bracket_ok"] = bound.bracket_ok;
    doc["monotone_ok"] = bound.monotone_ok;
    doc["notes"] = bound.notes;
    out.write(doc.dump(2));
    return bound.bracket_ok ? kExitOk : kExitInconclusive;
}

int run_simulate(const std::string& system_path, double p, double q, long steps, long trials,
                 std::uint64_t seed, const Output& out, const std::string& peaks_path,
                 int threads) {
    const gekf::LtiSystem sys = gekf::load_system(system_path);
    const gekf::GilbertElliott channel{p, q};
    if (trials == 1) {
        const gekf::LossTrajectory losses = gekf::sample(channel, steps, gekf::derive_seed(seed, 0));
        const gekf::CovTrajectory cov = gekf::run_covariance(sys, losses);
        std::ostringstream text;
        gekf::write_covariance_csv(text, losses, cov);
        out.write(text.str());
        if (!peaks_path.empty()) {
            std::ofstream peaks(peaks_path, std::ios::binary);
            if (!peaks) throw std::runtime_error("cannot open output file: " + peaks_path);
            gekf::write_peaks_csv(peaks, cov);
        }
        if (cov.diverged)
            std::cerr << "trajectory diverged at step " << cov.length() + 1 << "\n";
        return kExitOk;
    }
    gekf::EstimateOptions options;
    options.threads = threads;
    const gekf::EnsembleEstimate est = gekf::estimate(sys, channel, steps, trials, seed, options);
    std::ostringstream text;
    gekf::write_estimate_csv(text, est);
    out.write(text.str());
    std::cerr << "verdict: " << gekf::to_string(est.verdict) << " (" << est.reason << ")\n";
    return kExitOk;
}

int run_sweep(const std::string& system_path, const std::string& p_grid_text,
              const std::string& q_grid_text, long steps, long trials, std::uint64_t seed,
              const Output& out, int threads) {
    const gekf::LtiSystem sys = gekf::load_system(system_path);
    const std::vector<double> p_grid = gekf::parse_grid(p_grid_text);
    const std::vector<double> q_grid = gekf::parse_grid(q_grid_text);
    gekf::EstimateOptions options;
    options.threads = threads;
    const auto points = gekf::sweep(sys, p_grid, q_grid, steps, trials, seed, options);
    std::ostringstream text;
    gekf::write_sweep_csv(text, points);
    out.write(text.str());
    for (const auto& point : points)
        if (point.monotone_flag)
            std::cerr << "monotonicity flag at p = " << point.p << ", q = " << point.q
                      << " (likely estimation noise near the critical curve)\n";
    return kExitOk;
}

int run_verify(std::uint64_t seed, const Output& out) {
    const auto results = gekf::run_verification(seed);
    std::ostringstream text;
    bool all_pass = true;
    for (const auto& result : results) {
        text << (result.pass ? "PASS" : "FAIL") << "  " << result.name;
        if (!result.detail.empty()) text << "  (" << result.detail << ")";
        text << '\n';
        all_pass = all_pass && result.pass;
    }
    text << (all_pass ? "all properties hold" : "property failures detected") << '\n';
    out.write(text.str());
    if (!all_pass) {
        for (const auto& result : results)
            if (!result.pass) std::cerr << "failing property: " << result.name << "\n";
    }
    return all_pass ? kExitOk : kExitInconclusive;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"Kalman filtering stability over two-state Markov loss channels"};
    app.require_subcommand(1);

    std::string system_path, out_path, peaks_path, p_grid_text, q_grid_text;
    double p = 0.0, q = 0.0, tol = 1e-3;
    long steps = 1000, trials = 500;
    std::uint64_t seed = 1;
    int threads = thread_default();

    auto* check = app.add_subcommand("check", "evaluate every stability condition at (p, q)");
    check->add_option("--system", system_path, "system JSON file")->required();
    check->add_option("--p", p, "failure rate in (0,1)")->required();
    check->add_option("--q", q, "recovery rate in (0,1)")->required();
    check->add_option("--out", out_path, "output file (stdout default)");

    auto* bound = app.add_subcommand("bound", "largest certified failure rate for a given q");
    bound->add_option("--system", system_path, "system JSON file")->required();
    bound->add_option("--q", q, "recovery rate in (0,1)")->required();
    bound->add_option("--tol", tol, "bisection tolerance (default 1e-3)");
    bound->add_option("--out", out_path, "output file (stdout default)");

    auto* simulate = app.add_subcommand("simulate", "sample covariance trajectories");
    simulate->add_option("--system", system_path, "system JSON file")->required();
    simulate->add_option("--p", p, "failure rate in (0,1)")->required();
    simulate->add_option("--q", q, "recovery rate in (0,1)")->required();
    simulate->add_option("--steps", steps, "horizon T (default 1000)");
    simulate->add_option("--trials", trials, "trajectories N (default 500)");
    simulate->add_option("--seed", seed, "base seed (default 1)");
    simulate->add_option("--out", out_path, "output CSV (stdout default)");
    simulate->add_option("--peaks-out", peaks_path, "peak CSV, single-trial runs only");
    simulate->add_option("--threads", threads, "worker threads (default GEKF_THREADS or all)");

    auto* sweep = app.add_subcommand("sweep", "classify a grid in the p-q plane");
    sweep->add_option("--system", system_path, "system JSON file")->required();
    sweep->add_option("--p-grid", p_grid_text, "failure grid start:stop:step")->required();
    sweep->add_option("--q-grid", q_grid_text, "recovery grid start:stop:step")->required();
    sweep->add_option("--steps", steps, "horizon T per point (default 1000)");
    sweep->add_option("--trials", trials, "trajectories N per point (default 500)");
    sweep->add_option("--seed", seed, "base seed (default 1)");
    sweep->add_option("--out", out_path, "output CSV (stdout default)");
    sweep->add_option("--threads", threads, "worker threads (default GEKF_THREADS or all)");

    auto* verify = app.add_subcommand("verify", "run the full property suite");
    verify->add_option("--seed", seed, "suite seed (default 1)");
    verify->add_option("--out", out_path, "output file (stdout default)");

    CLI11_PARSE(app, argc, argv);

    const Output out{out_path};
    try {
        if (check->parsed()) return run_check(system_path, p, q, out);
        if (bound->parsed()) return run_bound(system_path, q, tol, out);
        if (simulate->parsed())
            return run_simulate(system_path, p, q, steps, trials, seed, out, peaks_path, threads);
        if (sweep->parsed())
            return run_sweep(system_path, p_grid_text, q_grid_text, steps, trials, seed, out,
                             threads);
        if (verify->parsed()) return run_verify(seed, out);
    } catch (const std::invalid_argument& err) {
        std::cerr << "error: " << err.what() << "\n";
        return kExitUsage;
    } catch (const std::exception& err) {
        std::cerr << "error: " << err.what() << "\n";
        return kExitUsage;
    }
    return kExitUsage;
}
