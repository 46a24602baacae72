#ifndef GEKF_MONTECARLO_HPP
#define GEKF_MONTECARLO_HPP

#include <atomic>
#include <cmath>
#include <cstdio>
#include <ostream>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

#include "gekf/channel.hpp"
#include "gekf/filter.hpp"
#include "gekf/model.hpp"
#include "gekf/numerics.hpp"
#include "gekf/rng.hpp"
#include "gekf/stability.hpp"
#include "gekf/stats.hpp"

namespace gekf {

enum class Verdict { bounded, diverging, inconclusive };

inline const char* to_string(Verdict v) {
    switch (v) {
        case Verdict::bounded: return "bounded";
        case Verdict::diverging: return "diverging";
        default: return "inconclusive";
    }
}

/// Ensemble summary of N covariance trajectories over horizon T.
///
/// mean_norms is the arithmetic mean of ||P_k|| over trials still running at
/// step k; log_mean_norms is the matching mean of log ||P_k|| (the geometric-
/// mean curve), which is the robust statistic the verdict slope uses, since
/// the arithmetic mean under divergence is dominated by rare excursions and
/// saturates at any fixed trial count.
struct EnsembleEstimate {
    long horizon = 0;
    long trials = 0;
    std::vector<double> mean_norms;
    std::vector<double> log_mean_norms;
    std::vector<double> diverged_by_step;   // fraction truncated at or before k
    std::vector<double> peak_means;         // mean ||P_beta_j|| by peak index
    std::vector<long> peak_counts;
    double diverged_fraction = 0.0;
    Verdict verdict = Verdict::inconclusive;

    // verdict inputs, kept for reporting
    double growth_slope = 0.0;       // mean-curve slope over [T/10, T/2)
    double typical_slope = 0.0;      // geometric-mean slope over [T/2, T)
    double typical_level = 0.0;      // geometric-mean level over [T/2, T)
    double baseline_level = 0.0;     // max of steady-state and initial scale
    std::string reason;
};

struct EstimateOptions {
    double slope_tolerance = 1e-3;   // per step
    double level_factor = 1e6;       // typical level this far above baseline => diverging
    int threads = 0;                 // 0: hardware concurrency
};

namespace detail {

inline int resolve_threads(int requested) {
    if (requested > 0) return requested;
    const unsigned hw = std::thread::hardware_concurrency();
    return hw == 0 ? 1 : static_cast<int>(hw);
}

// Per-chunk accumulators with a fixed chunk width keep the reduction order
// independent of the thread count, so results are bit-reproducible.
struct ChunkSums {
    std::vector<double> norm_sum;
    std::vector<double> log_sum;
    std::vector<long> alive;
    std::vector<double> peak_sum;
    std::vector<long> peak_count;
    long diverged = 0;
    std::vector<long> truncated_at;  // first invalid step per diverged trial
};

inline constexpr long kChunkWidth = 32;
inline constexpr double kLogFloor = 1e-300;

} // namespace detail

/// Simulates N independent trajectories with per-trial seeds derived from
/// `seed` and classifies boundedness of the ensemble.
inline EnsembleEstimate estimate(const LtiSystem& sys, const GilbertElliott& ch, long horizon,
                                 long trials, std::uint64_t seed,
                                 const EstimateOptions& options = {}) {
    if (horizon < 4) throw std::invalid_argument("estimate: horizon must be at least 4");
    if (trials < 1) throw std::invalid_argument("estimate: trials must be at least 1");
    check_rates(ch.p, ch.q);

    const long chunk_count = (trials + detail::kChunkWidth - 1) / detail::kChunkWidth;
    std::vector<detail::ChunkSums> chunks(static_cast<std::size_t>(chunk_count));

    auto run_chunk = [&](long chunk) {
        auto& sums = chunks[static_cast<std::size_t>(chunk)];
        sums.norm_sum.assign(static_cast<std::size_t>(horizon), 0.0);
        sums.log_sum.assign(static_cast<std::size_t>(horizon), 0.0);
        sums.alive.assign(static_cast<std::size_t>(horizon), 0);
        const long first = chunk * detail::kChunkWidth;
        const long last = std::min(trials, first + detail::kChunkWidth);
        for (long trial = first; trial < last; ++trial) {
            const LossTrajectory losses =
                sample(ch, horizon, derive_seed(seed, static_cast<std::uint64_t>(trial)));
            CovarianceRecursion recursion(sys);
            long valid_steps = 0;
            std::size_t next_peak = 0;
            for (long k = 1; k <= horizon; ++k) {
                const double norm = recursion.norm();
                sums.norm_sum[static_cast<std::size_t>(k - 1)] += norm;
                sums.log_sum[static_cast<std::size_t>(k - 1)] +=
                    std::log(std::max(norm, detail::kLogFloor));
                sums.alive[static_cast<std::size_t>(k - 1)] += 1;
                valid_steps = k;
                while (next_peak < losses.recovery_times.size() &&
                       losses.recovery_times[next_peak] == k) {
                    if (sums.peak_sum.size() <= next_peak) {
                        sums.peak_sum.resize(next_peak + 1, 0.0);
                        sums.peak_count.resize(next_peak + 1, 0);
                    }
                    sums.peak_sum[next_peak] += norm;
                    sums.peak_count[next_peak] += 1;
                    ++next_peak;
                }
                if (k == horizon) break;
                if (!recursion.step(losses.gammas[static_cast<std::size_t>(k - 1)])) break;
            }
            if (valid_steps < horizon) {
                sums.diverged += 1;
                sums.truncated_at.push_back(valid_steps + 1);
            }
        }
    };

    const int threads = std::min<long>(detail::resolve_threads(options.threads), chunk_count);
    if (threads <= 1) {
        for (long chunk = 0; chunk < chunk_count; ++chunk) run_chunk(chunk);
    } else {
        std::atomic<long> next_chunk{0};
        std::vector<std::thread> pool;
        pool.reserve(static_cast<std::size_t>(threads));
        for (int t = 0; t < threads; ++t)
            pool.emplace_back([&] {
                for (long chunk = next_chunk.fetch_add(1); chunk < chunk_count;
                     chunk = next_chunk.fetch_add(1))
                    run_chunk(chunk);
            });
        for (auto& worker : pool) worker.join();
    }

    EnsembleEstimate out;
    out.horizon = horizon;
    out.trials = trials;
    out.mean_norms.assign(static_cast<std::size_t>(horizon), 0.0);
    out.log_mean_norms.assign(static_cast<std::size_t>(horizon), 0.0);
    std::vector<long> alive(static_cast<std::size_t>(horizon), 0);
    long diverged = 0;
    std::vector<long> truncations;
    for (const auto& sums : chunks) {
        for (long k = 0; k < horizon; ++k) {
            out.mean_norms[static_cast<std::size_t>(k)] += sums.norm_sum[static_cast<std::size_t>(k)];
            out.log_mean_norms[static_cast<std::size_t>(k)] += sums.log_sum[static_cast<std::size_t>(k)];
            alive[static_cast<std::size_t>(k)] += sums.alive[static_cast<std::size_t>(k)];
        }
        if (sums.peak_sum.size() > out.peak_means.size()) {
            out.peak_means.resize(sums.peak_sum.size(), 0.0);
            out.peak_counts.resize(sums.peak_sum.size(), 0);
        }
        for (std::size_t j = 0; j < sums.peak_sum.size(); ++j) {
            out.peak_means[j] += sums.peak_sum[j];
            out.peak_counts[j] += sums.peak_count[j];
        }
        diverged += sums.diverged;
        truncations.insert(truncations.end(), sums.truncated_at.begin(), sums.truncated_at.end());
    }
    for (long k = 0; k < horizon; ++k) {
        const long a = alive[static_cast<std::size_t>(k)];
        if (a > 0) {
            out.mean_norms[static_cast<std::size_t>(k)] /= double(a);
            out.log_mean_norms[static_cast<std::size_t>(k)] /= double(a);
        }
    }
    for (std::size_t j = 0; j < out.peak_means.size(); ++j)
        if (out.peak_counts[j] > 0) out.peak_means[j] /= double(out.peak_counts[j]);
    out.diverged_fraction = double(diverged) / double(trials);
    out.diverged_by_step.assign(static_cast<std::size_t>(horizon), 0.0);
    for (long at : truncations)
        for (long k = at; k <= horizon; ++k)
            out.diverged_by_step[static_cast<std::size_t>(k - 1)] += 1.0 / double(trials);

    // Verdict. Divergence evidence, in order: a truncated trial; sustained
    // growth of the mean curve over the pre-saturation window [T/10, T/2);
    // growth of the geometric-mean curve over the last half; or a typical
    // level astronomically above the steady-state baseline.
    const long half = horizon / 2;
    const long tenth = std::max<long>(horizon / 10, 1);
    std::vector<double> log_of_mean(static_cast<std::size_t>(horizon));
    for (long k = 0; k < horizon; ++k)
        log_of_mean[static_cast<std::size_t>(k)] =
            std::log(std::max(out.mean_norms[static_cast<std::size_t>(k)], detail::kLogFloor));
    const TrendFit growth = ls_trend(log_of_mean, static_cast<std::size_t>(tenth - 1),
                                     static_cast<std::size_t>(half));
    out.growth_slope = growth.slope;
    out.typical_slope = ls_slope(out.log_mean_norms, static_cast<std::size_t>(half),
                                 static_cast<std::size_t>(horizon));
    double level = 0.0;
    for (long k = half; k < horizon; ++k)
        level += out.log_mean_norms[static_cast<std::size_t>(k)];
    out.typical_level = level / double(horizon - half);

    double steady_scale = 1.0;
    try {
        steady_scale = sym_norm2(dare_solve(sys.a, sys.c, sys.q_cov, sys.r_cov).covariance);
    } catch (const std::exception&) {
        // no steady state available; the initial scale still anchors the baseline
    }
    out.baseline_level = std::max({steady_scale, sym_norm2(sys.sigma0), 1.0});

    const double eps = options.slope_tolerance;
    if (diverged > 0) {
        out.verdict = Verdict::diverging;
        out.reason = "trajectory truncation (overflow or solver breakdown)";
    } else if (out.growth_slope > std::max(eps, 3.0 * growth.slope_se) &&
               out.mean_norms[static_cast<std::size_t>(half - 1)] >
                   out.mean_norms[static_cast<std::size_t>(tenth - 1)]) {
        out.verdict = Verdict::diverging;
        out.reason = "mean curve grows through the pre-saturation window";
    } else if (out.typical_slope > eps) {
        out.verdict = Verdict::diverging;
        out.reason = "geometric-mean curve still growing over the last half";
    } else if (out.typical_level >
               std::log(options.level_factor) + std::log(out.baseline_level)) {
        out.verdict = Verdict::diverging;
        out.reason = "typical level far above the steady-state baseline";
    } else if (std::fabs(out.typical_slope) <= eps) {
        out.verdict = Verdict::bounded;
        out.reason = "geometric-mean curve settled";
    } else {
        out.verdict = Verdict::inconclusive;
        out.reason = "still in transient (geometric-mean curve decaying)";
    }
    return out;
}

struct CurvePoint {
    double p = 0.0;
    double q = 0.0;
    Verdict verdict = Verdict::inconclusive;
    double slope = 0.0;              // typical-path slope statistic
    bool necessary_ok = true;
    bool monotone_flag = false;      // disagrees with a neighbor against theory
};

/// Classifies every grid point. Points violating the exact necessary
/// condition are marked diverging outright; sampling cannot see that
/// rare-excursion divergence at fixed trial counts. Frontier violations of
/// the expected monotone layout are flagged, not failed.
inline std::vector<CurvePoint> sweep(const LtiSystem& sys, const std::vector<double>& p_grid,
                                     const std::vector<double>& q_grid, long horizon, long trials,
                                     std::uint64_t seed, const EstimateOptions& options = {}) {
    for (double v : p_grid) check_rates(v, 0.5);
    for (double v : q_grid) check_rates(0.5, v);
    std::vector<CurvePoint> points;
    points.reserve(p_grid.size() * q_grid.size());
    std::uint64_t index = 0;
    for (double q : q_grid)
        for (double p : p_grid) {
            CurvePoint point;
            point.p = p;
            point.q = q;
            point.necessary_ok = necessary_check(sys, q).ok;
            const EnsembleEstimate est = estimate(sys, GilbertElliott{p, q}, horizon, trials,
                                                  derive_seed(seed, index++), options);
            point.slope = est.typical_slope;
            point.verdict = point.necessary_ok ? est.verdict : Verdict::diverging;
            points.push_back(point);
        }

    // Along each fixed q, verdicts should pass bounded -> diverging at most
    // once as p grows; along fixed p, diverging -> bounded as q grows.
    const std::size_t np = p_grid.size(), nq = q_grid.size();
    auto at = [&](std::size_t qi, std::size_t pi) -> CurvePoint& {
        return points[qi * np + pi];
    };
    for (std::size_t qi = 0; qi < nq; ++qi)
        for (std::size_t pi = 1; pi < np; ++pi)
            if (at(qi, pi - 1).verdict == Verdict::diverging &&
                at(qi, pi).verdict == Verdict::bounded)
                at(qi, pi).monotone_flag = true;
    for (std::size_t pi = 0; pi < np; ++pi)
        for (std::size_t qi = 1; qi < nq; ++qi)
            if (at(qi - 1, pi).verdict == Verdict::bounded &&
                at(qi, pi).verdict == Verdict::diverging)
                at(qi, pi).monotone_flag = true;
    return points;
}

struct MonotonicityReport {
    long trials = 0;
    long violations = 0;             // pathwise PSD-order failures
    double worst_violation = 0.0;    // most negative scaled eigenvalue seen
    std::vector<double> mean_norm_high;  // ensemble means under the larger p
    std::vector<double> mean_norm_low;
    bool pathwise_ok = true;
    bool ensemble_ok = true;         // mean under p1 >= mean under p2 - 2 sigma
};

/// Couples the two loss chains and checks that the covariance under the
/// lossier chain dominates, path by path, in the PSD order.
inline MonotonicityReport monotonicity_test(const LtiSystem& sys, double p1, double p2, double q,
                                            long horizon, long trials, std::uint64_t seed) {
    if (!(p2 <= p1)) throw std::invalid_argument("monotonicity_test: requires p2 <= p1");
    MonotonicityReport report;
    report.trials = trials;
    report.mean_norm_high.assign(static_cast<std::size_t>(horizon), 0.0);
    report.mean_norm_low.assign(static_cast<std::size_t>(horizon), 0.0);
    std::vector<double> sq_high(static_cast<std::size_t>(horizon), 0.0);
    std::vector<double> sq_low(static_cast<std::size_t>(horizon), 0.0);

    for (long trial = 0; trial < trials; ++trial) {
        const std::uint64_t trial_seed = derive_seed(seed, static_cast<std::uint64_t>(trial));
        std::vector<CoupledState> path;
        if (p2 < p1) {
            path = coupled_sample(p1, p2, q, horizon, trial_seed);
        } else {
            const LossTrajectory single = sample(GilbertElliott{p1, q}, horizon, trial_seed);
            path.resize(static_cast<std::size_t>(horizon));
            for (long k = 0; k < horizon; ++k) {
                path[static_cast<std::size_t>(k)] = {single.gammas[static_cast<std::size_t>(k)],
                                                     single.gammas[static_cast<std::size_t>(k)]};
            }
        }
        CovarianceRecursion lossy(sys);    // follows z   (failure rate p1)
        CovarianceRecursion cleaner(sys);  // follows z~  (failure rate p2)
        for (long k = 1; k <= horizon; ++k) {
            const std::size_t idx = static_cast<std::size_t>(k - 1);
            report.mean_norm_high[idx] += lossy.norm() / double(trials);
            report.mean_norm_low[idx] += cleaner.norm() / double(trials);
            sq_high[idx] += lossy.norm() * lossy.norm() / double(trials);
            sq_low[idx] += cleaner.norm() * cleaner.norm() / double(trials);
            const Matrix diff = lossy.covariance() - cleaner.covariance();
            const double scale = std::max(1.0, sym_norm2(lossy.covariance()));
            const double lowest = detail::sym_eig_bounds(diff).min / scale;
            if (lowest < -1e-8) {
                report.violations += 1;
                report.worst_violation = std::min(report.worst_violation, lowest);
            }
            if (k == horizon) break;
            const bool ok_lossy = lossy.step(path[idx].z);
            const bool ok_cleaner = cleaner.step(path[idx].z_tilde);
            if (!ok_lossy || !ok_cleaner) break;
        }
    }
    report.pathwise_ok = report.violations == 0;
    for (long k = 0; k < horizon; ++k) {
        const std::size_t idx = static_cast<std::size_t>(k);
        const double var_h =
            std::max(0.0, sq_high[idx] - report.mean_norm_high[idx] * report.mean_norm_high[idx]);
        const double var_l =
            std::max(0.0, sq_low[idx] - report.mean_norm_low[idx] * report.mean_norm_low[idx]);
        const double sigma = std::sqrt((var_h + var_l) / double(std::max<long>(trials, 1)));
        if (report.mean_norm_high[idx] < report.mean_norm_low[idx] - 2.0 * sigma)
            report.ensemble_ok = false;
    }
    return report;
}

struct PeakConsistencyReport {
    bool defective_unit_circle = false;
    Verdict peak_verdict = Verdict::inconclusive;
    Verdict mean_verdict = Verdict::inconclusive;
    bool contradiction = false;   // peaks bounded but means diverging
};

/// Cross-checks peak-sequence boundedness against sampling-time boundedness;
/// the first implying the second is the theory being probed, so a
/// contradiction signals an implementation bug (absent defective unit-circle
/// eigenvalues).
inline PeakConsistencyReport peak_consistency_check(const LtiSystem& sys,
                                                    const GilbertElliott& ch, long horizon,
                                                    long trials, std::uint64_t seed,
                                                    const EstimateOptions& options = {}) {
    PeakConsistencyReport report;
    report.defective_unit_circle = has_defective_unit_circle_eigenvalue(sys.a);
    const EnsembleEstimate est = estimate(sys, ch, horizon, trials, seed, options);
    report.mean_verdict = est.verdict;

    // Peak curve classification over indices common to most trials.
    std::vector<double> log_peaks;
    for (std::size_t j = 0; j < est.peak_means.size(); ++j) {
        if (est.peak_counts[j] < std::max<long>(trials / 2, 1)) break;
        log_peaks.push_back(std::log(std::max(est.peak_means[j], detail::kLogFloor)));
    }
    if (est.diverged_fraction > 0.0) {
        report.peak_verdict = Verdict::diverging;
    } else if (log_peaks.size() >= 8) {
        const double slope = ls_slope(log_peaks, log_peaks.size() / 2, log_peaks.size());
        report.peak_verdict = slope > options.slope_tolerance  ? Verdict::diverging
                              : slope >= -options.slope_tolerance ? Verdict::bounded
                                                                  : Verdict::inconclusive;
    }
    report.contradiction = !report.defective_unit_circle &&
                           report.peak_verdict == Verdict::bounded &&
                           report.mean_verdict == Verdict::diverging;
    return report;
}

inline void write_estimate_csv(std::ostream& out, const EnsembleEstimate& est) {
    out << "k,mean_norm,diverged_fraction\n";
    char a[64], b[64];
    for (long k = 1; k <= est.horizon; ++k) {
        std::snprintf(a, sizeof a, "%.17g", est.mean_norms[static_cast<std::size_t>(k - 1)]);
        std::snprintf(b, sizeof b, "%.17g", est.diverged_by_step[static_cast<std::size_t>(k - 1)]);
        out << k << ',' << a << ',' << b << '\n';
    }
}

inline void write_sweep_csv(std::ostream& out, const std::vector<CurvePoint>& points) {
    out << "p,q,verdict,slope\n";
    char a[64], b[64], c[64];
    for (const auto& point : points) {
        std::snprintf(a, sizeof a, "%.17g", point.p);
        std::snprintf(b, sizeof b, "%.17g", point.q);
        std::snprintf(c, sizeof c, "%.17g", point.slope);
        out << a << ',' << b << ',' << to_string(point.verdict) << ',' << c << '\n';
    }
}

} // namespace gekf

#endif
