#ifndef GEKF_STABILITY_HPP
#define GEKF_STABILITY_HPP

#include <cmath>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "gekf/channel.hpp"
#include "gekf/model.hpp"
#include "gekf/numerics.hpp"
#include "gekf/optim.hpp"
#include "gekf/rng.hpp"

namespace gekf {

// Feasibility margin on spectral-radius tests, to avoid boundary flapping.
inline constexpr double kRadiusMargin = 1e-9;

/// One gain block per horizon i = 1 .. I_o - 1; block i is n x (i m).
struct GainSet {
    std::vector<Matrix> blocks;

    bool empty() const { return blocks.empty(); }
};

struct NecessaryCheck {
    bool ok = false;
    double value = 0.0;  // rho(A)^2 (1 - q)
};

/// Necessary condition for mean-square stability: rho(A)^2 (1-q) < 1.
inline NecessaryCheck necessary_check(const LtiSystem& sys, double q) {
    NecessaryCheck check;
    check.value = std::pow(spectral_radius(sys.a).radius, 2) * (1.0 - q);
    check.ok = check.value < 1.0;
    return check;
}

struct ClosedFormCheck {
    bool ok = false;
    double lhs = 0.0;
    double rhs = 0.0;
};

/// Closed-form sufficient condition
///   p q r^2 sum_{i=1}^{I_o-1} r^{2i} (1-p)^{i-1}  <  1 - r^2 (1-q),
/// with r the spectral radius of A. Zero-gain specialization of the
/// spectral-radius test below.
inline ClosedFormCheck closed_form_check(const LtiSystem& sys, double p, double q) {
    const double r2 = std::pow(spectral_radius(sys.a).radius, 2);
    const int io = observability_index(sys);
    ClosedFormCheck check;
    check.rhs = 1.0 - r2 * (1.0 - q);
    double sum = 0.0;
    double r_power = 1.0, loss_power = 1.0;
    for (int i = 1; i <= io - 1; ++i) {
        r_power *= r2;
        sum += r_power * loss_power;
        loss_power *= 1.0 - p;
    }
    check.lhs = p * q * r2 * sum;
    check.ok = check.rhs > 0.0 && check.lhs < check.rhs;
    return check;
}

/// Largest p for which the closed-form condition holds at this q, by
/// bisection to 1e-6. Returns 1 when it holds on the whole range.
inline double closed_form_max_p(const LtiSystem& sys, double q, double tol = 1e-6) {
    if (!necessary_check(sys, q).ok) return 0.0;
    if (observability_index(sys) == 1) return 1.0;
    auto holds = [&](double p) { return closed_form_check(sys, p, q).ok; };
    if (holds(1.0 - tol)) return 1.0;
    double lo = 0.0, hi = 1.0;
    while (hi - lo > tol) {
        const double mid = 0.5 * (lo + hi);
        (holds(mid) ? lo : hi) = mid;
    }
    return lo;
}

/// The n^2 x n^2 matrix whose spectral radius below one certifies
/// peak-covariance stability:
///   q p (I - (1-q) A(x)A)^-1 (A(x)A) sum_i (M_i (x) M_i)(1-p)^{i-1},
/// M_i = A^i + K^(i) C^(i). The resolvent form avoids inverting A(x)A and
/// agrees with the series expansion whenever rho(A)^2 (1-q) < 1.
inline Matrix peak_transfer_matrix(const LtiSystem& sys, const StackedMatrices& stacks,
                                   const GainSet& gains, double p, double q) {
    const Eigen::Index n = sys.state_dim();
    if (!necessary_check(sys, q).ok)
        throw std::invalid_argument("peak_transfer_matrix: rho(A)^2 (1-q) >= 1, resolvent missing");
    if (static_cast<int>(gains.blocks.size()) != stacks.horizons())
        throw std::invalid_argument("peak_transfer_matrix: gain count does not match horizons");
    if (stacks.horizons() == 0) return Matrix::Zero(n * n, n * n);

    Matrix weighted_sum = Matrix::Zero(n * n, n * n);
    Matrix a_power = Matrix::Identity(n, n);
    double loss_power = 1.0;
    for (int i = 1; i <= stacks.horizons(); ++i) {
        a_power = sys.a * a_power;
        const Matrix closed = a_power + gains.blocks[i - 1] * stacks.c_stack[i - 1];
        weighted_sum += loss_power * kron(closed, closed);
        loss_power *= 1.0 - p;
    }
    const Matrix a_kron = kron(sys.a, sys.a);
    const Matrix resolvent = Matrix::Identity(n * n, n * n) - (1.0 - q) * a_kron;
    return q * p * resolvent.partialPivLu().solve(a_kron * weighted_sum);
}

/// Exact zero-gain spectral radius of the matrix above, from the dominant
/// eigenvalue of A alone. Independent route used to cross-check the
/// eigensolver.
inline double peak_radius_zero_gain(const LtiSystem& sys, int io, double p, double q) {
    const double r2 = std::pow(spectral_radius(sys.a).radius, 2);
    const double denom = 1.0 - r2 * (1.0 - q);
    if (denom <= 0.0)
        throw std::invalid_argument("peak_radius_zero_gain: rho(A)^2 (1-q) >= 1");
    double sum = 0.0, r_power = 1.0, loss_power = 1.0;
    for (int j = 1; j <= io - 1; ++j) {
        r_power *= r2;
        sum += r_power * loss_power * p;
        loss_power *= 1.0 - p;
    }
    return q * r2 / denom * sum;
}

/// PSD-cone linear operator whose contraction is equivalent to the spectral
/// test: p sum_i (1-p)^{i-1} M_i' F_X M_i with F_X the weighted Lyapunov
/// solution for X.
inline Matrix apply_peak_operator(const LtiSystem& sys, const StackedMatrices& stacks,
                                  const GainSet& gains, const Matrix& x, double p, double q) {
    const Eigen::Index n = sys.state_dim();
    if (static_cast<int>(gains.blocks.size()) != stacks.horizons())
        throw std::invalid_argument("apply_peak_operator: gain count does not match horizons");
    if (stacks.horizons() == 0) return Matrix::Zero(n, n);
    const Matrix phi = lyapunov_solve(sys.a, q, x);
    Matrix result = Matrix::Zero(n, n);
    Matrix a_power = Matrix::Identity(n, n);
    double loss_power = 1.0;
    for (int i = 1; i <= stacks.horizons(); ++i) {
        a_power = sys.a * a_power;
        const Matrix closed = a_power + gains.blocks[i - 1] * stacks.c_stack[i - 1];
        result += p * loss_power * closed.transpose() * phi * closed;
        loss_power *= 1.0 - p;
    }
    return symmetrized(result);
}

struct SearchBudget {
    int restarts = 8;
    int evaluations_per_restart = 2000;
};

struct GainSearchResult {
    GainSet gains;
    double radius = 0.0;
    bool success = false;       // radius < 1 - margin
    int evaluations = 0;
    bool improved_over_zero = true;
};

namespace detail {

inline GainSet unpack_gains(const Vector& packed, Eigen::Index n, Eigen::Index m, int horizons) {
    GainSet gains;
    Eigen::Index offset = 0;
    for (int i = 1; i <= horizons; ++i) {
        gains.blocks.push_back(unvec(packed.segment(offset, n * i * m), n, i * m));
        offset += n * i * m;
    }
    return gains;
}

inline Vector pack_gains(const GainSet& gains) {
    Eigen::Index total = 0;
    for (const auto& block : gains.blocks) total += block.size();
    Vector packed(total);
    Eigen::Index offset = 0;
    for (const auto& block : gains.blocks) {
        packed.segment(offset, block.size()) = vec(block);
        offset += block.size();
    }
    return packed;
}

/// Stacked gain whose closed map equals (A + K~ C)^i, built from a
/// one-step stabilizing gain by the telescoping identity.
inline GainSet stacked_from_one_step(const LtiSystem& sys, const Matrix& one_step_gain,
                                     int horizons) {
    const Eigen::Index n = sys.state_dim(), m = sys.measurement_dim();
    const Matrix closed = sys.a + one_step_gain * sys.c;
    GainSet gains;
    for (int i = 1; i <= horizons; ++i) {
        Matrix block(n, i * m);
        Matrix closed_power = Matrix::Identity(n, n);
        for (int j = i; j >= 1; --j) {
            block.middleCols((j - 1) * m, m) = closed_power * one_step_gain;
            closed_power = closed * closed_power;
        }
        gains.blocks.push_back(std::move(block));
    }
    return gains;
}

} // namespace detail

/// Searches for a gain set driving the spectral radius of the transfer
/// matrix below one. Multi-start Nelder-Mead over the packed gain entries;
/// starting points are the zero gain, the steady-state one-step gain lifted
/// to every horizon, and seeded random perturbations of both. Deterministic
/// for fixed (seed, budget). When `stop_at_feasible` is set the search
/// returns as soon as a comfortably feasible point is found.
inline GainSearchResult find_gain(const LtiSystem& sys, const StackedMatrices& stacks, double p,
                                  double q, const SearchBudget& budget = {},
                                  std::uint64_t seed = 1, bool stop_at_feasible = false,
                                  const std::vector<GainSet>& extra_starts = {}) {
    const Eigen::Index n = sys.state_dim(), m = sys.measurement_dim();
    GainSearchResult result;
    if (stacks.horizons() == 0) {
        result.radius = 0.0;
        result.success = true;
        return result;
    }
    if (!necessary_check(sys, q).ok)
        throw std::invalid_argument("find_gain: necessary condition fails, test undefined");

    auto radius_of = [&](const Vector& packed) {
        const GainSet gains = detail::unpack_gains(packed, n, m, stacks.horizons());
        const Matrix transfer = peak_transfer_matrix(sys, stacks, gains, p, q);
        if (!transfer.allFinite()) return std::numeric_limits<double>::infinity();
        return spectral_radius(transfer).radius;
    };

    std::vector<Vector> starts;
    GainSet zero;
    for (int i = 1; i <= stacks.horizons(); ++i) zero.blocks.push_back(Matrix::Zero(n, i * m));
    starts.push_back(detail::pack_gains(zero));

    std::optional<Vector> steady_start;
    try {
        const DareSolution dare = dare_solve(sys.a, sys.c, sys.q_cov, sys.r_cov);
        steady_start = detail::pack_gains(
            detail::stacked_from_one_step(sys, dare.gain, stacks.horizons()));
        starts.push_back(*steady_start);
    } catch (const std::exception&) {
        // steady-state gain unavailable; remaining starts still cover the search
    }
    for (const auto& extra : extra_starts) starts.push_back(detail::pack_gains(extra));

    const double reference_scale =
        steady_start ? std::max(1.0, steady_start->cwiseAbs().maxCoeff()) : 1.0;
    Rng rng(derive_seed(seed, 0));
    std::normal_distribution<double> noise(0.0, reference_scale);
    const std::size_t base_count = std::min<std::size_t>(starts.size(), 2);
    while (static_cast<int>(starts.size()) < std::max(budget.restarts, 1)) {
        Vector random_start = starts[starts.size() % base_count].eval();
        for (Eigen::Index i = 0; i < random_start.size(); ++i) random_start[i] += noise(rng);
        starts.push_back(std::move(random_start));
    }

    const double zero_radius = radius_of(starts[0]);
    const double good_enough =
        stop_at_feasible ? 1.0 - 1e-6 : -std::numeric_limits<double>::infinity();

    Vector best = starts[0];
    double best_radius = zero_radius;
    result.evaluations = 1;
    for (const auto& start : starts) {
        const SimplexResult run =
            nelder_mead(radius_of, start, budget.evaluations_per_restart, 0.5, good_enough);
        result.evaluations += run.evaluations;
        if (run.value < best_radius) {
            best_radius = run.value;
            best = run.best;
        }
        if (stop_at_feasible && best_radius <= good_enough) break;
    }

    result.gains = detail::unpack_gains(best, n, m, stacks.horizons());
    result.radius = best_radius;
    result.success = best_radius < 1.0 - kRadiusMargin;
    result.improved_over_zero = best_radius <= zero_radius;
    return result;
}

struct LowerBoundResult {
    double value = 0.0;
    bool feasible_at_one = false;    // feasible over the whole rate range
    bool bracket_ok = true;          // low endpoint feasible, high endpoint not
    bool monotone_ok = true;         // no feasible probe above the bracket
    std::vector<std::string> notes;
};

/// Largest failure rate certified by the spectral-radius test for this
/// recovery rate, by bisection; the result lower-bounds the critical rate.
inline LowerBoundResult critical_rate_lower_bound(const LtiSystem& sys,
                                                  const StackedMatrices& stacks, double q,
                                                  double tol = 1e-3,
                                                  const SearchBudget& budget = {},
                                                  std::uint64_t seed = 1) {
    if (!necessary_check(sys, q).ok)
        throw std::invalid_argument(
            "critical_rate_lower_bound: necessary condition rho(A)^2 (1-q) < 1 fails");
    LowerBoundResult result;
    if (stacks.horizons() == 0) {
        result.value = 1.0;
        result.feasible_at_one = true;
        return result;
    }

    std::vector<GainSet> warm;
    auto feasible = [&](double p) {
        const GainSearchResult search =
            find_gain(sys, stacks, p, q, budget, seed, /*stop_at_feasible=*/true, warm);
        if (search.success) {
            warm.clear();
            warm.push_back(search.gains);
        }
        return search.success;
    };

    const double lo_probe = std::min(1e-4, tol);
    if (!feasible(lo_probe)) {
        result.bracket_ok = false;
        result.value = 0.0;
        result.notes.push_back(
            "infeasible even as p -> 0+; numerical trouble, the test should pass there");
        return result;
    }
    const double hi_probe = 1.0 - 1e-6;
    if (feasible(hi_probe)) {
        result.value = 1.0;
        result.feasible_at_one = true;
        return result;
    }

    double lo = lo_probe, hi = hi_probe;
    while (hi - lo > tol) {
        const double mid = 0.5 * (lo + hi);
        (feasible(mid) ? lo : hi) = mid;
    }
    result.value = lo;

    for (double frac : {0.25, 0.5, 0.75}) {
        const double probe = hi + (1.0 - hi) * frac;
        if (probe <= hi || probe >= 1.0) continue;
        if (feasible(probe)) {
            result.monotone_ok = false;
            result.notes.push_back("feasible point found above the bisection bracket at p = " +
                                   std::to_string(probe) + "; feasibility not monotone here");
            break;
        }
    }
    return result;
}

struct StabilityReport {
    ModelDiagnostics diagnostics;
    double p = 0.0;
    double q = 0.0;
    NecessaryCheck necessary;
    ClosedFormCheck closed_form;
    double closed_form_max_p = 0.0;
    bool spectral_test_ok = false;
    GainSet best_gain;
    double best_radius = std::numeric_limits<double>::infinity();
    double p_lower_bound = 0.0;
    bool mean_square_certified = false;  // p below the certified lower bound
    std::vector<std::string> notes;
};

/// Runs every decision procedure at one (p, q) operating point.
inline StabilityReport full_report(const LtiSystem& sys, double p, double q,
                                   const SearchBudget& budget = {}, std::uint64_t seed = 1) {
    check_rates(p, q);
    StabilityReport report;
    report.p = p;
    report.q = q;
    report.diagnostics = validate(sys);
    if (!report.diagnostics.observable)
        throw std::invalid_argument("full_report: (C, A) must be observable");
    if (!report.diagnostics.a1_satisfied)
        report.notes.push_back(
            "A has eigenvalues inside the unit circle; conditions stay sufficient but "
            "conservative (supply the unstable subsystem for sharper results)");
    if (has_defective_unit_circle_eigenvalue(sys.a))
        report.notes.push_back(
            "A has a defective eigenvalue on the unit circle; peak-covariance stability does "
            "not imply mean-square stability here, only the lower-bound route applies");

    report.necessary = necessary_check(sys, q);
    report.closed_form = closed_form_check(sys, p, q);
    report.closed_form_max_p = gekf::closed_form_max_p(sys, q);

    if (report.necessary.ok) {
        const StackedMatrices stacks = build_stacks(sys);
        const GainSearchResult search = find_gain(sys, stacks, p, q, budget, seed);
        report.spectral_test_ok = search.success;
        report.best_gain = search.gains;
        report.best_radius = search.radius;
        if (!search.improved_over_zero)
            report.notes.push_back("gain search exhausted its budget without improving on K = 0");

        const LowerBoundResult bound = critical_rate_lower_bound(sys, stacks, q, 1e-3, budget, seed);
        report.p_lower_bound = bound.value;
        report.mean_square_certified = p < bound.value || bound.feasible_at_one;
        for (const auto& note : bound.notes) report.notes.push_back(note);
    } else {
        report.notes.push_back("necessary condition fails: not mean-square stable for some "
                               "initial covariance, sufficient tests skipped");
    }
    return report;
}

} // namespace gekf

#endif
