#ifndef GEKF_CHANNEL_HPP
#define GEKF_CHANNEL_HPP

#include <cstdint>
#include <ostream>
#include <stdexcept>
#include <utility>
#include <vector>

#include "gekf/rng.hpp"

namespace gekf {

/// Two-state Markov packet-loss channel. State 1 = packet arrives, 0 = lost.
/// p is the failure rate P(next=0 | now=1), q the recovery rate
/// P(next=1 | now=0); both must lie strictly inside (0,1).
struct GilbertElliott {
    double p = 0.0;
    double q = 0.0;
    int initial_state = 1;
};

inline void check_rates(double p, double q) {
    if (!(p > 0.0 && p < 1.0 && q > 0.0 && q < 1.0))
        throw std::invalid_argument("channel: p and q must lie strictly inside (0,1)");
}

/// Stationary law (P(state=1), P(state=0)) = (q/(p+q), p/(p+q)).
inline std::pair<double, double> stationary(const GilbertElliott& ch) {
    check_rates(ch.p, ch.q);
    return {ch.q / (ch.p + ch.q), ch.p / (ch.p + ch.q)};
}

/// A realized loss sequence gamma_1..gamma_T together with its alternation
/// structure: burst_starts[j] is the first lost step of burst j+1,
/// recovery_times[j] the first arrival after it. good_run_lengths and
/// loss_burst_lengths are the sojourn times between them, with the
/// convention that the run preceding the first burst is measured from k=1.
struct LossTrajectory {
    std::vector<std::uint8_t> gammas;        // index k-1 holds gamma_k
    std::vector<long> burst_starts;          // tau_j, 1-based
    std::vector<long> recovery_times;        // beta_j, 1-based
    std::vector<long> good_run_lengths;      // tau_j - beta_{j-1}, beta_0 = 1
    std::vector<long> loss_burst_lengths;    // beta_j - tau_j

    long length() const { return static_cast<long>(gammas.size()); }
};

/// Derives the stopping-time structure from a raw gamma sequence.
inline LossTrajectory annotate_losses(std::vector<std::uint8_t> gammas) {
    LossTrajectory traj;
    traj.gammas = std::move(gammas);
    const long T = traj.length();
    long previous_recovery = 1;  // beta_0
    long k = 1;
    while (k <= T) {
        while (k <= T && traj.gammas[k - 1] == 1) ++k;
        if (k > T) break;
        const long tau = k;
        while (k <= T && traj.gammas[k - 1] == 0) ++k;
        if (k > T) break;  // burst not closed by a recovery inside the horizon
        const long beta = k;
        traj.burst_starts.push_back(tau);
        traj.recovery_times.push_back(beta);
        traj.good_run_lengths.push_back(tau - previous_recovery);
        traj.loss_burst_lengths.push_back(beta - tau);
        previous_recovery = beta;
    }
    return traj;
}

/// Samples gamma_1..gamma_T; gamma_1 is the configured initial state and
/// each later step follows the transition law. Identical (p, q, T, seed)
/// reproduce identical trajectories.
inline LossTrajectory sample(const GilbertElliott& ch, long length, std::uint64_t seed) {
    check_rates(ch.p, ch.q);
    if (length < 1) throw std::invalid_argument("sample: length must be at least 1");
    if (ch.initial_state != 0 && ch.initial_state != 1)
        throw std::invalid_argument("sample: initial state must be 0 or 1");
    std::vector<std::uint8_t> gammas(static_cast<std::size_t>(length));
    Rng rng(seed);
    std::uint8_t state = static_cast<std::uint8_t>(ch.initial_state);
    gammas[0] = state;
    for (long k = 1; k < length; ++k) {
        const double u = uniform01(rng);
        state = state == 1 ? (u < ch.p ? 0 : 1) : (u < ch.q ? 1 : 0);
        gammas[static_cast<std::size_t>(k)] = state;
    }
    return annotate_losses(std::move(gammas));
}

/// Joint state of two coupled loss chains; z follows the higher failure
/// rate, z_tilde the lower one, and z <= z_tilde pathwise.
struct CoupledState {
    std::uint8_t z = 1;
    std::uint8_t z_tilde = 1;
};

/// Monotone coupling of two channels sharing recovery rate q with failure
/// rates p1 > p2. Only the states (0,0), (0,1), (1,1) are reachable. The
/// transition table is the unique one consistent with both marginals:
///   from (1,1): (0,0) w.p. p2, (0,1) w.p. p1-p2, (1,1) w.p. 1-p1
///   from (0,0): (1,1) w.p. q,  (0,0) w.p. 1-q
///   from (0,1): (1,1) w.p. q,  (0,0) w.p. p2,    (0,1) w.p. 1-q-p2
/// which requires p2 + q <= 1.
inline std::vector<CoupledState> coupled_sample(double p1, double p2, double q, long length,
                                                std::uint64_t seed) {
    check_rates(p1, q);
    check_rates(p2, q);
    if (!(p2 < p1)) throw std::invalid_argument("coupled_sample: requires p2 < p1");
    if (p2 + q > 1.0)
        throw std::invalid_argument("coupled_sample: requires p2 + q <= 1, no coupling otherwise");
    if (length < 1) throw std::invalid_argument("coupled_sample: length must be at least 1");

    std::vector<CoupledState> states(static_cast<std::size_t>(length));
    Rng rng(seed);
    CoupledState s{1, 1};
    states[0] = s;
    for (long k = 1; k < length; ++k) {
        const double u = uniform01(rng);
        if (s.z == 1) {                      // (1,1)
            if (u < p2) s = {0, 0};
            else if (u < p1) s = {0, 1};
            else s = {1, 1};
        } else if (s.z_tilde == 0) {         // (0,0)
            s = u < q ? CoupledState{1, 1} : CoupledState{0, 0};
        } else {                             // (0,1)
            if (u < q) s = {1, 1};
            else if (u < q + p2) s = {0, 0};
            else s = {0, 1};
        }
        states[static_cast<std::size_t>(k)] = s;
    }
    return states;
}

inline void write_trajectory_csv(std::ostream& out, const LossTrajectory& traj) {
    out << "k,gamma\n";
    for (long k = 1; k <= traj.length(); ++k)
        out << k << ',' << int(traj.gammas[static_cast<std::size_t>(k - 1)]) << '\n';
}

inline void write_coupled_csv(std::ostream& out, const std::vector<CoupledState>& states) {
    out << "k,z,z_tilde\n";
    for (std::size_t k = 0; k < states.size(); ++k)
        out << k + 1 << ',' << int(states[k].z) << ',' << int(states[k].z_tilde) << '\n';
}

} // namespace gekf

#endif
