#ifndef GEKF_FILTER_HPP
#define GEKF_FILTER_HPP

#include <cmath>
#include <cstdio>
#include <ostream>
#include <stdexcept>
#include <vector>

#include "gekf/channel.hpp"
#include "gekf/model.hpp"
#include "gekf/numerics.hpp"

namespace gekf {

// Entries beyond this mark a trajectory as numerically diverged.
inline constexpr double kOverflowEntry = 1e300;

namespace detail {

// Extreme eigenvalues of a symmetric matrix, computed on a rescaled copy so
// that entries near the overflow horizon do not overflow inside the solver.
struct EigBounds {
    double min = 0.0;
    double max = 0.0;
};

inline EigBounds sym_eig_bounds(const Matrix& x) {
    const double scale = x.cwiseAbs().maxCoeff();
    if (scale == 0.0) return {0.0, 0.0};
    Eigen::SelfAdjointEigenSolver<Matrix> eig(x / scale, Eigen::EigenvaluesOnly);
    return {eig.eigenvalues().minCoeff() * scale, eig.eigenvalues().maxCoeff() * scale};
}

} // namespace detail

/// Induced 2-norm of a symmetric matrix, safe up to the overflow horizon.
inline double sym_norm2(const Matrix& x) {
    const auto bounds = detail::sym_eig_bounds(x);
    return std::max(std::fabs(bounds.min), std::fabs(bounds.max));
}

/// Covariance propagation when the packet is lost: A X A' + Q.
inline Matrix open_loop_map(const LtiSystem& sys, const Matrix& x) {
    return symmetrized(sys.a * x * sys.a.transpose() + sys.q_cov);
}

/// Covariance propagation when the packet arrives (one Riccati step).
inline Matrix riccati_map(const LtiSystem& sys, const Matrix& x) {
    const Matrix innovation = sys.c * x * sys.c.transpose() + sys.r_cov;
    const Matrix cross = sys.a * x * sys.c.transpose();
    return symmetrized(sys.a * x * sys.a.transpose() + sys.q_cov -
                       cross * innovation.ldlt().solve(cross.transpose()));
}

inline Matrix covariance_step(const LtiSystem& sys, const Matrix& x, int gamma) {
    if (gamma != 0 && gamma != 1) throw std::invalid_argument("covariance_step: gamma not in {0,1}");
    return gamma == 1 ? riccati_map(sys, x) : open_loop_map(sys, x);
}

/// i-step covariance map at a fixed stacked gain: the quadratic form
///   (A^i + K C^(i)) X (.)' + [A^(i) K] J_i [A^(i) K]'.
/// Minimizing over the gain recovers the i-fold Riccati map.
inline Matrix fixed_gain_map(const LtiSystem& sys, const StackedMatrices& stacks, int i,
                             const Matrix& gain, const Matrix& x) {
    if (i < 1 || i > stacks.horizons())
        throw std::invalid_argument("fixed_gain_map: horizon outside 1..I_o-1");
    const Eigen::Index n = sys.state_dim(), m = sys.measurement_dim();
    if (gain.rows() != n || gain.cols() != i * m)
        throw std::invalid_argument("fixed_gain_map: gain must be n x (i m)");
    const std::size_t idx = static_cast<std::size_t>(i - 1);
    Matrix a_power = Matrix::Identity(n, n);
    for (int t = 0; t < i; ++t) a_power = sys.a * a_power;
    const Matrix closed = a_power + gain * stacks.c_stack[idx];
    Matrix mixed(n, i * (n + m));
    mixed.leftCols(i * n) = stacks.a_stack[idx];
    mixed.rightCols(i * m) = gain;
    return symmetrized(closed * x * closed.transpose() +
                       mixed * stacks.j_mat[idx] * mixed.transpose());
}

/// Streaming covariance recursion with the divergence/truncation policy:
/// entries beyond 1e300 before a step, or a non-finite / strongly indefinite
/// update after one, stop the recursion and set the diverged flag.
class CovarianceRecursion {
public:
    explicit CovarianceRecursion(const LtiSystem& sys)
        : sys_(&sys), cov_(sys.sigma0), norm_(sym_norm2(sys.sigma0)) {}

    bool diverged() const { return diverged_; }
    const Matrix& covariance() const { return cov_; }
    double norm() const { return norm_; }

    /// Advances one step; returns false once the trajectory has diverged.
    bool step(int gamma) {
        if (diverged_) return false;
        if (cov_.cwiseAbs().maxCoeff() > kOverflowEntry) {
            diverged_ = true;
            return false;
        }
        Matrix next = covariance_step(*sys_, cov_, gamma);
        if (!next.allFinite()) {
            diverged_ = true;
            return false;
        }
        const auto bounds = detail::sym_eig_bounds(next);
        const double scale = std::max(std::fabs(bounds.max), 1.0);
        if (bounds.min < -1e-8 * scale) {
            diverged_ = true;  // innovation solve broke down at extreme scale
            return false;
        }
        cov_ = std::move(next);
        norm_ = std::max(std::fabs(bounds.min), std::fabs(bounds.max));
        return true;
    }

private:
    const LtiSystem* sys_;
    Matrix cov_;
    double norm_ = 0.0;
    bool diverged_ = false;
};

/// Covariance trajectory P_1..P_T driven by a loss sequence, with the values
/// and norms at the recovery times beta_j. If the recursion diverges at step
/// t, covs and norms hold the first t entries and `diverged` is set.
struct CovTrajectory {
    std::vector<Matrix> covs;
    std::vector<double> norms;
    std::vector<long> peak_indices;   // recovery times within the recorded range
    std::vector<double> peak_norms;
    bool diverged = false;

    long length() const { return static_cast<long>(norms.size()); }
};

/// Runs the recursion along a realized loss sequence. P_1 equals Sigma0 and
/// the arrival/loss decision at step k uses gamma_k.
inline CovTrajectory run_covariance(const LtiSystem& sys, const LossTrajectory& traj) {
    CovTrajectory out;
    const long T = traj.length();
    out.covs.reserve(static_cast<std::size_t>(T));
    out.norms.reserve(static_cast<std::size_t>(T));
    CovarianceRecursion recursion(sys);
    out.covs.push_back(recursion.covariance());
    out.norms.push_back(recursion.norm());
    for (long k = 1; k < T; ++k) {
        if (!recursion.step(traj.gammas[static_cast<std::size_t>(k - 1)])) {
            out.diverged = true;
            break;
        }
        out.covs.push_back(recursion.covariance());
        out.norms.push_back(recursion.norm());
    }
    for (std::size_t j = 0; j < traj.recovery_times.size(); ++j) {
        const long beta = traj.recovery_times[j];
        if (beta > out.length()) break;
        out.peak_indices.push_back(beta);
        out.peak_norms.push_back(out.norms[static_cast<std::size_t>(beta - 1)]);
    }
    return out;
}

inline void write_covariance_csv(std::ostream& out, const LossTrajectory& traj,
                                 const CovTrajectory& cov) {
    out << "k,gamma,norm_P\n";
    char buffer[64];
    for (long k = 1; k <= cov.length(); ++k) {
        std::snprintf(buffer, sizeof buffer, "%.17g", cov.norms[static_cast<std::size_t>(k - 1)]);
        out << k << ',' << int(traj.gammas[static_cast<std::size_t>(k - 1)]) << ',' << buffer
            << '\n';
    }
}

inline void write_peaks_csv(std::ostream& out, const CovTrajectory& cov) {
    out << "j,beta_j,norm_P_beta_j\n";
    char buffer[64];
    for (std::size_t j = 0; j < cov.peak_indices.size(); ++j) {
        std::snprintf(buffer, sizeof buffer, "%.17g", cov.peak_norms[j]);
        out << j + 1 << ',' << cov.peak_indices[j] << ',' << buffer << '\n';
    }
}

} // namespace gekf

#endif
