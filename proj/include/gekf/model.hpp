#ifndef GEKF_MODEL_HPP
#define GEKF_MODEL_HPP

#include <sstream>
#include <stdexcept>
#include <vector>

#include "gekf/numerics.hpp"

namespace gekf {

/// Discrete LTI plant x_{k+1} = A x_k + w_k observed through y_k = C x_k + v_k,
/// with process noise covariance Q, measurement noise covariance R (positive
/// definite) and initial state covariance Sigma0.
struct LtiSystem {
    Matrix a;
    Matrix c;
    Matrix q_cov;
    Matrix r_cov;
    Matrix sigma0;

    Eigen::Index state_dim() const { return a.rows(); }
    Eigen::Index measurement_dim() const { return c.rows(); }
};

struct ModelDiagnostics {
    bool observable = false;
    bool controllable = false;       // of (A, Q^1/2)
    bool a1_satisfied = false;       // every eigenvalue of A has modulus >= 1
    double spectral_radius_a = 0.0;
    int observability_index = 0;
};

/// Stacked matrices for horizons i = 1 .. I_o - 1 (empty when I_o = 1).
/// Index 0 corresponds to horizon i = 1.
struct StackedMatrices {
    int observability_index = 1;
    std::vector<Matrix> c_stack;   // [C; CA; ...; CA^{i-1}], (i m) x n
    std::vector<Matrix> a_stack;   // [A^{i-1}, ..., A, I], n x (i n)
    std::vector<Matrix> d_stack;   // strictly lower block-triangular CA powers
    std::vector<Matrix> q_stack;   // blockdiag(Q, ..., Q)
    std::vector<Matrix> r_stack;   // blockdiag(R, ..., R)
    std::vector<Matrix> j_mat;     // joint noise second-moment matrix per horizon

    int horizons() const { return observability_index - 1; }
};

namespace detail {

inline int numerical_rank(const Matrix& x, double rel_tol = 1e-10) {
    Eigen::JacobiSVD<Matrix> svd(x);
    const auto& sv = svd.singularValues();
    if (sv.size() == 0) return 0;
    const double cutoff = rel_tol * sv[0];
    int rank = 0;
    for (Eigen::Index i = 0; i < sv.size(); ++i)
        if (sv[i] > cutoff) ++rank;
    return rank;
}

inline void check_system_shapes(const LtiSystem& sys) {
    const Eigen::Index n = sys.a.rows(), m = sys.c.rows();
    if (n == 0 || sys.a.cols() != n) throw std::invalid_argument("system: A must be square");
    if (m == 0 || sys.c.cols() != n) throw std::invalid_argument("system: C must be m x n");
    if (sys.q_cov.rows() != n || sys.q_cov.cols() != n)
        throw std::invalid_argument("system: Q must be n x n");
    if (sys.r_cov.rows() != m || sys.r_cov.cols() != m)
        throw std::invalid_argument("system: R must be m x m");
    if (sys.sigma0.rows() != n || sys.sigma0.cols() != n)
        throw std::invalid_argument("system: Sigma0 must be n x n");
    require_finite(sys.a, "system A");
    require_finite(sys.c, "system C");
    require_finite(sys.q_cov, "system Q");
    require_finite(sys.r_cov, "system R");
    require_finite(sys.sigma0, "system Sigma0");
}

} // namespace detail

/// Smallest i such that [C; CA; ...; CA^{i-1}] has rank n.
inline int observability_index(const LtiSystem& sys) {
    detail::check_system_shapes(sys);
    const Eigen::Index n = sys.state_dim(), m = sys.measurement_dim();
    Matrix stack(n * m, n);
    Matrix power = Matrix::Identity(n, n);
    for (int i = 1; i <= n; ++i) {
        stack.block((i - 1) * m, 0, m, n) = sys.c * power;
        if (detail::numerical_rank(stack.topRows(i * m)) == n) return i;
        power = sys.a * power;
    }
    throw std::invalid_argument("observability_index: (C, A) is not observable");
}

/// Rank tests plus the unstable-spectrum assumption. Failure of the latter is
/// reported, not rejected; a non-PD R is a hard error.
inline ModelDiagnostics validate(const LtiSystem& sys) {
    detail::check_system_shapes(sys);
    const Eigen::Index n = sys.state_dim();

    if (min_eigenvalue(sys.r_cov) <= 0.0)
        throw std::invalid_argument("validate: R must be positive definite");
    const double q_scale = std::max(1.0, sys.q_cov.norm());
    if (min_eigenvalue(sys.q_cov) < -1e-10 * q_scale)
        throw std::invalid_argument("validate: Q must be positive semidefinite");
    const double s_scale = std::max(1.0, sys.sigma0.norm());
    if (min_eigenvalue(sys.sigma0) < -1e-10 * s_scale)
        throw std::invalid_argument("validate: Sigma0 must be positive semidefinite");

    ModelDiagnostics diag;
    diag.spectral_radius_a = spectral_radius(sys.a).radius;

    Eigen::EigenSolver<Matrix> eig(sys.a, false);
    diag.a1_satisfied = eig.eigenvalues().cwiseAbs().minCoeff() >= 1.0 - 1e-10;

    try {
        diag.observability_index = observability_index(sys);
        diag.observable = true;
    } catch (const std::invalid_argument&) {
        diag.observability_index = 0;
        diag.observable = false;
    }

    const Matrix q_root = psd_sqrt(sys.q_cov);
    Matrix ctrl(n, n * n);
    Matrix power = Matrix::Identity(n, n);
    for (Eigen::Index i = 0; i < n; ++i) {
        ctrl.block(0, i * n, n, n) = power * q_root;
        power = sys.a * power;
    }
    diag.controllable = detail::numerical_rank(ctrl) == n;
    return diag;
}

/// Builds every stacked horizon matrix used by the fixed-gain covariance map.
inline StackedMatrices build_stacks(const LtiSystem& sys) {
    StackedMatrices stacks;
    stacks.observability_index = observability_index(sys);
    const Eigen::Index n = sys.state_dim(), m = sys.measurement_dim();
    for (int i = 1; i <= stacks.horizons(); ++i) {
        Matrix c_stack(i * m, n);
        for (int j = 0; j < i; ++j) {
            Matrix power = Matrix::Identity(n, n);
            for (int t = 0; t < j; ++t) power = power * sys.a;
            c_stack.block(j * m, 0, m, n) = sys.c * power;
        }

        Matrix a_stack(n, i * n);
        Matrix power = Matrix::Identity(n, n);
        for (int j = i - 1; j >= 0; --j) {
            a_stack.block(0, j * n, n, n) = power;
            power = power * sys.a;
        }

        Matrix d_stack = Matrix::Zero(i * m, i * n);
        for (int row = 0; row < i; ++row)
            for (int col = 0; col < row; ++col) {
                Matrix p = Matrix::Identity(n, n);
                for (int t = 0; t < row - col - 1; ++t) p = p * sys.a;
                d_stack.block(row * m, col * n, m, n) = sys.c * p;
            }

        Matrix q_stack = Matrix::Zero(i * n, i * n);
        Matrix r_stack = Matrix::Zero(i * m, i * m);
        for (int j = 0; j < i; ++j) {
            q_stack.block(j * n, j * n, n, n) = sys.q_cov;
            r_stack.block(j * m, j * m, m, m) = sys.r_cov;
        }

        Matrix j_mat(i * (n + m), i * (n + m));
        j_mat.topLeftCorner(i * n, i * n) = q_stack;
        j_mat.topRightCorner(i * n, i * m) = q_stack * d_stack.transpose();
        j_mat.bottomLeftCorner(i * m, i * n) = d_stack * q_stack;
        j_mat.bottomRightCorner(i * m, i * m) = d_stack * q_stack * d_stack.transpose() + r_stack;

        stacks.c_stack.push_back(std::move(c_stack));
        stacks.a_stack.push_back(std::move(a_stack));
        stacks.d_stack.push_back(std::move(d_stack));
        stacks.q_stack.push_back(std::move(q_stack));
        stacks.r_stack.push_back(std::move(r_stack));
        stacks.j_mat.push_back(std::move(j_mat));
    }
    return stacks;
}

/// True when some eigenvalue on the unit circle has geometric multiplicity
/// below its algebraic multiplicity.
inline bool has_defective_unit_circle_eigenvalue(const Matrix& a, double unit_tol = 1e-6,
                                                 double rank_tol = 1e-8) {
    if (a.rows() != a.cols()) throw std::invalid_argument("defective test: matrix not square");
    const Eigen::Index n = a.rows();
    Eigen::EigenSolver<Matrix> eig(a, false);
    const auto values = eig.eigenvalues();
    std::vector<bool> used(static_cast<std::size_t>(n), false);
    for (Eigen::Index i = 0; i < n; ++i) {
        if (used[static_cast<std::size_t>(i)]) continue;
        const std::complex<double> lambda = values[i];
        if (std::abs(std::abs(lambda) - 1.0) > unit_tol) continue;
        int algebraic = 0;
        for (Eigen::Index j = 0; j < n; ++j) {
            if (!used[static_cast<std::size_t>(j)] && std::abs(values[j] - lambda) < unit_tol) {
                used[static_cast<std::size_t>(j)] = true;
                ++algebraic;
            }
        }
        Eigen::MatrixXcd shifted = a.cast<std::complex<double>>();
        shifted.diagonal().array() -= lambda;
        Eigen::JacobiSVD<Eigen::MatrixXcd> svd(shifted);
        const auto& sv = svd.singularValues();
        const double cutoff = rank_tol * std::max(1.0, sv[0]);
        int rank = 0;
        for (Eigen::Index j = 0; j < sv.size(); ++j)
            if (sv[j] > cutoff) ++rank;
        const int geometric = static_cast<int>(n) - rank;
        if (geometric < algebraic) return true;
    }
    return false;
}

} // namespace gekf

#endif
