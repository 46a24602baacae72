#ifndef GEKF_NUMERICS_HPP
#define GEKF_NUMERICS_HPP

#include <Eigen/Dense>
#include <cmath>
#include <limits>
#include <sstream>
#include <stdexcept>
#include <string>

namespace gekf {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

struct SpectralResult {
    double radius = 0.0;
    double dominant_eigenvalue_modulus_tolerance = 0.0;
};

inline void require_finite(const Matrix& x, const char* what) {
    if (!x.allFinite()) throw std::invalid_argument(std::string(what) + ": non-finite entries");
}

inline Matrix symmetrized(const Matrix& x) { return 0.5 * (x + x.transpose()); }

/// Kronecker product, blocks a(i,j) * b.
inline Matrix kron(const Matrix& a, const Matrix& b) {
    Matrix out(a.rows() * b.rows(), a.cols() * b.cols());
    for (Eigen::Index i = 0; i < a.rows(); ++i)
        for (Eigen::Index j = 0; j < a.cols(); ++j)
            out.block(i * b.rows(), j * b.cols(), b.rows(), b.cols()) = a(i, j) * b;
    return out;
}

/// Column-stacking vectorization.
inline Vector vec(const Matrix& x) {
    return Eigen::Map<const Vector>(x.data(), x.size());
}

inline Matrix unvec(const Vector& v, Eigen::Index rows, Eigen::Index cols) {
    if (v.size() != rows * cols)
        throw std::invalid_argument("unvec: vector length does not match rows*cols");
    return Eigen::Map<const Matrix>(v.data(), rows, cols);
}

/// Largest eigenvalue modulus of a general square real matrix.
inline SpectralResult spectral_radius(const Matrix& x) {
    if (x.rows() != x.cols()) throw std::invalid_argument("spectral_radius: matrix not square");
    require_finite(x, "spectral_radius");
    if (x.size() == 0) return {0.0, 0.0};
    Eigen::EigenSolver<Matrix> solver(x, /*computeEigenvectors=*/false);
    if (solver.info() != Eigen::Success) {
        std::ostringstream msg;
        msg << "spectral_radius: QR iteration did not converge for a " << x.rows() << "x"
            << x.cols() << " matrix";
        throw std::runtime_error(msg.str());
    }
    SpectralResult result;
    result.radius = solver.eigenvalues().cwiseAbs().maxCoeff();
    result.dominant_eigenvalue_modulus_tolerance =
        std::numeric_limits<double>::epsilon() * std::sqrt(double(x.rows())) *
        std::max(1.0, x.norm());
    return result;
}

/// Solves F = (1-q) A' F A + q A' X A through the n^2-dimensional linear
/// system; exact at these problem sizes. Requires (1-q) rho(A)^2 < 1.
inline Matrix lyapunov_solve(const Matrix& a, double q_weight, const Matrix& x) {
    if (a.rows() != a.cols() || x.rows() != x.cols() || a.rows() != x.rows())
        throw std::invalid_argument("lyapunov_solve: dimension mismatch");
    if (q_weight <= 0.0 || q_weight >= 1.0)
        throw std::invalid_argument("lyapunov_solve: weight outside (0,1)");
    const double contraction = (1.0 - q_weight) * std::pow(spectral_radius(a).radius, 2);
    if (contraction >= 1.0) {
        std::ostringstream msg;
        msg << "lyapunov_solve: (1-q) rho(A)^2 = " << contraction << " >= 1, no PSD solution";
        throw std::invalid_argument(msg.str());
    }
    const Eigen::Index n = a.rows();
    const Matrix at = a.transpose();
    const Matrix system = Matrix::Identity(n * n, n * n) - (1.0 - q_weight) * kron(at, at);
    Eigen::PartialPivLU<Matrix> lu(system);
    const Matrix rhs = q_weight * at * x * a;
    Matrix solution = symmetrized(unvec(lu.solve(vec(rhs)), n, n));
    const double residual =
        (solution - (1.0 - q_weight) * at * solution * a - rhs).norm();
    if (!solution.allFinite() || residual > 1e-9 * std::max(1.0, solution.norm()))
        throw std::runtime_error("lyapunov_solve: singular system or residual above 1e-9");
    return solution;
}

/// Symmetric PSD square root via spectral decomposition.
inline Matrix psd_sqrt(const Matrix& x) {
    if (x.rows() != x.cols()) throw std::invalid_argument("psd_sqrt: matrix not square");
    if ((x - x.transpose()).norm() > 1e-10 * std::max(1.0, x.norm()))
        throw std::invalid_argument("psd_sqrt: matrix not symmetric");
    Eigen::SelfAdjointEigenSolver<Matrix> eig(x);
    if (eig.info() != Eigen::Success) throw std::runtime_error("psd_sqrt: eigensolver failed");
    const double scale = std::max(1.0, eig.eigenvalues().cwiseAbs().maxCoeff());
    Vector roots = eig.eigenvalues();
    for (Eigen::Index i = 0; i < roots.size(); ++i) {
        if (roots[i] < -1e-10 * scale)
            throw std::invalid_argument("psd_sqrt: negative eigenvalue beyond tolerance");
        roots[i] = std::sqrt(std::max(roots[i], 0.0));
    }
    return symmetrized(eig.eigenvectors() * roots.asDiagonal() * eig.eigenvectors().transpose());
}

/// Smallest eigenvalue of the symmetrized matrix; PSD-cone order checks.
inline double min_eigenvalue(const Matrix& x) {
    Eigen::SelfAdjointEigenSolver<Matrix> eig(symmetrized(x));
    return eig.eigenvalues().minCoeff();
}

struct DareSolution {
    Matrix covariance;   // fixed point of the arrival update
    Matrix gain;         // stabilizing gain, -A P C' (C P C' + R)^-1
    int iterations = 0;
    double residual = 0.0;
};

/// Fixed-point iteration of the arrival update from the identity, with
/// optional damping. Convergence is guaranteed for observable (C, A) and
/// controllable (A, Q^1/2).
inline DareSolution dare_solve(const Matrix& a, const Matrix& c, const Matrix& q,
                               const Matrix& r, double damping = 1.0,
                               int max_iterations = 200000) {
    const Eigen::Index n = a.rows();
    if (c.cols() != n || q.rows() != n || q.cols() != n || r.rows() != c.rows() ||
        r.cols() != c.rows())
        throw std::invalid_argument("dare_solve: dimension mismatch");
    Matrix p = Matrix::Identity(n, n);
    auto step = [&](const Matrix& x) {
        const Matrix innovation = c * x * c.transpose() + r;
        const Matrix cross = a * x * c.transpose();
        return symmetrized(a * x * a.transpose() + q -
                           cross * innovation.ldlt().solve(cross.transpose()));
    };
    int iterations = 0;
    for (; iterations < max_iterations; ++iterations) {
        const Matrix next = (1.0 - damping) * p + damping * step(p);
        const double delta = (next - p).norm();
        p = next;
        if (delta < 1e-12 * std::max(1.0, p.norm())) break;
    }
    DareSolution result;
    result.covariance = p;
    result.iterations = iterations + 1;
    result.residual = (step(p) - p).norm();
    if (result.residual > 1e-8 * std::max(1.0, p.norm())) {
        std::ostringstream msg;
        msg << "dare_solve: no convergence after " << result.iterations
            << " iterations, residual " << result.residual;
        throw std::runtime_error(msg.str());
    }
    const Matrix innovation = c * p * c.transpose() + r;
    result.gain = -(a * p * c.transpose()) * innovation.ldlt().solve(
                      Matrix::Identity(c.rows(), c.rows()));
    return result;
}

} // namespace gekf

#endif
