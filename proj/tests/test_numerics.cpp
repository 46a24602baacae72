#include <catch2/catch_amalgamated.hpp>

#include <cmath>

#include "gekf/filter.hpp"
#include "gekf/numerics.hpp"
#include "gekf/rng.hpp"
#include "gekf/verify.hpp"

using gekf::Matrix;
using gekf::Vector;

namespace {

Matrix example1_a() { return (Matrix(2, 2) << 1.3, 0.3, 0.0, 1.2).finished(); }

} // namespace

TEST_CASE("kronecker product") {
    const Matrix i2 = Matrix::Identity(2, 2);
    REQUIRE(gekf::kron(i2, i2) == Matrix::Identity(4, 4));

    Matrix d = Matrix::Zero(2, 2);
    d.diagonal() << 2.0, 1.0;
    Matrix want = Matrix::Zero(4, 4);
    want.diagonal() << 4.0, 2.0, 2.0, 1.0;
    REQUIRE(gekf::kron(d, d) == want);

    const Matrix a = example1_a();
    REQUIRE_THAT(gekf::spectral_radius(gekf::kron(a, a)).radius,
                 Catch::Matchers::WithinAbs(1.69, 1e-12));
}

TEST_CASE("vectorization stacks columns") {
    const Matrix x = (Matrix(2, 2) << 1, 2, 3, 4).finished();
    const Vector v = gekf::vec(x);
    REQUIRE(v(0) == 1);
    REQUIRE(v(1) == 3);
    REQUIRE(v(2) == 2);
    REQUIRE(v(3) == 4);
    REQUIRE(gekf::unvec(v, 2, 2) == x);

    gekf::Rng rng(42);
    for (int trial = 0; trial < 10; ++trial) {
        const Matrix a = gekf::testutil::random_matrix(rng, 2, 2);
        const Matrix m = gekf::testutil::random_matrix(rng, 2, 2);
        const Matrix b = gekf::testutil::random_matrix(rng, 2, 2);
        const Vector lhs = gekf::vec(a * m * b);
        const Vector rhs = gekf::kron(b.transpose(), a) * gekf::vec(m);
        REQUIRE((lhs - rhs).norm() <= 1e-12 * std::max(1.0, lhs.norm()));

        const Matrix x3 = gekf::testutil::random_matrix(rng, 3, 3);
        REQUIRE(gekf::unvec(gekf::vec(x3), 3, 3) == x3);
    }
    REQUIRE_THROWS_AS(gekf::unvec(Vector::Zero(5), 2, 2), std::invalid_argument);
}

TEST_CASE("spectral radius of general real matrices") {
    REQUIRE_THAT(gekf::spectral_radius(example1_a()).radius,
                 Catch::Matchers::WithinAbs(1.3, 1e-9));
    REQUIRE(gekf::spectral_radius(Matrix::Zero(3, 3)).radius == 0.0);

    // companion matrix of z^2 - z - 1; dominant root is the golden ratio
    const Matrix companion = (Matrix(2, 2) << 1, 1, 1, 0).finished();
    const double golden = 0.5 * (1.0 + std::sqrt(5.0));
    REQUIRE_THAT(gekf::spectral_radius(companion).radius,
                 Catch::Matchers::WithinAbs(golden, 1e-12));

    REQUIRE_THROWS_AS(gekf::spectral_radius(Matrix::Zero(2, 3)), std::invalid_argument);
}

TEST_CASE("weighted lyapunov solver") {
    // scalar contraction: F = 0.75 F + 0.75, fixed point 3
    const Matrix a = Matrix::Constant(1, 1, std::sqrt(1.5));
    const Matrix x = Matrix::Identity(1, 1);
    const Matrix phi = gekf::lyapunov_solve(a, 0.5, x);
    REQUIRE_THAT(phi(0, 0), Catch::Matchers::WithinAbs(3.0, 1e-9));

    // hand iteration reaches the same point
    double iterated = 0.0;
    for (int t = 0; t < 400; ++t) iterated = 0.75 * iterated + 0.75;
    REQUIRE_THAT(phi(0, 0), Catch::Matchers::WithinAbs(iterated, 1e-9));

    REQUIRE(gekf::lyapunov_solve(a, 0.5, Matrix::Zero(1, 1)).norm() == 0.0);

    const Matrix a1 = example1_a();
    const Matrix sol = gekf::lyapunov_solve(a1, 0.65, Matrix::Identity(2, 2));
    const Matrix residual =
        sol - 0.35 * a1.transpose() * sol * a1 - 0.65 * a1.transpose() * a1;
    REQUIRE(residual.norm() <= 1e-9 * sol.norm());
    REQUIRE(gekf::min_eigenvalue(sol) > 0.0);

    gekf::Rng rng(7);
    for (int trial = 0; trial < 10; ++trial) {
        const Matrix psd = gekf::testutil::random_psd(rng, 3);
        Matrix base = gekf::testutil::random_matrix(rng, 3, 3);
        base *= 1.1 / gekf::spectral_radius(base).radius;
        const Matrix out = gekf::lyapunov_solve(base, 0.7, psd);
        REQUIRE(gekf::min_eigenvalue(out) >= -1e-9 * std::max(1.0, out.norm()));
    }

    // contraction precondition: rho(A)^2 (1-q) >= 1
    REQUIRE_THROWS_AS(gekf::lyapunov_solve(Matrix::Constant(1, 1, 2.0), 0.5, x),
                      std::invalid_argument);
}

TEST_CASE("steady-state covariance solver") {
    const Matrix a = Matrix::Constant(1, 1, 2.0);
    const Matrix c = Matrix::Constant(1, 1, 1.0);
    const Matrix one = Matrix::Identity(1, 1);
    const auto sol = gekf::dare_solve(a, c, one, one);
    REQUIRE_THAT(sol.covariance(0, 0), Catch::Matchers::WithinAbs(2.0 + std::sqrt(5.0), 1e-8));
    const double closed = std::abs(2.0 + sol.gain(0, 0));
    REQUIRE_THAT(closed, Catch::Matchers::WithinAbs(0.38196601125, 1e-8));

    const gekf::LtiSystem ex1 = gekf::testutil::example_one();
    const auto sol1 = gekf::dare_solve(ex1.a, ex1.c, ex1.q_cov, ex1.r_cov);
    const Matrix expected =
        (Matrix(2, 2) << 15.873320538466997, -18.062971853845468, -18.062971853845468,
         24.939195345523334)
            .finished();
    REQUIRE((sol1.covariance - expected).norm() <= 1e-6 * expected.norm());
    const Matrix reapplied = gekf::riccati_map(ex1, sol1.covariance);
    REQUIRE((reapplied - sol1.covariance).norm() <= 1e-8 * sol1.covariance.norm());
    REQUIRE(gekf::spectral_radius(ex1.a + sol1.gain * ex1.c).radius < 1.0);
}

TEST_CASE("positive semidefinite square root") {
    REQUIRE(gekf::psd_sqrt(Matrix::Identity(3, 3)) == Matrix::Identity(3, 3));

    Matrix d = Matrix::Zero(2, 2);
    d.diagonal() << 4.0, 9.0;
    Matrix want = Matrix::Zero(2, 2);
    want.diagonal() << 2.0, 3.0;
    REQUIRE((gekf::psd_sqrt(d) - want).norm() <= 1e-12);

    gekf::Rng rng(11);
    for (int trial = 0; trial < 10; ++trial) {
        const Matrix x = gekf::testutil::random_psd(rng, 4);
        const Matrix s = gekf::psd_sqrt(x);
        REQUIRE((s * s - x).norm() <= 1e-10 * std::max(1.0, x.norm()));
        REQUIRE((s - s.transpose()).norm() <= 1e-12 * std::max(1.0, s.norm()));
    }

    REQUIRE_THROWS_AS(gekf::psd_sqrt(-Matrix::Identity(2, 2)), std::invalid_argument);
    REQUIRE_THROWS_AS(gekf::psd_sqrt((Matrix(2, 2) << 0, 1, 0, 0).finished()),
                      std::invalid_argument);
}
