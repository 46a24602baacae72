#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <filesystem>
#include <fstream>

#include "gekf/io.hpp"
#include "gekf/model.hpp"
#include "gekf/verify.hpp"

using gekf::Matrix;

TEST_CASE("validation of the shipped examples") {
    const gekf::LtiSystem ex1 = gekf::load_system(std::string(GEKF_DATA_DIR) + "/example1.json");
    const auto diag1 = gekf::validate(ex1);
    REQUIRE(diag1.observable);
    REQUIRE(diag1.controllable);
    REQUIRE(diag1.a1_satisfied);
    REQUIRE(diag1.observability_index == 2);
    REQUIRE_THAT(diag1.spectral_radius_a, Catch::Matchers::WithinAbs(1.3, 1e-9));

    const gekf::LtiSystem ex2 = gekf::load_system(std::string(GEKF_DATA_DIR) + "/example2.json");
    const auto diag2 = gekf::validate(ex2);
    REQUIRE(diag2.observable);
    REQUIRE(diag2.observability_index == 2);

    // independent rank oracle for the two-block stack of the second example
    Matrix stack(4, 3);
    stack.topRows(2) = ex2.c;
    stack.bottomRows(2) = ex2.c * ex2.a;
    REQUIRE(Eigen::FullPivLU<Matrix>(stack).rank() == 3);
    Matrix one_block = ex2.c;
    REQUIRE(Eigen::FullPivLU<Matrix>(one_block).rank() < 3);
}

TEST_CASE("one-step observable when C is invertible") {
    gekf::LtiSystem sys;
    sys.a = (Matrix(2, 2) << 1.1, 0.2, 0.0, 1.4).finished();
    sys.c = Matrix::Identity(2, 2);
    sys.q_cov = Matrix::Identity(2, 2);
    sys.r_cov = Matrix::Identity(2, 2);
    sys.sigma0 = Matrix::Identity(2, 2);
    REQUIRE(gekf::observability_index(sys) == 1);
    REQUIRE(gekf::build_stacks(sys).horizons() == 0);
}

TEST_CASE("degenerate noise matrices are rejected") {
    gekf::LtiSystem sys = gekf::testutil::example_one();
    sys.r_cov = Matrix::Zero(1, 1);
    REQUIRE_THROWS_AS(gekf::validate(sys), std::invalid_argument);
}

TEST_CASE("unobservable pair is reported") {
    gekf::LtiSystem sys;
    sys.a = Matrix::Zero(2, 2);
    sys.a.diagonal() << 1.2, 1.2;    // repeated mode, single output picks one
    sys.c = (Matrix(1, 2) << 1.0, 0.0).finished();
    sys.q_cov = Matrix::Identity(2, 2);
    sys.r_cov = Matrix::Identity(1, 1);
    sys.sigma0 = Matrix::Identity(2, 2);
    REQUIRE_THROWS_AS(gekf::observability_index(sys), std::invalid_argument);
    REQUIRE_FALSE(gekf::validate(sys).observable);
}

TEST_CASE("stacked matrices") {
    const gekf::LtiSystem ex1 = gekf::testutil::example_one();
    const auto stacks = gekf::build_stacks(ex1);
    REQUIRE(stacks.horizons() == 1);

    // base horizon: no feedthrough, identity block, plain C
    REQUIRE(stacks.d_stack[0].norm() == 0.0);
    REQUIRE(stacks.a_stack[0] == Matrix::Identity(2, 2));
    REQUIRE(stacks.c_stack[0] == ex1.c);
    REQUIRE(stacks.j_mat[0] == Matrix::Identity(3, 3));
    REQUIRE((stacks.j_mat[0] - stacks.j_mat[0].transpose()).norm() == 0.0);

    gekf::Rng rng(5);
    for (int trial = 0; trial < 20; ++trial) {
        const gekf::LtiSystem sys = gekf::testutil::random_system(rng, 3, 1);
        const auto random_stacks = gekf::build_stacks(sys);
        for (int i = 1; i <= random_stacks.horizons(); ++i) {
            REQUIRE(random_stacks.c_stack[i - 1].rows() == i * sys.measurement_dim());
            REQUIRE(random_stacks.a_stack[i - 1].cols() == i * sys.state_dim());
            const Matrix& j = random_stacks.j_mat[i - 1];
            REQUIRE((j - j.transpose()).norm() <= 1e-12 * std::max(1.0, j.norm()));
            REQUIRE(gekf::min_eigenvalue(j) >= -1e-9 * std::max(1.0, j.norm()));
        }
        // the stack first reaches full rank exactly at the observability index
        const int io = random_stacks.observability_index;
        if (io >= 2) {
            Matrix tall(io * sys.measurement_dim(), sys.state_dim());
            Matrix power = Matrix::Identity(3, 3);
            for (int j = 0; j < io; ++j) {
                tall.block(j * sys.measurement_dim(), 0, sys.measurement_dim(), 3) =
                    sys.c * power;
                power = sys.a * power;
            }
            REQUIRE(Eigen::FullPivLU<Matrix>(tall).rank() == 3);
            REQUIRE(Eigen::FullPivLU<Matrix>(
                        tall.topRows((io - 1) * sys.measurement_dim()))
                        .rank() < 3);
        }
    }
}

TEST_CASE("validation is deterministic") {
    const gekf::LtiSystem ex1 = gekf::testutil::example_one();
    const auto first = gekf::validate(ex1);
    const auto second = gekf::validate(ex1);
    REQUIRE(first.observable == second.observable);
    REQUIRE(first.controllable == second.controllable);
    REQUIRE(first.a1_satisfied == second.a1_satisfied);
    REQUIRE(first.observability_index == second.observability_index);
    REQUIRE(first.spectral_radius_a == second.spectral_radius_a);
}

TEST_CASE("defective unit-circle eigenvalues are detected") {
    const Matrix jordan = (Matrix(2, 2) << 1.0, 1.0, 0.0, 1.0).finished();
    REQUIRE(gekf::has_defective_unit_circle_eigenvalue(jordan));

    REQUIRE_FALSE(gekf::has_defective_unit_circle_eigenvalue(Matrix::Identity(3, 3)));
    REQUIRE_FALSE(gekf::has_defective_unit_circle_eigenvalue(gekf::testutil::example_one().a));

    const double angle = 0.7;
    const Matrix rotation =
        (Matrix(2, 2) << std::cos(angle), -std::sin(angle), std::sin(angle), std::cos(angle))
            .finished();
    REQUIRE_FALSE(gekf::has_defective_unit_circle_eigenvalue(rotation));
}

TEST_CASE("system file errors carry position context") {
    namespace fs = std::filesystem;
    const auto dir = fs::temp_directory_path();
    const auto bad_path = dir / "gekf_bad_system.json";
    {
        std::ofstream out(bad_path);
        out << R"({"A": [[1.0, 0.0], [0.0]], "C": [[1.0, 0.0]],
                   "Q": [[1,0],[0,1]], "R": [[1]], "Sigma0": [[1,0],[0,1]]})";
    }
    try {
        gekf::load_system(bad_path.string());
        FAIL("expected a parse error");
    } catch (const std::invalid_argument& err) {
        const std::string what = err.what();
        REQUIRE(what.find("row 2") != std::string::npos);
    }
    fs::remove(bad_path);

    REQUIRE_THROWS_AS(gekf::load_system("/nonexistent/system.json"), std::runtime_error);
}
