#include <catch2/catch_amalgamated.hpp>

#include <algorithm>
#include <cmath>
#include <sstream>
#include <vector>

#include "gekf/filter.hpp"
#include "gekf/verify.hpp"

using gekf::Matrix;

namespace {

gekf::LtiSystem scalar_system(double a, double c, double q, double r, double sigma0) {
    gekf::LtiSystem sys;
    sys.a = Matrix::Constant(1, 1, a);
    sys.c = Matrix::Constant(1, 1, c);
    sys.q_cov = Matrix::Constant(1, 1, q);
    sys.r_cov = Matrix::Constant(1, 1, r);
    sys.sigma0 = Matrix::Constant(1, 1, sigma0);
    return sys;
}

} // namespace

TEST_CASE("loss and arrival maps") {
    const gekf::LtiSystem ex1 = gekf::testutil::example_one();
    REQUIRE(gekf::open_loop_map(ex1, Matrix::Zero(2, 2)) == ex1.q_cov);

    const gekf::LtiSystem sc = scalar_system(2, 1, 1, 1, 1);
    REQUIRE_THAT(gekf::open_loop_map(sc, Matrix::Identity(1, 1))(0, 0),
                 Catch::Matchers::WithinAbs(5.0, 1e-14));
    REQUIRE_THAT(gekf::riccati_map(sc, Matrix::Identity(1, 1))(0, 0),
                 Catch::Matchers::WithinAbs(3.0, 1e-14));

    gekf::Rng rng(3);
    for (int trial = 0; trial < 5; ++trial) {
        const Matrix x = gekf::testutil::random_psd(rng, 2);
        REQUIRE(gekf::covariance_step(ex1, x, 1) == gekf::riccati_map(ex1, x));
        REQUIRE(gekf::covariance_step(ex1, x, 0) == gekf::open_loop_map(ex1, x));
    }
    REQUIRE(gekf::covariance_step(ex1, Matrix::Zero(2, 2), 0) == ex1.q_cov);
    REQUIRE_THROWS_AS(gekf::covariance_step(ex1, Matrix::Zero(2, 2), 2), std::invalid_argument);
}

TEST_CASE("trajectory follows the composed maps") {
    const gekf::LtiSystem ex1 = gekf::testutil::example_one();
    const auto losses = gekf::annotate_losses({1, 0});
    const auto cov = gekf::run_covariance(ex1, losses);
    REQUIRE(cov.length() == 2);
    REQUIRE(cov.covs[0] == ex1.sigma0);

    const auto longer = gekf::annotate_losses({1, 0, 1});
    const auto cov3 = gekf::run_covariance(ex1, longer);
    const Matrix expected = gekf::open_loop_map(ex1, gekf::riccati_map(ex1, ex1.sigma0));
    REQUIRE((cov3.covs[2] - expected).norm() <= 1e-12 * std::max(1.0, expected.norm()));
}

TEST_CASE("all-arrival runs settle at the steady state") {
    const gekf::LtiSystem ex1 = gekf::testutil::example_one();
    const auto sol = gekf::dare_solve(ex1.a, ex1.c, ex1.q_cov, ex1.r_cov);
    std::vector<std::uint8_t> gammas(400, 1);
    const auto cov = gekf::run_covariance(ex1, gekf::annotate_losses(std::move(gammas)));
    REQUIRE_FALSE(cov.diverged);
    REQUIRE_THAT(cov.norms.back(),
                 Catch::Matchers::WithinAbs(gekf::sym_norm2(sol.covariance), 1e-6));
}

TEST_CASE("all-loss scalar run reproduces the geometric sum") {
    const gekf::LtiSystem sc = scalar_system(2, 1, 1, 1, 0);
    std::vector<std::uint8_t> gammas(10, 0);
    const auto cov = gekf::run_covariance(sc, gekf::annotate_losses(std::move(gammas)));
    for (long k = 1; k <= 10; ++k) {
        const double expected = (std::pow(4.0, k - 1) - 1.0) / 3.0;
        REQUIRE_THAT(cov.norms[static_cast<std::size_t>(k - 1)],
                     Catch::Matchers::WithinAbs(expected, 1e-9 * std::max(1.0, expected)));
    }
}

TEST_CASE("scalar norms climb through bursts and peak at recovery") {
    const gekf::LtiSystem sc = scalar_system(2, 1, 1, 1, 1);
    const auto losses = gekf::sample({0.3, 0.5}, 2000, 17);
    const auto cov = gekf::run_covariance(sc, losses);
    REQUIRE_FALSE(cov.diverged);
    for (std::size_t j = 0; j < cov.peak_indices.size(); ++j) {
        const long tau = losses.burst_starts[j];
        const long beta = losses.recovery_times[j];
        for (long k = tau; k < beta; ++k)
            REQUIRE(cov.norms[static_cast<std::size_t>(k)] >=
                    cov.norms[static_cast<std::size_t>(k - 1)] - 1e-12);
        REQUIRE(cov.peak_norms[j] == cov.norms[static_cast<std::size_t>(beta - 1)]);
        if (beta < cov.length())
            REQUIRE(cov.norms[static_cast<std::size_t>(beta)] <= cov.peak_norms[j] + 1e-12);
    }
}

TEST_CASE("fixed-gain map special cases") {
    const gekf::LtiSystem ex1 = gekf::testutil::example_one();
    const auto stacks = gekf::build_stacks(ex1);
    gekf::Rng rng(23);

    const auto sol = gekf::dare_solve(ex1.a, ex1.c, ex1.q_cov, ex1.r_cov);
    const Matrix at_steady = gekf::fixed_gain_map(ex1, stacks, 1, sol.gain, sol.covariance);
    REQUIRE((at_steady - sol.covariance).norm() <= 1e-8 * sol.covariance.norm());

    for (int trial = 0; trial < 10; ++trial) {
        const Matrix x = gekf::testutil::random_psd(rng, 2);
        const Matrix at_zero = gekf::fixed_gain_map(ex1, stacks, 1, Matrix::Zero(2, 1), x);
        REQUIRE((at_zero - gekf::open_loop_map(ex1, x)).norm() <=
                1e-12 * std::max(1.0, at_zero.norm()));

        // the one-step optimal gain recovers the arrival map and beats others
        const Matrix innovation = ex1.c * x * ex1.c.transpose() + ex1.r_cov;
        const Matrix optimal = -(ex1.a * x * ex1.c.transpose()) / innovation(0, 0);
        const Matrix best = gekf::fixed_gain_map(ex1, stacks, 1, optimal, x);
        const Matrix arrival = gekf::riccati_map(ex1, x);
        REQUIRE((best - arrival).norm() <= 1e-9 * std::max(1.0, arrival.norm()));
        for (int other = 0; other < 20; ++other) {
            const Matrix gain = gekf::testutil::random_matrix(rng, 2, 1);
            REQUIRE(gekf::testutil::psd_greater(gekf::fixed_gain_map(ex1, stacks, 1, gain, x),
                                                arrival));
        }
    }

    REQUIRE_THROWS_AS(gekf::fixed_gain_map(ex1, stacks, 2, Matrix::Zero(2, 2),
                                           Matrix::Identity(2, 2)),
                      std::invalid_argument);
    REQUIRE_THROWS_AS(gekf::fixed_gain_map(ex1, stacks, 1, Matrix::Zero(2, 2),
                                           Matrix::Identity(2, 2)),
                      std::invalid_argument);
}

TEST_CASE("divergence truncates with a flag") {
    const gekf::LtiSystem sc = scalar_system(2, 1, 1, 1, 1);
    std::vector<std::uint8_t> gammas(700, 0);  // pure loss pushes past the horizon
    const auto cov = gekf::run_covariance(sc, gekf::annotate_losses(std::move(gammas)));
    REQUIRE(cov.diverged);
    REQUIRE(cov.length() < 700);
    for (double norm : cov.norms) REQUIRE(std::isfinite(norm));
}

TEST_CASE("csv exports carry full precision") {
    const gekf::LtiSystem ex1 = gekf::testutil::example_one();
    const auto losses = gekf::sample({0.3, 0.5}, 5, 3);
    const auto cov = gekf::run_covariance(ex1, losses);
    std::ostringstream text;
    gekf::write_covariance_csv(text, losses, cov);
    const std::string csv = text.str();
    REQUIRE(csv.rfind("k,gamma,norm_P\n", 0) == 0);
    REQUIRE(std::count(csv.begin(), csv.end(), '\n') == 6);

    std::ostringstream peaks;
    gekf::write_peaks_csv(peaks, cov);
    REQUIRE(peaks.str().rfind("j,beta_j,norm_P_beta_j\n", 0) == 0);
}
