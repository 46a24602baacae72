#include <catch2/catch_amalgamated.hpp>

#include <cmath>

#include "gekf/stability.hpp"
#include "gekf/verify.hpp"

using gekf::Matrix;

namespace {

const gekf::LtiSystem kExample1 = gekf::testutil::example_one();
const gekf::LtiSystem kExample2 = gekf::testutil::example_two();

gekf::LtiSystem one_step_observable() {
    gekf::LtiSystem sys;
    sys.a = (Matrix(2, 2) << 1.2, 0.1, 0.0, 1.1).finished();
    sys.c = Matrix::Identity(2, 2);
    sys.q_cov = Matrix::Identity(2, 2);
    sys.r_cov = Matrix::Identity(2, 2);
    sys.sigma0 = Matrix::Identity(2, 2);
    return sys;
}

gekf::GainSet zero_gains(const gekf::LtiSystem& sys, const gekf::StackedMatrices& stacks) {
    gekf::GainSet gains;
    for (int i = 1; i <= stacks.horizons(); ++i)
        gains.blocks.push_back(Matrix::Zero(sys.state_dim(), i * sys.measurement_dim()));
    return gains;
}

} // namespace

TEST_CASE("necessary condition values") {
    const auto ex1 = gekf::necessary_check(kExample1, 0.65);
    REQUIRE_THAT(ex1.value, Catch::Matchers::WithinAbs(0.5915, 1e-9));
    REQUIRE(ex1.ok);

    const auto ex2 = gekf::necessary_check(kExample2, 0.5);
    REQUIRE_THAT(ex2.value, Catch::Matchers::WithinAbs(0.72, 1e-9));
    REQUIRE(ex2.ok);

    REQUIRE_FALSE(gekf::necessary_check(kExample1, 0.01).ok);
}

TEST_CASE("closed-form condition and its largest certified rate") {
    const double max_p1 = gekf::closed_form_max_p(kExample1, 0.65);
    REQUIRE_THAT(max_p1, Catch::Matchers::WithinAbs(0.22, 1e-3));
    REQUIRE(gekf::closed_form_check(kExample1, 0.21, 0.65).ok);
    REQUIRE_FALSE(gekf::closed_form_check(kExample1, 0.23, 0.65).ok);

    // direct evaluation: p q r^4 = 1 - r^2 (1-q) at the boundary
    const double expected = (1.0 - 1.44 * 0.5) / (0.5 * 1.44 * 1.44);
    REQUIRE_THAT(gekf::closed_form_max_p(kExample2, 0.5),
                 Catch::Matchers::WithinAbs(expected, 1e-4));

    const gekf::LtiSystem quick = one_step_observable();
    const auto check = gekf::closed_form_check(quick, 0.9, 0.5);
    REQUIRE(check.lhs == 0.0);
    REQUIRE(check.ok == gekf::necessary_check(quick, 0.5).ok);
    REQUIRE(gekf::closed_form_max_p(quick, 0.5) == 1.0);
}

TEST_CASE("peak transfer matrix") {
    const gekf::LtiSystem quick = one_step_observable();
    const auto quick_stacks = gekf::build_stacks(quick);
    const Matrix trivial = gekf::peak_transfer_matrix(quick, quick_stacks,
                                                      zero_gains(quick, quick_stacks), 0.5, 0.6);
    REQUIRE(trivial.norm() == 0.0);

    const auto stacks = gekf::build_stacks(kExample1);
    const Matrix transfer =
        gekf::peak_transfer_matrix(kExample1, stacks, zero_gains(kExample1, stacks), 0.22, 0.65);
    const double radius = gekf::spectral_radius(transfer).radius;
    REQUIRE_THAT(radius, Catch::Matchers::WithinAbs(0.9998097919216644, 1e-9));
    REQUIRE_THAT(radius,
                 Catch::Matchers::WithinAbs(gekf::peak_radius_zero_gain(kExample1, 2, 0.22, 0.65),
                                            1e-10));

    REQUIRE_THROWS_AS(
        gekf::peak_transfer_matrix(kExample1, stacks, zero_gains(kExample1, stacks), 0.5, 0.1),
        std::invalid_argument);
}

TEST_CASE("peak operator matches the transfer matrix spectrum") {
    const auto stacks = gekf::build_stacks(kExample1);
    const auto gains = zero_gains(kExample1, stacks);
    const double p = 0.1, q = 0.65;

    REQUIRE(gekf::apply_peak_operator(kExample1, stacks, gains, Matrix::Zero(2, 2), p, q)
                .norm() == 0.0);

    Matrix direction = Matrix::Identity(2, 2);
    double ratio = 0.0, previous = -1.0;
    for (int t = 0; t < 5000; ++t) {
        const Matrix next = gekf::apply_peak_operator(kExample1, stacks, gains, direction, p, q);
        ratio = next.norm();
        direction = next / ratio;
        if (t > 10 && std::fabs(ratio - previous) < 1e-12 * ratio) break;
        previous = ratio;
    }
    REQUIRE_THAT(ratio,
                 Catch::Matchers::WithinAbs(gekf::peak_radius_zero_gain(kExample1, 2, p, q), 1e-6));
}

TEST_CASE("gain search certifies the high-failure regime") {
    const auto stacks = gekf::build_stacks(kExample1);

    const auto high = gekf::find_gain(kExample1, stacks, 0.99, 0.65);
    REQUIRE(high.success);
    REQUIRE(high.radius < 0.95);

    const auto low = gekf::find_gain(kExample1, stacks, 0.15, 0.65);
    REQUIRE(low.success);
    REQUIRE(low.radius <= gekf::peak_radius_zero_gain(kExample1, 2, 0.15, 0.65) + 1e-12);

    const gekf::LtiSystem quick = one_step_observable();
    const auto trivial = gekf::find_gain(quick, gekf::build_stacks(quick), 0.9, 0.5);
    REQUIRE(trivial.success);
    REQUIRE(trivial.radius == 0.0);
}

TEST_CASE("gain search is deterministic in the seed") {
    const auto stacks = gekf::build_stacks(kExample1);
    const auto first = gekf::find_gain(kExample1, stacks, 0.5, 0.65, {}, 42);
    const auto second = gekf::find_gain(kExample1, stacks, 0.5, 0.65, {}, 42);
    REQUIRE(first.radius == second.radius);
    REQUIRE(first.gains.blocks[0] == second.gains.blocks[0]);
}

TEST_CASE("lower bound on the critical failure rate") {
    const auto stacks1 = gekf::build_stacks(kExample1);
    const auto whole_range = gekf::critical_rate_lower_bound(kExample1, stacks1, 0.65);
    REQUIRE(whole_range.value == 1.0);
    REQUIRE(whole_range.feasible_at_one);

    const gekf::LtiSystem quick = one_step_observable();
    const auto trivial =
        gekf::critical_rate_lower_bound(quick, gekf::build_stacks(quick), 0.5);
    REQUIRE(trivial.value == 1.0);

    REQUIRE_THROWS_AS(gekf::critical_rate_lower_bound(kExample1, stacks1, 0.1),
                      std::invalid_argument);

    // the certified rate is never below the closed-form one
    const auto stacks2 = gekf::build_stacks(kExample2);
    const auto bound = gekf::critical_rate_lower_bound(kExample2, stacks2, 0.5);
    REQUIRE(bound.bracket_ok);
    REQUIRE(bound.monotone_ok);
    REQUIRE(bound.value >= gekf::closed_form_max_p(kExample2, 0.5) - 1e-3);
}

TEST_CASE("full report across the regimes") {
    const auto mid = gekf::full_report(kExample1, 0.5, 0.65);
    REQUIRE(mid.necessary.ok);
    REQUIRE_FALSE(mid.closed_form.ok);
    REQUIRE(mid.spectral_test_ok);
    REQUIRE_THAT(mid.closed_form_max_p, Catch::Matchers::WithinAbs(0.22, 1e-3));
    REQUIRE(mid.p_lower_bound == 1.0);

    const auto certified = gekf::full_report(kExample2, 0.45, 0.5);
    REQUIRE(certified.spectral_test_ok);
    REQUIRE(certified.mean_square_certified);

    const auto hopeless = gekf::full_report(kExample2, 0.99, 0.5);
    REQUIRE(hopeless.necessary.ok);
    REQUIRE_FALSE(hopeless.closed_form.ok);
    REQUIRE_FALSE(hopeless.spectral_test_ok);
    REQUIRE(hopeless.best_radius > 1.0);
    REQUIRE_FALSE(hopeless.mean_square_certified);

    const auto dead = gekf::full_report(kExample1, 0.5, 0.3);
    REQUIRE_FALSE(dead.necessary.ok);
    REQUIRE_FALSE(dead.spectral_test_ok);
    REQUIRE_FALSE(dead.notes.empty());
}
