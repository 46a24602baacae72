#ifndef GEKF_STATS_HPP
#define GEKF_STATS_HPP

#include <cmath>
#include <cstddef>
#include <limits>
#include <span>
#include <stdexcept>
#include <vector>

namespace gekf {

struct TrendFit {
    double slope = 0.0;
    double slope_se = 0.0;  // standard error of the slope under i.i.d. residuals
};

/// Least-squares line fit of y against its index over [first, last).
inline TrendFit ls_trend(std::span<const double> y, std::size_t first, std::size_t last) {
    if (last > y.size() || first + 3 > last)
        throw std::invalid_argument("ls_trend: window needs at least three points");
    const double n = static_cast<double>(last - first);
    double sx = 0, sy = 0, sxx = 0, sxy = 0;
    for (std::size_t k = first; k < last; ++k) {
        const double x = static_cast<double>(k);
        sx += x;
        sy += y[k];
        sxx += x * x;
        sxy += x * y[k];
    }
    const double denom = n * sxx - sx * sx;
    TrendFit fit;
    fit.slope = (n * sxy - sx * sy) / denom;
    const double intercept = (sy - fit.slope * sx) / n;
    double rss = 0.0;
    for (std::size_t k = first; k < last; ++k) {
        const double r = y[k] - (intercept + fit.slope * static_cast<double>(k));
        rss += r * r;
    }
    fit.slope_se = std::sqrt(rss / (n - 2.0) / (denom / n));
    return fit;
}

inline double ls_slope(std::span<const double> y, std::size_t first, std::size_t last) {
    return ls_trend(y, first, last).slope;
}

namespace detail {

// Regularized lower incomplete gamma P(a, x), series + continued fraction
// (Numerical Recipes style). Good to ~1e-12 for the moderate a used here.
inline double gamma_p(double a, double x) {
    if (x < 0 || a <= 0) throw std::invalid_argument("gamma_p: bad arguments");
    if (x == 0) return 0.0;
    const double gln = std::lgamma(a);
    if (x < a + 1.0) {
        double ap = a, sum = 1.0 / a, del = sum;
        for (int i = 0; i < 500; ++i) {
            ap += 1.0;
            del *= x / ap;
            sum += del;
            if (std::fabs(del) < std::fabs(sum) * 1e-15) break;
        }
        return sum * std::exp(-x + a * std::log(x) - gln);
    }
    // Lentz continued fraction for Q(a,x)
    const double tiny = std::numeric_limits<double>::min() / 1e-30;
    double b = x + 1.0 - a, c = 1.0 / tiny, d = 1.0 / b, h = d;
    for (int i = 1; i < 500; ++i) {
        const double an = -i * (i - a);
        b += 2.0;
        d = an * d + b;
        if (std::fabs(d) < tiny) d = tiny;
        c = b + an / c;
        if (std::fabs(c) < tiny) c = tiny;
        d = 1.0 / d;
        const double del = d * c;
        h *= del;
        if (std::fabs(del - 1.0) < 1e-15) break;
    }
    return 1.0 - std::exp(-x + a * std::log(x) - gln) * h;
}

} // namespace detail

/// Upper-tail probability of a chi-square variate with `dof` degrees of freedom.
inline double chi_square_tail(double statistic, int dof) {
    if (dof <= 0) throw std::invalid_argument("chi_square_tail: dof must be positive");
    if (statistic <= 0) return 1.0;
    return 1.0 - detail::gamma_p(0.5 * dof, 0.5 * statistic);
}

struct GoodnessOfFit {
    double statistic = 0.0;
    int dof = 0;
    double p_value = 1.0;
};

/// Pearson chi-square test of `samples` (values >= 1) against the law
/// P(s = k) = (1-rate)^(k-1) * rate. Bins are merged from the right until
/// each expected count is at least 5.
inline GoodnessOfFit geometric_fit(std::span<const long> samples, double rate) {
    if (rate <= 0.0 || rate >= 1.0) throw std::invalid_argument("geometric_fit: rate outside (0,1)");
    const double n = static_cast<double>(samples.size());
    if (samples.size() < 20) throw std::invalid_argument("geometric_fit: too few samples");

    // Grow individual bins while both the next bin and the remaining tail
    // keep an expected count of at least 5.
    int tail_start = 2;
    while (tail_start < 1000000) {
        const double bin_expect = n * std::pow(1.0 - rate, tail_start - 1) * rate;
        const double tail_expect = n * std::pow(1.0 - rate, tail_start);
        if (bin_expect < 5.0 || tail_expect < 5.0) break;
        ++tail_start;
    }

    std::vector<double> observed(static_cast<std::size_t>(tail_start), 0.0);
    for (long s : samples) {
        if (s < 1) throw std::invalid_argument("geometric_fit: sample below 1");
        const long idx = s >= tail_start ? tail_start - 1 : s - 1;
        observed[static_cast<std::size_t>(idx)] += 1.0;
    }

    GoodnessOfFit result;
    double mass_left = 1.0;
    for (int k = 1; k < tail_start; ++k) {
        const double pk = std::pow(1.0 - rate, k - 1) * rate;
        mass_left -= pk;
        const double expect = n * pk;
        const double diff = observed[static_cast<std::size_t>(k - 1)] - expect;
        result.statistic += diff * diff / expect;
    }
    const double expect_tail = n * mass_left;
    const double diff_tail = observed.back() - expect_tail;
    result.statistic += diff_tail * diff_tail / expect_tail;
    result.dof = tail_start - 1;
    result.p_value = chi_square_tail(result.statistic, result.dof);
    return result;
}

} // namespace gekf

#endif
