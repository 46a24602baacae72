#ifndef GEKF_OPTIM_HPP
#define GEKF_OPTIM_HPP

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <numeric>
#include <stdexcept>
#include <vector>

#include "gekf/numerics.hpp"

namespace gekf {

struct SimplexResult {
    Vector best;
    double value = 0.0;
    int evaluations = 0;
};

/// Classic Nelder-Mead downhill simplex (reflection 1, expansion 2,
/// contraction 0.5, shrink 0.5). Stops on the evaluation budget, on simplex
/// collapse, or as soon as the value drops below `good_enough`.
inline SimplexResult nelder_mead(const std::function<double(const Vector&)>& objective,
                                 const Vector& start, int max_evaluations,
                                 double initial_step = 0.5,
                                 double good_enough = -std::numeric_limits<double>::infinity()) {
    const int dim = static_cast<int>(start.size());
    if (dim < 1) throw std::invalid_argument("nelder_mead: empty parameter vector");

    std::vector<Vector> points(dim + 1, start);
    std::vector<double> values(dim + 1);
    int evaluations = 0;
    auto eval = [&](const Vector& x) {
        ++evaluations;
        return objective(x);
    };
    values[0] = eval(points[0]);
    for (int i = 0; i < dim; ++i) {
        points[i + 1][i] += initial_step * std::max(1.0, std::abs(start[i]));
        values[i + 1] = eval(points[i + 1]);
    }

    std::vector<int> order(dim + 1);
    std::iota(order.begin(), order.end(), 0);
    auto sort_simplex = [&] {
        std::stable_sort(order.begin(), order.end(),
                         [&](int a, int b) { return values[a] < values[b]; });
    };

    while (evaluations < max_evaluations) {
        sort_simplex();
        const int best = order[0], second_worst = order[dim - 1], worst = order[dim];
        if (values[best] <= good_enough) break;

        Vector centroid = Vector::Zero(dim);
        for (int i = 0; i < dim; ++i) centroid += points[order[i]];
        centroid /= double(dim);

        double spread = 0.0;
        for (int i = 0; i <= dim; ++i)
            spread = std::max(spread, (points[i] - centroid).norm());
        if (spread < 1e-12 * std::max(1.0, centroid.norm())) break;

        const Vector reflected = centroid + (centroid - points[worst]);
        const double reflected_value = eval(reflected);
        if (reflected_value < values[best]) {
            const Vector expanded = centroid + 2.0 * (centroid - points[worst]);
            const double expanded_value = eval(expanded);
            if (expanded_value < reflected_value) {
                points[worst] = expanded;
                values[worst] = expanded_value;
            } else {
                points[worst] = reflected;
                values[worst] = reflected_value;
            }
        } else if (reflected_value < values[second_worst]) {
            points[worst] = reflected;
            values[worst] = reflected_value;
        } else {
            const Vector contracted = centroid + 0.5 * (points[worst] - centroid);
            const double contracted_value = eval(contracted);
            if (contracted_value < values[worst]) {
                points[worst] = contracted;
                values[worst] = contracted_value;
            } else {
                for (int i = 1; i <= dim && evaluations < max_evaluations; ++i) {
                    points[order[i]] = points[best] + 0.5 * (points[order[i]] - points[best]);
                    values[order[i]] = eval(points[order[i]]);
                }
            }
        }
    }

    sort_simplex();
    return {points[order[0]], values[order[0]], evaluations};
}

} // namespace gekf

#endif
