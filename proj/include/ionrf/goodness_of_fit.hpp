#pragma once

#include <cmath>
#include <limits>

#include "ionrf/errors.hpp"

namespace ionrf {

namespace detail {

// P(a, x) by its power series; converges quickly for x < a + 1.
inline double gamma_p_series(double a, double x) {
    double term = 1.0 / a;
    double sum = term;
    for (int n = 1; n < 10000; ++n) {
        term *= x / (a + n);
        sum += term;
        if (std::abs(term) < std::abs(sum) * 1e-17) break;
    }
    return sum * std::exp(-x + a * std::log(x) - std::lgamma(a));
}

// Q(a, x) by the Legendre continued fraction (modified Lentz); for x >= a + 1.
inline double gamma_q_continued_fraction(double a, double x) {
    constexpr double tiny = std::numeric_limits<double>::min() / std::numeric_limits<double>::epsilon();
    double b = x + 1.0 - a;
    double c = 1.0 / tiny;
    double d = 1.0 / b;
    double h = d;
    for (int i = 1; i < 10000; ++i) {
        const double an = -i * (i - a);
        b += 2.0;
        d = an * d + b;
        if (std::abs(d) < tiny) d = tiny;
        c = b + an / c;
        if (std::abs(c) < tiny) c = tiny;
        d = 1.0 / d;
        const double delta = d * c;
        h *= delta;
        if (std::abs(delta - 1.0) < 1e-16) break;
    }
    return std::exp(-x + a * std::log(x) - std::lgamma(a)) * h;
}

} // namespace detail

// Regularized upper incomplete gamma function Q(a, x) = Gamma(a, x) / Gamma(a).
inline double gamma_q(double a, double x) {
    detail::require(a > 0.0 && x >= 0.0, "gamma_q needs a > 0 and x >= 0");
    if (x == 0.0) return 1.0;
    if (std::isinf(x)) return 0.0;
    if (x < a + 1.0) return 1.0 - detail::gamma_p_series(a, x);
    return detail::gamma_q_continued_fraction(a, x);
}

// Probability that a chi-square with `dof` degrees of freedom exceeds the observed value.
inline double goodness_of_fit(double chi_square, int dof) {
    detail::require(dof >= 1, "goodness of fit needs at least one degree of freedom");
    detail::require(!std::isnan(chi_square) && chi_square >= 0.0, "chi-square must be non-negative");
    return gamma_q(0.5 * dof, 0.5 * chi_square);
}

} // namespace ionrf
