#pragma once

#include "numerics.hpp"
#include "spectrum.hpp"

#include <algorithm>
#include <cmath>
#include <vector>

namespace qamp {

/** Coefficients of J(Y) = sum_{k=1}^K c_k Y^k. */
struct PreprocessCoeffs {
    std::vector<double> c;  // c[0] multiplies Y

    int k() const { return static_cast<int>(c.size()); }

    double operator()(double x) const {
        double acc = 0.0;
        for (int i = k() - 1; i >= 0; --i) acc = (acc + c[i]) * x;
        return acc;
    }

    double deriv(double x) const {
        double acc = 0.0;
        for (int i = k() - 1; i >= 0; --i) acc = acc * x + (i + 1) * c[i];
        return acc;
    }
};

/** (mu lambda, -gamma lambda^2, gamma lambda). */
inline PreprocessCoeffs optimal_coeffs(double mu, double gamma, double lambda) {
    if (!std::isfinite(mu) || !std::isfinite(gamma) || !std::isfinite(lambda))
        throw DomainError("optimal_coeffs: inputs must be finite");
    if (lambda < 0.0) throw DomainError("optimal_coeffs: lambda must be nonnegative");
    return PreprocessCoeffs{{mu * lambda, -gamma * lambda * lambda, gamma * lambda}};
}

/** Maximum of a polynomial over [lo, hi] via its critical points (degree <= 3 handled exactly). */
inline double poly_max_on(const PreprocessCoeffs& p, double lo, double hi) {
    double best = std::max(p(lo), p(hi));
    // Critical points of the derivative c1 + 2 c2 x + 3 c3 x^2.
    const double c1 = p.k() > 0 ? p.c[0] : 0.0;
    const double c2 = p.k() > 1 ? p.c[1] : 0.0;
    const double c3 = p.k() > 2 ? p.c[2] : 0.0;
    std::vector<double> crit;
    if (p.k() <= 3) {
        const double qa = 3.0 * c3, qb = 2.0 * c2, qc = c1;
        if (qa != 0.0) {
            const double disc = qb * qb - 4.0 * qa * qc;
            if (disc >= 0.0) {
                crit.push_back((-qb + std::sqrt(disc)) / (2.0 * qa));
                crit.push_back((-qb - std::sqrt(disc)) / (2.0 * qa));
            }
        } else if (qb != 0.0) {
            crit.push_back(-qc / qb);
        }
    } else {
        const int grid = 20001;
        for (int i = 0; i < grid; ++i) crit.push_back(lo + (hi - lo) * i / (grid - 1));
    }
    for (double x : crit)
        if (x > lo && x < hi) best = std::max(best, p(x));
    return best;
}

}  // namespace qamp
