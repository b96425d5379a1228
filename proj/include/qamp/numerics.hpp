#pragma once

#include <Eigen/Dense>
#include <Eigen/Eigenvalues>

#include <cmath>
#include <cstdint>
#include <functional>
#include <map>
#include <mutex>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace qamp {

/** Raised when an argument lies outside the mathematical domain of an operation. */
struct DomainError : std::domain_error {
    using std::domain_error::domain_error;
};

/** Base class of all numerical failures (exit code 2 in the CLI). */
struct NumericalError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct RootNotBracketed : NumericalError {
    using NumericalError::NumericalError;
};

struct NonConvergence : NumericalError {
    double residual;
    NonConvergence(const std::string& what, double res) : NumericalError(what), residual(res) {}
};

struct InstabilityError : NumericalError {
    using NumericalError::NumericalError;
};

struct FactorizationError : NumericalError {
    using NumericalError::NumericalError;
};

/** Nodes and weights of an n-point Gauss–Legendre rule on [-1, 1]. */
struct QuadratureRule {
    std::vector<double> nodes;
    std::vector<double> weights;
};

namespace detail {

// Golub–Welsch on the Jacobi matrix of the Legendre polynomials.
inline QuadratureRule golub_welsch_legendre(int n) {
    QuadratureRule rule;
    if (n == 1) {
        rule.nodes = {0.0};
        rule.weights = {2.0};
        return rule;
    }
    Eigen::VectorXd diag = Eigen::VectorXd::Zero(n);
    Eigen::VectorXd sub(n - 1);
    for (int k = 1; k < n; ++k) sub(k - 1) = k / std::sqrt(4.0 * k * k - 1.0);
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es;
    es.computeFromTridiagonal(diag, sub, Eigen::ComputeEigenvectors);
    rule.nodes.resize(n);
    rule.weights.resize(n);
    for (int i = 0; i < n; ++i) {
        rule.nodes[i] = es.eigenvalues()(i);
        double v0 = es.eigenvectors()(0, i);
        rule.weights[i] = 2.0 * v0 * v0;
    }
    // Newton polish of the nodes on the three-term recurrence.
    auto legendre = [n](double x) {
        double p0 = 1.0, p1 = x;
        for (int k = 2; k <= n; ++k) {
            double p2 = ((2.0 * k - 1.0) * x * p1 - (k - 1.0) * p0) / k;
            p0 = p1;
            p1 = p2;
        }
        return std::pair<double, double>{p1, n * (x * p1 - p0) / (x * x - 1.0)};
    };
    for (int i = 0; i < n; ++i) {
        double x = rule.nodes[i];
        for (int it = 0; it < 3; ++it) {
            auto [p, dp] = legendre(x);
            x -= p / dp;
        }
        auto [p, dp] = legendre(x);
        (void)p;
        rule.nodes[i] = x;
        rule.weights[i] = 2.0 / ((1.0 - x * x) * dp * dp);
    }
    return rule;
}

}  // namespace detail

/** Cached Gauss–Legendre rule on [-1, 1]; thread safe. */
inline const QuadratureRule& gauss_legendre(int n) {
    static std::mutex mtx;
    static std::map<int, QuadratureRule> cache;
    std::lock_guard<std::mutex> lock(mtx);
    auto it = cache.find(n);
    if (it == cache.end()) it = cache.emplace(n, detail::golub_welsch_legendre(n)).first;
    return it->second;
}

/**
 * E f(m + s Z) for Z ~ N(0,1), by composite Gauss–Legendre over m ± 14 s.
 *
 * Panels are at most `feature` wide so integrands with unit-scale structure
 * (logistic tails of tanh) are resolved whatever the spread s is.
 */
template <class F>
double gaussian_expectation(F&& f, double mean, double sd, double feature = 0.5) {
    if (sd <= 0.0) return f(mean);
    const auto& gl = gauss_legendre(10);
    const double half = 14.0 * sd;
    const double lo = mean - half;
    const double width = std::min(feature, sd / 2.0);
    const int panels = std::max(8, static_cast<int>(std::ceil(2.0 * half / width)));
    const double h = 2.0 * half / panels;
    const double norm = 1.0 / (sd * std::sqrt(2.0 * M_PI));
    double total = 0.0;
    for (int p = 0; p < panels; ++p) {
        const double c = lo + (p + 0.5) * h;
        double acc = 0.0;
        for (std::size_t i = 0; i < gl.nodes.size(); ++i) {
            const double t = c + 0.5 * h * gl.nodes[i];
            const double z = (t - mean) / sd;
            acc += gl.weights[i] * f(t) * std::exp(-0.5 * z * z);
        }
        total += acc * 0.5 * h;
    }
    return total * norm;
}

/** Bisection for a decreasing-or-increasing f with a sign change on [lo, hi]. */
template <class F>
double bisect(F&& f, double lo, double hi, double xtol = 1e-15, int max_iter = 400) {
    double flo = f(lo);
    double fhi = f(hi);
    if (flo == 0.0) return lo;
    if (fhi == 0.0) return hi;
    if ((flo > 0.0) == (fhi > 0.0)) throw RootNotBracketed("bisect: no sign change on bracket");
    for (int it = 0; it < max_iter; ++it) {
        double mid = 0.5 * (lo + hi);
        if (mid <= lo || mid >= hi) break;
        double fm = f(mid);
        if (fm == 0.0) return mid;
        if ((fm > 0.0) == (flo > 0.0)) {
            lo = mid;
            flo = fm;
        } else {
            hi = mid;
        }
        if (hi - lo <= xtol * std::max(1.0, std::abs(mid))) break;
    }
    return 0.5 * (lo + hi);
}

}  // namespace qamp
