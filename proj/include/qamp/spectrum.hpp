#pragma once

#include "numerics.hpp"

#include <boost/multiprecision/cpp_bin_float.hpp>

#include <cmath>
#include <string>
#include <vector>

namespace qamp {

/** Quartic potential V(x) = mu x^2/2 + gamma x^4/4 and its equilibrium-measure edge. */
struct EnsembleParams {
    double mu = 1.0;
    double gamma = 0.0;
    double a2 = 1.0;  // squared half-edge; support is [-2a, 2a]

    double a() const { return std::sqrt(a2); }
    double edge() const { return 2.0 * std::sqrt(a2); }
    /** Constant term of the density prefactor, mu + 2 a^2 gamma. */
    double b() const { return mu + 2.0 * a2 * gamma; }
};

/** gamma(mu) making the second spectral moment equal to one. */
inline double gamma_of_mu(double mu) {
    if (!(mu >= 0.0 && mu <= 1.0)) throw DomainError("gamma_of_mu: mu must lie in [0, 1]");
    const double disc = 64.0 - 144.0 * mu + 108.0 * mu * mu - 27.0 * mu * mu * mu;
    return (8.0 - 9.0 * mu + std::sqrt(std::max(disc, 0.0))) / 27.0;
}

inline double edge_a2(double mu, double gamma) {
    if (gamma < 0.0) throw DomainError("edge_a2: gamma must be nonnegative");
    if (gamma == 0.0) {
        if (mu <= 0.0) throw DomainError("edge_a2: mu = gamma = 0 has no equilibrium measure");
        return 1.0 / mu;
    }
    // (sqrt(mu^2+12 gamma) - mu)/(6 gamma), rationalized to stay accurate as gamma -> 0
    return 2.0 / (mu + std::sqrt(mu * mu + 12.0 * gamma));
}

inline EnsembleParams make_params(double mu, double gamma) {
    if (mu < 0.0) throw DomainError("make_params: negative mu is not supported");
    EnsembleParams p;
    p.mu = mu;
    p.gamma = gamma;
    p.a2 = edge_a2(mu, gamma);
    return p;
}

/** Unit-variance ensemble with gamma fixed by gamma_of_mu. */
inline EnsembleParams make_params(double mu) { return make_params(mu, gamma_of_mu(mu)); }

inline double density(double x, const EnsembleParams& p) {
    if (!(std::abs(x) < p.edge())) return 0.0;
    const double r = 4.0 * p.a2 - x * x;
    return (p.b() + p.gamma * x * x) * std::sqrt(r) / (2.0 * M_PI);
}

/** Cumulative distribution of the density, closed form in x = 2a sin(theta). */
inline double cdf(double x, const EnsembleParams& p) {
    const double e = p.edge();
    if (x <= -e) return 0.0;
    if (x >= e) return 1.0;
    const double th = std::asin(x / e) + M_PI / 2.0;
    const double s2 = std::sin(2.0 * th - M_PI);
    const double s4 = std::sin(4.0 * th - 2.0 * M_PI);
    const double c2 = th / 2.0 + s2 / 4.0;
    const double c4 = th / 8.0 - s4 / 32.0;
    return (2.0 * p.a2 / M_PI) * (p.b() * c2 + 4.0 * p.a2 * p.gamma * c4);
}

/**
 * Stieltjes transform S(z) = int rho(x)/(z-x) dx for real z outside the support,
 * i.e. (mu z + gamma z^3 - (b + gamma z^2) sqrt(z^2 - 4a^2)) / 2, evaluated in
 * the rationalized form 2a^2 (b^2 + gamma z^2 (mu + 3 a^2 gamma)) / (mu z + gamma z^3 + (b + gamma z^2) sqrt(.))
 * which does not cancel for large |z|.
 */
inline double stieltjes(double z, const EnsembleParams& p) {
    const double e = p.edge();
    if (!(std::abs(z) > e)) throw DomainError("stieltjes: z must lie outside the support");
    const double root = std::copysign(std::sqrt(z * z - 4.0 * p.a2), z);
    const double b = p.b(), z2 = z * z;
    const double num = 2.0 * p.a2 * (b * b + p.gamma * z2 * (p.mu + 3.0 * p.a2 * p.gamma));
    return num / (p.mu * z + p.gamma * z2 * z + (b + p.gamma * z2) * root);
}

/** dS/dz outside the support. */
inline double stieltjes_deriv(double z, const EnsembleParams& p) {
    const double e = p.edge();
    if (!(std::abs(z) > e)) throw DomainError("stieltjes_deriv: z must lie outside the support");
    const double root = std::copysign(std::sqrt(z * z - 4.0 * p.a2), z);
    const double q = p.b() + p.gamma * z * z;
    return 0.5 * (p.mu + 3.0 * p.gamma * z * z - 2.0 * p.gamma * z * root - q * z / root);
}

/** Quadrature of the spectral measure: sum_i w_i f(x_i) approximates E f(D). */
struct SpectralGrid {
    std::vector<double> nodes;
    std::vector<double> weights;

    template <class F>
    double expect(F&& f) const {
        double s = 0.0;
        for (std::size_t i = 0; i < nodes.size(); ++i) s += weights[i] * f(nodes[i]);
        return s;
    }
};

/**
 * Gauss–Legendre in theta after x = 2a sin(theta); the square-root edges turn
 * into a smooth trigonometric polynomial, integrated exactly up to high degree.
 */
inline SpectralGrid make_grid(const EnsembleParams& p, int n = 400) {
    if (n < 1) throw DomainError("make_grid: need at least one node");
    const auto& gl = gauss_legendre(n);
    SpectralGrid g;
    g.nodes.resize(n);
    g.weights.resize(n);
    const double e = p.edge();
    for (int i = 0; i < n; ++i) {
        const double th = 0.5 * M_PI * gl.nodes[i];
        const double s = std::sin(th), c = std::cos(th);
        g.nodes[i] = e * s;
        g.weights[i] = 0.5 * M_PI * gl.weights[i] * (p.b() + 4.0 * p.a2 * p.gamma * s * s) * 4.0 * p.a2 * c * c /
                       (2.0 * M_PI);
    }
    return g;
}

/** m_0..m_kmax of the density by quadrature (m_0 = 1 up to rounding). */
inline std::vector<double> moments(const EnsembleParams& p, int kmax) {
    if (kmax < 1) throw DomainError("moments: kmax must be at least 1");
    // A trigonometric polynomial of degree kmax+4 needs about kmax/2+3 nodes.
    const auto grid = make_grid(p, std::max(400, kmax + 8));
    std::vector<double> m(kmax + 1, 0.0);
    for (std::size_t i = 0; i < grid.nodes.size(); ++i) {
        double xp = 1.0;
        for (int k = 0; k <= kmax; ++k) {
            m[k] += grid.weights[i] * xp;
            xp *= grid.nodes[i];
        }
    }
    return m;
}

/** Free cumulants, 1-indexed; orders above kmax read as zero. */
struct FreeCumulants {
    std::vector<double> kappa;  // kappa[0] unused

    int kmax() const { return static_cast<int>(kappa.size()) - 1; }
    double operator()(int k) const { return (k >= 1 && k <= kmax()) ? kappa[k] : 0.0; }
};

namespace detail {

// Coefficients [z^0..z^n] of M(z)^s for s = 0..n, with M = sum m_k z^k.
template <class T>
std::vector<std::vector<T>> moment_powers(const std::vector<T>& m, int n) {
    std::vector<std::vector<T>> pw(n + 1, std::vector<T>(n + 1, T(0)));
    pw[0][0] = T(1);
    for (int s = 1; s <= n; ++s)
        for (int i = 0; i <= n; ++i) {
            if (pw[s - 1][i] == T(0)) continue;
            for (int j = 0; i + j <= n; ++j) pw[s][i + j] += pw[s - 1][i] * m[j];
        }
    return pw;
}

}  // namespace detail

namespace detail {

template <class T>
std::vector<T> free_cumulants_impl(std::vector<T> m) {
    const int n = static_cast<int>(m.size()) - 1;
    m[0] = T(1);
    std::vector<T> kap(n + 1, T(0));
    // kappa_k enters m_k only through s = k with [z^0]M^k = 1.
    const auto pw = moment_powers(m, n);
    for (int k = 1; k <= n; ++k) {
        T acc = T(0);
        for (int s = 1; s < k; ++s) acc += kap[s] * pw[s][k - s];
        kap[k] = m[k] - acc;
    }
    return kap;
}

}  // namespace detail

/**
 * Moment to free-cumulant recursion from M(z) = 1 + sum_s kappa_s (z M(z))^s.
 * Input is m_0..m_kmax with m_0 = 1; runs in extended precision. The
 * recursion cancels heavily at high order, so doubles in give roughly
 * kmax <= 30 usable orders; see ensemble_cumulants for the exact route.
 */
inline FreeCumulants free_cumulants(const std::vector<double>& moments_in) {
    if (moments_in.size() < 2) throw DomainError("free_cumulants: need m_0 and at least m_1");
    const auto kap = detail::free_cumulants_impl(std::vector<long double>(moments_in.begin(), moments_in.end()));
    FreeCumulants out;
    out.kappa.assign(kap.size(), 0.0);
    for (std::size_t k = 1; k < kap.size(); ++k) out.kappa[k] = static_cast<double>(kap[k]);
    return out;
}

/** Inverse map: m_0..m_kmax from kappa_1..kappa_kmax. */
inline std::vector<double> cumulants_to_moments(const FreeCumulants& c) {
    const int n = c.kmax();
    using T = long double;
    std::vector<T> m(n + 1, T(0));
    m[0] = T(1);
    for (int k = 1; k <= n; ++k) {
        // [z^{k-s}] M^s only involves m_0..m_{k-1}, already known.
        std::vector<T> mk(m.begin(), m.begin() + k);
        mk.resize(k + 1, T(0));
        auto pw = detail::moment_powers(mk, k);
        T acc = T(0);
        for (int s = 1; s <= k; ++s) acc += T(c(s)) * pw[s][k - s];
        m[k] = acc;
    }
    return std::vector<double>(m.begin(), m.end());
}

/**
 * Free cumulants of the quartic ensemble up to kmax. Moments come from the
 * closed form m_2k = b a^{2k+2} C_k + gamma a^{2k+4} C_{k+1} (C_k Catalan) in
 * 100-digit arithmetic, with a^2 recomputed at that precision so that m_0 = 1
 * holds exactly; the recursion then stays accurate at any practical order.
 */
inline FreeCumulants ensemble_cumulants(const EnsembleParams& p, int kmax = 12) {
    if (kmax < 1) throw DomainError("ensemble_cumulants: kmax must be at least 1");
    using T = boost::multiprecision::cpp_bin_float_100;
    const T mu = p.mu, g = p.gamma;
    const T a2 = g == 0 ? T(1) / mu : T(2) / (mu + sqrt(mu * mu + 12 * g));
    const T b = mu + 2 * a2 * g;
    std::vector<T> m(kmax + 1, T(0));
    T cat = 1;  // C_k
    T a2k = a2;  // a^{2k+2}
    for (int k = 0; 2 * k <= kmax; ++k) {
        const T cat_next = cat * 2 * (2 * k + 1) / (k + 2);
        m[2 * k] = b * a2k * cat + g * a2k * a2 * cat_next;
        cat = cat_next;
        a2k *= a2;
    }
    const auto kap = detail::free_cumulants_impl(m);
    FreeCumulants out;
    out.kappa.assign(kmax + 1, 0.0);
    for (int k = 1; k <= kmax; ++k) out.kappa[k] = static_cast<double>(kap[k]);
    return out;
}

/** Truncated R(s) = sum_{k>=0} kappa_{k+1} s^k. */
inline double r_transform(double s, const FreeCumulants& c) {
    double acc = 0.0;
    for (int k = c.kmax() - 1; k >= 0; --k) acc = acc * s + c(k + 1);
    return acc;
}

/** Truncated R'(s) = sum_{k>=1} k kappa_{k+1} s^{k-1}. */
inline double r_transform_deriv(double s, const FreeCumulants& c) {
    double acc = 0.0;
    for (int k = c.kmax() - 1; k >= 1; --k) acc = acc * s + k * c(k + 1);
    return acc;
}

/** Magnitude of the last retained term of R'(s); a cheap truncation diagnostic. */
inline double r_transform_deriv_tail(double s, const FreeCumulants& c) {
    const int k = c.kmax() - 1;
    if (k < 1) return 0.0;
    return std::abs(k * c(k + 1) * std::pow(s, k - 1));
}

/**
 * Largest argument for which R is defined through the real branch of the
 * inverse Stieltjes transform: S(2a) = a (mu + 4 gamma a^2).
 */
inline double r_domain_edge(const EnsembleParams& p) { return p.a() * (p.mu + 4.0 * p.gamma * p.a2); }

}  // namespace qamp
