#pragma once

#include "coeffs.hpp"
#include "numerics.hpp"
#include "priors.hpp"
#include "spectrum.hpp"

#include <cmath>
#include <limits>
#include <ostream>
#include <vector>

namespace qamp {

/** Bayes-optimal replica-symmetric fixed point on the Nishimori line. */
struct ReplicaSolution {
    double m = 0.0;
    double kappa = 0.0;
    double tilde_v = 0.0;
    double hat_m = 0.0;
    double tilde_q = 0.0;  // decoupled; diagnostics only
    double mmse = 0.5;
    int iterations = 0;
    double residual = 0.0;
    int boundary_hits = 0;  // iterations where E[H] = 1-m had no root above the spectrum
};

struct BaselineFixedPoint {
    double delta_star = 0.0;
    double sigma_star = 0.0;
    double mse = 0.5;
    int iterations = 0;
    double residual = 0.0;
};

/** Replica fixed point for the Gaussian-likelihood (mismatched) posterior. */
struct MismatchedSolution {
    double m = 0.0, q = 0.0, v = 1.0;
    double hat_m = 0.0, hat_q = 0.0, hat_v = 0.0;
    double tilde_q = 0.0, tilde_v = 0.0;
    double mse = 0.5;
    int iterations = 0;
    double residual = 0.0;
    double cancellation = 0.0;  // q/(v-q)^2 divided by |hat_q| at the last step
};

/** Spectral PCA limits; c = 1 - R'(1/lambda)/lambda^2 is the squared cosine. */
struct PcaPrediction {
    double cos2 = 0.0;
    double overlap2 = 0.0;          // c^2, the matrix overlap m^2
    double mse = 0.5;               // (1 - c^2)/2, same normalization as the replica mmse
    double mse_unnormalized = 1.0;  // 1 - c^2
};

struct ReplicaOptions {
    double init_m = 0.99;
    double damping = 0.5;
    double tol = 1e-10;
    int max_iter = 10000;
    int grid_nodes = 400;
};

namespace detail {

inline double cubic_max_on_support(const PreprocessCoeffs& j, const EnsembleParams& p) {
    return poly_max_on(j, -p.edge(), p.edge());
}

}  // namespace detail

/**
 * Root of E[1/(V - J(D))] = 1 - m above max J on the support, where J is the
 * optimal cubic. Bisection on [max + 1e-9, max + 10], doubling the upper end.
 */
inline double solve_tilde_v(double m, double lambda, const EnsembleParams& p, const SpectralGrid& grid) {
    if (!(m >= 0.0 && m < 1.0)) throw DomainError("solve_tilde_v: m must lie in [0, 1)");
    const auto j = optimal_coeffs(p.mu, p.gamma, lambda);
    std::vector<double> jd(grid.nodes.size());
    for (std::size_t i = 0; i < jd.size(); ++i) jd[i] = j(grid.nodes[i]);
    const double jmax = std::max(detail::cubic_max_on_support(j, p), *std::max_element(jd.begin(), jd.end()));
    auto f = [&](double v) {
        double s = 0.0;
        for (std::size_t i = 0; i < jd.size(); ++i) s += grid.weights[i] / (v - jd[i]);
        return s - (1.0 - m);
    };
    const double lo = jmax + 1e-9;
    if (f(lo) < 0.0) throw RootNotBracketed("solve_tilde_v: 1-m exceeds E[H] at the spectral edge");
    double width = 10.0;
    int doublings = 0;
    while (f(lo + width) > 0.0) {
        width *= 2.0;
        if (++doublings > 200) throw RootNotBracketed("solve_tilde_v: search window exhausted");
    }
    return bisect(f, lo, lo + width, 1e-15);
}

inline double solve_tilde_v(double m, double lambda, const EnsembleParams& p) {
    return solve_tilde_v(m, lambda, p, make_grid(p));
}

/** Damped iteration of the reduced (m, kappa) system; mmse = (1 - m^2)/2. */
inline ReplicaSolution bo_fixed_point(double lambda, const Prior& prior, const EnsembleParams& p,
                                      const ReplicaOptions& opt = {}) {
    if (lambda < 0.0) throw DomainError("bo_fixed_point: lambda must be nonnegative");
    if (!(opt.init_m > 0.0 && opt.init_m < 1.0)) throw DomainError("bo_fixed_point: init_m must lie in (0, 1)");
    const auto grid = make_grid(p, opt.grid_nodes);
    const auto j = optimal_coeffs(p.mu, p.gamma, lambda);
    const std::size_t nn = grid.nodes.size();
    std::vector<double> jd(nn);
    for (std::size_t i = 0; i < nn; ++i) jd[i] = j(grid.nodes[i]);
    const double jmax = std::max(detail::cubic_max_on_support(j, p), *std::max_element(jd.begin(), jd.end()));
    const double g = p.gamma, l2 = lambda * lambda;

    ReplicaSolution s;
    double m = opt.init_m, kappa = 0.0;
    std::vector<double> h(nn);
    for (int it = 1; it <= opt.max_iter; ++it) {
        double v;
        try {
            v = solve_tilde_v(m, lambda, p, grid);
        } catch (const RootNotBracketed&) {
            v = jmax + 1e-9;
            ++s.boundary_hits;
        }
        for (std::size_t i = 0; i < nn; ++i) h[i] = 1.0 / (v - jd[i]);
        double e_dmh = 0.0;  // E[D (m D + kappa) H]
        for (std::size_t i = 0; i < nn; ++i) {
            const double d = grid.nodes[i];
            e_dmh += grid.weights[i] * d * (m * d + kappa) * h[i];
        }
        const double qconst = -g * l2 / (1.0 - m) * e_dmh + m / (1.0 - m);
        double hat_m = p.mu * l2 * m, kappa_new = 0.0;
        for (std::size_t i = 0; i < nn; ++i) {
            const double d = grid.nodes[i];
            const double q = g * m * l2 * d * d + g * l2 * kappa * d + qconst;
            hat_m += g * l2 * grid.weights[i] * h[i] * d * ((m * d + kappa) / (1.0 - m) + d * q);
            kappa_new += grid.weights[i] * d * q * h[i];
        }
        hat_m = std::max(hat_m, 0.0);
        const double m_new = 1.0 - mmse(hat_m, prior);
        const double res = std::abs(m_new - m) + std::abs(kappa_new - kappa);
        s.tilde_v = v;
        s.hat_m = hat_m;
        s.iterations = it;
        s.residual = res;
        m = opt.damping * m + (1.0 - opt.damping) * m_new;
        kappa = opt.damping * kappa + (1.0 - opt.damping) * kappa_new;
        m = std::min(m, 1.0 - 1e-15);
        if (res < opt.tol) {
            s.m = m;
            s.kappa = kappa;
            s.tilde_q = hat_m - m / (1.0 - m);
            s.mmse = 0.5 * (1.0 - m * m);
            return s;
        }
    }
    throw NonConvergence("bo_fixed_point: no convergence", s.residual);
}

struct BaselineOptions {
    double init_delta = 0.99;
    double damping = 0.5;
    double tol = 1e-13;
    int max_iter = 100000;
};

/** Fixed point of 1 - D = mmse(l^2 D^2/S), S = D R'(l D (1-D)/S); MSE = (1 - D^2)/2. */
inline BaselineFixedPoint baseline_fixed_point(double lambda, const Prior& prior, const FreeCumulants& cum,
                                               const BaselineOptions& opt = {}) {
    if (!(lambda > 0.0)) throw DomainError("baseline_fixed_point: lambda must be positive");
    BaselineFixedPoint out;
    double d = opt.init_delta;
    if (d <= 0.0) return out;  // uninformative start sits on the trivial fixed point
    auto solve_sigma = [&](double dd) {
        double s = dd;
        for (int k = 0; k < 500; ++k) {
            const double sn = dd * r_transform_deriv(lambda * dd * (1.0 - dd) / s, cum);
            if (!(sn > 0.0)) throw NonConvergence("baseline_fixed_point: Sigma left the positive axis", sn);
            if (std::abs(sn - s) < 1e-15 * std::max(1.0, s)) return sn;
            s = sn;
        }
        return s;
    };
    for (int it = 1; it <= opt.max_iter; ++it) {
        const double s = solve_sigma(d);
        const double dn = 1.0 - mmse(lambda * lambda * d * d / s, prior);
        out.iterations = it;
        out.residual = std::abs(dn - d);
        if (out.residual < opt.tol) {
            out.delta_star = dn;
            out.sigma_star = solve_sigma(dn);
            out.mse = 0.5 * (1.0 - dn * dn);
            return out;
        }
        d = opt.damping * d + (1.0 - opt.damping) * dn;
        if (d < 1e-300) {
            out.delta_star = 0.0;
            out.sigma_star = 0.0;
            out.mse = 0.5;
            return out;
        }
    }
    throw NonConvergence("baseline_fixed_point: no convergence", out.residual);
}

struct MismatchedOptions {
    double init_m = 0.9;
    double init_q = 0.9;
    double damping = 0.5;
    double tol = 1e-10;
    int max_iter = 20000;
    double max_cancellation = 1e9;
    int grid_nodes = 400;
};

namespace detail {

// (m, q, v - q) under the local measure with field hat_m X0 + sqrt(hat_q) Z and
// quadratic weight (hat_q + hat_v)/2 on x^2; X0 = 1 by symmetry.
struct LocalMoments {
    double m, q, gap;
};

inline LocalMoments local_moments(double hat_m, double hat_q, double hat_vq, const Prior& prior) {
    if (prior.kind == PriorKind::Gaussian) {
        const double a = 1.0 + hat_vq;
        if (!(a > 0.0)) throw InstabilityError("mismatched_fixed_point: local measure not normalizable");
        return {hat_m / a, (hat_q + hat_m * hat_m) / (a * a), 1.0 / a};
    }
    const double sd = std::sqrt(hat_q);
    auto one_minus_tanh = [](double t) {
        return t > 0.0 ? 2.0 * std::exp(-2.0 * t) / (1.0 + std::exp(-2.0 * t)) : 2.0 / (1.0 + std::exp(2.0 * t));
    };
    auto sech2 = [](double t) {
        const double c = std::cosh(std::min(std::abs(t), 350.0));
        return 1.0 / (c * c);
    };
    const double one_m = gaussian_expectation(one_minus_tanh, hat_m, sd);
    const double gap = gaussian_expectation(sech2, hat_m, sd);
    return {1.0 - one_m, 1.0 - gap, gap};
}

}  // namespace detail

/**
 * Iterates: V from v - q = E[1/(V - lambda D)]; tilde_q, hat_q, hat_m = lambda^2 m and
 * hat_v + hat_q; then (m, q, v) through the local measure. MSE = (1 - 2 m^2 + q^2)/2.
 */
inline MismatchedSolution mismatched_fixed_point(double lambda, const Prior& prior, const EnsembleParams& p,
                                                 const MismatchedOptions& opt = {}) {
    if (lambda < 0.0) throw DomainError("mismatched_fixed_point: lambda must be nonnegative");
    MismatchedSolution s;
    if (lambda == 0.0) return s;
    const auto grid = make_grid(p, opt.grid_nodes);
    const std::size_t nn = grid.nodes.size();
    const double lo = lambda * p.edge() + 1e-12;

    double m = opt.init_m, q = opt.init_q, gap = 1.0 - q;
    for (int it = 1; it <= opt.max_iter; ++it) {
        auto e_inv = [&](double v, int power) {
            double acc = 0.0;
            for (std::size_t i = 0; i < nn; ++i) acc += grid.weights[i] * std::pow(v - lambda * grid.nodes[i], -power);
            return acc;
        };
        auto f = [&](double v) { return e_inv(v, 1) - gap; };
        if (f(lo) < 0.0) throw RootNotBracketed("mismatched_fixed_point: v - q exceeds E[1/(V - lambda D)] at the edge");
        double width = 10.0;
        int doublings = 0;
        while (f(lo + width) > 0.0) {
            width *= 2.0;
            if (++doublings > 200) throw RootNotBracketed("mismatched_fixed_point: search window exhausted");
        }
        const double tv = bisect(f, lo, lo + width, 1e-15);
        const double tq = -q / e_inv(tv, 2);
        const double big = q / (gap * gap);
        const double hq = big + tq;
        const double hm = lambda * lambda * m;
        const double hvq = lambda * lambda * (q + gap) + 1.0 / gap - tv;
        s.cancellation = std::abs(big) / std::max(std::abs(hq), std::numeric_limits<double>::min());
        if (s.cancellation > opt.max_cancellation || hq < 0.0)
            throw InstabilityError("mismatched_fixed_point: hat_q lost to cancellation");
        const auto lm = detail::local_moments(hm, hq, hvq, prior);
        const double res = std::abs(lm.m - m) + std::abs(lm.q - q) + std::abs(lm.gap - gap);
        s.tilde_v = tv;
        s.tilde_q = tq;
        s.hat_q = hq;
        s.hat_m = hm;
        s.hat_v = hvq - hq;
        s.iterations = it;
        s.residual = res;
        m = opt.damping * m + (1.0 - opt.damping) * lm.m;
        q = opt.damping * q + (1.0 - opt.damping) * lm.q;
        gap = opt.damping * gap + (1.0 - opt.damping) * lm.gap;
        if (res < opt.tol) {
            s.m = m;
            s.q = q;
            s.v = q + gap;
            s.mse = 0.5 * (1.0 - 2.0 * m * m + q * q);
            return s;
        }
    }
    throw NonConvergence("mismatched_fixed_point: no convergence", s.residual);
}

/** c = 1 - R'(1/lambda)/lambda^2; below the spectral threshold everything is trivial. */
inline PcaPrediction pca_overlap_and_mse(double lambda, const FreeCumulants& cum) {
    PcaPrediction out;
    if (!(lambda > 0.0)) return out;
    const double c = 1.0 - r_transform_deriv(1.0 / lambda, cum) / (lambda * lambda);
    if (c <= 0.0) return out;
    out.cos2 = c;
    out.overlap2 = c * c;
    out.mse = 0.5 * (1.0 - c * c);
    out.mse_unnormalized = 1.0 - c * c;
    return out;
}

}  // namespace qamp
