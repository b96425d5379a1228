#pragma once

#include "numerics.hpp"

#include <cmath>
#include <random>
#include <string>

namespace qamp {

enum class PriorKind { Rademacher, Gaussian };

/** Unit second-moment signal prior. */
struct Prior {
    PriorKind kind = PriorKind::Rademacher;

    static Prior rademacher() { return {PriorKind::Rademacher}; }
    static Prior gaussian() { return {PriorKind::Gaussian}; }

    std::string name() const { return kind == PriorKind::Rademacher ? "rademacher" : "gaussian"; }

    template <class Rng>
    double sample(Rng& rng) const {
        if (kind == PriorKind::Rademacher) return (rng() & 1u) ? 1.0 : -1.0;
        std::normal_distribution<double> nd;
        return nd(rng);
    }
};

inline Prior parse_prior(const std::string& s) {
    if (s == "rademacher") return Prior::rademacher();
    if (s == "gaussian") return Prior::gaussian();
    throw DomainError("unknown prior '" + s + "'");
}

/** E[X | mu_eff X + sqrt(sigma2) Z = f]. */
inline double denoise(double f, double mu_eff, double sigma2, const Prior& prior) {
    if (!(sigma2 > 0.0)) throw DomainError("denoise: sigma2 must be positive");
    if (prior.kind == PriorKind::Rademacher) return std::tanh(f * mu_eff / sigma2);
    return f * mu_eff / (mu_eff * mu_eff + sigma2);
}

inline double denoise_deriv(double f, double mu_eff, double sigma2, const Prior& prior) {
    if (!(sigma2 > 0.0)) throw DomainError("denoise_deriv: sigma2 must be positive");
    if (prior.kind == PriorKind::Rademacher) {
        const double t = std::tanh(f * mu_eff / sigma2);
        return (mu_eff / sigma2) * (1.0 - t * t);
    }
    return mu_eff / (mu_eff * mu_eff + sigma2);
}

/** Posterior variance E[X^2|f] - E[X|f]^2. */
inline double posterior_variance(double f, double mu_eff, double sigma2, const Prior& prior) {
    if (!(sigma2 > 0.0)) throw DomainError("posterior_variance: sigma2 must be positive");
    if (prior.kind == PriorKind::Rademacher) {
        const double t = std::tanh(f * mu_eff / sigma2);
        return 1.0 - t * t;
    }
    return sigma2 / (mu_eff * mu_eff + sigma2);
}

/**
 * Scalar-channel mmse at signal-to-noise ratio snr.
 *
 * Rademacher: E[1 - tanh(snr + sqrt(snr) Z)] integrated in t = snr + sqrt(snr) Z,
 * written as 2/(1+e^{2t}) so the exponentially small large-snr tail keeps its
 * relative accuracy.
 */
inline double mmse(double snr, const Prior& prior) {
    if (snr < 0.0) throw DomainError("mmse: snr must be nonnegative");
    if (snr == 0.0) return 1.0;
    if (prior.kind == PriorKind::Gaussian) return 1.0 / (1.0 + snr);
    auto f = [](double t) { return t > 0.0 ? 2.0 * std::exp(-2.0 * t) / (1.0 + std::exp(-2.0 * t)) : 2.0 / (1.0 + std::exp(2.0 * t)); };
    return gaussian_expectation(f, snr, std::sqrt(snr));
}

/** E[denoise'(F)] for F = mu X + sqrt(sigma2) Z, using E[1 - tanh^2] = mmse for Rademacher. */
inline double expected_denoise_deriv(double mu_eff, double sigma2, const Prior& prior) {
    if (!(sigma2 > 0.0)) throw DomainError("expected_denoise_deriv: sigma2 must be positive");
    if (prior.kind == PriorKind::Gaussian) return mu_eff / (mu_eff * mu_eff + sigma2);
    return (mu_eff / sigma2) * mmse(mu_eff * mu_eff / sigma2, prior);
}

}  // namespace qamp
