#pragma once

#include "numerics.hpp"
#include "priors.hpp"
#include "spectrum.hpp"

#include <Eigen/Dense>
#include <cblas.h>
#include <lapacke.h>

#include <algorithm>
#include <cstdint>
#include <functional>
#include <random>
#include <string>
#include <vector>

namespace qamp {

using Rng = std::mt19937_64;

/** SplitMix64 finalizer. */
inline std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

/** 64-bit FNV-1a of a stream label. */
inline std::uint64_t fnv1a(const std::string& s) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : s) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    return h;
}

/**
 * Per-trial random streams: seed = splitmix(splitmix(splitmix(master) ^ trial) ^ fnv1a(label)).
 * Labels in use: "eigenvalues", "basis", "prior", "amp-init", "se-mc".
 */
struct SeedScheme {
    std::uint64_t master_seed = 1;
    std::uint64_t trial_index = 0;

    std::uint64_t seed(const std::string& label) const {
        return splitmix64(splitmix64(splitmix64(master_seed) ^ trial_index) ^ fnv1a(label));
    }
    Rng stream(const std::string& label) const { return Rng(seed(label)); }
};

/** Tabulated inverse CDF on a uniform theta grid, x = 2a sin(theta). */
class EigenvalueSampler {
public:
    explicit EigenvalueSampler(const EnsembleParams& p, int nodes = 10000) {
        x_.resize(nodes + 1);
        f_.resize(nodes + 1);
        for (int j = 0; j <= nodes; ++j) {
            const double th = -M_PI / 2.0 + M_PI * j / nodes;
            x_[j] = p.edge() * std::sin(th);
            f_[j] = cdf(x_[j], p);
        }
        x_.front() = -p.edge();
        x_.back() = p.edge();
        f_.front() = 0.0;
        f_.back() = 1.0;
    }

    double quantile(double u) const {
        auto it = std::upper_bound(f_.begin(), f_.end(), u);
        if (it == f_.begin()) return x_.front();
        if (it == f_.end()) return x_.back();
        const std::size_t j = static_cast<std::size_t>(it - f_.begin());
        const double df = f_[j] - f_[j - 1];
        const double w = df > 0.0 ? (u - f_[j - 1]) / df : 0.0;
        return x_[j - 1] + w * (x_[j] - x_[j - 1]);
    }

    template <class R>
    double operator()(R& rng) const {
        std::uniform_real_distribution<double> uni(0.0, 1.0);
        return quantile(uni(rng));
    }

private:
    std::vector<double> x_, f_;
};

inline Eigen::VectorXd sample_eigenvalues(int n, const EnsembleParams& p, Rng& rng) {
    if (n < 1) throw DomainError("sample_eigenvalues: n must be positive");
    EigenvalueSampler sampler(p);
    Eigen::VectorXd d(n);
    for (int i = 0; i < n; ++i) d(i) = sampler(rng);
    return d;
}

/**
 * Haar orthogonal matrix: the orthogonal factor of a square Gaussian matrix with
 * the triangular diagonal made positive. Each Householder vector is drawn
 * directly as a fresh Gaussian column, which has the same law as reflecting the
 * trailing block of a Gaussian matrix, and then accumulated with dorgqr.
 */
inline Eigen::MatrixXd haar_orthogonal(int n, Rng& rng) {
    if (n < 1) throw DomainError("haar_orthogonal: n must be positive");
    std::normal_distribution<double> nd;
    Eigen::MatrixXd a = Eigen::MatrixXd::Zero(n, n);
    std::vector<double> tau(n, 0.0);
    std::vector<double> sign(n, 1.0);
    for (int k = 0; k < n; ++k) {
        double* col = a.data() + static_cast<std::size_t>(k) * n + k;
        for (int i = 0; i < n - k; ++i) col[i] = nd(rng);
        double alpha = col[0];
        LAPACKE_dlarfg(n - k, &alpha, col + 1, 1, &tau[k]);
        sign[k] = alpha < 0.0 ? -1.0 : 1.0;
        col[0] = alpha;
    }
    const lapack_int info = LAPACKE_dorgqr(LAPACK_COL_MAJOR, n, n, n, a.data(), n, tau.data());
    if (info != 0) throw FactorizationError("haar_orthogonal: dorgqr failed");
    for (int k = 0; k < n; ++k)
        if (sign[k] < 0.0) a.col(k) *= -1.0;
    return a;
}

/** Y = (lambda/N) x x^T + O^T D O with its ingredients. */
struct SpikedInstance {
    int n = 0;
    double lambda = 0.0;
    Eigen::MatrixXd y;
    Eigen::VectorXd x_star;
    Eigen::VectorXd eigenvalues_d;  // sorted descending
};

/** Z = O^T diag(d) O for d sorted descending, via two rank-k updates. */
inline Eigen::MatrixXd rotate_spectrum(const Eigen::MatrixXd& o, const Eigen::VectorXd& d) {
    const int n = static_cast<int>(d.size());
    Eigen::MatrixXd a = o;
    int npos = 0;
    while (npos < n && d(npos) > 0.0) ++npos;
    for (int i = 0; i < n; ++i) a.row(i) *= std::sqrt(std::abs(d(i)));
    Eigen::MatrixXd z = Eigen::MatrixXd::Zero(n, n);
    if (npos > 0)
        cblas_dsyrk(CblasColMajor, CblasUpper, CblasTrans, n, npos, 1.0, a.data(), n, 0.0, z.data(), n);
    if (npos < n)
        cblas_dsyrk(CblasColMajor, CblasUpper, CblasTrans, n, n - npos, -1.0, a.data() + npos, n, 1.0, z.data(),
                    n);
    z.triangularView<Eigen::StrictlyLower>() = z.transpose().triangularView<Eigen::StrictlyLower>();
    return z;
}

/** Rotationally invariant noise Z = O^T D O together with its spectrum. */
struct NoiseDraw {
    Eigen::MatrixXd z;
    Eigen::VectorXd eigenvalues_d;  // sorted descending
};

/** Uses the "eigenvalues" and "basis" streams of the seed scheme. */
inline NoiseDraw make_noise(int n, const EnsembleParams& p, const SeedScheme& seeds) {
    if (n < 1) throw DomainError("make_noise: n must be positive");
    NoiseDraw nd;
    Rng reig = seeds.stream("eigenvalues");
    nd.eigenvalues_d = sample_eigenvalues(n, p, reig);
    std::sort(nd.eigenvalues_d.data(), nd.eigenvalues_d.data() + n, std::greater<double>());
    Rng rbasis = seeds.stream("basis");
    nd.z = rotate_spectrum(haar_orthogonal(n, rbasis), nd.eigenvalues_d);
    return nd;
}

/** Signal drawn from the "prior" stream. */
inline Eigen::VectorXd sample_signal(int n, const Prior& prior, const SeedScheme& seeds) {
    Rng rprior = seeds.stream("prior");
    Eigen::VectorXd x(n);
    for (int i = 0; i < n; ++i) x(i) = prior.sample(rprior);
    return x;
}

/** Adds the spike to a given noise draw; lets several SNRs share one noise matrix. */
inline SpikedInstance assemble_instance(const NoiseDraw& noise, const Eigen::VectorXd& x_star, double lambda) {
    if (lambda < 0.0) throw DomainError("assemble_instance: lambda must be nonnegative");
    SpikedInstance inst;
    inst.n = static_cast<int>(noise.z.rows());
    inst.lambda = lambda;
    inst.eigenvalues_d = noise.eigenvalues_d;
    inst.x_star = x_star;
    inst.y = noise.z;
    inst.y.noalias() += (lambda / inst.n) * x_star * x_star.transpose();
    return inst;
}

inline SpikedInstance make_instance(int n, double lambda, const Prior& prior, const EnsembleParams& p,
                                    const SeedScheme& seeds) {
    if (n < 2) throw DomainError("make_instance: n must be at least 2");
    if (lambda < 0.0) throw DomainError("make_instance: lambda must be nonnegative");
    return assemble_instance(make_noise(n, p, seeds), sample_signal(n, prior, seeds), lambda);
}

/** Eigenvalues of a symmetric matrix in descending order (LAPACK dsyevd). */
inline Eigen::VectorXd symmetric_eigenvalues(const Eigen::MatrixXd& m) {
    const int n = static_cast<int>(m.rows());
    Eigen::MatrixXd work = m;
    Eigen::VectorXd w(n);
    const lapack_int info = LAPACKE_dsyevd(LAPACK_COL_MAJOR, 'N', 'U', n, work.data(), n, w.data());
    if (info != 0) throw FactorizationError("symmetric_eigenvalues: dsyevd failed");
    std::reverse(w.data(), w.data() + n);
    return w;
}

}  // namespace qamp
