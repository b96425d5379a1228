#pragma once

#include "coeffs.hpp"
#include "numerics.hpp"
#include "priors.hpp"
#include "sampling.hpp"
#include "se.hpp"
#include "spectrum.hpp"

#include <Eigen/Dense>

#include <cmath>
#include <optional>
#include <random>
#include <vector>

namespace qamp {

/** J(Y) = sum c_k Y^k by Horner's rule with dense products. */
inline Eigen::MatrixXd preprocess(const Eigen::MatrixXd& y, const PreprocessCoeffs& c) {
    if (y.rows() != y.cols()) throw DomainError("preprocess: matrix must be square");
    if (c.k() < 1) throw DomainError("preprocess: need at least one coefficient");
    Eigen::MatrixXd acc = c.c.back() * y;
    for (int i = c.k() - 2; i >= 0; --i) {
        acc.diagonal().array() += c.c[i];
        acc = (y * acc).eval();
    }
    return 0.5 * (acc + acc.transpose());
}

/** Y^1 u .. Y^K u through K matrix-vector products. */
inline std::vector<Eigen::VectorXd> krylov_powers(const Eigen::MatrixXd& y, const Eigen::VectorXd& u, int k) {
    std::vector<Eigen::VectorXd> out;
    out.reserve(k);
    Eigen::VectorXd v = u;
    for (int i = 0; i < k; ++i) {
        v = y.selfadjointView<Eigen::Lower>() * v;
        out.push_back(v);
    }
    return out;
}

inline Eigen::VectorXd apply_j(const Eigen::MatrixXd& y, const PreprocessCoeffs& c, const Eigen::VectorXd& u) {
    const auto pw = krylov_powers(y, u, c.k());
    Eigen::VectorXd out = Eigen::VectorXd::Zero(u.size());
    for (int i = 0; i < c.k(); ++i) out += c.c[i] * pw[i];
    return out;
}

/** Overlap and rank-one mse without forming N x N matrices. */
struct Metrics {
    double overlap = 0.0;
    double mse = 0.5;
};

inline Metrics metrics(const Eigen::VectorXd& u, const Eigen::VectorXd& x_star) {
    if (u.size() != x_star.size()) throw DomainError("metrics: length mismatch");
    const double n = static_cast<double>(u.size());
    const double uu = u.squaredNorm(), xx = x_star.squaredNorm(), ux = u.dot(x_star);
    if (!(uu > 0.0) || !(xx > 0.0)) throw DomainError("metrics: zero vector");
    Metrics m;
    m.overlap = std::abs(ux) / std::sqrt(uu * xx);
    m.mse = 0.5 * (xx * xx - 2.0 * ux * ux + uu * uu) / (n * n);
    return m;
}

/** u = eps x + sqrt(1-eps^2) w, rescaled to ||u||^2 = N. */
inline Eigen::VectorXd amp_init(const Eigen::VectorXd& x_star, double epsilon, Rng& rng) {
    if (!(epsilon > 0.0 && epsilon <= 1.0)) throw DomainError("amp_init: epsilon must lie in (0, 1]");
    const int n = static_cast<int>(x_star.size());
    std::normal_distribution<double> nd;
    Eigen::VectorXd u = epsilon * x_star;
    const double s = std::sqrt(std::max(0.0, 1.0 - epsilon * epsilon));
    for (int i = 0; i < n; ++i) u(i) += s * nd(rng);
    return u * std::sqrt(static_cast<double>(n) / u.squaredNorm());
}

struct AmpRecord {
    int t = 0;  // record t describes u^{t+1}
    double overlap = 0.0;
    double mse = 0.5;
    double norm = 0.0;  // ||u^{t+1}|| / sqrt(N)
    double mu_t = 0.0;
    double sigma2 = 0.0;
    double noise_kurtosis = 3.0;  // of f^t - mu_t x*
    std::vector<double> onsager;
};

struct AmpTrace {
    std::vector<AmpRecord> records;
    bool diverged = false;
    bool converged = false;
    Eigen::VectorXd estimate;
    double onsager_sum = 0.0;  // sum_j c_{T,j} at the last step

    bool flagged() const { return diverged || !converged; }
    double final_mse() const { return records.empty() ? 0.5 : records.back().mse; }
    double final_overlap() const { return records.empty() ? 0.0 : records.back().overlap; }
};

enum class BampMode { Empirical, Theory };

struct AmpOptions {
    int T = 10;
    double epsilon = 0.9;
    double norm_limit = 1e3;
    double converge_tol = 1e-3;
    double rise_tol = 1e-5;  // mse increase that counts towards the three-step divergence rule
};

namespace detail {

inline double excess_kurtosis_free(const Eigen::VectorXd& f, const Eigen::VectorXd& x, double mu) {
    const Eigen::ArrayXd w = (f - mu * x).array();
    const double m = w.mean();
    const Eigen::ArrayXd c = w - m;
    const double v = c.square().mean();
    return v > 0.0 ? c.square().square().mean() / (v * v) : 3.0;
}

// Shared bookkeeping of a trace: metrics, norm guard, rising-mse rule, final flags.
class TraceBuilder {
public:
    TraceBuilder(const Eigen::VectorXd& x, const AmpOptions& opt) : x_(x), opt_(opt) {}

    bool add(int t, const Eigen::VectorXd& u, const Eigen::VectorXd& f, double mu, double s2,
             const std::vector<double>& ons) {
        AmpRecord r;
        r.t = t;
        r.mu_t = mu;
        r.sigma2 = s2;
        r.onsager = ons;
        r.norm = u.norm() / std::sqrt(static_cast<double>(u.size()));
        if (!u.allFinite() || !(r.norm < opt_.norm_limit)) {
            tr_.diverged = true;
            return false;
        }
        if (r.norm > 0.0) {
            const auto m = metrics(u, x_);
            r.overlap = m.overlap;
            r.mse = m.mse;
        }
        r.noise_kurtosis = excess_kurtosis_free(f, x_, mu);
        if (!tr_.records.empty()) {
            rises_ = r.mse > tr_.records.back().mse + opt_.rise_tol ? rises_ + 1 : 0;
            if (rises_ >= 3) tr_.diverged = true;
        }
        tr_.records.push_back(std::move(r));
        return true;
    }

    void fail() { tr_.diverged = true; }

    AmpTrace finish(const Eigen::VectorXd& u) {
        tr_.estimate = u;
        const auto& rs = tr_.records;
        tr_.converged = !tr_.diverged && rs.size() >= 2 &&
                        std::abs(rs.back().mse - rs[rs.size() - 2].mse) < opt_.converge_tol;
        if (!rs.empty()) {
            tr_.onsager_sum = 0.0;
            for (double c : rs.back().onsager) tr_.onsager_sum += c;
        }
        return std::move(tr_);
    }

private:
    const Eigen::VectorXd& x_;
    const AmpOptions& opt_;
    AmpTrace tr_;
    int rises_ = 0;
};

inline double mean_denoise_deriv(const Eigen::VectorXd& f, double mu, double s2, const Prior& prior) {
    double acc = 0.0;
    for (Eigen::Index i = 0; i < f.size(); ++i) acc += denoise_deriv(f(i), mu, s2, prior);
    return acc / static_cast<double>(f.size());
}

inline Eigen::VectorXd denoise_vec(const Eigen::VectorXd& f, double mu, double s2, const Prior& prior) {
    Eigen::VectorXd u(f.size());
    for (Eigen::Index i = 0; i < f.size(); ++i) u(i) = denoise(f(i), mu, s2, prior);
    return u;
}

}  // namespace detail

/**
 * BAMP on J(Y) = sum c_k Y^k. Empirical mode estimates the tables from the
 * iterates: the auxiliary iterates are Y^l u^t, their Delta entries are inner
 * products, tilde mu of a denoiser row is lambda ||u||^2/N (Nishimori) and of a
 * linear row follows from the linear recursion. Theory mode reads (mu_t,
 * sigma_t^2, c_t) from a state-evolution trajectory.
 */
inline AmpTrace run_bamp(const SpikedInstance& inst, const PreprocessCoeffs& coeffs, const Prior& prior,
                         const FreeCumulants& cum, const AmpOptions& opt, Rng& rng, BampMode mode,
                         const SeTrajectory* theory = nullptr) {
    if (opt.T < 1) throw DomainError("run_bamp: T must be at least 1");
    if (coeffs.k() < 1) throw DomainError("run_bamp: need at least one coefficient");
    if (mode == BampMode::Theory) {
        if (theory == nullptr || static_cast<int>(theory->steps.size()) < opt.T)
            throw DomainError("run_bamp: theory mode needs a trajectory with T steps");
    }
    const int n = inst.n, k = coeffs.k();
    const double nn = static_cast<double>(n);
    detail::TraceBuilder tb(inst.x_star, opt);
    std::vector<Eigen::VectorXd> us;  // u^1 .. u^t
    us.push_back(amp_init(inst.x_star, opt.epsilon, rng));

    std::optional<OnsagerTables> tab;
    std::vector<Eigen::VectorXd> aux;  // auxiliary iterates, one per table index
    if (mode == BampMode::Empirical) {
        tab.emplace(k, opt.T, inst.lambda, cum, coeffs);
        tab->init(opt.epsilon);
        aux.push_back(us[0]);
    }

    for (int t = 1; t <= opt.T; ++t) {
        const auto pw = krylov_powers(inst.y, us.back(), k);
        Eigen::VectorXd f = Eigen::VectorXd::Zero(n);
        for (int i = 0; i < k; ++i) f += coeffs.c[i] * pw[i];

        double mu, s2;
        std::vector<double> ons;
        if (mode == BampMode::Theory) {
            const auto& st = theory->steps[t - 1];
            mu = st.mu_t;
            s2 = st.sigma2;
            ons = st.onsager;
        } else {
            for (int ell = 1; ell < k; ++ell) {
                tab->coeff_update(t, ell);
                const int r = k * (t - 1) + ell;
                aux.push_back(pw[ell - 1]);
                std::vector<double> drow(r + 1);
                for (int j = 0; j <= r; ++j) drow[j] = aux[r].dot(aux[j]) / nn;
                tab->push(tab->linear_tilde_mu(r), drow, tab->linear_phi_row(r));
            }
            const auto e = tab->emit(t);
            mu = e.mu_t;
            s2 = e.sigma2;
            ons = e.onsager;
        }
        for (int j = 0; j < t; ++j) f -= ons[j] * us[j];
        const bool null_channel = mu == 0.0 && s2 == 0.0;  // all earlier iterates vanished
        if ((!(s2 > 0.0) && !null_channel) || !f.allFinite()) {
            tb.fail();
            break;
        }
        Eigen::VectorXd u = null_channel ? Eigen::VectorXd::Zero(n) : detail::denoise_vec(f, mu, s2, prior);
        if (!tb.add(t, u, f, mu, s2, ons)) break;

        if (mode == BampMode::Empirical && t < opt.T) {
            const int r = k * t;
            const auto e = tab->emit(t);
            const double eg = null_channel ? 0.0 : detail::mean_denoise_deriv(f, mu, s2, prior);
            std::vector<double> drow(r + 1), prow(r);
            aux.push_back(u);
            for (int j = 0; j <= r; ++j) drow[j] = aux[r].dot(aux[j]) / nn;
            for (int j = 0; j < r; ++j) prow[j] = e.theta[j] * eg;
            try {
                tab->push(inst.lambda * drow[r], drow, prow);
            } catch (const NumericalError&) {
                tb.fail();
                us.push_back(std::move(u));
                break;
            }
            tab->g_reset(t);
        }
        us.push_back(std::move(u));
    }
    return tb.finish(us.back());
}

/**
 * Single-memory AMP on Y itself: the K = 1, c = (1) case of the empirical BAMP,
 * whose b-row is the last row of sum_j kappa_{j+1} Phi^j.
 */
inline AmpTrace run_baseline_amp(const SpikedInstance& inst, const Prior& prior, const FreeCumulants& cum,
                                 const AmpOptions& opt, Rng& rng) {
    return run_bamp(inst, PreprocessCoeffs{{1.0}}, prior, cum, opt, rng, BampMode::Empirical);
}

struct PcaResult {
    Eigen::VectorXd estimate;
    Eigen::VectorXd eigenvector;
    double top_eigenvalue = 0.0;
    double overlap2 = 0.0;  // (nu^T x*)^2 / ||x*||^2
    double predicted_overlap2 = 0.0;  // 1 - R'(1/lambda)/lambda^2
    double mse = 0.5;
    int iterations = 0;
};

/** Leading eigenvector by shifted power iteration. */
inline Eigen::VectorXd top_eigenvector(const Eigen::MatrixXd& y, double tol, int max_iter, int* iters = nullptr,
                                       double* eigval = nullptr) {
    const int n = static_cast<int>(y.rows());
    const double shift = 3.0 * std::sqrt(y.squaredNorm() / n);  // above |lowest eigenvalue| for a unit-variance bulk
    Eigen::VectorXd v = Eigen::VectorXd::Ones(n) / std::sqrt(static_cast<double>(n));
    Rng rng(0x9e3779b97f4a7c15ULL);
    std::normal_distribution<double> nd;
    for (int i = 0; i < n; ++i) v(i) += 1e-3 * nd(rng) / std::sqrt(static_cast<double>(n));
    v.normalize();
    int it = 0;
    for (; it < max_iter; ++it) {
        Eigen::VectorXd w = y.selfadjointView<Eigen::Lower>() * v + shift * v;
        w.normalize();
        const double diff = (w - v).norm();
        v = w;
        if (diff < tol) break;
    }
    if (iters) *iters = it;
    if (eigval) *eigval = v.dot(y.selfadjointView<Eigen::Lower>() * v);
    return v;
}

/**
 * Spectral estimator sqrt(N max(0, c)) nu, c = 1 - R'(1/lambda)/lambda^2. When
 * side information is given the sign of nu follows it; otherwise it is left as
 * found (the estimand is sign invariant).
 */
inline PcaResult spectral_pca(const SpikedInstance& inst, const FreeCumulants& cum,
                              const Eigen::VectorXd* side = nullptr, double tol = 1e-10, int max_iter = 100000) {
    PcaResult r;
    r.eigenvector = top_eigenvector(inst.y, tol, max_iter, &r.iterations, &r.top_eigenvalue);
    if (side != nullptr && r.eigenvector.dot(*side) < 0.0) r.eigenvector = -r.eigenvector;
    double c = 0.0;
    if (inst.lambda > 0.0) c = std::max(0.0, 1.0 - r_transform_deriv(1.0 / inst.lambda, cum) / (inst.lambda * inst.lambda));
    r.predicted_overlap2 = c;
    const double nn = static_cast<double>(inst.n);
    r.estimate = std::sqrt(nn * c) * r.eigenvector;
    const double p = r.eigenvector.dot(inst.x_star);
    r.overlap2 = p * p / inst.x_star.squaredNorm();
    const double xx = inst.x_star.squaredNorm() / nn;
    const double ux = r.estimate.dot(inst.x_star) / nn, uu = r.estimate.squaredNorm() / nn;
    r.mse = 0.5 * (xx * xx - 2.0 * ux * ux + uu * uu);
    return r;
}

struct EmStep {
    std::vector<double> coeffs;
    std::vector<double> gradient;
    double zeta = 0.0;
    double v_bar = 0.0;
    double chi_bar = 0.0;
    double mse = 0.5;
    bool rejected = false;
};

struct EmResult {
    PreprocessCoeffs coeffs;
    std::vector<EmStep> trace;
};

struct EmOptions {
    int steps = 20;
    double zeta = 0.05;
    int inner_T = 10;  // BAMP iterations per EM step
    double epsilon = 0.9;
    int max_halvings = 30;
};

/**
 * Gradient ascent on the AdaTAP free entropy. Each step runs the empirical BAMP
 * with the current coefficients, takes m = u^{T+1}, chi = mean posterior
 * variance and V = sum_j c_{T,j}, and moves c_k by zeta times
 * (1/N)[m^T Y^k (m/2 - eta) - (1/2) sum_i s_i^k / (V + 1/chi - J(s_i))].
 * A step with a nonpositive denominator is rejected and zeta halved.
 */
inline EmResult em_learn_coeffs(const SpikedInstance& inst, const Prior& prior, const FreeCumulants& cum,
                                const PreprocessCoeffs& init, const EmOptions& opt, Rng& rng,
                                const Eigen::VectorXd* eigenvalues = nullptr) {
    if (opt.zeta < 0.0) throw DomainError("em_learn_coeffs: zeta must be nonnegative");
    const Eigen::VectorXd sig = eigenvalues ? *eigenvalues : symmetric_eigenvalues(inst.y);
    const double nn = static_cast<double>(inst.n);
    EmResult res;
    res.coeffs = init;
    double zeta = opt.zeta;
    const int k = init.k();
    AmpOptions aopt;
    aopt.T = opt.inner_T;
    aopt.epsilon = opt.epsilon;
    for (int step = 0; step < opt.steps; ++step) {
        EmStep rec;
        Rng local = rng;
        const auto tr = run_bamp(inst, res.coeffs, prior, cum, aopt, local, BampMode::Empirical);
        const Eigen::VectorXd& m = tr.estimate;
        rec.mse = tr.final_mse();
        rec.v_bar = tr.onsager_sum;
        if (prior.kind == PriorKind::Rademacher) {
            rec.chi_bar = (1.0 - m.array().square()).mean();
        } else {
            const auto& last = tr.records.back();
            rec.chi_bar = last.sigma2 / (last.mu_t * last.mu_t + last.sigma2);
        }
        const double omega = rec.v_bar + 1.0 / std::max(rec.chi_bar, 1e-300);
        const Eigen::VectorXd jm = apply_j(inst.y, res.coeffs, m);
        Eigen::VectorXd eta(inst.n);
        for (int i = 0; i < inst.n; ++i) {
            const double h = jm(i) - rec.v_bar * m(i);
            eta(i) = prior.kind == PriorKind::Rademacher ? std::tanh(h) : h / std::max(1.0 - rec.v_bar, 1e-12);
        }
        const auto pw = krylov_powers(inst.y, m, k);
        const Eigen::VectorXd half_m_minus_eta = 0.5 * m - eta;
        rec.gradient.assign(k, 0.0);
        bool bad = false;
        for (Eigen::Index i = 0; i < sig.size() && !bad; ++i) {
            const double den = omega - res.coeffs(sig(i));
            if (!(den > 0.0)) bad = true;
        }
        if (!bad) {
            for (int kk = 0; kk < k; ++kk) {
                double tr_term = 0.0;
                for (Eigen::Index i = 0; i < sig.size(); ++i)
                    tr_term += std::pow(sig(i), kk + 1) / (omega - res.coeffs(sig(i)));
                rec.gradient[kk] = (pw[kk].dot(half_m_minus_eta) - 0.5 * tr_term) / nn;
            }
        }
        // Try the step; shrink zeta until every denominator stays positive.
        PreprocessCoeffs next = res.coeffs;
        int halvings = 0;
        while (true) {
            if (bad) break;
            for (int kk = 0; kk < k; ++kk) next.c[kk] = res.coeffs.c[kk] + zeta * rec.gradient[kk];
            bool ok = true;
            for (Eigen::Index i = 0; i < sig.size() && ok; ++i) ok = omega - next(sig(i)) > 0.0;
            if (ok) break;
            rec.rejected = true;
            zeta *= 0.5;
            if (++halvings > opt.max_halvings) {
                next = res.coeffs;
                break;
            }
        }
        rec.zeta = zeta;
        res.coeffs = next;
        rec.coeffs = res.coeffs.c;
        if (bad) rec.rejected = true;
        res.trace.push_back(std::move(rec));
    }
    return res;
}

}  // namespace qamp
