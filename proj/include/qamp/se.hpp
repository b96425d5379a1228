#pragma once

#include "coeffs.hpp"
#include "numerics.hpp"
#include "priors.hpp"
#include "sampling.hpp"
#include "spectrum.hpp"

#include <Eigen/Dense>

#include <cmath>
#include <cstdint>
#include <istream>
#include <limits>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

namespace qamp {

/** mu_t, theta_{t,.} and c_{t,.} for one outer step. */
struct Emission {
    double mu_t = 0.0;
    double sigma2 = 0.0;        // theta^T Sigma theta
    std::vector<double> theta;  // length K t
    std::vector<double> onsager;  // length t
};

/**
 * Bookkeeping shared by the state evolution and the empirical BAMP: grows
 * tilde mu / Delta / Phi / B / Sigma one index at a time and keeps the
 * alpha / beta / gamma decomposition. Indices are 0-based here; index s
 * stands for the auxiliary iterate s+1.
 */
class OnsagerTables {
public:
    OnsagerTables(int k, int t_max, double lambda, FreeCumulants cum, PreprocessCoeffs coeffs)
        : k_(k), t_max_(t_max), n_(k * t_max + 1), lambda_(lambda), cum_(std::move(cum)), c_(std::move(coeffs)) {
        if (k < 1) throw DomainError("OnsagerTables: K must be at least 1");
        if (t_max < 1) throw DomainError("OnsagerTables: T must be at least 1");
        if (c_.k() != k) throw DomainError("OnsagerTables: coefficient count differs from K");
        tmu_ = Eigen::VectorXd::Zero(n_);
        delta_ = phi_ = b_ = sigma_ = Eigen::MatrixXd::Zero(n_, n_);
        alpha_ = Eigen::MatrixXd::Zero(n_, n_);
        beta_ = Eigen::MatrixXd::Zero(n_, t_max + 1);
        gamma_ = Eigen::VectorXd::Zero(n_);
    }

    int k() const { return k_; }
    int t_max() const { return t_max_; }
    int capacity() const { return n_; }
    int size() const { return m_; }
    double lambda() const { return lambda_; }
    const PreprocessCoeffs& coeffs() const { return c_; }
    const FreeCumulants& cumulants() const { return cum_; }

    const Eigen::VectorXd& tilde_mu() const { return tmu_; }
    const Eigen::MatrixXd& delta() const { return delta_; }
    const Eigen::MatrixXd& phi() const { return phi_; }
    const Eigen::MatrixXd& b_mat() const { return b_; }
    const Eigen::MatrixXd& sigma() const { return sigma_; }
    const Eigen::MatrixXd& alpha() const { return alpha_; }
    const Eigen::MatrixXd& beta() const { return beta_; }
    const Eigen::VectorXd& gamma_coef() const { return gamma_; }

    /** Cumulant order needed by the Sigma update at full size. */
    int required_kmax() const { return 2 * k_ * t_max_ + 2; }  // see se_required_kmax
    bool truncated() const { return cum_.kmax() < required_kmax(); }

    /** First index: tilde mu_1 = lambda eps, Delta_11 = 1, B_11 = kappa_1, Sigma_11 = kappa_2, beta_11 = 1. */
    void init(double epsilon) {
        if (!(epsilon > 0.0 && epsilon <= 1.0)) throw DomainError("se_init: epsilon must lie in (0, 1]");
        m_ = 0;
        push(lambda_ * epsilon, std::vector<double>{1.0}, std::vector<double>{});
        beta_(0, 0) = 1.0;
    }

    /** Appends index m with its Delta row (length m+1, diagonal last) and Phi row (length m). */
    void push(double tmu, const std::vector<double>& delta_row, const std::vector<double>& phi_row) {
        if (m_ >= n_) throw DomainError("OnsagerTables: capacity exceeded");
        const int s = m_;
        if (static_cast<int>(delta_row.size()) != s + 1 || static_cast<int>(phi_row.size()) != s)
            throw DomainError("OnsagerTables: row length mismatch");
        tmu_(s) = tmu;
        for (int j = 0; j <= s; ++j) delta_(s, j) = delta_(j, s) = delta_row[j];
        for (int j = 0; j < s; ++j) phi_(s, j) = phi_row[j];
        m_ = s + 1;
        rebuild();
    }

    /** alpha, beta, gamma for the linear index r = K(t-1)+ell (0-based), from row r-1 of B. */
    void coeff_update(int t, int ell) {
        const int s = k_ * (t - 1) + ell - 1, r = s + 1;
        if (ell < 1 || ell >= k_ || s >= m_) throw DomainError("se_coeff_update: index not available");
        for (int j = 0; j <= s; ++j) {
            double a = (j == s) ? 1.0 : 0.0;
            for (int i = 0; i <= s; ++i)
                if (i % k_ != 0) a += alpha_(i, j) * b_(s, i);
            alpha_(r, j) = a;
        }
        for (int j = 1; j <= t; ++j) {
            double bb = b_(s, k_ * (j - 1));
            for (int i = 0; i <= s; ++i)
                if (i % k_ != 0) bb += beta_(i, j - 1) * b_(s, i);
            beta_(r, j - 1) = bb;
        }
        double g = tmu_(s);
        for (int i = 0; i <= s; ++i)
            if (i % k_ != 0) g += b_(s, i) * gamma_(i);
        gamma_(r) = g;
    }

    /** Phi row of the linear iterate r = s+1: delta_{s,j} + sum_i B_{s,i} Phi_{i,j}. */
    std::vector<double> linear_phi_row(int r) const {
        const int s = r - 1;
        std::vector<double> row(r, 0.0);
        for (int j = 0; j < r; ++j) {
            double v = (j == s) ? 1.0 : 0.0;
            for (int i = 0; i <= s; ++i) v += b_(s, i) * phi_(i, j);
            row[j] = v;
        }
        return row;
    }

    /** Tilde mu of the linear iterate r = s+1, using E[X^2] = 1: lambda tmu_s + sum_j B_{s,j} tmu_j. */
    double linear_tilde_mu(int r) const {
        const int s = r - 1;
        double v = lambda_ * tmu_(s);
        for (int j = 0; j <= s; ++j) v += b_(s, j) * tmu_(j);
        return v;
    }

    /** mu_t, theta_t and c_t once indices up to K t are present. */
    Emission emit(int t) const {
        if (m_ < k_ * t) throw DomainError("se_emit: intermediate steps incomplete");
        Emission e;
        e.theta.assign(k_ * t, 0.0);
        e.onsager.assign(t, 0.0);
        for (int i = 1; i <= k_; ++i) {
            const int row = k_ * (t - 1) + i - 1;
            const double ci = c_.c[i - 1];
            double mu = tmu_(row);
            for (int kk = 0; kk <= row; ++kk) mu += gamma_(kk) * b_(row, kk);
            e.mu_t += ci * mu;
            for (int j = 0; j < k_ * t; ++j) {
                double th = (j == row) ? 1.0 : 0.0;
                for (int kk = 0; kk <= row; ++kk) th += alpha_(kk, j) * b_(row, kk);
                e.theta[j] += ci * th;
            }
            for (int j = 0; j < t; ++j) {
                double cc = 0.0;
                for (int kk = 0; kk <= row; ++kk) cc += beta_(kk, j) * b_(row, kk);
                e.onsager[j] += ci * cc;
            }
        }
        const int kt = k_ * t;
        Eigen::Map<const Eigen::VectorXd> th(e.theta.data(), kt);
        e.sigma2 = th.dot(sigma_.topLeftCorner(kt, kt) * th);
        return e;
    }

    /** After the denoiser row K t: alpha and gamma vanish there and beta_{Kt+1, t+1} = 1. */
    void g_reset(int t) {
        const int r = k_ * t;
        if (r >= n_) return;
        alpha_.row(r).setZero();
        gamma_(r) = 0.0;
        beta_.row(r).setZero();
        if (t < beta_.cols()) beta_(r, t) = 1.0;
    }

    /** Smallest eigenvalue of the current Sigma block relative to max(1, largest diagonal). */
    double sigma_min_eigenvalue() const {
        if (m_ == 0) return 0.0;
        Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(sigma_.topLeftCorner(m_, m_), Eigen::EigenvaluesOnly);
        const double scale = std::max(1.0, sigma_.topLeftCorner(m_, m_).diagonal().maxCoeff());
        return es.eigenvalues()(0) / scale;
    }

private:
    // B = sum_j kappa_{j+1} Phi^j and Sigma = sum_{k,l} kappa_{k+l+2} Phi^k Delta Phi^T^l.
    void rebuild() {
        const int m = m_;
        const Eigen::MatrixXd ph = phi_.topLeftCorner(m, m);
        const Eigen::MatrixXd de = delta_.topLeftCorner(m, m);
        std::vector<Eigen::MatrixXd> pw(m);
        pw[0] = Eigen::MatrixXd::Identity(m, m);
        for (int j = 1; j < m; ++j) pw[j] = ph * pw[j - 1];
        Eigen::MatrixXd bn = Eigen::MatrixXd::Zero(m, m);
        for (int j = 0; j < m; ++j) bn += cum_(j + 1) * pw[j];
        Eigen::MatrixXd sn = Eigen::MatrixXd::Zero(m, m);
        for (int kk = 0; kk < m; ++kk) {
            Eigen::MatrixXd q = Eigen::MatrixXd::Zero(m, m);
            for (int l = 0; l < m; ++l) {
                const double kap = cum_(kk + l + 2);
                if (kap != 0.0) q += kap * pw[l];
            }
            sn.noalias() += pw[kk] * de * q.transpose();
        }
        b_.topLeftCorner(m, m) = bn;
        sigma_.topLeftCorner(m, m) = 0.5 * (sn + sn.transpose());
    }

    int k_, t_max_, n_;
    int m_ = 0;
    double lambda_;
    FreeCumulants cum_;
    PreprocessCoeffs c_;
    Eigen::VectorXd tmu_, gamma_;
    Eigen::MatrixXd delta_, phi_, b_, sigma_, alpha_, beta_;
};

struct SeOptions {
    double epsilon = 0.9;
    int T = 10;
    long mc_samples = 200000;
    std::uint64_t seed = 1;
    double psd_tol = 1e-8;
    double rise_tol = 1e-5;
};

/** One outer step; overlap and mse refer to U_{t+1} = g(F_t). */
struct SeStep {
    int t = 0;
    double mu_t = 0.0;
    double sigma2 = 0.0;
    double overlap = 0.0;
    double mse = 0.5;
    std::vector<double> theta;
    std::vector<double> onsager;
};

struct SeTrajectory {
    std::vector<SeStep> steps;
    bool diverged = false;  // mse rose on three consecutive steps
    bool truncated = false;  // kmax below 2 K T + 2
    double min_sigma_eigenvalue = 0.0;
    int k = 1;
    double lambda = 0.0;
    double epsilon = 0.0;

    const SeStep& final_step() const { return steps.back(); }
};

/** Monte-Carlo state evolution of BAMP with the posterior-mean denoiser. */
class BampSE {
public:
    BampSE(double lambda, const Prior& prior, const FreeCumulants& cum, const PreprocessCoeffs& coeffs,
           const SeOptions& opt = {})
        : prior_(prior), opt_(opt), tab_(coeffs.k(), opt.T, lambda, cum, coeffs) {
        if (opt.mc_samples < 2) throw DomainError("BampSE: mc_samples must be at least 2");
        if (lambda < 0.0) throw DomainError("BampSE: lambda must be nonnegative");
        const int n = tab_.capacity();
        const long half = opt.mc_samples / 2;
        ns_ = 2 * half;
        Rng rng(opt.seed);
        std::normal_distribution<double> nd;
        x_.resize(ns_);
        w_.resize(ns_);
        for (long i = 0; i < half; ++i) {
            x_(i) = prior_.sample(rng);
            x_(i + half) = -x_(i);
        }
        for (long i = 0; i < half; ++i) w_(i) = w_(i + half) = nd(rng);
        // Unit sample second moments, so the sample Gram of U_0 equals Delta_00 = 1.
        const double sx = std::sqrt(x_.squaredNorm() / static_cast<double>(ns_));
        const double sw = std::sqrt(w_.squaredNorm() / static_cast<double>(ns_));
        if (sx > 0.0) x_ /= sx;
        if (sw > 0.0) w_ /= sw;
        xi_.resize(n, ns_);
        for (int r = 0; r < n; ++r)
            for (long i = 0; i < half; ++i) xi_(r, i) = xi_(r, i + half) = nd(rng);
        u_ = Eigen::MatrixXd::Zero(n, ns_);
        z_ = Eigen::MatrixXd::Zero(n, ns_);
        l_ = Eigen::MatrixXd::Zero(n, n);
    }

    const OnsagerTables& tables() const { return tab_; }
    const SeOptions& options() const { return opt_; }

    void init() {
        const double eps = opt_.epsilon;
        tab_.init(eps);
        u_.row(0) = eps * x_.transpose() + std::sqrt(std::max(0.0, 1.0 - eps * eps)) * w_.transpose();
        extend_noise(0);
        min_eig_ = tab_.sigma_min_eigenvalue();
    }

    /** Linear auxiliary iterate K(t-1)+1+ell. */
    void intermediate_step(int t, int ell) {
        tab_.coeff_update(t, ell);
        const int r = tab_.k() * (t - 1) + ell, s = r - 1;
        const auto& b = tab_.b_mat();
        Eigen::VectorXd ur = z_.row(s).transpose() + tab_.tilde_mu()(s) * x_;
        for (int j = 0; j <= s; ++j) ur += b(s, j) * u_.row(j).transpose();
        u_.row(r) = ur.transpose();
        const double tmu = tab_.lambda() * mean(ur.cwiseProduct(x_));
        std::vector<double> drow(r + 1);
        for (int j = 0; j < r; ++j) drow[j] = mean(ur.cwiseProduct(u_.row(j).transpose()));
        drow[r] = mean(ur.cwiseProduct(ur));
        tab_.push(tmu, drow, tab_.linear_phi_row(r));
        extend_noise(r);
        track_psd();
    }

    Emission emit(int t) const { return tab_.emit(t); }

    /**
     * Denoiser iterate K t + 1. Its tilde mu and the reported overlap / mse come
     * from the scalar channel by quadrature; the Delta row is the sample Gram row
     * so Delta stays positive semidefinite.
     */
    SeStep g_step(int t, const Emission& e) {
        // mu_t = 0 with no noise left means every earlier iterate vanished; g is then E[X] = 0.
        const bool null_channel = e.mu_t == 0.0 && e.sigma2 == 0.0;
        if (!(e.sigma2 > 0.0) && !null_channel) throw NumericalError("se_g_step: sigma_t^2 is not positive");
        const int r = tab_.k() * t;
        SeStep st;
        st.t = t;
        st.mu_t = e.mu_t;
        st.sigma2 = e.sigma2;
        st.theta = e.theta;
        st.onsager = e.onsager;
        const double snr = null_channel ? 0.0 : e.mu_t * e.mu_t / e.sigma2;
        const double q = 1.0 - mmse(snr, prior_);
        st.overlap = std::sqrt(std::max(q, 0.0));
        st.mse = 0.5 * (1.0 - q * q);
        if (r >= tab_.capacity()) return st;

        Eigen::VectorXd f = e.mu_t * x_;
        for (int j = 0; j < r; ++j) f += e.theta[j] * z_.row(j).transpose();
        Eigen::VectorXd g(ns_);
        for (long i = 0; i < ns_; ++i) g(i) = null_channel ? 0.0 : denoise(f(i), e.mu_t, e.sigma2, prior_);
        u_.row(r) = g.transpose();
        std::vector<double> drow(r + 1);
        for (int j = 0; j < r; ++j) drow[j] = mean(g.cwiseProduct(u_.row(j).transpose()));
        drow[r] = mean(g.cwiseProduct(g));
        const double eg = null_channel ? 0.0 : expected_denoise_deriv(e.mu_t, e.sigma2, prior_);
        std::vector<double> prow(r);
        for (int j = 0; j < r; ++j) prow[j] = e.theta[j] * eg;
        tab_.push(tab_.lambda() * q, drow, prow);
        tab_.g_reset(t);
        extend_noise(r);
        track_psd();
        return st;
    }

    SeTrajectory run() {
        SeTrajectory tr;
        tr.k = tab_.k();
        tr.lambda = tab_.lambda();
        tr.epsilon = opt_.epsilon;
        tr.truncated = tab_.truncated();
        init();
        int rises = 0;
        for (int t = 1; t <= opt_.T; ++t) {
            for (int ell = 1; ell < tab_.k(); ++ell) intermediate_step(t, ell);
            const auto e = emit(t);
            tr.steps.push_back(g_step(t, e));
            if (t > 1) {
                rises = tr.steps[t - 1].mse > tr.steps[t - 2].mse + opt_.rise_tol ? rises + 1 : 0;
                if (rises >= 3) tr.diverged = true;
            }
        }
        tr.min_sigma_eigenvalue = min_eig_;
        return tr;
    }

private:
    double mean(const Eigen::VectorXd& v) const { return v.sum() / static_cast<double>(ns_); }

    // Row s of a lower factor of Sigma; earlier rows stay fixed so past draws remain valid.
    void extend_noise(int s) {
        const auto& sg = tab_.sigma();
        // Same scale as sigma_min_eigenvalue: largest diagonal of the leading block.
        const double scale = std::max(1.0, sg.topLeftCorner(s + 1, s + 1).diagonal().maxCoeff());
        for (int j = 0; j < s; ++j) {
            double v = sg(s, j);
            for (int k = 0; k < j; ++k) v -= l_(s, k) * l_(j, k);
            l_(s, j) = l_(j, j) > 0.0 ? v / l_(j, j) : 0.0;
        }
        double v = sg(s, s);
        for (int k = 0; k < s; ++k) v -= l_(s, k) * l_(s, k);
        // Pivots at roundoff level are singular directions (e.g. a linear denoiser); drop them.
        // A slightly negative v is Sigma's rounding amplified by small earlier pivots;
        // definiteness itself is checked on the eigenvalues in track_psd.
        l_(s, s) = v > opt_.psd_tol * scale ? std::sqrt(v) : 0.0;
        z_.row(s) = l_.row(s).head(s + 1) * xi_.topRows(s + 1);
    }

    void track_psd() {
        const double e = tab_.sigma_min_eigenvalue();
        min_eig_ = std::min(min_eig_, e);
        if (e < -opt_.psd_tol) throw FactorizationError("se: Sigma left the PSD cone");
    }

    Prior prior_;
    SeOptions opt_;
    OnsagerTables tab_;
    long ns_ = 0;
    Eigen::VectorXd x_, w_;
    Eigen::MatrixXd xi_, u_, z_, l_;
    double min_eig_ = 0.0;
};

/** Full recursion to T outer steps. */
inline SeTrajectory se_run(double lambda, const Prior& prior, const FreeCumulants& cum, const PreprocessCoeffs& coeffs,
                           const SeOptions& opt = {}) {
    if (opt.T < 1) throw DomainError("se_run: T must be at least 1");
    BampSE se(lambda, prior, cum, coeffs, opt);
    return se.run();
}

/** Cumulant order the Sigma update consumes for a K-degree polynomial over T steps. */
inline int se_required_kmax(int k, int t) { return 2 * k * t + 2; }

/** BAMP with the optimal cubic for the quartic ensemble; kmax <= 0 selects 2 K T + 2. */
inline SeTrajectory se_run(double lambda, const Prior& prior, const EnsembleParams& p, const SeOptions& opt = {},
                           int kmax = 0) {
    const auto c = optimal_coeffs(p.mu, p.gamma, lambda);
    if (kmax <= 0) kmax = se_required_kmax(c.k(), opt.T);
    return se_run(lambda, prior, ensemble_cumulants(p, kmax), c, opt);
}

inline void write_trajectory_csv(std::ostream& os, const SeTrajectory& tr) {
    os.precision(12);
    os << "t,mu_t,sigma_t2,overlap_t,mse_t\n";
    for (const auto& s : tr.steps) os << s.t << ',' << s.mu_t << ',' << s.sigma2 << ',' << s.overlap << ',' << s.mse << '\n';
}

/**
 * Plain-text tables for the theory-mode BAMP. One line per step:
 * "step t mu_t sigma2 | c_{t,1} .. c_{t,t}".
 */
inline void write_tables(std::ostream& os, const SeTrajectory& tr) {
    os.precision(17);
    os << "qamp-se-tables " << tr.k << ' ' << tr.steps.size() << '\n';
    for (const auto& s : tr.steps) {
        os << "step " << s.t << ' ' << s.mu_t << ' ' << s.sigma2 << " |";
        for (double c : s.onsager) os << ' ' << c;
        os << '\n';
    }
}

inline SeTrajectory read_tables(std::istream& is) {
    SeTrajectory tr;
    std::string tag;
    std::size_t n = 0;
    if (!(is >> tag >> tr.k >> n) || tag != "qamp-se-tables") throw DomainError("read_tables: bad header");
    for (std::size_t i = 0; i < n; ++i) {
        SeStep s;
        std::string bar;
        if (!(is >> tag >> s.t >> s.mu_t >> s.sigma2 >> bar) || tag != "step" || bar != "|")
            throw DomainError("read_tables: bad step line");
        s.onsager.resize(s.t);
        for (int j = 0; j < s.t; ++j)
            if (!(is >> s.onsager[j])) throw DomainError("read_tables: short Onsager row");
        tr.steps.push_back(std::move(s));
    }
    return tr;
}

}  // namespace qamp
