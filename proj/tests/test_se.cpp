#include <qamp/replica.hpp>
#include <qamp/se.hpp>

#include <gtest/gtest.h>

#include <cmath>
#include <random>
#include <sstream>

using namespace qamp;

namespace {

const Prior kRad = Prior::rademacher();

SeOptions fast(double eps = 0.9, int t = 10, long mc = 200000) {
    SeOptions o;
    o.epsilon = eps;
    o.T = t;
    o.mc_samples = mc;
    return o;
}

// Expansion of every auxiliary iterate over atoms [Z_0..Z_{n-1} | G_0..G_T | X]:
// denoiser rows (index multiple of K) are atoms, linear rows unroll
// U_{s+1} = Z_s + mu_s X + sum_j B_{s,j} U_j.
struct Unrolled {
    int n, t;
    std::vector<std::vector<double>> rows;

    Unrolled(int n_, int t_) : n(n_), t(t_) {}
    int width() const { return n + t + 2; }

    void add_g(int tt) {
        std::vector<double> r(width(), 0.0);
        r[n + tt] = 1.0;
        rows.push_back(r);
    }

    std::vector<double> linear(int s, const OnsagerTables& tab) const {
        std::vector<double> r(width(), 0.0);
        r[s] += 1.0;
        r[n + t + 1] += tab.tilde_mu()(s);
        for (int j = 0; j <= s; ++j)
            for (int w = 0; w < width(); ++w) r[w] += tab.b_mat()(s, j) * rows[j][w];
        return r;
    }
};

void push_synthetic(OnsagerTables& tab, std::mt19937_64& rng) {
    std::uniform_real_distribution<double> u(-0.5, 0.5);
    const int s = tab.size();
    std::vector<double> d(s + 1), ph(s);
    for (auto& v : d) v = u(rng);
    d[s] = 1.0 + std::abs(u(rng));
    for (auto& v : ph) v = u(rng);
    tab.push(u(rng), d, ph);
}

}  // namespace

TEST(SeInit, Values) {
    const auto cum = ensemble_cumulants(make_params(0.0), 12);
    OnsagerTables tab(1, 3, 2.5, cum, PreprocessCoeffs{{2.5}});
    tab.init(0.3);
    EXPECT_DOUBLE_EQ(tab.tilde_mu()(0), 0.75);
    EXPECT_EQ(tab.delta()(0, 0), 1.0);
    EXPECT_EQ(tab.phi()(0, 0), 0.0);
    EXPECT_EQ(tab.b_mat()(0, 0), 0.0);
    EXPECT_NEAR(tab.sigma()(0, 0), 1.0, 1e-14);
    EXPECT_EQ(tab.alpha()(0, 0), 0.0);
    EXPECT_EQ(tab.beta()(0, 0), 1.0);
    EXPECT_EQ(tab.gamma_coef()(0), 0.0);
    EXPECT_THROW(tab.init(0.0), DomainError);
}

TEST(SeCoeffUpdate, BaseCases) {
    const auto cum = ensemble_cumulants(make_params(0.3), 20);
    OnsagerTables tab(3, 2, 1.7, cum, optimal_coeffs(0.3, gamma_of_mu(0.3), 1.7));
    std::mt19937_64 rng(1);
    tab.init(0.6);
    tab.coeff_update(1, 1);
    EXPECT_EQ(tab.alpha()(1, 0), 1.0);
    EXPECT_EQ(tab.beta()(1, 0), tab.b_mat()(0, 0));
    EXPECT_EQ(tab.gamma_coef()(1), tab.tilde_mu()(0));
    push_synthetic(tab, rng);
    tab.coeff_update(1, 2);
    EXPECT_DOUBLE_EQ(tab.alpha()(2, 0), tab.b_mat()(1, 1));
    EXPECT_EQ(tab.alpha()(2, 1), 1.0);
    push_synthetic(tab, rng);
    push_synthetic(tab, rng);
    tab.g_reset(1);
    for (int j = 0; j < tab.capacity(); ++j) EXPECT_EQ(tab.alpha()(3, j), 0.0);
    EXPECT_EQ(tab.gamma_coef()(3), 0.0);
    EXPECT_EQ(tab.beta()(3, 0), 0.0);
    EXPECT_EQ(tab.beta()(3, 1), 1.0);
}

TEST(SeCoeffUpdate, MatchesBruteForceUnrollingK3) {
    const int k = 3, tmax = 2;
    const auto cum = ensemble_cumulants(make_params(0.2), 30);
    const auto c = optimal_coeffs(0.2, gamma_of_mu(0.2), 2.2);
    OnsagerTables tab(k, tmax, 2.2, cum, c);
    std::mt19937_64 rng(99);
    tab.init(0.5);
    Unrolled un(tab.capacity(), tmax);
    un.add_g(0);
    auto check_row = [&](int r, int t) {
        const auto& row = un.rows[r];
        for (int j = 0; j < un.n; ++j) EXPECT_NEAR(tab.alpha()(r, j), row[j], 1e-12) << r << ' ' << j;
        for (int j = 0; j < t; ++j) EXPECT_NEAR(tab.beta()(r, j), row[un.n + j], 1e-12) << r << ' ' << j;
        EXPECT_NEAR(tab.gamma_coef()(r), row[un.n + tmax + 1], 1e-12) << r;
    };
    auto check_emit = [&](int t) {
        const auto e = tab.emit(t);
        std::vector<double> f(un.width(), 0.0);
        for (int i = 1; i <= k; ++i) {
            const auto r = un.linear(k * (t - 1) + i - 1, tab);
            for (int w = 0; w < un.width(); ++w) f[w] += c.c[i - 1] * r[w];
        }
        for (int j = 0; j < k * t; ++j) EXPECT_NEAR(e.theta[j], f[j], 1e-12) << t << ' ' << j;
        for (int j = 0; j < t; ++j) EXPECT_NEAR(e.onsager[j], f[un.n + j], 1e-12) << t << ' ' << j;
        EXPECT_NEAR(e.mu_t, f[un.n + tmax + 1], 1e-12) << t;
    };
    for (int t = 1; t <= tmax; ++t) {
        for (int ell = 1; ell < k; ++ell) {
            const int r = k * (t - 1) + ell;
            tab.coeff_update(t, ell);
            un.rows.push_back(un.linear(r - 1, tab));
            check_row(r, t);
            push_synthetic(tab, rng);
        }
        check_emit(t);
        if (t < tmax) {
            push_synthetic(tab, rng);
            tab.g_reset(t);
            un.add_g(t);
        }
    }
}

TEST(SeCoeffUpdate, DirectMuAndThetaAtFirstStep) {
    const auto cum = ensemble_cumulants(make_params(0.0), 12);
    OnsagerTables one(1, 2, 2.0, cum, PreprocessCoeffs{{1.3}});
    one.init(0.4);
    const auto e1 = one.emit(1);
    ASSERT_EQ(e1.theta.size(), 1u);
    EXPECT_DOUBLE_EQ(e1.theta[0], 1.3);

    const auto c = optimal_coeffs(0.0, gamma_of_mu(0.0), 2.0);
    OnsagerTables tab(3, 1, 2.0, cum, c);
    std::mt19937_64 rng(4);
    tab.init(0.4);
    for (int ell = 1; ell < 3; ++ell) {
        tab.coeff_update(1, ell);
        push_synthetic(tab, rng);
    }
    const auto e = tab.emit(1);
    double mu = 0.0;
    for (int i = 0; i < 3; ++i) {
        double inner = tab.tilde_mu()(i);
        for (int kk = 0; kk <= i; ++kk) inner += tab.gamma_coef()(kk) * tab.b_mat()(i, kk);
        mu += c.c[i] * inner;
    }
    EXPECT_NEAR(e.mu_t, mu, 1e-14);
}

TEST(SeIntermediateStep, LinearPhiRowIsExact) {
    const auto p = make_params(0.0);
    BampSE se(2.5, kRad, ensemble_cumulants(p, 62), optimal_coeffs(0.0, p.gamma, 2.5), fast(0.9, 10, 2000));
    se.init();
    se.intermediate_step(1, 1);
    EXPECT_EQ(se.tables().phi()(1, 0), 1.0);
    EXPECT_GE(se.tables().delta()(1, 1), 0.0);
}

TEST(SeWigner, SingleMemoryReduction) {
    const double l = 2.5;
    const auto cum = ensemble_cumulants(make_params(1.0), 22);
    const auto tr = se_run(l, kRad, cum, PreprocessCoeffs{{l}}, fast());
    for (std::size_t i = 0; i < tr.steps.size(); ++i) {
        const auto& s = tr.steps[i];
        for (std::size_t j = 0; j + 1 < s.theta.size(); ++j) EXPECT_NEAR(s.theta[j], 0.0, 1e-14);
        EXPECT_NEAR(s.theta.back(), l, 1e-14);
        EXPECT_NEAR(s.onsager.back(), 0.0, 1e-14);
        if (i > 0) {
            const auto& prev = tr.steps[i - 1];
            const double expect = l * l * expected_denoise_deriv(prev.mu_t, prev.sigma2, kRad);
            EXPECT_NEAR(s.onsager[i - 1], expect, 1e-10) << i;
            for (std::size_t j = 0; j + 1 < i; ++j) EXPECT_NEAR(s.onsager[j], 0.0, 1e-14);
        }
    }
    const auto b = baseline_fixed_point(l, kRad, cum);
    EXPECT_NEAR(tr.final_step().mse, b.mse, 1e-3);
    EXPECT_NEAR(tr.final_step().mse, bo_fixed_point(l, kRad, make_params(1.0)).mmse, 1e-4);
}

TEST(SeGStep, ZeroSnrStream) {
    const auto cum = ensemble_cumulants(make_params(0.0), 22);
    const auto tr = se_run(0.0, kRad, cum, PreprocessCoeffs{{1.0}}, fast(0.9, 10, 4000));
    for (const auto& s : tr.steps) {
        EXPECT_EQ(s.mu_t, 0.0);
        EXPECT_EQ(s.overlap, 0.0);
    }
}

TEST(SeGStep, OverlapMatchesScalarChannelMonteCarlo) {
    const auto tr = se_run(2.5, kRad, make_params(0.0), fast());
    std::mt19937_64 rng(12);
    std::normal_distribution<double> nd;
    for (const auto& s : {tr.steps[0], tr.steps[3], tr.steps[9]}) {
        const double sd = std::sqrt(s.sigma2);
        double acc = 0.0;
        const int n = 1000000;
        for (int i = 0; i < n; ++i) {
            const double x = (rng() & 1u) ? 1.0 : -1.0;
            acc += x * denoise(s.mu_t * x + sd * nd(rng), s.mu_t, s.sigma2, kRad);
        }
        EXPECT_NEAR(s.overlap * s.overlap, acc / n, 2e-3) << s.t;
    }
}

TEST(SeGrowth, TopLeftBlocksPreserved) {
    const auto p = make_params(0.0);
    const auto c = optimal_coeffs(0.0, p.gamma, 2.5);
    BampSE se(2.5, kRad, ensemble_cumulants(p, 14), c, fast(0.9, 2, 20000));
    se.init();
    Eigen::MatrixXd b_prev = se.tables().b_mat().topLeftCorner(1, 1);
    Eigen::MatrixXd s_prev = se.tables().sigma().topLeftCorner(1, 1);
    auto check = [&]() {
        const int m = se.tables().size();
        EXPECT_EQ(se.tables().b_mat().topLeftCorner(b_prev.rows(), b_prev.cols()), b_prev);
        const Eigen::MatrixXd ds = se.tables().sigma().topLeftCorner(s_prev.rows(), s_prev.cols()) - s_prev;
        EXPECT_LT(ds.cwiseAbs().maxCoeff(), 1e-12);
        b_prev = se.tables().b_mat().topLeftCorner(m, m);
        s_prev = se.tables().sigma().topLeftCorner(m, m);
        const Eigen::MatrixXd ph = se.tables().phi().topLeftCorner(m, m);
        EXPECT_EQ(ph.triangularView<Eigen::Upper>().toDenseMatrix(), Eigen::MatrixXd::Zero(m, m));
    };
    for (int t = 1; t <= 2; ++t) {
        for (int ell = 1; ell < 3; ++ell) {
            se.intermediate_step(t, ell);
            check();
        }
        se.g_step(t, se.emit(t));
        if (t < 2) check();
    }
}

TEST(SeRun, QuarticBampMatchesReplica) {
    const auto p = make_params(0.0);
    const auto tr = se_run(3.5, kRad, p, fast());
    EXPECT_FALSE(tr.truncated);
    EXPECT_NEAR(tr.final_step().mse, bo_fixed_point(3.5, kRad, p).mmse, 0.02);
    EXPECT_GE(tr.min_sigma_eigenvalue, -1e-8);
    for (const auto& s : tr.steps) {
        EXPECT_GT(s.sigma2, 0.0);
        EXPECT_GE(s.overlap, 0.0);
        EXPECT_LE(s.overlap, 1.0);
    }
}

TEST(SeRun, InformativeStart) {
    const auto p = make_params(0.0);
    const auto tr = se_run(3.0, kRad, p, fast(0.999));
    const double ceiling = std::sqrt(1.0 - bo_fixed_point(3.0, kRad, p).mmse * 2.0);
    EXPECT_GT(tr.steps[0].overlap, 0.95 * ceiling);
    for (std::size_t i = 1; i < tr.steps.size(); ++i) EXPECT_LE(tr.steps[i].mse, tr.steps[i - 1].mse + 1e-4);
}

TEST(SeRun, ReproducibleAndSampleStable) {
    const auto p = make_params(0.0);
    const auto a = se_run(2.5, kRad, p, fast());
    const auto b = se_run(2.5, kRad, p, fast());
    std::ostringstream sa, sb;
    write_trajectory_csv(sa, a);
    write_trajectory_csv(sb, b);
    EXPECT_EQ(sa.str(), sb.str());
    const auto big = se_run(2.5, kRad, p, fast(0.9, 10, 400000));
    EXPECT_NEAR(big.final_step().mse, a.final_step().mse, 2e-3);
}

TEST(SeRun, SingleMatrixReductionAtQuarticPoint) {
    const double l = 2.5;
    const auto cum = ensemble_cumulants(make_params(0.0), se_required_kmax(1, 10));
    const auto tr = se_run(l, kRad, cum, PreprocessCoeffs{{l}}, fast());
    EXPECT_NEAR(tr.final_step().mse, baseline_fixed_point(l, kRad, cum).mse, 1e-3);
}

TEST(SeRun, GaussianPriorLinearDenoiser) {
    // The posterior mean is linear, so Sigma is singular; the run must stay PSD and finite.
    const auto g = Prior::gaussian();
    SeOptions opt;
    opt.mc_samples = 20000;
    for (double mu : {0.0, 0.5, 1.0}) {
        for (double l : {1.5, 2.5, 3.5}) {
            const auto tr = se_run(l, g, make_params(mu), opt);
            EXPECT_GE(tr.min_sigma_eigenvalue, -opt.psd_tol) << mu << ' ' << l;
            for (const auto& s : tr.steps) EXPECT_TRUE(std::isfinite(s.mse));
        }
    }
    // Semicircle: the linear-denoiser fixed point is the spectral one, (1 - c^2)/2 with c = 1 - 1/l^2.
    const auto tr = se_run(2.5, g, make_params(1.0));
    const double c = 1.0 - 1.0 / 6.25;
    EXPECT_NEAR(tr.final_step().mse, 0.5 * (1.0 - c * c), 1e-3);
}

TEST(SeRun, KmaxValidation) {
    EXPECT_EQ(se_required_kmax(3, 10), 62);
    const auto p = make_params(0.0);
    const auto c = optimal_coeffs(0.0, p.gamma, 2.5);
    BampSE se(2.5, kRad, ensemble_cumulants(p, 12), c, fast(0.9, 10, 1000));
    EXPECT_TRUE(se.tables().truncated());
    EXPECT_EQ(se.tables().required_kmax(), 62);
    const auto tr = se_run(2.5, kRad, p, fast(0.9, 2, 1000));
    EXPECT_FALSE(tr.truncated);
    EXPECT_THROW(se_run(2.5, kRad, p, fast(0.9, 0, 1000)), DomainError);
}

TEST(SeTables, RoundTrip) {
    const auto tr = se_run(2.5, kRad, make_params(0.0), fast(0.9, 4, 20000));
    std::stringstream ss;
    write_tables(ss, tr);
    const auto back = read_tables(ss);
    ASSERT_EQ(back.steps.size(), tr.steps.size());
    EXPECT_EQ(back.k, 3);
    for (std::size_t i = 0; i < tr.steps.size(); ++i) {
        EXPECT_EQ(back.steps[i].mu_t, tr.steps[i].mu_t);
        EXPECT_EQ(back.steps[i].sigma2, tr.steps[i].sigma2);
        EXPECT_EQ(back.steps[i].onsager, tr.steps[i].onsager);
    }
    std::istringstream bad("nonsense 1 2");
    EXPECT_THROW(read_tables(bad), DomainError);
}
