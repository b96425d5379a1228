#include <qamp/sampling.hpp>

#include <gtest/gtest.h>

#include <cmath>

using namespace qamp;

TEST(SampleEigenvalues, SupportAndMoments) {
    for (double mu : {0.0, 1.0}) {
        const auto p = make_params(mu);
        Rng rng(11);
        const auto d = sample_eigenvalues(100000, p, rng);
        EXPECT_LE(d.cwiseAbs().maxCoeff(), p.edge());
        const double m2 = d.array().square().mean();
        const double m4 = d.array().square().square().mean();
        if (mu == 0.0) EXPECT_NEAR(m2, 1.0, 0.02);
        if (mu == 1.0) EXPECT_NEAR(m4, 2.0, 0.05);
        EXPECT_NEAR(d.mean(), 0.0, 0.02);
    }
}

TEST(Haar, NOneIsASign) {
    int plus = 0;
    const int draws = 4000;
    Rng rng(3);
    for (int i = 0; i < draws; ++i) {
        const auto o = haar_orthogonal(1, rng);
        ASSERT_NEAR(std::abs(o(0, 0)), 1.0, 1e-15);
        plus += o(0, 0) > 0.0;
    }
    // Binomial(4000, 1/2) has sd ~ 31.6.
    EXPECT_NEAR(plus, draws / 2, 5 * 31.7);
}

TEST(Haar, Orthogonal) {
    Rng rng(5);
    for (int n : {2, 7, 64, 300}) {
        const auto o = haar_orthogonal(n, rng);
        const Eigen::MatrixXd e = o.transpose() * o - Eigen::MatrixXd::Identity(n, n);
        EXPECT_LT(e.cwiseAbs().maxCoeff(), 1e-10) << n;
        for (int i = 0; i < n; ++i) EXPECT_NEAR(o.row(i).norm(), 1.0, 1e-10);
    }
}

TEST(Haar, FirstColumnUniformOnSphere) {
    const int n = 5, draws = 10000;
    Rng rng(17);
    double s = 0.0, s2 = 0.0;
    for (int i = 0; i < draws; ++i) {
        const double v = std::pow(haar_orthogonal(n, rng)(0, 0), 2);
        s += v;
        s2 += v * v;
    }
    const double mean = s / draws;
    const double se = std::sqrt((s2 / draws - mean * mean) / draws);
    EXPECT_NEAR(mean, 1.0 / n, 5 * se);
}

TEST(Haar, LeftInvariance) {
    // Q O and O have the same law; compare E[(Q O)_{11}^4] with the Haar value 3/(n(n+2)).
    const int n = 4, draws = 20000;
    Rng rng(23), rq(29);
    const Eigen::MatrixXd q = haar_orthogonal(n, rq);
    double s = 0.0, s2 = 0.0;
    for (int i = 0; i < draws; ++i) {
        const double v = std::pow((q * haar_orthogonal(n, rng))(0, 0), 4);
        s += v;
        s2 += v * v;
    }
    const double mean = s / draws;
    const double se = std::sqrt((s2 / draws - mean * mean) / draws);
    EXPECT_NEAR(mean, 3.0 / (n * (n + 2.0)), 5 * se);
}

TEST(SeedScheme, StreamsAreDistinctAndReproducible) {
    SeedScheme a{42, 3}, b{42, 3}, c{42, 4};
    EXPECT_EQ(a.seed("prior"), b.seed("prior"));
    EXPECT_NE(a.seed("prior"), a.seed("basis"));
    EXPECT_NE(a.seed("prior"), c.seed("prior"));
    auto r1 = a.stream("amp-init");
    auto r2 = b.stream("amp-init");
    for (int i = 0; i < 10; ++i) EXPECT_EQ(r1(), r2());
}

TEST(MakeInstance, StructureAndDeterminism) {
    const auto p = make_params(0.0);
    const SeedScheme s{9, 0};
    const auto a = make_instance(300, 2.0, Prior::rademacher(), p, s);
    const auto b = make_instance(300, 2.0, Prior::rademacher(), p, s);
    EXPECT_EQ(a.y, b.y);
    EXPECT_EQ(a.x_star, b.x_star);
    EXPECT_LT((a.y - a.y.transpose()).cwiseAbs().maxCoeff(), 1e-12);
    for (int i = 0; i < a.n; ++i) EXPECT_EQ(std::abs(a.x_star(i)), 1.0);
    EXPECT_DOUBLE_EQ(a.x_star.squaredNorm() / a.n, 1.0);
    EXPECT_THROW(make_instance(1, 1.0, Prior::rademacher(), p, s), DomainError);
    EXPECT_THROW(make_instance(10, -1.0, Prior::rademacher(), p, s), DomainError);

    const auto g = make_instance(2000, 1.0, Prior::gaussian(), p, s);
    EXPECT_NEAR(g.x_star.squaredNorm() / g.n, 1.0, 3.0 / std::sqrt(2000.0));
}

TEST(MakeInstance, PureNoiseSpectrum) {
    const auto p = make_params(0.0);
    const auto inst = make_instance(2000, 0.0, Prior::rademacher(), p, SeedScheme{1, 0});
    const auto ev = symmetric_eigenvalues(inst.y);
    const auto m = moments(p, 4);
    for (int k = 1; k <= 4; ++k) EXPECT_NEAR(ev.array().pow(k).mean(), m[k], 5e-2) << k;
    EXPECT_NEAR(inst.y.trace() / inst.n, 0.0, 5e-2);
}

TEST(MakeInstance, QuadraticFormAndDetachedEigenvalue) {
    const auto p = make_params(0.0);
    const int n = 4000;
    const auto inst = make_instance(n, 5.0, Prior::rademacher(), p, SeedScheme{2, 0});
    const double q = inst.x_star.dot(inst.y * inst.x_star) / n;
    EXPECT_NEAR(q, 5.0, 5.0 * std::sqrt(2.0 / n));
    const auto ev = symmetric_eigenvalues(inst.y);
    EXPECT_GT(ev(0), p.edge() + 0.2);
    EXPECT_LT(ev(1), p.edge() + 0.05);
}

TEST(MakeInstance, SharedNoiseAcrossSnr) {
    const auto p = make_params(0.5);
    const SeedScheme s{4, 1};
    const auto noise = make_noise(200, p, s);
    const auto x = sample_signal(200, Prior::rademacher(), s);
    const auto a = assemble_instance(noise, x, 1.0);
    const auto b = assemble_instance(noise, x, 3.0);
    const Eigen::MatrixXd diff = b.y - a.y - (2.0 / 200) * x * x.transpose();
    EXPECT_LT(diff.cwiseAbs().maxCoeff(), 1e-13);
    const auto direct = make_instance(200, 3.0, Prior::rademacher(), p, s);
    EXPECT_EQ(direct.y, b.y);
}
