#include <gtest/gtest.h>

#include <random>
#include <vector>

#include "nusvqr/loss.hpp"

using nusvqr::TauLevel;

TEST(TauLevel, OpenInterval) {
    EXPECT_NO_THROW(TauLevel{0.5});
    EXPECT_THROW(TauLevel{0.0}, nusvqr::InputError);
    EXPECT_THROW(TauLevel{1.0}, nusvqr::InputError);
    EXPECT_THROW(TauLevel{-0.2}, nusvqr::InputError);
    EXPECT_THROW(TauLevel{std::nan("")}, nusvqr::InputError);
}

TEST(Pinball, Examples) {
    EXPECT_DOUBLE_EQ(nusvqr::pinball_loss(0.5, 2.0), 1.0);
    EXPECT_EQ(nusvqr::pinball_loss(0.3, 0.0), 0.0);
    EXPECT_DOUBLE_EQ(nusvqr::pinball_loss(0.2, -1.0), 0.8);
}

TEST(AsymEpsPinball, Examples) {
    EXPECT_EQ(nusvqr::asym_eps_pinball_loss(0.2, 1.0, 0.5), 0.0);
    EXPECT_NEAR(nusvqr::asym_eps_pinball_loss(0.2, 1.0, 1.0), 0.04, 1e-15);
    EXPECT_NEAR(nusvqr::asym_eps_pinball_loss(0.2, 1.0, -0.5), 0.24, 1e-15);
}

TEST(AsymEpsPinball, ClosedBandAndNegativeWidth) {
    EXPECT_EQ(nusvqr::asym_eps_pinball_loss(0.2, 1.0, 0.8), 0.0);
    EXPECT_EQ(nusvqr::asym_eps_pinball_loss(0.2, 1.0, -0.2), 0.0);
    EXPECT_THROW(nusvqr::asym_eps_pinball_loss(0.2, -0.1, 0.0), nusvqr::InputError);
}

TEST(EmpiricalRisk, Examples) {
    EXPECT_EQ(nusvqr::empirical_risk(0.4, 2.0, std::vector<double>{0.1, -0.3, 1.2}), 0.0);
    EXPECT_NEAR(nusvqr::empirical_risk(0.2, 1.0, std::vector<double>{1.0, -0.5}), 0.28, 1e-15);
}

TEST(EmpiricalRisk, EqualsScalarSum) {
    std::mt19937_64 rng(8);
    std::normal_distribution<double> n(0.0, 2.0);
    std::vector<double> r(50);
    for (auto& v : r) v = n(rng);
    double sum = 0.0;
    for (double v : r) {
        // Piecewise definition evaluated directly.
        const double hi = 0.7 * 0.5;
        const double lo = -0.3 * 0.5;
        sum += v > hi ? 0.3 * (v - hi) : v < lo ? 0.7 * (lo - v) : 0.0;
    }
    EXPECT_NEAR(nusvqr::empirical_risk(0.3, 0.5, r), sum, 1e-12);
}

TEST(AsymEpsPinball, Properties) {
    std::mt19937_64 rng(21);
    std::uniform_real_distribution<double> u(-3.0, 3.0);
    std::uniform_real_distribution<double> t(0.01, 0.99);
    std::uniform_real_distribution<double> e(0.0, 2.0);
    for (int k = 0; k < 2000; ++k) {
        const double tau = t(rng);
        const double eps = e(rng);
        const double a = u(rng);
        const double b = u(rng);
        const double la = nusvqr::asym_eps_pinball_loss(tau, eps, a);
        EXPECT_GE(la, 0.0);
        const bool inside = -tau * eps <= a && a <= (1.0 - tau) * eps;
        EXPECT_EQ(la == 0.0, inside);
        EXPECT_EQ(nusvqr::asym_eps_pinball_loss(tau, 0.0, a), nusvqr::pinball_loss(tau, a));
        const double mid = nusvqr::asym_eps_pinball_loss(tau, eps, 0.5 * (a + b));
        EXPECT_LE(mid, 0.5 * (la + nusvqr::asym_eps_pinball_loss(tau, eps, b)) + 1e-12);
        EXPECT_NEAR((1.0 - tau) * eps - (-tau * eps), eps, 1e-15);
    }
}
