#include <gtest/gtest.h>

#include <cmath>
#include <limits>
#include <random>

#include "nusvqr/metrics.hpp"

using nusvqr::Vector;

namespace {

Vector vec(std::initializer_list<double> v) {
    Vector out(static_cast<Eigen::Index>(v.size()));
    Eigen::Index i = 0;
    for (double x : v) out(i++) = x;
    return out;
}

// A model that predicts the constant `b` everywhere.
nusvqr::TrainedModel flat_model(double tau, double b, double eps, Eigen::Index l) {
    nusvqr::TrainedModel m;
    m.config.model = nusvqr::ModelKind::NuSVQR;
    m.config.tau = tau;
    m.config.kernel = nusvqr::KernelSpec::rbf(1.0);
    m.coeffs = m.alpha = m.beta = Vector::Zero(l);
    m.train_features = nusvqr::FeatureMatrix::Zero(l, 1);
    m.bias = b;
    m.eps_width = eps;
    return m;
}

}  // namespace

TEST(Metrics, RmseAndMae) {
    EXPECT_DOUBLE_EQ(nusvqr::rmse_vs_truth(vec({1.0, 2.0}), vec({1.0, 4.0})), std::sqrt(2.0));
    EXPECT_DOUBLE_EQ(nusvqr::mae_vs_truth(vec({1.0, 2.0}), vec({1.0, 4.0})), 1.0);
    EXPECT_EQ(nusvqr::rmse_vs_truth(vec({3.0}), vec({3.0})), 0.0);
}

TEST(Metrics, CoverageCountsTies) {
    EXPECT_DOUBLE_EQ(nusvqr::coverage(vec({1.0, 1.0, 1.0, 1.0}), vec({0.5, 1.0, 1.5, 2.0})), 0.5);
    EXPECT_NEAR(nusvqr::coverage_error(vec({0.0, 0.0, 0.0, 0.0, 0.0}), vec({-1, -1, 1, 1, 1}), 0.3), 0.1, 1e-15);
}

TEST(Metrics, Sparsity) {
    EXPECT_DOUBLE_EQ(nusvqr::sparsity(vec({0.0, 1e-12, 0.2, -0.3}), 1e-9), 0.5);
    EXPECT_EQ(nusvqr::sparsity(vec({1.0, -1.0}), 1e-9), 0.0);
    EXPECT_THROW(nusvqr::sparsity(Vector(), 1e-9), nusvqr::InputError);
}

TEST(Metrics, PinballMean) {
    EXPECT_NEAR(nusvqr::mean_pinball_loss(vec({0.0, 0.0}), vec({2.0, -1.0}), 0.25), (0.5 + 0.75) / 2.0, 1e-15);
}

TEST(Metrics, LengthChecks) {
    EXPECT_THROW(nusvqr::rmse_vs_truth(vec({1.0}), vec({1.0, 2.0})), nusvqr::InputError);
    EXPECT_THROW(nusvqr::coverage(Vector(), Vector()), nusvqr::InputError);
    EXPECT_THROW(nusvqr::mean_pinball_loss(vec({1.0, 2.0}), vec({1.0}), 0.5), nusvqr::InputError);
}

TEST(TubeStats, ClassifiesEachPoint) {
    // tau = 0.25, eps = 2: edges at +1.5 and -0.5 around b = 1.
    nusvqr::Dataset d;
    d.features = nusvqr::FeatureMatrix::Zero(6, 1);
    d.response = vec({1.0 + 3.0, 1.0 + 1.5, 1.0 + 0.2, 1.0 - 0.5, 1.0 - 2.0, 1.0 - 0.49});
    auto m = flat_model(0.25, 1.0, 2.0, 6);
    m.sv_indices = {0, 1, 3, 4};
    const auto s = nusvqr::tube_stats(m, d);
    EXPECT_EQ(s.n_above, 1u);
    EXPECT_EQ(s.n_below, 1u);
    EXPECT_EQ(s.n_on_boundary, 2u);
    EXPECT_EQ(s.n_sv, 4u);
    EXPECT_DOUBLE_EQ(s.frac_errors, 2.0 / 6.0);
    EXPECT_DOUBLE_EQ(s.frac_sv, 4.0 / 6.0);
    EXPECT_DOUBLE_EQ(s.ratio_above_below, 1.0);
    EXPECT_EQ(s.eps_width, 2.0);
}

TEST(TubeStats, RatioIsInfiniteWithNothingBelow) {
    nusvqr::Dataset d;
    d.features = nusvqr::FeatureMatrix::Zero(3, 1);
    d.response = vec({5.0, 0.0, 0.1});
    const auto s = nusvqr::tube_stats(flat_model(0.5, 0.0, 1.0, 3), d);
    EXPECT_EQ(s.n_above, 1u);
    EXPECT_EQ(s.ratio_above_below, std::numeric_limits<double>::infinity());
}

TEST(TubeStats, MatchesPerPointOracle) {
    std::mt19937_64 rng(4);
    std::normal_distribution<double> n(0.0, 1.0);
    nusvqr::Dataset d;
    d.features = nusvqr::FeatureMatrix::Zero(400, 1);
    d.response.resize(400);
    for (auto& v : d.response) v = n(rng);
    const double tau = 0.7;
    const double eps = 0.8;
    const double b = 0.1;
    const auto s = nusvqr::tube_stats(flat_model(tau, b, eps, 400), d);
    std::size_t above = 0;
    std::size_t below = 0;
    for (double y : d.response) {
        above += y - b > (1.0 - tau) * eps ? 1 : 0;
        below += y - b < -tau * eps ? 1 : 0;
    }
    EXPECT_EQ(s.n_above, above);
    EXPECT_EQ(s.n_below, below);
}
