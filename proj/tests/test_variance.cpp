#include <gtest/gtest.h>

#include "cbp/cbp.hpp"
#include "oracles.hpp"

using namespace cbp;

namespace {

AreaDataset balanced(int k, double sigma2, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> z(0.0, 1.0);
    VectorXd y(k);
    for (int i = 0; i < k; ++i) y[i] = 2.0 + 1.5 * z(rng);
    return AreaDataset(y, intercept_design(k), VectorXd::Constant(k, sigma2));
}

double sample_var(const VectorXd& y, double divisor) {
    return (y.array() - y.mean()).square().sum() / divisor;
}

}  // namespace

TEST(TauReml, BalancedClosedForm) {
    for (std::uint64_t seed = 1; seed <= 6; ++seed) {
        const auto data = balanced(25, seed % 2 ? 0.5 : 4.0, seed);
        const double expected = std::max(0.0, sample_var(data.y(), 24) - data.sigma2()[0]);
        EXPECT_NEAR(tau_reml(data).tau * tau_reml(data).tau, expected, 1e-6) << "seed " << seed;
    }
}

TEST(TauMle, BalancedClosedForm) {
    for (std::uint64_t seed = 1; seed <= 6; ++seed) {
        const auto data = balanced(25, seed % 2 ? 0.5 : 4.0, seed);
        const double expected = std::max(0.0, sample_var(data.y(), 25) - data.sigma2()[0]);
        const double tau = tau_mle(data).tau;
        EXPECT_NEAR(tau * tau, expected, 1e-6) << "seed " << seed;
    }
}

TEST(TauEstimators, ConstantResponseGivesZero) {
    const AreaDataset data(VectorXd::Constant(10, 3.0), intercept_design(10), VectorXd::LinSpaced(10, 0.5, 2.0));
    EXPECT_EQ(tau_reml(data).tau, 0.0);
    EXPECT_EQ(tau_mle(data).tau, 0.0);
    EXPECT_EQ(tau_obp(data).tau, 0.0);
}

TEST(TauEstimators, MatchDenseGridSearch) {
    for (std::uint64_t seed : {3u, 8u, 13u}) {
        const auto in = oracle::random_instance(40, 2, seed, 1.2);
        const AreaDataset data(in.y, in.x, in.sigma2);
        const double hi = tau_upper_bound(in.y);
        struct Case {
            TauMethod method;
            std::function<double(double)> f;
        };
        const std::vector<Case> cases{
            {TauMethod::Reml, [&](double t) { return oracle::reml(in.x, in.y, in.sigma2, t); }},
            {TauMethod::Mle, [&](double t) { return oracle::ml(in.x, in.y, in.sigma2, t); }},
            {TauMethod::Ure,
             [&](double t) { return oracle::mhat(in.x, in.y, in.sigma2, oracle::mle(in.sigma2, t), t); }},
            {TauMethod::Obp, [&](double t) { return oracle::obp(in.x, in.y, in.sigma2, t); }},
        };
        for (const auto& c : cases) {
            const auto est = estimate_tau(data, c.method);
            const auto grid = oracle::grid_then_golden(c.f, 0.0, hi, 20001);
            EXPECT_LE(c.f(est.tau), grid.second + 1e-9 * (1 + std::abs(grid.second))) << to_string(c.method);
            EXPECT_NEAR(est.tau, grid.first, 1e-4) << to_string(c.method) << " seed " << seed;
        }
    }
}

TEST(TauEstimators, ObjectivesMatchDenseFormulas) {
    const auto in = oracle::random_instance(12, 3, 4);
    const AreaDataset data(in.y, in.x, in.sigma2);
    for (double t : {0.0, 0.3, 1.0, 2.5}) {
        EXPECT_NEAR(reml_objective(data, t), oracle::reml(in.x, in.y, in.sigma2, t), 1e-10);
        EXPECT_NEAR(mle_objective(data, t), oracle::ml(in.x, in.y, in.sigma2, t), 1e-10);
        EXPECT_NEAR(obp_objective(data, t), oracle::obp(in.x, in.y, in.sigma2, t), 1e-10);
    }
}

TEST(TauUre, ExactFitReturnsZero) {
    const AreaDataset one(VectorXd::Constant(1, 2.0), intercept_design(1), VectorXd::Ones(1));
    EXPECT_EQ(tau_ure(one).tau, 0.0);
    EXPECT_THROW(tau_reml(one), InsufficientDataError);
    EXPECT_THROW(tau_obp(one), InsufficientDataError);
}

TEST(TauUre, InteriorOnInformativeSampleSizeData) {
    SimScenario s;
    s.kind = ScenarioKind::InformativeSampleSize;
    s.k = 50;
    s.n_rep = 5;
    s.iss.rho = 0.5;
    for (int r = 0; r < 5; ++r) {
        const auto rep = generate(s, r);
        const double tau = tau_ure(rep.data).tau;
        EXPECT_GT(tau, 0.0);
        EXPECT_LT(tau, tau_upper_bound(rep.data.y()));
    }
}

TEST(TauObp, PenaltyIdentity) {
    const auto in = oracle::random_instance(9, 1, 2);
    for (double tau : {0.0, 0.4, 3.0}) {
        const auto b = shrinkage_factors(in.sigma2, tau).values();
        const double lhs = (tau * tau * b.array() + in.sigma2.array() * b.array()).sum();
        EXPECT_NEAR(lhs, in.sigma2.sum(), 1e-12);
    }
}

TEST(TauEstimators, ResultsStayInBox) {
    for (std::uint64_t seed = 20; seed < 30; ++seed) {
        const auto in = oracle::random_instance(15, 2, seed);
        const AreaDataset data(in.y, in.x, in.sigma2);
        for (auto m : {TauMethod::Reml, TauMethod::Mle, TauMethod::Ure, TauMethod::Obp}) {
            const auto e = estimate_tau(data, m);
            EXPECT_GE(e.tau, 0.0);
            EXPECT_LE(e.tau, tau_upper_bound(in.y));
            EXPECT_TRUE(std::isfinite(e.objective_at_opt));
        }
    }
}
