#include <gtest/gtest.h>

#include "cbp/cbp.hpp"
#include "oracles.hpp"

using namespace cbp;

namespace {

AreaDataset make(const oracle::Instance& in) { return AreaDataset(in.y, in.x, in.sigma2); }

/// Six observations, two random effects with separate variances.
GeneralModel two_component_model(const VectorXd& y) {
    GeneralModel m;
    m.y = y;
    m.x = MatrixXd::Ones(6, 1);
    m.z = MatrixXd::Zero(6, 2);
    for (int i = 0; i < 3; ++i) m.z(i, 0) = 1.0;
    for (int i = 3; i < 6; ++i) m.z(i, 1) = 1.0;
    m.z(2, 1) = 0.5;
    m.sigma = VectorXd::LinSpaced(6, 0.5, 1.5).asDiagonal();
    m.sigma(0, 1) = m.sigma(1, 0) = 0.1;
    m.g_of_lambda = [](const VectorXd& l) -> MatrixXd {
        return (VectorXd(2) << l[0] * l[0], l[1] * l[1]).finished().asDiagonal();
    };
    m.lambda_lower = {0.0, 0.0};
    m.lambda_upper = {3.0, 3.0};
    m.a = MatrixXd::Zero(6, 2);
    m.a.col(0).head(3).setConstant(1.0 / 3);
    m.a.col(1).tail(3).setConstant(1.0 / 3);
    m.r = MatrixXd::Identity(2, 2);
    return m;
}

}  // namespace

TEST(GeneralMixed, FayHerriotReduction) {
    for (std::uint64_t seed = 1; seed <= 5; ++seed) {
        const auto in = oracle::random_instance(9, 2, seed);
        const auto data = make(in);
        const auto model = fay_herriot_as_general(data);
        const double tau = 0.3 * static_cast<double>(seed);
        const auto w = compromise_weights(in.sigma2, 0.6, tau);
        const MatrixXd wm = w.values().asDiagonal();
        const VectorXd lambda = VectorXd::Constant(1, tau);
        EXPECT_NEAR(general_mspe_estimate(model, wm, lambda).value, mspe_estimate(data, w, tau).value, 1e-9);
        EXPECT_LT((general_predict(model, wm, lambda) - combine(data, wls_beta(data, w), tau)).norm(), 1e-10);
    }
}

TEST(GeneralMixed, LAnnihilatesDesign) {
    const auto model = two_component_model(VectorXd::LinSpaced(6, 0, 5));
    const MatrixXd w = compromise_weight_matrix(model, 0.3, VectorXd::Constant(2, 0.8)).w;
    const auto lm = l_matrix(model, w, (VectorXd(2) << 0.8, 1.3).finished());
    EXPECT_LT((lm.l * model.x).norm(), 1e-12);
}

TEST(GeneralMixed, ZeroTargetHasZeroRisk) {
    auto model = two_component_model(VectorXd::LinSpaced(6, 0, 5));
    model.a.setZero();
    model.r.setZero();
    const VectorXd lambda = (VectorXd(2) << 0.5, 1.0).finished();
    const auto r = general_mspe_estimate(model, MatrixXd::Identity(6, 6), lambda);
    EXPECT_NEAR(r.value, 0.0, 1e-14);
}

TEST(GeneralMixed, PopulationMeanCrossCheck) {
    std::mt19937_64 rng(9);
    std::normal_distribution<double> z(0.0, 1.0);
    const int k = 12;
    VectorXd y(k), n(k);
    for (int i = 0; i < k; ++i) {
        n[i] = 2.0 + i;
        y[i] = 1.0 + 0.1 * n[i] + z(rng);
    }
    const PopMeanInput in(y, n, 2.0);
    GeneralModel m;
    m.y = y;
    m.x = MatrixXd::Ones(k, 1);
    m.z = MatrixXd::Identity(k, k);
    m.sigma = in.sigma2_k().asDiagonal();
    m.g_of_lambda = [k](const VectorXd& l) -> MatrixXd { return MatrixXd::Identity(k, k) * l[0] * l[0]; };
    m.lambda_lower = {0.0};
    m.lambda_upper = {5.0};
    m.a = VectorXd::Constant(k, 1.0 / k);
    m.r = VectorXd::Constant(k, 1.0 / k);
    for (double tau : {0.0, 0.4, 1.3}) {
        const auto w = compromise_weights(in.sigma2_k(), 0.3, tau);
        const MatrixXd wm = w.values().asDiagonal();
        const VectorXd lambda = VectorXd::Constant(1, tau);
        EXPECT_NEAR(general_predict(m, wm, lambda)[0], mu_family(in, w, tau).mu_hat, 1e-12);
        EXPECT_NEAR(general_mspe_estimate(m, wm, lambda).value, popmean_risk(in, w, tau), 1e-10);
    }
}

TEST(GeneralMixed, AlphaOneIsGlsWeight) {
    const auto model = two_component_model(VectorXd::LinSpaced(6, 0, 5));
    const VectorXd lambda = (VectorXd(2) << 0.7, 1.1).finished();
    const auto cw = compromise_weight_matrix(model, 1.0, lambda);
    const MatrixXd v = model.z * model.g(lambda) * model.z.transpose() + model.sigma;
    EXPECT_LT((cw.w - v.inverse()).norm(), 1e-12);
    EXPECT_FALSE(cw.ridge_applied);
}

TEST(GeneralMixed, RidgeWhenSingular) {
    // alpha = 0 with a rank-one target: C^T C is singular.
    const auto model = two_component_model(VectorXd::LinSpaced(6, 0, 5));
    const auto cw = compromise_weight_matrix(model, 0.0, (VectorXd(2) << 0.7, 1.1).finished());
    EXPECT_TRUE(cw.ridge_applied);
    EXPECT_EQ(Eigen::LLT<MatrixXd>(cw.w).info(), Eigen::Success);
}

TEST(GeneralCureFit, ReproducesFayHerriotCbp) {
    for (std::uint64_t seed = 1; seed <= 3; ++seed) {
        const auto in = oracle::random_instance(12, 2, seed * 3);
        const auto data = make(in);
        const auto cbp = fit_cbp(data);
        const auto g = general_cure_fit(fay_herriot_as_general(data));
        EXPECT_LE(g.risk_estimate, cbp.risk_estimate + 1e-7 * (1 + cbp.risk_estimate));
        EXPECT_NEAR(g.risk_estimate, cbp.risk_estimate, 1e-5 * (1 + cbp.risk_estimate));
        EXPECT_LT((g.eta_hat - cbp.theta_hat).norm(), 1e-3);
        EXPECT_NEAR(g.lambda_star[0], cbp.tau_star, 1e-3 * (1 + cbp.tau_star));
        // Same point on the compromise path after normalizing each family.
        const VectorXd vinv = (in.sigma2.array() + g.lambda_star[0] * g.lambda_star[0]).inverse().matrix();
        const VectorXd b2 = oracle::shrink(in.sigma2, g.lambda_star[0]).cwiseAbs2();
        const double a = g.alpha_star * vinv.sum() / (g.alpha_star * vinv.sum() + (1 - g.alpha_star) * b2.sum());
        EXPECT_NEAR(a, *cbp.alpha_star, 1e-3);
    }
}

TEST(GeneralMixed, RiskEstimateUnbiased) {
    const auto base = two_component_model(VectorXd::Zero(6));
    const VectorXd lambda = (VectorXd(2) << 0.9, 0.6).finished();
    const VectorXd lambda_fit = (VectorXd(2) << 0.5, 1.2).finished();
    const MatrixXd w = compromise_weight_matrix(base, 0.4, lambda_fit).w;
    const MatrixXd g = base.g(lambda);
    const Eigen::LLT<MatrixXd> sigma_chol(base.sigma);
    const VectorXd mu = (VectorXd(6) << 1, 2, 0, -1, 1, 3).finished();  // not in span(X)

    std::mt19937_64 rng(123);
    std::normal_distribution<double> z(0.0, 1.0);
    const int reps = 40000;
    double sum_m = 0, sum_m2 = 0, sum_l = 0, sum_l2 = 0;
    auto model = base;
    for (int r = 0; r < reps; ++r) {
        VectorXd u(2), e(6);
        for (auto& v : u) v = z(rng);
        for (auto& v : e) v = z(rng);
        const VectorXd ranef = g.diagonal().cwiseSqrt().cwiseProduct(u);
        model.y = mu + base.z * ranef + sigma_chol.matrixL() * e;
        const VectorXd target = base.a.transpose() * mu + base.r.transpose() * ranef;
        const double l2 = (general_predict(model, w, lambda) - target).squaredNorm();
        const double m = general_mspe_estimate(model, w, lambda).value;
        sum_m += m;
        sum_m2 += m * m;
        sum_l += l2;
        sum_l2 += l2 * l2;
    }
    const double mm = sum_m / reps, ml = sum_l / reps;
    const double se = std::sqrt((sum_m2 / reps - mm * mm) / reps + (sum_l2 / reps - ml * ml) / reps);
    EXPECT_NEAR(mm, ml, 3.5 * se);
}
