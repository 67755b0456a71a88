#pragma once

// General linear mixed model Y = X beta + Z v + e with Var(v) = G(lambda),
// Var(e) = Sigma, and mixed-effect targets eta = A^T mu + R^T v.

#include <algorithm>
#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "cbp/error.hpp"
#include "cbp/model.hpp"
#include "cbp/optimizer.hpp"
#include "cbp/risk.hpp"

namespace cbp {

struct GeneralModel {
    VectorXd y;
    MatrixXd x;      // K x p
    MatrixXd z;      // K x p_z
    MatrixXd sigma;  // K x K
    std::function<MatrixXd(const VectorXd&)> g_of_lambda;  // lambda -> p_z x p_z
    std::vector<double> lambda_lower;
    std::vector<double> lambda_upper;
    MatrixXd a;  // K x p_eta
    MatrixXd r;  // p_z x p_eta
    /// Optional explicit seed values per lambda coordinate; 17 equally spaced otherwise.
    std::vector<std::vector<double>> lambda_seeds;

    Index size() const noexcept { return y.size(); }

    void validate() const {
        const Index k = y.size();
        if (k < 1) throw InvalidInputError("general model needs at least one observation");
        if (x.rows() != k || z.rows() != k) throw InvalidInputError("X and Z must have one row per observation");
        if (x.cols() < 1 || x.cols() > k) throw InvalidInputError("X needs between 1 and K columns");
        if (sigma.rows() != k || sigma.cols() != k) throw InvalidInputError("Sigma must be K x K");
        if (a.rows() != k) throw InvalidInputError("A must have K rows");
        if (r.rows() != z.cols() || r.cols() != a.cols()) throw InvalidInputError("R must be p_z x p_eta");
        if (!g_of_lambda) throw InvalidInputError("G(lambda) is not set");
        if (lambda_lower.size() != lambda_upper.size() || lambda_lower.empty() || lambda_lower.size() > 3)
            throw InvalidInputError("lambda box needs 1 to 3 coordinates");
        if (!lambda_seeds.empty() && lambda_seeds.size() != lambda_lower.size())
            throw InvalidInputError("lambda_seeds size mismatch");
        if (!y.allFinite() || !x.allFinite() || !z.allFinite() || !sigma.allFinite())
            throw InvalidInputError("non-finite entry in general model");
        if ((sigma - sigma.transpose()).cwiseAbs().maxCoeff() > 1e-12 * (1.0 + sigma.cwiseAbs().maxCoeff()))
            throw InvalidInputError("Sigma is not symmetric");
        if (Eigen::LLT<MatrixXd>(sigma).info() != Eigen::Success)
            throw InvalidInputError("Sigma is not positive definite");
    }

    MatrixXd g(const VectorXd& lambda) const {
        const MatrixXd gm = g_of_lambda(lambda);
        if (gm.rows() != z.cols() || gm.cols() != z.cols()) throw InvalidInputError("G(lambda) must be p_z x p_z");
        return gm;
    }
};

/// L together with V = Z G Z^T + Sigma and G at the same lambda.
struct LMatrix {
    MatrixXd l;
    MatrixXd v;
    MatrixXd g;
};

struct CompromiseWeightMatrix {
    MatrixXd w;
    bool ridge_applied = false;
};

struct GeneralFit {
    VectorXd beta;
    double alpha_star = 1.0;
    VectorXd lambda_star;
    VectorXd eta_hat;
    double risk_estimate = 0.0;
    bool ridge_applied = false;
};

namespace detail {

inline MatrixXd spd_inverse(const MatrixXd& m, const char* what) {
    Eigen::LLT<MatrixXd> llt(m);
    if (llt.info() != Eigen::Success) throw NumericalError(std::string(what) + " is not positive definite");
    return llt.solve(MatrixXd::Identity(m.rows(), m.cols()));
}

inline void require_pd_weight(const MatrixXd& w, Index k) {
    if (w.rows() != k || w.cols() != k) throw InvalidInputError("W must be K x K");
    if (!w.allFinite() || Eigen::LLT<MatrixXd>(w).info() != Eigen::Success)
        throw InvalidInputError("W is not positive definite");
}

/// I - X (X^T W X)^-1 X^T W
inline MatrixXd residual_projector(const MatrixXd& x, const MatrixXd& w) {
    const MatrixXd xtw = x.transpose() * w;
    const auto ldlt = factor_normal_matrix(xtw * x);
    MatrixXd p = -x * ldlt.solve(xtw);
    p.diagonal().array() += 1.0;
    return p;
}

}  // namespace detail

/// L = R^T G Z^T V^-1 P_W - A^T P_W with P_W = I - X (X^T W X)^-1 X^T W.
inline LMatrix l_matrix(const GeneralModel& model, const MatrixXd& w, const VectorXd& lambda) {
    detail::require_pd_weight(w, model.size());
    MatrixXd g = model.g(lambda);
    MatrixXd v = model.z * g * model.z.transpose() + model.sigma;
    const MatrixXd vinv = detail::spd_inverse(v, "V(lambda)");
    const MatrixXd pw = detail::residual_projector(model.x, w);
    MatrixXd l = (model.r.transpose() * g * model.z.transpose() * vinv - model.a.transpose()) * pw;
    return LMatrix{std::move(l), std::move(v), std::move(g)};
}

/// eta_hat = (L + A^T) Y.
inline VectorXd general_predict(const GeneralModel& model, const MatrixXd& w, const VectorXd& lambda) {
    const auto lm = l_matrix(model, w, lambda);
    return (lm.l + model.a.transpose()) * model.y;
}

/// Y^T L^T L Y + 2 tr{L (V A - Z G R)} + tr(A^T V A) - 2 tr(R^T G Z^T A) + tr(R^T G R).
inline RiskValue general_mspe_estimate(const GeneralModel& model, const MatrixXd& w, const VectorXd& lambda) {
    const auto lm = l_matrix(model, w, lambda);
    const MatrixXd& a = model.a;
    const MatrixXd& r = model.r;
    const double quadratic = (lm.l * model.y).squaredNorm();
    const double cross = 2.0 * (lm.l * (lm.v * a - model.z * lm.g * r)).trace();
    const double target = (a.transpose() * lm.v * a).trace() - 2.0 * (r.transpose() * lm.g * model.z.transpose() * a).trace() +
                          (r.transpose() * lm.g * r).trace();
    return RiskValue{quadratic + cross + target, {{"quadratic", quadratic}, {"cross", cross}, {"target", target}}};
}

/// alpha V^-1 + (1 - alpha) C^T C with C = A^T - R^T G Z^T V^-1. A ridge of
/// 1e-10 tr(W)/K is added when the result is numerically singular.
inline CompromiseWeightMatrix compromise_weight_matrix(const GeneralModel& model, double alpha, const VectorXd& lambda) {
    if (!(alpha >= 0.0 && alpha <= 1.0)) throw InvalidInputError("alpha must lie in [0,1]");
    const Index k = model.size();
    const MatrixXd g = model.g(lambda);
    const MatrixXd v = model.z * g * model.z.transpose() + model.sigma;
    const MatrixXd vinv = detail::spd_inverse(v, "V(lambda)");
    const MatrixXd c = model.a.transpose() - model.r.transpose() * g * model.z.transpose() * vinv;
    MatrixXd w = alpha * vinv + (1.0 - alpha) * (c.transpose() * c);
    w = 0.5 * (w + w.transpose());
    const Eigen::SelfAdjointEigenSolver<MatrixXd> eig(w, Eigen::EigenvaluesOnly);
    const double top = eig.eigenvalues().maxCoeff();
    const double bottom = eig.eigenvalues().minCoeff();
    bool ridge = false;
    if (!(top > 0.0) || !(bottom > 1e-12 * top)) {
        const double scale = w.trace() > 0.0 ? w.trace() / static_cast<double>(k) : 1.0;
        w.diagonal().array() += 1e-10 * scale;
        ridge = true;
    }
    return CompromiseWeightMatrix{std::move(w), ridge};
}

/// Minimizes the general risk estimate over alpha in [0,1] and the lambda box.
inline GeneralFit general_cure_fit(const GeneralModel& model) {
    model.validate();
    const std::size_t nl = model.lambda_lower.size();
    auto unpack = [&](const std::vector<double>& p) {
        VectorXd lambda(static_cast<Index>(nl));
        for (std::size_t i = 0; i < nl; ++i) lambda[static_cast<Index>(i)] = p[i + 1];
        return lambda;
    };
    auto objective = [&](const std::vector<double>& p) {
        const VectorXd lambda = unpack(p);
        const auto cw = compromise_weight_matrix(model, std::clamp(1.0 - p[0], 0.0, 1.0), lambda);
        return general_mspe_estimate(model, cw.w, lambda).value;
    };

    BoxSpec box;
    box.lower = {0.0};
    box.upper = {1.0};
    box.seed_values = {linspace(0.0, 1.0, 17)};
    for (std::size_t i = 0; i < nl; ++i) {
        box.lower.push_back(model.lambda_lower[i]);
        box.upper.push_back(model.lambda_upper[i]);
        if (!model.lambda_seeds.empty() && !model.lambda_seeds[i].empty())
            box.seed_values.push_back(model.lambda_seeds[i]);
        else
            box.seed_values.push_back(linspace(model.lambda_lower[i], model.lambda_upper[i], 17));
    }
    const auto r = minimize_box(objective, box);

    GeneralFit fit;
    fit.alpha_star = std::clamp(1.0 - r.x[0], 0.0, 1.0);
    fit.lambda_star = unpack(r.x);
    const auto cw = compromise_weight_matrix(model, fit.alpha_star, fit.lambda_star);
    fit.ridge_applied = cw.ridge_applied;
    const MatrixXd xtw = model.x.transpose() * cw.w;
    fit.beta = detail::factor_normal_matrix(xtw * model.x).solve(xtw * model.y);
    fit.eta_hat = general_predict(model, cw.w, fit.lambda_star);
    fit.risk_estimate = general_mspe_estimate(model, cw.w, fit.lambda_star).value;
    return fit;
}

/// The Fay-Herriot model written in general form: Z = I, G = tau^2 I,
/// Sigma = diag(sigma2), targets theta (A = R = I), lambda = tau on [0, tau_max].
inline GeneralModel fay_herriot_as_general(const AreaDataset& data) {
    const Index k = data.size();
    GeneralModel m;
    m.y = data.y();
    m.x = data.x();
    m.z = MatrixXd::Identity(k, k);
    m.sigma = data.sigma2().asDiagonal();
    m.g_of_lambda = [k](const VectorXd& lambda) -> MatrixXd {
        return MatrixXd::Identity(k, k) * (lambda[0] * lambda[0]);
    };
    const double tau_max = tau_upper_bound(data.y());
    m.lambda_lower = {0.0};
    m.lambda_upper = {tau_max};
    m.lambda_seeds = {zero_and_logspace(tau_max, 32, 3.0)};
    m.a = MatrixXd::Identity(k, k);
    m.r = MatrixXd::Identity(k, k);
    return m;
}

}  // namespace cbp
