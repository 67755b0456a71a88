#pragma once

// Unbiased MSPE estimate for the class theta_hat(w, tau) = (U + I) Y and the
// exact MSPE under known mean and variance component (simulation use only).

#include <string>
#include <utility>
#include <vector>

#include "cbp/model.hpp"
#include "cbp/weights.hpp"

namespace cbp {

/// A risk value and its additive breakdown. The value can be negative: an
/// unbiased estimate of a nonnegative quantity is not itself nonnegative.
struct RiskValue {
    double value = 0.0;
    std::vector<std::pair<std::string, double>> components;

    double component(const std::string& name) const {
        for (const auto& [n, v] : components)
            if (n == name) return v;
        throw InvalidInputError("no risk component named " + name);
    }
};

/// M_hat = Y^T U^T U Y + 2 tr(U V) + tr(V) with V = diag(sigma2) and U built
/// from explicit shrinkage factors. Evaluated without forming U:
/// U Y = B (X beta_w - Y) and tr(U V) = sum_k B_k (h_kk - 1) sigma_k^2.
inline RiskValue risk_estimate(const AreaDataset& data, const WeightVector& w, const ShrinkageVector& b) {
    const Index k = data.size();
    if (w.size() != k || b.size() != k) throw InvalidInputError("weight/shrinkage length mismatch");
    const auto fit = detail::wls_fit(data.x(), data.y(), w.values(), true);
    const auto& bv = b.values().array();
    const auto& s2 = data.sigma2().array();
    const double quadratic = (bv * (fit.fitted - data.y()).array()).square().sum();
    const double cross = 2.0 * (bv * (fit.leverage.array() - 1.0) * s2).sum();
    const double trace_v = s2.sum();
    return RiskValue{quadratic + cross + trace_v,
                     {{"quadratic", quadratic}, {"cross", cross}, {"trace_v", trace_v}}};
}

inline RiskValue mspe_estimate(const AreaDataset& data, const WeightVector& w, double tau) {
    return risk_estimate(data, w, shrinkage_factors(data.sigma2(), tau));
}

/// M_hat along the compromise path alpha * MLE + (1 - alpha) * BPE.
inline RiskValue compromise_risk(const AreaDataset& data, double alpha, double tau) {
    return mspe_estimate(data, compromise_weights(data.sigma2(), alpha, tau), tau);
}

/// Exact MSPE of (U + I) Y when Y = mu + v + e, Var(v_k) = tau0^2 and
/// Var(e_k) = sigma2_k:
///   mu^T U^T U mu + tr{(U + I) V (U + I)^T} + tau0^2 tr{U^T U}.
inline RiskValue mspe_true(const MatrixXd& x, const VectorXd& sigma2, const VectorXd& mu, double tau0,
                           const WeightVector& w, const ShrinkageVector& b) {
    const Index k = x.rows();
    if (mu.size() != k || sigma2.size() != k) throw InvalidInputError("dimension mismatch in mspe_true");
    if (!(tau0 >= 0.0)) throw InvalidInputError("tau0 must be nonnegative");
    // Y is irrelevant to U; a placeholder keeps the dataset invariants.
    const AreaDataset design(VectorXd::Zero(k), x, sigma2);
    const MatrixXd u = predictor_matrix(design, w, b).u;
    const VectorXd umu = u * mu;
    const double bias = umu.squaredNorm();
    MatrixXd up = u;
    up.diagonal().array() += 1.0;
    const double variance = (up * sigma2.asDiagonal() * up.transpose()).trace();
    const double random_effect = tau0 * tau0 * u.squaredNorm();
    return RiskValue{bias + variance + random_effect,
                     {{"bias", bias}, {"variance", variance}, {"random_effect", random_effect}}};
}

inline RiskValue mspe_true(const MatrixXd& x, const VectorXd& sigma2, const VectorXd& mu, double tau0,
                           const WeightVector& w, double tau) {
    return mspe_true(x, sigma2, mu, tau0, w, shrinkage_factors(sigma2, tau));
}

}  // namespace cbp
