#pragma once

// Regression-weight families: MLE (GLS) weights, best-predictive (BPE)
// weights, their convex compromise, and the plug-in / multi-tau variants that
// also move the shrinkage factors.

#include <cmath>
#include <utility>

#include "cbp/model.hpp"

namespace cbp {

namespace detail {

inline void check_alpha(double alpha) {
    if (!(alpha >= 0.0 && alpha <= 1.0)) throw InvalidInputError("alpha must lie in [0,1]");
}

inline void check_tau(double tau) {
    if (!(tau >= 0.0) || !std::isfinite(tau)) throw InvalidInputError("tau must be finite and nonnegative");
}

}  // namespace detail

/// w_k proportional to 1 / (sigma_k^2 + tau^2).
inline WeightVector mle_weights(const VectorXd& sigma2, double tau) {
    shrinkage_factors(sigma2, tau);  // validates sigma2 and tau
    const VectorXd raw = (sigma2.array() + tau * tau).inverse().matrix();
    return WeightVector(raw, WeightKind{WeightFamily::Mle, 1.0, tau});
}

/// w_k proportional to B_k^2.
inline WeightVector bpe_weights(const VectorXd& sigma2, double tau) {
    const auto b = shrinkage_factors(sigma2, tau);
    VectorXd raw = b.values().array().square().matrix();
    // B_k underflows together for tau >> sigma; fall back to the ratio form.
    if (!(raw.sum() > 0.0)) raw = sigma2.array().square().matrix();
    return WeightVector(raw, WeightKind{WeightFamily::Bpe, 0.0, tau});
}

/// alpha * MLE weights + (1 - alpha) * BPE weights, each normalized first.
inline WeightVector compromise_weights(const VectorXd& sigma2, double alpha, double tau) {
    detail::check_alpha(alpha);
    const auto mle = mle_weights(sigma2, tau);
    const auto bpe = bpe_weights(sigma2, tau);
    VectorXd w = alpha * mle.values() + (1.0 - alpha) * bpe.values();
    return WeightVector(std::move(w), WeightKind{WeightFamily::Compromise, alpha, tau});
}

/// Effective variance component sqrt(alpha tau1^2 + (1 - alpha) tau0^2).
inline double blended_tau(double alpha, double tau0, double tau1) {
    return std::sqrt(alpha * tau1 * tau1 + (1.0 - alpha) * tau0 * tau0);
}

struct WeightedShrinkage {
    WeightVector weights;
    ShrinkageVector shrinkage;
};

/// Plug-in family: MLE weights at the REML tau, BPE weights at the OBP tau,
/// shrinkage at the alpha-blend of the squared taus.
inline WeightedShrinkage plugin_weights(const VectorXd& sigma2, double alpha, double tau_reml, double tau_obp) {
    detail::check_alpha(alpha);
    detail::check_tau(tau_reml);
    detail::check_tau(tau_obp);
    const auto mle = mle_weights(sigma2, tau_reml);
    const auto bpe = bpe_weights(sigma2, tau_obp);
    WeightKind kind{WeightFamily::PlugIn, alpha, blended_tau(alpha, tau_obp, tau_reml), tau_obp, tau_reml};
    WeightVector w(alpha * mle.values() + (1.0 - alpha) * bpe.values(), kind);
    return {std::move(w), shrinkage_factors(sigma2, blended_tau(alpha, tau_obp, tau_reml))};
}

/// Multi-tau family: MLE weights at tau1, BPE weights at tau0.
inline WeightedShrinkage multitau_weights(const VectorXd& sigma2, double alpha, double tau0, double tau1) {
    detail::check_alpha(alpha);
    detail::check_tau(tau0);
    detail::check_tau(tau1);
    const auto mle = mle_weights(sigma2, tau1);
    const auto bpe = bpe_weights(sigma2, tau0);
    const double tau_eff = blended_tau(alpha, tau0, tau1);
    WeightVector w(alpha * mle.values() + (1.0 - alpha) * bpe.values(),
                   WeightKind{WeightFamily::MultiTau, alpha, tau_eff, tau0, tau1});
    return {std::move(w), shrinkage_factors(sigma2, tau_eff)};
}

}  // namespace cbp
