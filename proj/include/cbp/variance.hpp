#pragma once

// Variance-component estimates for the Fay-Herriot model: REML, profile
// MLE, unbiased risk (URE) and the observed-best-predictor criterion (OBP).
// All searches run over [0, tau_max] with tau_max = 10 sd(Y).

#include <cmath>
#include <string>

#include "cbp/model.hpp"
#include "cbp/optimizer.hpp"
#include "cbp/risk.hpp"
#include "cbp/weights.hpp"

namespace cbp {

enum class TauMethod { Reml, Mle, Ure, Obp };

inline const char* to_string(TauMethod m) {
    switch (m) {
        case TauMethod::Reml: return "REML";
        case TauMethod::Mle: return "MLE";
        case TauMethod::Ure: return "URE";
        case TauMethod::Obp: return "OBP";
    }
    return "REML";
}

struct TauEstimate {
    double tau = 0.0;
    TauMethod method = TauMethod::Reml;
    double objective_at_opt = 0.0;
    bool converged = false;
};

namespace detail {

inline void require_more_areas_than_covariates(const AreaDataset& data) {
    if (data.size() <= data.num_covariates())
        throw InsufficientDataError("need more areas (" + std::to_string(data.size()) + ") than covariates (" +
                                    std::to_string(data.num_covariates()) + ")");
}

/// Seeds for tau searches: zero plus 64 log-spaced points up to tau_max.
inline BoxSpec tau_box(double tau_max) {
    BoxSpec box;
    box.lower = {0.0};
    box.upper = {tau_max};
    box.seed_values = {zero_and_logspace(tau_max, 64, 4.0)};
    return box;
}

template <class Objective>
TauEstimate minimize_tau(const AreaDataset& data, TauMethod method, Objective objective) {
    const auto r = minimize_1d([&](double tau) { return objective(data, tau); }, tau_box(tau_upper_bound(data.y())));
    return TauEstimate{r.x[0], method, r.value, r.converged};
}

}  // namespace detail

/// Negative restricted log-likelihood (constants dropped):
///   1/2 sum log V_k + 1/2 log|X^T V^-1 X| + 1/2 Y^T P Y,  V_k = sigma_k^2 + tau^2.
inline double reml_objective(const AreaDataset& data, double tau) {
    const VectorXd v = (data.sigma2().array() + tau * tau).matrix();
    const VectorXd vinv = v.cwiseInverse();
    const auto fit = detail::wls_fit(data.x(), data.y(), vinv, false);
    const MatrixXd normal = data.x().transpose() * vinv.asDiagonal() * data.x();
    const double logdet = Eigen::LDLT<MatrixXd>(normal).vectorD().array().log().sum();
    const VectorXd r = data.y() - fit.fitted;
    return 0.5 * (v.array().log().sum() + logdet + (r.array().square() * vinv.array()).sum());
}

/// Negative profile log-likelihood with beta at its GLS value (constants dropped).
inline double mle_objective(const AreaDataset& data, double tau) {
    const VectorXd v = (data.sigma2().array() + tau * tau).matrix();
    const VectorXd vinv = v.cwiseInverse();
    const auto fit = detail::wls_fit(data.x(), data.y(), vinv, false);
    const VectorXd r = data.y() - fit.fitted;
    return 0.5 * (v.array().log().sum() + (r.array().square() * vinv.array()).sum());
}

/// M_hat at MLE weights and the same tau.
inline double ure_objective(const AreaDataset& data, double tau) {
    return mspe_estimate(data, mle_weights(data.sigma2(), tau), tau).value;
}

/// Q(tau) = sum B_k^2 (Y_k - x_k^T beta_bpe)^2 + 2 tau^2 sum B_k, where
/// beta_bpe is the WLS fit with weights B_k^2.
inline double obp_objective(const AreaDataset& data, double tau) {
    const auto b = shrinkage_factors(data.sigma2(), tau);
    const auto w = bpe_weights(data.sigma2(), tau);
    const auto fit = detail::wls_fit(data.x(), data.y(), w.values(), false);
    const auto& bv = b.values().array();
    return (bv.square() * (data.y() - fit.fitted).array().square()).sum() + 2.0 * tau * tau * bv.sum();
}

inline TauEstimate tau_reml(const AreaDataset& data) {
    detail::require_more_areas_than_covariates(data);
    return detail::minimize_tau(data, TauMethod::Reml, reml_objective);
}

inline TauEstimate tau_mle(const AreaDataset& data) {
    detail::require_more_areas_than_covariates(data);
    return detail::minimize_tau(data, TauMethod::Mle, mle_objective);
}

/// When K equals p the fit is exact, the objective is flat and tau = 0 is returned.
inline TauEstimate tau_ure(const AreaDataset& data) {
    return detail::minimize_tau(data, TauMethod::Ure, ure_objective);
}

inline TauEstimate tau_obp(const AreaDataset& data) {
    detail::require_more_areas_than_covariates(data);
    return detail::minimize_tau(data, TauMethod::Obp, obp_objective);
}

inline TauEstimate estimate_tau(const AreaDataset& data, TauMethod method) {
    switch (method) {
        case TauMethod::Reml: return tau_reml(data);
        case TauMethod::Mle: return tau_mle(data);
        case TauMethod::Ure: return tau_ure(data);
        case TauMethod::Obp: return tau_obp(data);
    }
    throw InvalidInputError("unknown variance method");
}

}  // namespace cbp
