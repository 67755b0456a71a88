#pragma once

// Area-level predictors: EBLUP (MLE, REML or URE variance component), OBP,
// and the compromise predictors CBP, plug-in CBP and multi-tau CBP.

#include <cmath>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "cbp/model.hpp"
#include "cbp/optimizer.hpp"
#include "cbp/risk.hpp"
#include "cbp/variance.hpp"
#include "cbp/weights.hpp"

namespace cbp {

enum class Method { EblupMle, EblupReml, EblupUre, Obp, Cbp, PlugInCbp, MultiTauCbp };

inline const char* to_string(Method m) {
    switch (m) {
        case Method::EblupMle: return "eblup-mle";
        case Method::EblupReml: return "eblup-reml";
        case Method::EblupUre: return "eblup-ure";
        case Method::Obp: return "obp";
        case Method::Cbp: return "cbp";
        case Method::PlugInCbp: return "cbp-plugin";
        case Method::MultiTauCbp: return "cbp-multitau";
    }
    return "cbp";
}

/// Accepts the canonical names plus the short forms mle, reml, ure, plugin, multitau.
inline Method parse_method(const std::string& name) {
    if (name == "eblup-mle" || name == "mle") return Method::EblupMle;
    if (name == "eblup-reml" || name == "reml") return Method::EblupReml;
    if (name == "eblup-ure" || name == "ure") return Method::EblupUre;
    if (name == "obp") return Method::Obp;
    if (name == "cbp") return Method::Cbp;
    if (name == "cbp-plugin" || name == "plugin") return Method::PlugInCbp;
    if (name == "cbp-multitau" || name == "multitau") return Method::MultiTauCbp;
    throw ConfigError("unknown method '" + name + "'");
}

inline bool is_compromise(Method m) {
    return m == Method::Cbp || m == Method::PlugInCbp || m == Method::MultiTauCbp;
}

struct FitResult {
    Method method;
    VectorXd beta;
    /// Variance component used in the shrinkage factors (the blended value
    /// for plug-in and multi-tau fits).
    double tau_star;
    /// (tau0, tau1) for multi-tau; (tau_obp, tau_reml) for plug-in.
    std::optional<std::pair<double, double>> tau_pair;
    std::optional<double> alpha_star;
    VectorXd theta_hat;
    ShrinkageVector shrinkage;
    WeightVector weights;
    double risk_estimate;
};

namespace detail {

inline FitResult assemble(const AreaDataset& data, Method method, WeightVector w, ShrinkageVector b, double tau,
                          std::optional<double> alpha, std::optional<std::pair<double, double>> pair = std::nullopt) {
    const auto beta = wls_beta(data, w);
    VectorXd theta = combine(data, beta.beta, b);
    const double risk = risk_estimate(data, w, b).value;
    return FitResult{method, beta.beta, tau, pair, alpha, std::move(theta), std::move(b), std::move(w), risk};
}

/// Compromise box coordinates are (1 - alpha, tau...): the lexicographic
/// tie-break then prefers larger alpha, then smaller tau.
inline double alpha_of(double a) { return std::clamp(1.0 - a, 0.0, 1.0); }

}  // namespace detail

inline FitResult fit_eblup(const AreaDataset& data, TauMethod tau_method) {
    detail::require_more_areas_than_covariates(data);
    Method m;
    switch (tau_method) {
        case TauMethod::Mle: m = Method::EblupMle; break;
        case TauMethod::Reml: m = Method::EblupReml; break;
        case TauMethod::Ure: m = Method::EblupUre; break;
        default: throw InvalidInputError("EBLUP needs an MLE, REML or URE variance estimate");
    }
    const double tau = estimate_tau(data, tau_method).tau;
    return detail::assemble(data, m, mle_weights(data.sigma2(), tau), shrinkage_factors(data.sigma2(), tau), tau,
                            std::nullopt);
}

inline FitResult fit_obp(const AreaDataset& data) {
    const double tau = tau_obp(data).tau;
    return detail::assemble(data, Method::Obp, bpe_weights(data.sigma2(), tau), shrinkage_factors(data.sigma2(), tau),
                            tau, std::nullopt);
}

/// Joint minimization of M_hat along the compromise path over [0,1] x [0, tau_max].
inline FitResult fit_cbp(const AreaDataset& data) {
    detail::require_more_areas_than_covariates(data);
    const double tau_max = tau_upper_bound(data.y());
    auto objective = [&](const std::vector<double>& p) {
        return compromise_risk(data, detail::alpha_of(p[0]), p[1]).value;
    };

    const double tau_ure_hat = tau_ure(data).tau;
    const double tau_bpe_hat =
        minimize_1d([&](double t) { return compromise_risk(data, 0.0, t).value; }, detail::tau_box(tau_max)).x[0];

    BoxSpec box;
    box.lower = {0.0, 0.0};
    box.upper = {1.0, tau_max};
    box.seed_values = {linspace(0.0, 1.0, 17), zero_and_logspace(tau_max, 32, 3.0)};
    const auto r = minimize_box(objective, box, {{0.0, tau_ure_hat}, {1.0, tau_bpe_hat}});

    const double alpha = detail::alpha_of(r.x[0]);
    const double tau = r.x[1];
    return detail::assemble(data, Method::Cbp, compromise_weights(data.sigma2(), alpha, tau),
                            shrinkage_factors(data.sigma2(), tau), tau, alpha);
}

/// REML and OBP variance components are fixed; alpha moves both the weights
/// and the shrinkage factors.
inline FitResult fit_plugin_cbp(const AreaDataset& data) {
    detail::require_more_areas_than_covariates(data);
    const double tau_r = tau_reml(data).tau;
    const double tau_o = tau_obp(data).tau;
    auto objective = [&](double a) {
        const auto ws = plugin_weights(data.sigma2(), detail::alpha_of(a), tau_r, tau_o);
        return risk_estimate(data, ws.weights, ws.shrinkage).value;
    };
    BoxSpec box;
    box.lower = {0.0};
    box.upper = {1.0};
    box.grid_seeds = {65};
    const auto r = minimize_1d(objective, box);
    const double alpha = detail::alpha_of(r.x[0]);
    auto ws = plugin_weights(data.sigma2(), alpha, tau_r, tau_o);
    return detail::assemble(data, Method::PlugInCbp, std::move(ws.weights), std::move(ws.shrinkage),
                            blended_tau(alpha, tau_o, tau_r), alpha, std::make_pair(tau_o, tau_r));
}

/// Minimization over (alpha, tau0, tau1), seeded with the single-tau optimum so
/// the achieved M_hat never exceeds the CBP value.
inline FitResult fit_multitau_cbp(const AreaDataset& data) {
    const auto cbp = fit_cbp(data);
    const double tau_max = tau_upper_bound(data.y());
    auto objective = [&](const std::vector<double>& p) {
        const auto ws = multitau_weights(data.sigma2(), detail::alpha_of(p[0]), p[1], p[2]);
        return risk_estimate(data, ws.weights, ws.shrinkage).value;
    };
    BoxSpec box;
    box.lower = {0.0, 0.0, 0.0};
    box.upper = {1.0, tau_max, tau_max};
    const auto taus = zero_and_logspace(tau_max, 11, 3.0);
    box.seed_values = {linspace(0.0, 1.0, 9), taus, taus};
    const double a_cbp = 1.0 - *cbp.alpha_star;
    const auto r = minimize_box(objective, box, {{a_cbp, cbp.tau_star, cbp.tau_star}});

    const double alpha = detail::alpha_of(r.x[0]);
    auto ws = multitau_weights(data.sigma2(), alpha, r.x[1], r.x[2]);
    return detail::assemble(data, Method::MultiTauCbp, std::move(ws.weights), std::move(ws.shrinkage),
                            blended_tau(alpha, r.x[1], r.x[2]), alpha, std::make_pair(r.x[1], r.x[2]));
}

inline FitResult fit(const AreaDataset& data, Method method) {
    switch (method) {
        case Method::EblupMle: return fit_eblup(data, TauMethod::Mle);
        case Method::EblupReml: return fit_eblup(data, TauMethod::Reml);
        case Method::EblupUre: return fit_eblup(data, TauMethod::Ure);
        case Method::Obp: return fit_obp(data);
        case Method::Cbp: return fit_cbp(data);
        case Method::PlugInCbp: return fit_plugin_cbp(data);
        case Method::MultiTauCbp: return fit_multitau_cbp(data);
    }
    throw InvalidInputError("unknown method");
}

}  // namespace cbp
