#pragma once

// Estimators of the population average mu0 = (1/K) sum theta_k when
// Var(Y_k | theta_k) = sigma^2 / n_k.

#include <algorithm>
#include <cmath>
#include <optional>
#include <string>

#include "cbp/model.hpp"
#include "cbp/optimizer.hpp"
#include "cbp/predictors.hpp"
#include "cbp/smoothing_spline.hpp"
#include "cbp/variance.hpp"
#include "cbp/weights.hpp"

namespace cbp {

struct PopMeanInput {
    VectorXd y;
    VectorXd n;
    double sigma2 = 1.0;

    PopMeanInput(VectorXd y_in, VectorXd n_in, double sigma2_in)
        : y(std::move(y_in)), n(std::move(n_in)), sigma2(sigma2_in) {
        if (y.size() == 0) throw InvalidInputError("population mean needs at least one area");
        if (n.size() != y.size()) throw InvalidInputError("sample size length does not match");
        if (!y.allFinite()) throw InvalidInputError("non-finite direct estimate");
        for (Index k = 0; k < n.size(); ++k)
            if (!(n[k] > 0.0) || !std::isfinite(n[k])) throw InvalidInputError("sample sizes must be positive");
        if (!(sigma2 > 0.0) || !std::isfinite(sigma2)) throw InvalidInputError("sigma2 must be positive");
    }

    Index size() const noexcept { return y.size(); }
    double n_bar() const { return n.mean(); }
    double n_harmonic() const { return static_cast<double>(n.size()) / n.cwiseInverse().sum(); }
    VectorXd sigma2_k() const { return (sigma2 / n.array()).matrix(); }

    /// Intercept-only area-level view with sigma_k^2 = sigma^2 / n_k.
    AreaDataset as_area_dataset() const { return AreaDataset(y, intercept_design(y.size()), sigma2_k(), n); }
};

enum class PopMeanMethod { Direct, MinVar, DirectCompromise, SplineRegression, Family, Eblup, Obp, Cbp, PlugInCbp };

inline const char* to_string(PopMeanMethod m) {
    switch (m) {
        case PopMeanMethod::Direct: return "direct";
        case PopMeanMethod::MinVar: return "minvar";
        case PopMeanMethod::DirectCompromise: return "direct-compromise";
        case PopMeanMethod::SplineRegression: return "spline-regression";
        case PopMeanMethod::Family: return "family";
        case PopMeanMethod::Eblup: return "eblup-reml";
        case PopMeanMethod::Obp: return "obp";
        case PopMeanMethod::Cbp: return "cbp";
        case PopMeanMethod::PlugInCbp: return "cbp-plugin";
    }
    return "family";
}

struct PopMeanResult {
    double mu_hat = 0.0;
    PopMeanMethod method = PopMeanMethod::Direct;
    std::optional<double> alpha_used;
    std::optional<double> tau_used;
    /// Set when a degenerate case or a fallback decided the answer.
    bool flagged = false;
};

struct AlphaOpt {
    double alpha = 0.0;
    double c1 = 0.0;
    double c2 = 0.0;
    /// sum w0 Y == sum w1 Y: the risk does not depend on alpha through Y.
    bool degenerate = false;
};

inline PopMeanResult mu_direct(const PopMeanInput& in) {
    return PopMeanResult{in.y.mean(), PopMeanMethod::Direct, std::nullopt, std::nullopt, false};
}

/// sum n_k Y_k / (K n_bar).
inline PopMeanResult mu_minvar(const PopMeanInput& in) {
    const double k = static_cast<double>(in.size());
    return PopMeanResult{in.n.dot(in.y) / (k * in.n_bar()), PopMeanMethod::MinVar, std::nullopt, std::nullopt, false};
}

/// B. (sum w_k Y_k / (K sum w)) + (1/K) sum (1 - B_k) Y_k with B. = sum B_k.
inline PopMeanResult mu_family(const PopMeanInput& in, const WeightVector& w, double tau) {
    if (w.size() != in.size()) throw InvalidInputError("weight length does not match");
    const auto b = shrinkage_factors(in.sigma2_k(), tau);
    const double k = static_cast<double>(in.size());
    const double bdot = b.values().sum();
    const double wy = w.values().dot(in.y) / w.values().sum();
    const double rest = ((1.0 - b.values().array()) * in.y.array()).sum();
    return PopMeanResult{bdot * wy / k + rest / k, PopMeanMethod::Family, w.kind().alpha, tau, false};
}

/// Unbiased risk estimate of mu_family:
///   ((1/K) sum B_k Y_k - (B./K) sum w_j Y_j)^2 + (2 B. sigma^2 / K^2) sum w_k / n_k
///   - (2 / K^2) sum sigma^4 / (n_k (sigma^2 + n_k tau^2)) + sigma^2 / (K n_harmonic).
inline double popmean_risk(const PopMeanInput& in, const WeightVector& w, double tau) {
    if (w.size() != in.size()) throw InvalidInputError("weight length does not match");
    const auto b = shrinkage_factors(in.sigma2_k(), tau);
    const double k = static_cast<double>(in.size());
    const double s2 = in.sigma2;
    const auto& bv = b.values().array();
    const auto& n = in.n.array();
    const VectorXd& wv = w.values();
    const double bdot = bv.sum();
    const double first = bv.matrix().dot(in.y) / k - bdot / k * wv.dot(in.y);
    const double second = 2.0 * bdot * s2 / (k * k) * (wv.array() / n).sum();
    const double third = 2.0 / (k * k) * (s2 * s2 / (n * (s2 + n * tau * tau))).sum();
    const double fourth = s2 / (k * in.n_harmonic());
    return first * first + second - third + fourth;
}

/// Minimizer over alpha in [0,1] of popmean_risk(alpha w1 + (1 - alpha) w0, tau):
/// 0 if C2 <= 0, 1 if C1 <= C2, C2 / C1 otherwise.
inline AlphaOpt alpha_opt_closed_form(const PopMeanInput& in, const WeightVector& w0, const WeightVector& w1, double tau) {
    if (w0.size() != in.size() || w1.size() != in.size()) throw InvalidInputError("weight length does not match");
    const auto b = shrinkage_factors(in.sigma2_k(), tau);
    const double k = static_cast<double>(in.size());
    const double bdot = b.values().sum();
    const VectorXd diff = w1.values() - w0.values();
    const double dy = diff.dot(in.y);
    const double w0y = w0.values().dot(in.y);
    const double by = b.values().dot(in.y);

    AlphaOpt out;
    out.c1 = bdot * bdot / (k * k) * dy * dy;
    out.c2 = bdot / (k * k) * dy * (by - bdot * w0y) - bdot * in.sigma2 / (k * k) * (diff.array() / in.n.array()).sum();
    if (w0y == w1.values().dot(in.y)) {
        out.degenerate = true;
        out.alpha = 0.0;
        return out;
    }
    if (out.c2 <= 0.0)
        out.alpha = 0.0;
    else if (out.c1 <= out.c2)
        out.alpha = 1.0;
    else
        out.alpha = out.c2 / out.c1;
    return out;
}

/// alpha mu_minvar + (1 - alpha) mu_direct with
/// alpha = clamp(sigma^2 (n_bar - n_harm) / (K n_bar n_harm (mu_mv - mu_direct)^2), 0, 1).
inline PopMeanResult mu_direct_compromise(const PopMeanInput& in) {
    const double direct = mu_direct(in).mu_hat;
    const double mv = mu_minvar(in).mu_hat;
    const double k = static_cast<double>(in.size());
    const double nb = in.n_bar();
    const double nh = in.n_harmonic();
    if (mv == direct) return PopMeanResult{direct, PopMeanMethod::DirectCompromise, 0.0, 0.0, true};
    const double raw = in.sigma2 * (nb - nh) / (k * nb * nh * (mv - direct) * (mv - direct));
    const double alpha = std::clamp(raw, 0.0, 1.0);
    return PopMeanResult{alpha * mv + (1.0 - alpha) * direct, PopMeanMethod::DirectCompromise, alpha, 0.0, false};
}

/// Mean of a GCV-tuned cubic smoothing spline of Y on n with weights n_k / sigma^2.
inline PopMeanResult mu_spline_regression(const PopMeanInput& in) {
    const VectorXd w = in.n / in.sigma2;
    const SmoothingSpline spline(in.n, in.y, w);
    const auto fit = spline.fit_gcv();
    return PopMeanResult{fit.fitted.mean(), PopMeanMethod::SplineRegression, std::nullopt, std::nullopt,
                         fit.linear_fallback};
}

/// Mean of the area-level EBLUP (REML) predictions.
inline PopMeanResult mu_eblup(const PopMeanInput& in) {
    const auto data = in.as_area_dataset();
    const double tau = tau_reml(data).tau;
    auto r = mu_family(in, mle_weights(data.sigma2(), tau), tau);
    r.method = PopMeanMethod::Eblup;
    r.alpha_used.reset();
    return r;
}

/// Mean of the area-level OBP predictions.
inline PopMeanResult mu_obp(const PopMeanInput& in) {
    const auto data = in.as_area_dataset();
    const double tau = tau_obp(data).tau;
    auto r = mu_family(in, bpe_weights(data.sigma2(), tau), tau);
    r.method = PopMeanMethod::Obp;
    r.alpha_used.reset();
    return r;
}

/// Compromise path for mu0: alpha(tau) in closed form, then a search over tau.
inline PopMeanResult mu_cbp(const PopMeanInput& in) {
    const VectorXd s2 = in.sigma2_k();
    auto alpha_at = [&](double tau) {
        return alpha_opt_closed_form(in, bpe_weights(s2, tau), mle_weights(s2, tau), tau).alpha;
    };
    auto objective = [&](double tau) { return popmean_risk(in, compromise_weights(s2, alpha_at(tau), tau), tau); };
    const auto r = minimize_1d(objective, detail::tau_box(tau_upper_bound(in.y)));
    const double tau = r.x[0];
    const double alpha = alpha_at(tau);
    auto out = mu_family(in, compromise_weights(s2, alpha, tau), tau);
    out.method = PopMeanMethod::Cbp;
    out.alpha_used = alpha;
    return out;
}

/// Plug-in compromise for mu0: REML and OBP variance components fixed, alpha searched.
inline PopMeanResult mu_plugin_cbp(const PopMeanInput& in) {
    const auto data = in.as_area_dataset();
    const double tau_r = tau_reml(data).tau;
    const double tau_o = tau_obp(data).tau;
    auto objective = [&](double a) {
        const double alpha = std::clamp(1.0 - a, 0.0, 1.0);
        const auto ws = plugin_weights(data.sigma2(), alpha, tau_r, tau_o);
        return popmean_risk(in, ws.weights, blended_tau(alpha, tau_o, tau_r));
    };
    BoxSpec box;
    box.lower = {0.0};
    box.upper = {1.0};
    box.grid_seeds = {65};
    const auto r = minimize_1d(objective, box);
    const double alpha = std::clamp(1.0 - r.x[0], 0.0, 1.0);
    const double tau = blended_tau(alpha, tau_o, tau_r);
    auto out = mu_family(in, plugin_weights(data.sigma2(), alpha, tau_r, tau_o).weights, tau);
    out.method = PopMeanMethod::PlugInCbp;
    out.alpha_used = alpha;
    return out;
}

inline PopMeanResult estimate_popmean(const PopMeanInput& in, PopMeanMethod method) {
    switch (method) {
        case PopMeanMethod::Direct: return mu_direct(in);
        case PopMeanMethod::MinVar: return mu_minvar(in);
        case PopMeanMethod::DirectCompromise: return mu_direct_compromise(in);
        case PopMeanMethod::SplineRegression: return mu_spline_regression(in);
        case PopMeanMethod::Eblup: return mu_eblup(in);
        case PopMeanMethod::Obp: return mu_obp(in);
        case PopMeanMethod::Cbp: return mu_cbp(in);
        case PopMeanMethod::PlugInCbp: return mu_plugin_cbp(in);
        case PopMeanMethod::Family: break;
    }
    throw InvalidInputError("family estimates need explicit weights; use mu_family");
}

inline PopMeanMethod parse_popmean_method(const std::string& name) {
    for (auto m : {PopMeanMethod::Direct, PopMeanMethod::MinVar, PopMeanMethod::DirectCompromise,
                   PopMeanMethod::SplineRegression, PopMeanMethod::Eblup, PopMeanMethod::Obp, PopMeanMethod::Cbp,
                   PopMeanMethod::PlugInCbp})
        if (name == to_string(m)) return m;
    if (name == "sr") return PopMeanMethod::SplineRegression;
    if (name == "mv") return PopMeanMethod::MinVar;
    if (name == "reml" || name == "eblup") return PopMeanMethod::Eblup;
    throw ConfigError("unknown population-mean method '" + name + "'");
}

}  // namespace cbp
