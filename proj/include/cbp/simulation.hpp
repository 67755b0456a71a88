#pragma once

// Monte Carlo harness: latent-cluster, informative-sample-size and
// population-average designs, the loss oracle, and MSPE estimation.
//
// Replicate r draws from its own mt19937_64 stream seeded by
// (seed, r), so results do not depend on the number of worker threads.

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdint>
#include <limits>
#include <mutex>
#include <optional>
#include <random>
#include <sstream>
#include <string>
#include <thread>
#include <utility>
#include <vector>

#include <boost/math/distributions/normal.hpp>

#include "cbp/error.hpp"
#include "cbp/model.hpp"
#include "cbp/optimizer.hpp"
#include "cbp/popmean.hpp"
#include "cbp/predictors.hpp"
#include "cbp/variance.hpp"
#include "cbp/weights.hpp"

namespace cbp {

enum class ScenarioKind { LatentClusters, InformativeSampleSize, PopAverage };
enum class VDistribution { Normal, GaussianMixture, Uniform };

inline const char* to_string(ScenarioKind k) {
    switch (k) {
        case ScenarioKind::LatentClusters: return "latent-clusters";
        case ScenarioKind::InformativeSampleSize: return "informative-sample-size";
        case ScenarioKind::PopAverage: return "pop-average";
    }
    return "latent-clusters";
}

inline const char* to_string(VDistribution v) {
    switch (v) {
        case VDistribution::Normal: return "normal";
        case VDistribution::GaussianMixture: return "gaussian-mixture";
        case VDistribution::Uniform: return "uniform";
    }
    return "normal";
}

inline ScenarioKind parse_scenario_kind(const std::string& s) {
    if (s == "latent-clusters" || s == "LatentClusters") return ScenarioKind::LatentClusters;
    if (s == "informative-sample-size" || s == "InformativeSampleSize") return ScenarioKind::InformativeSampleSize;
    if (s == "pop-average" || s == "PopAverage") return ScenarioKind::PopAverage;
    throw ConfigError("unknown scenario tag '" + s + "'");
}

inline VDistribution parse_v_distribution(const std::string& s) {
    if (s == "normal") return VDistribution::Normal;
    if (s == "gaussian-mixture" || s == "mixture") return VDistribution::GaussianMixture;
    if (s == "uniform") return VDistribution::Uniform;
    throw ConfigError("unknown v distribution '" + s + "'");
}

/// Y_k = beta0 + beta1 Z_k + v_k + e_k / sqrt(n_k), n_k = 10 Z_k + 2 (1 - Z_k),
/// analysed with an intercept plus q irrelevant N(0,1) covariates.
struct LatentClustersParams {
    double beta0 = 0.0;
    double beta1 = 1.0;
    int q = 0;
};

/// Y_k = x_k^T beta + rho tau n_k / sigma_n + v_k tau sqrt(1 - rho^2) + sigma e_k / sqrt(n_k),
/// log n_k = 3 (k - 1) / (K - 1), x_k = (1, x_k1, x_k2).
struct InformativeSampleSizeParams {
    double rho = 0.0;
    double sigma2 = 0.5;
    double tau = 0.5;
    VDistribution v = VDistribution::Normal;
    std::vector<double> beta{1.0, 0.5, -0.5};
};

/// theta_k = c1 f1(n_k) + c2 v_k with log-equally-spaced n_k of mean n_bar and SD sigma_n.
struct PopAverageParams {
    double sigma2 = 1.0;
    double rho = 0.0;
    double xi = 1.0;
    double n_bar = 20.0;
    /// Target SD of the n_k; NaN means 0.6 n_bar.
    double sigma_n = std::numeric_limits<double>::quiet_NaN();

    double target_sigma_n() const { return std::isnan(sigma_n) ? 0.6 * n_bar : sigma_n; }
};

struct SimScenario {
    ScenarioKind kind = ScenarioKind::LatentClusters;
    int k = 30;
    int n_rep = 1000;
    std::uint64_t seed = 20240101;
    LatentClustersParams latent;
    InformativeSampleSizeParams iss;
    PopAverageParams pop;
    std::vector<std::string> methods;

    void validate() const;

    /// Setting parameters as (name, value) pairs for reports.
    std::vector<std::pair<std::string, double>> settings() const {
        std::vector<std::pair<std::string, double>> s{{"K", static_cast<double>(k)}};
        switch (kind) {
            case ScenarioKind::LatentClusters:
                s.insert(s.end(), {{"beta0", latent.beta0}, {"beta1", latent.beta1}, {"q", static_cast<double>(latent.q)}});
                break;
            case ScenarioKind::InformativeSampleSize:
                s.insert(s.end(), {{"rho", iss.rho}, {"sigma2", iss.sigma2}, {"tau", iss.tau}});
                break;
            case ScenarioKind::PopAverage:
                s.insert(s.end(), {{"sigma2", pop.sigma2}, {"rho", pop.rho}, {"xi", pop.xi}, {"n_bar", pop.n_bar},
                                   {"sigma_n", pop.target_sigma_n()}});
                break;
        }
        return s;
    }
};

/// Deterministic pieces of the population-average design.
struct PopAverageDesign {
    VectorXd n;
    VectorXd f1;
    double a = 0.0;
    double sigma_n = 0.0;
    double c1 = 0.0;
    double c2 = 0.0;
};

namespace detail {

inline VectorXd softmax_sizes(int k, double n_bar, double a) {
    VectorXd e(k);
    for (int i = 0; i < k; ++i) e[i] = std::exp(a * (2.0 * (i + 1) - k - 1) / (k - 1));
    return e * (k * n_bar / e.sum());
}

}  // namespace detail

/// Root-finds a so that sd(n) hits the target, then forms f1, c1 and c2.
inline PopAverageDesign pop_average_design(int k, const PopAverageParams& p) {
    if (k < 3) throw ConfigError("population-average design needs K >= 3");
    if (!(p.n_bar > 0.0)) throw ConfigError("n_bar must be positive");
    if (!(p.xi > 0.0)) throw ConfigError("xi must be positive");
    if (!(p.sigma2 > 0.0)) throw ConfigError("sigma2 must be positive");
    if (!(p.rho >= -1.0 && p.rho <= 1.0)) throw ConfigError("rho must lie in [-1,1]");
    const double target = p.target_sigma_n();
    if (!(target > 0.0) || !(target < p.n_bar * std::sqrt(static_cast<double>(k))))
        throw ConfigError("sigma_n must lie in (0, n_bar sqrt(K))");

    auto sd_at = [&](double a) { return sample_sd(detail::softmax_sizes(k, p.n_bar, a)); };
    double lo = 0.0, hi = 1.0;
    while (sd_at(hi) < target) hi *= 2.0;
    for (int it = 0; it < 200 && hi - lo > 1e-14 * hi; ++it) {
        const double mid = 0.5 * (lo + hi);
        (sd_at(mid) < target ? lo : hi) = mid;
    }

    PopAverageDesign d;
    d.a = 0.5 * (lo + hi);
    d.n = detail::softmax_sizes(k, p.n_bar, d.a);
    d.sigma_n = sample_sd(d.n);
    const VectorXd logn = d.n.array().log().matrix();
    const double mu_ln = logn.mean();
    const double sd_ln = sample_sd(logn);
    const boost::math::normal phi;
    d.f1.resize(k);
    for (int i = 0; i < k; ++i) d.f1[i] = boost::math::cdf(phi, 2.0 * (logn[i] - mu_ln) / sd_ln) - 0.5;
    const double kappa = d.f1.dot(d.n) / k;
    const double sigma_f2 = d.f1.squaredNorm() / (k - 1);
    d.c1 = p.xi * p.rho * d.sigma_n / kappa;
    const double rem = p.xi * p.xi - d.c1 * d.c1 * sigma_f2;
    if (rem < 0.0) {
        std::ostringstream msg;
        msg << "infeasible (rho, xi) = (" << p.rho << ", " << p.xi << "): xi^2 < c1^2 sigma_f^2";
        throw ConfigError(msg.str());
    }
    d.c2 = std::sqrt(rem);
    return d;
}

inline void SimScenario::validate() const {
    if (n_rep < 1) throw ConfigError("n_rep must be at least 1");
    if (methods.empty()) throw ConfigError("at least one method is required");
    switch (kind) {
        case ScenarioKind::LatentClusters:
            if (k < 2) throw ConfigError("K must be at least 2");
            if (latent.q < 0) throw ConfigError("q must be nonnegative");
            if (latent.q + 1 >= k) throw ConfigError("K must exceed the number of covariates");
            for (const auto& m : methods)
                if (m != "oracle") parse_method(m);
            break;
        case ScenarioKind::InformativeSampleSize:
            if (k < 4) throw ConfigError("K must be at least 4");
            if (!(iss.rho >= -1.0 && iss.rho <= 1.0)) throw ConfigError("rho must lie in [-1,1]");
            if (!(iss.sigma2 > 0.0) || !(iss.tau >= 0.0)) throw ConfigError("sigma2 must be positive, tau nonnegative");
            if (iss.beta.size() != 3) throw ConfigError("beta needs three entries");
            for (const auto& m : methods)
                if (m != "oracle") parse_method(m);
            break;
        case ScenarioKind::PopAverage:
            pop_average_design(k, pop);
            for (const auto& m : methods) parse_popmean_method(m);
            break;
    }
}

struct Replicate {
    AreaDataset data;
    VectorXd theta;
    VectorXd mu;
    std::optional<PopMeanInput> popmean;
};

namespace detail {

inline std::mt19937_64 replicate_stream(std::uint64_t seed, std::uint64_t rep) {
    std::seed_seq seq{static_cast<std::uint32_t>(seed & 0xffffffffu), static_cast<std::uint32_t>(seed >> 32),
                      static_cast<std::uint32_t>(rep & 0xffffffffu), static_cast<std::uint32_t>(rep >> 32)};
    return std::mt19937_64(seq);
}

inline double draw_v(VDistribution dist, std::mt19937_64& rng) {
    std::normal_distribution<double> normal(0.0, 1.0);
    std::uniform_real_distribution<double> unif(0.0, 1.0);
    switch (dist) {
        case VDistribution::Normal: return normal(rng);
        case VDistribution::GaussianMixture: {
            const double centre = unif(rng) < 0.5 ? -1.0 / std::sqrt(2.0) : 1.0 / std::sqrt(2.0);
            return centre + std::sqrt(0.5) * normal(rng);
        }
        case VDistribution::Uniform: return std::sqrt(3.0) * (2.0 * unif(rng) - 1.0);
    }
    return normal(rng);
}

}  // namespace detail

inline Replicate generate(const SimScenario& s, int rep_index) {
    if (rep_index < 0 || rep_index >= s.n_rep) throw InvalidInputError("replicate index out of range");
    auto rng = detail::replicate_stream(s.seed, static_cast<std::uint64_t>(rep_index));
    std::normal_distribution<double> normal(0.0, 1.0);
    std::uniform_real_distribution<double> unif(0.0, 1.0);
    const int k = s.k;

    switch (s.kind) {
        case ScenarioKind::LatentClusters: {
            const auto& p = s.latent;
            VectorXd y(k), theta(k), mu(k), sigma2(k), n(k);
            MatrixXd x(k, 1 + p.q);
            x.col(0).setOnes();
            for (int i = 0; i < k; ++i) {
                const double z = unif(rng) < 0.5 ? 1.0 : 0.0;
                n[i] = 10.0 * z + 2.0 * (1.0 - z);
                sigma2[i] = 1.0 / n[i];
                mu[i] = p.beta0 + p.beta1 * z;
                theta[i] = mu[i] + normal(rng);
                y[i] = theta[i] + std::sqrt(sigma2[i]) * normal(rng);
            }
            for (int j = 1; j <= p.q; ++j)
                for (int i = 0; i < k; ++i) x(i, j) = normal(rng);
            return Replicate{AreaDataset(y, std::move(x), std::move(sigma2), std::move(n)), theta, mu, std::nullopt};
        }
        case ScenarioKind::InformativeSampleSize: {
            const auto& p = s.iss;
            VectorXd n(k);
            for (int i = 0; i < k; ++i) n[i] = std::exp(3.0 * i / (k - 1));
            const double sigma_n = sample_sd(n);
            MatrixXd x(k, 3);
            x.col(0).setOnes();
            for (int i = 0; i < k; ++i) {
                x(i, 1) = normal(rng);
                x(i, 2) = normal(rng);
            }
            const VectorXd beta = Eigen::Map<const VectorXd>(p.beta.data(), 3);
            VectorXd y(k), theta(k), mu(k), sigma2(k);
            const double spread = p.tau * std::sqrt(1.0 - p.rho * p.rho);
            for (int i = 0; i < k; ++i) {
                mu[i] = x.row(i).dot(beta) + p.rho * p.tau * n[i] / sigma_n;
                theta[i] = mu[i] + spread * detail::draw_v(p.v, rng);
                sigma2[i] = p.sigma2 / n[i];
                y[i] = theta[i] + std::sqrt(sigma2[i]) * normal(rng);
            }
            return Replicate{AreaDataset(y, std::move(x), std::move(sigma2), std::move(n)), theta, mu, std::nullopt};
        }
        case ScenarioKind::PopAverage: {
            const auto d = pop_average_design(k, s.pop);
            VectorXd y(k), theta(k), mu = d.c1 * d.f1;
            for (int i = 0; i < k; ++i) {
                theta[i] = mu[i] + d.c2 * normal(rng);
                y[i] = theta[i] + std::sqrt(s.pop.sigma2 / d.n[i]) * normal(rng);
            }
            PopMeanInput in(y, d.n, s.pop.sigma2);
            auto data = in.as_area_dataset();
            return Replicate{std::move(data), theta, mu, std::move(in)};
        }
    }
    throw InvalidInputError("unknown scenario");
}

struct OracleResult {
    double alpha_or = 1.0;
    double tau_or = 0.0;
    /// (1/K) sum (theta_k - theta_hat_k)^2 at the oracle parameters.
    double oracle_loss = 0.0;
    double cbp_loss = 0.0;
    double gap = 0.0;
};

/// Minimizes the realized loss over the compromise family. Seeded with the
/// CBP, EBLUP(REML) and OBP parameter points so the oracle loss never
/// exceeds theirs.
inline OracleResult oracle_fit(const AreaDataset& data, const VectorXd& theta, const FitResult* cbp_fit = nullptr) {
    if (theta.size() != data.size()) throw InvalidInputError("theta length does not match");
    const double kd = static_cast<double>(data.size());
    auto loss_at = [&](double alpha, double tau) {
        const auto w = compromise_weights(data.sigma2(), alpha, tau);
        const auto beta = wls_beta(data, w);
        return (combine(data, beta.beta, shrinkage_factors(data.sigma2(), tau)) - theta).squaredNorm() / kd;
    };
    std::optional<FitResult> own;
    if (!cbp_fit) own = fit_cbp(data);
    const FitResult& cbp = cbp_fit ? *cbp_fit : *own;
    const double tau_max = tau_upper_bound(data.y());
    const double tau_r = tau_reml(data).tau;
    const double tau_o = tau_obp(data).tau;

    BoxSpec box;
    box.lower = {0.0, 0.0};
    box.upper = {1.0, tau_max};
    box.seed_values = {linspace(0.0, 1.0, 17), zero_and_logspace(tau_max, 32, 3.0)};
    const auto r = minimize_box([&](const std::vector<double>& p) { return loss_at(std::clamp(1.0 - p[0], 0.0, 1.0), p[1]); },
                                box, {{1.0 - *cbp.alpha_star, cbp.tau_star}, {0.0, tau_r}, {1.0, tau_o}});
    OracleResult out;
    out.alpha_or = std::clamp(1.0 - r.x[0], 0.0, 1.0);
    out.tau_or = r.x[1];
    out.oracle_loss = r.value;
    out.cbp_loss = (cbp.theta_hat - theta).squaredNorm() / kd;
    out.gap = out.cbp_loss - out.oracle_loss;
    return out;
}

struct MethodSummary {
    std::string method;
    double mspe = 0.0;
    double mc_se = std::numeric_limits<double>::quiet_NaN();
    double ratio_to_min = 1.0;
};

struct SimReport {
    SimScenario scenario;
    std::vector<MethodSummary> methods;
    int n_used = 0;
    int n_failed = 0;
    /// losses[r][m]: squared-error loss of method m on the r-th retained replicate.
    std::vector<std::vector<double>> losses;
};

namespace detail {

/// Per-method losses for one replicate; throws if any method fails.
inline std::vector<double> replicate_losses(const SimScenario& s, const Replicate& rep) {
    std::vector<double> out;
    out.reserve(s.methods.size());
    if (s.kind == ScenarioKind::PopAverage) {
        const double mu0 = rep.theta.mean();
        for (const auto& m : s.methods) {
            const double est = estimate_popmean(*rep.popmean, parse_popmean_method(m)).mu_hat;
            out.push_back((est - mu0) * (est - mu0));
        }
        return out;
    }
    std::optional<FitResult> cbp_cache;
    auto cbp_fit = [&]() -> const FitResult& {
        if (!cbp_cache) cbp_cache = fit_cbp(rep.data);
        return *cbp_cache;
    };
    for (const auto& m : s.methods) {
        if (m == "oracle") {
            const auto o = oracle_fit(rep.data, rep.theta, &cbp_fit());
            out.push_back(o.oracle_loss * static_cast<double>(rep.data.size()));
            continue;
        }
        const Method method = parse_method(m);
        const VectorXd& theta_hat = method == Method::Cbp ? cbp_fit().theta_hat : fit(rep.data, method).theta_hat;
        out.push_back((theta_hat - rep.theta).squaredNorm());
    }
    return out;
}

}  // namespace detail

/// Runs every replicate, dropping a replicate for all methods when any method
/// fails on it. More than 0.1% failed replicates aborts the study.
inline SimReport run_study(const SimScenario& s, unsigned threads = 1) {
    s.validate();
    const int n = s.n_rep;
    std::vector<std::vector<double>> losses(static_cast<std::size_t>(n));
    std::vector<std::string> failure(static_cast<std::size_t>(n));
    std::atomic<int> next{0};
    auto worker = [&] {
        for (int r = next++; r < n; r = next++) {
            try {
                losses[static_cast<std::size_t>(r)] = detail::replicate_losses(s, generate(s, r));
            } catch (const Error& e) {
                failure[static_cast<std::size_t>(r)] = e.what();
            }
        }
    };
    threads = std::max(1u, std::min<unsigned>(threads, static_cast<unsigned>(n)));
    if (threads == 1) {
        worker();
    } else {
        std::vector<std::thread> pool;
        for (unsigned t = 0; t < threads; ++t) pool.emplace_back(worker);
        for (auto& t : pool) t.join();
    }

    SimReport report;
    report.scenario = s;
    std::string first_failure;
    for (int r = 0; r < n; ++r) {
        if (!failure[static_cast<std::size_t>(r)].empty()) {
            if (first_failure.empty())
                first_failure = "replicate " + std::to_string(r) + ": " + failure[static_cast<std::size_t>(r)];
            ++report.n_failed;
        } else {
            report.losses.push_back(std::move(losses[static_cast<std::size_t>(r)]));
        }
    }
    if (report.n_failed > 0.001 * n)
        throw NumericalError(std::to_string(report.n_failed) + " of " + std::to_string(n) +
                             " replicates failed; first " + first_failure);
    report.n_used = static_cast<int>(report.losses.size());

    const std::size_t m = s.methods.size();
    double best = std::numeric_limits<double>::infinity();
    for (std::size_t j = 0; j < m; ++j) {
        double sum = 0.0;
        for (const auto& row : report.losses) sum += row[j];
        const double mean = sum / report.n_used;
        double ss = 0.0;
        for (const auto& row : report.losses) ss += (row[j] - mean) * (row[j] - mean);
        MethodSummary ms;
        ms.method = s.methods[j];
        ms.mspe = mean;
        if (report.n_used > 1) ms.mc_se = std::sqrt(ss / (report.n_used - 1) / report.n_used);
        best = std::min(best, mean);
        report.methods.push_back(ms);
    }
    for (auto& ms : report.methods) ms.ratio_to_min = ms.mspe == best ? 1.0 : ms.mspe / best;
    return report;
}

/// A named sweep of scenarios over one parameter.
struct Study {
    std::string name;
    std::string swept;
    std::vector<double> values;
    std::vector<SimScenario> scenarios;
};

namespace detail {

inline std::vector<double> steps(double from, double to, double step) {
    std::vector<double> v;
    const int m = static_cast<int>(std::lround((to - from) / step));
    for (int i = 0; i <= m; ++i) v.push_back(std::round((from + i * step) * 1e10) / 1e10);
    return v;
}

inline const std::vector<std::string>& area_methods() {
    static const std::vector<std::string> m{"eblup-mle", "eblup-reml", "eblup-ure", "obp", "cbp", "cbp-plugin"};
    return m;
}

}  // namespace detail

inline const std::vector<std::string>& preset_names() {
    static const std::vector<std::string> names{"fig1a", "fig1b", "fig2a", "fig2b", "fig3a",
                                                "fig3b", "fig4a", "fig4b", "table1"};
    return names;
}

/// Built-in studies. Every scenario in a study shares the seed, so settings
/// see common random numbers.
inline Study preset(const std::string& name, int n_rep = 2000, std::uint64_t seed = 20240101) {
    Study st;
    st.name = name;
    auto base = [&](ScenarioKind kind) {
        SimScenario s;
        s.kind = kind;
        s.n_rep = n_rep;
        s.seed = seed;
        s.methods = detail::area_methods();
        return s;
    };
    if (name == "fig1a" || name == "fig1b" || name == "fig2a" || name == "fig2b") {
        const bool fig1 = name.rfind("fig1", 0) == 0;
        st.swept = name == "fig1a" ? "K" : name == "fig1b" ? "beta1" : "q";
        st.values = name == "fig1a" ? detail::steps(5, 50, 5) : name == "fig1b" ? detail::steps(0, 5, 0.5) : detail::steps(0, 12, 1);
        for (double v : st.values) {
            auto s = base(ScenarioKind::LatentClusters);
            s.latent.beta0 = 0.0;
            if (fig1) {
                s.k = name == "fig1a" ? static_cast<int>(v) : 30;
                s.latent.beta1 = name == "fig1a" ? 1.0 : v;
            } else {
                s.k = 50;
                s.latent.beta1 = name == "fig2a" ? 2.0 : 0.5;
                s.latent.q = static_cast<int>(v);
            }
            st.scenarios.push_back(s);
        }
    } else if (name == "fig3a" || name == "fig3b" || name == "fig4a" || name == "fig4b") {
        st.swept = "rho";
        st.values = detail::steps(-0.9, 0.9, 0.1);
        for (double v : st.values) {
            auto s = base(ScenarioKind::InformativeSampleSize);
            s.k = 50;
            s.iss.rho = v;
            if (name == "fig3a") s.iss.sigma2 = 0.5;
            if (name == "fig3b") s.iss.sigma2 = 1.5;
            if (name == "fig4a" || name == "fig4b") {
                s.iss.sigma2 = 1.0;
                s.iss.v = name == "fig4a" ? VDistribution::GaussianMixture : VDistribution::Uniform;
                s.methods.push_back("cbp-multitau");
            }
            st.scenarios.push_back(s);
        }
    } else if (name == "table1") {
        st.swept = "rho";
        for (auto [k, s2] : std::vector<std::pair<int, double>>{{10, 1.0}, {10, 4.0}, {50, 1.0}, {50, 4.0}}) {
            for (double rho : detail::steps(0, 0.5, 0.1)) {
                auto s = base(ScenarioKind::PopAverage);
                s.k = k;
                s.pop.sigma2 = s2;
                s.pop.rho = rho;
                s.methods = {"eblup-reml", "obp", "cbp", "cbp-plugin", "direct", "minvar", "direct-compromise",
                             "spline-regression"};
                st.values.push_back(rho);
                st.scenarios.push_back(s);
            }
        }
    } else {
        throw ConfigError("unknown preset '" + name + "'");
    }
    return st;
}

}  // namespace cbp
