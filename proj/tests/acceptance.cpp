// Acceptance gate: one PASS/FAIL line per criterion, nonzero exit if any fails.

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iterator>
#include <map>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "cbp/cbp.hpp"
#include "cbp/cli.hpp"
#include "oracles.hpp"

using namespace cbp;

namespace {

struct Outcome {
    bool pass = false;
    std::string detail;
};

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
    return std::chrono::duration<double>(Clock::now() - t0).count();
}

std::string fmt(const char* f, double a) {
    char buf[64];
    std::snprintf(buf, sizeof buf, f, a);
    return buf;
}

std::map<std::string, double> mspe_by_method(const SimReport& r) {
    std::map<std::string, double> m;
    for (const auto& s : r.methods) m[s.method] = s.mspe;
    return m;
}

SimScenario scenario_of(const std::string& preset_name, int n_rep, const std::function<bool(const SimScenario&)>& pick) {
    for (const auto& s : preset(preset_name, n_rep).scenarios)
        if (pick(s)) return s;
    throw ConfigError("no matching scenario in " + preset_name);
}

// Mean of M_hat against the exact MSPE for fixed (w, tau), with theta redrawn
// (marginal) or frozen (conditional).
Outcome ac1() {
    const auto t0 = Clock::now();
    SimScenario s;
    s.k = 30;
    s.n_rep = 1;
    s.latent.beta1 = 1.0;
    const auto base = generate(s, 0);
    const MatrixXd& x = base.data.x();
    const VectorXd& s2 = base.data.sigma2();
    const int k = s.k;

    struct Pair {
        WeightVector w;
        double tau;
    };
    const std::vector<Pair> pairs{{mle_weights(s2, 0.5), 0.5},
                                  {bpe_weights(s2, 1.0), 1.0},
                                  {compromise_weights(s2, 0.3, 0.8), 0.8},
                                  {compromise_weights(s2, 0.7, 2.0), 2.0},
                                  {bpe_weights(s2, 0.2), 0.2}};
    const int reps = 20000;
    std::mt19937_64 rng(7);
    std::normal_distribution<double> z(0.0, 1.0);
    std::vector<std::vector<double>> marg(pairs.size()), cond(pairs.size());
    VectorXd y(k);
    for (int r = 0; r < reps; ++r) {
        for (int i = 0; i < k; ++i) y[i] = base.mu[i] + z(rng) + std::sqrt(s2[i]) * z(rng);
        const auto dm = base.data.with_y(y);
        for (int i = 0; i < k; ++i) y[i] = base.theta[i] + std::sqrt(s2[i]) * z(rng);
        const auto dc = base.data.with_y(y);
        for (std::size_t j = 0; j < pairs.size(); ++j) {
            marg[j].push_back(mspe_estimate(dm, pairs[j].w, pairs[j].tau).value);
            cond[j].push_back(mspe_estimate(dc, pairs[j].w, pairs[j].tau).value);
        }
    }
    double worst = 0.0;
    for (std::size_t j = 0; j < pairs.size(); ++j) {
        const double tm = mspe_true(x, s2, base.mu, 1.0, pairs[j].w, pairs[j].tau).value;
        const double tc = mspe_true(x, s2, base.theta, 0.0, pairs[j].w, pairs[j].tau).value;
        for (auto [sample, truth] : {std::pair{&marg[j], tm}, std::pair{&cond[j], tc}}) {
            double mean = 0.0, ss = 0.0;
            for (double v : *sample) mean += v;
            mean /= reps;
            for (double v : *sample) ss += (v - mean) * (v - mean);
            const double se = std::sqrt(ss / (reps - 1) / reps);
            worst = std::max(worst, std::abs(mean - truth) / se);
        }
    }
    const double secs = seconds_since(t0);
    return {worst <= 3.0 && secs < 60.0, "max |mean - mspe|/SE = " + fmt("%.2f", worst) + ", " + fmt("%.1fs", secs)};
}

// Popmean risk along alpha w1 + (1 - alpha) w0, written out term by term.
double popmean_risk_dense(const VectorXd& y, const VectorXd& n, double sigma2, const VectorXd& w, double tau) {
    const Index k = y.size();
    double bdot = 0.0, by = 0.0, wy = 0.0, wn = 0.0, t3 = 0.0, inv_n = 0.0;
    for (Index i = 0; i < k; ++i) {
        const double s2k = sigma2 / n[i];
        const double b = s2k / (s2k + tau * tau);
        bdot += b;
        by += b * y[i];
        wy += w[i] * y[i];
        wn += w[i] / n[i];
        t3 += sigma2 * sigma2 / (n[i] * (sigma2 + n[i] * tau * tau));
        inv_n += 1.0 / n[i];
    }
    const double kd = static_cast<double>(k);
    const double first = by / kd - bdot / kd * wy;
    return first * first + 2.0 * bdot * sigma2 / (kd * kd) * wn - 2.0 / (kd * kd) * t3 + sigma2 * inv_n / (kd * kd);
}

Outcome ac2() {
    std::mt19937_64 rng(11);
    std::uniform_int_distribution<int> kd(5, 50), nd(2, 60);
    std::uniform_real_distribution<double> ud(0.0, 1.0);
    std::normal_distribution<double> z(0.0, 1.0);
    int bad = 0;
    double worst_da = 0.0;
    for (int inst = 0; inst < 500; ++inst) {
        const int k = kd(rng);
        VectorXd y(k), n(k);
        const double sigma2 = 0.2 + 3.0 * ud(rng);
        const double slope = 2.0 * z(rng);
        for (int i = 0; i < k; ++i) {
            n[i] = nd(rng);
            y[i] = slope * std::log(n[i]) / 4.0 + z(rng) + std::sqrt(sigma2 / n[i]) * z(rng);
        }
        const double tau = 0.05 + 2.0 * ud(rng);
        const PopMeanInput in(y, n, sigma2);
        const auto w0 = bpe_weights(in.sigma2_k(), tau);
        const auto w1 = mle_weights(in.sigma2_k(), tau);
        const auto cf = alpha_opt_closed_form(in, w0, w1, tau);
        auto risk = [&](double a) {
            return popmean_risk_dense(y, n, sigma2, a * w1.values() + (1.0 - a) * w0.values(), tau);
        };
        const auto [ga, gf] = oracle::grid_then_golden(risk, 0.0, 1.0, 20001);
        const double da = std::abs(ga - cf.alpha);
        const double df = std::abs(risk(cf.alpha) - gf);
        worst_da = std::max(worst_da, da);
        if (!(da <= 1e-5 || df <= 1e-10 * std::max(1.0, std::abs(gf)))) ++bad;
    }
    return {bad == 0, std::to_string(bad) + " of 500 instances disagree, max |dalpha| = " + fmt("%.2e", worst_da)};
}

Outcome ac3() {
    const auto t0 = Clock::now();
    auto at = [](double b1) {
        return mspe_by_method(
            run_study(scenario_of("fig1b", 2000, [b1](const SimScenario& s) { return s.latent.beta1 == b1; })));
    };
    const auto a = at(0.0);
    const auto b = at(5.0);
    const double best_eblup = std::min({b.at("eblup-mle"), b.at("eblup-reml"), b.at("eblup-ure")});
    const bool ok0 = a.at("eblup-reml") <= a.at("obp") && a.at("cbp") <= 1.15 * a.at("eblup-reml");
    const bool ok5 = b.at("obp") <= best_eblup && b.at("cbp") <= 1.1 * b.at("obp");
    const double secs = seconds_since(t0);
    std::ostringstream d;
    d << "beta1=0: reml " << fmt("%.3f", a.at("eblup-reml")) << " obp " << fmt("%.3f", a.at("obp")) << " cbp "
      << fmt("%.3f", a.at("cbp")) << "; beta1=5: obp " << fmt("%.3f", b.at("obp")) << " best eblup "
      << fmt("%.3f", best_eblup) << " cbp " << fmt("%.3f", b.at("cbp")) << ", " << fmt("%.1fs", secs);
    return {ok0 && ok5 && secs < 120.0, d.str()};
}

Outcome ac4() {
    const auto t0 = Clock::now();
    const auto m = mspe_by_method(run_study(scenario_of("fig2a", 2000, [](const SimScenario& s) { return s.latent.q == 12; })));
    const double best_eblup = std::min({m.at("eblup-mle"), m.at("eblup-reml"), m.at("eblup-ure")});
    const double secs = seconds_since(t0);
    std::ostringstream d;
    d << "cbp " << fmt("%.3f", m.at("cbp")) << " obp " << fmt("%.3f", m.at("obp")) << " best eblup "
      << fmt("%.3f", best_eblup) << ", " << fmt("%.1fs", secs);
    return {m.at("cbp") < m.at("obp") && m.at("cbp") < best_eblup && secs < 180.0, d.str()};
}

Outcome ac5() {
    const auto t0 = Clock::now();
    auto at = [](double rho) {
        return mspe_by_method(
            run_study(scenario_of("fig3a", 1000, [rho](const SimScenario& s) { return std::abs(s.iss.rho - rho) < 1e-9; })));
    };
    const auto z = at(0.0);
    double best = std::numeric_limits<double>::infinity();
    std::string best_name;
    for (const auto& [name, v] : z)
        if (v < best) {
            best = v;
            best_name = name;
        }
    bool ok = best_name == "eblup-reml";
    std::ostringstream d;
    d << "rho=0 best " << best_name << " (" << fmt("%.4f", best) << ")";
    for (double rho : {-0.9, 0.9}) {
        const auto m = at(rho);
        ok = ok && m.at("cbp-plugin") <= m.at("obp");
        d << "; rho=" << fmt("%+.1f", rho) << " plugin " << fmt("%.4f", m.at("cbp-plugin")) << " obp "
          << fmt("%.4f", m.at("obp"));
    }
    const double secs = seconds_since(t0);
    d << ", " << fmt("%.1fs", secs);
    return {ok && secs < 180.0, d.str()};
}

Outcome ac6() {
    bool ok = true;
    std::ostringstream d;
    double worst_cbp = 0.0;
    for (const auto& s : preset("table1", 2000).scenarios) {
        if (s.k != 50 || s.pop.sigma2 != 1.0) continue;
        const auto r = run_study(s);
        std::string best;
        double cbp_ratio = 0.0;
        for (const auto& m : r.methods) {
            if (m.ratio_to_min == 1.0) best = m.method;
            if (m.method == "cbp") cbp_ratio = m.ratio_to_min;
        }
        worst_cbp = std::max(worst_cbp, cbp_ratio);
        if (std::abs(s.pop.rho) < 1e-9) {
            ok = ok && best == "eblup-reml";
            d << "rho=0 best " << best;
            if (best != "eblup-reml") {
                std::size_t ib = 0, ir = 0;
                for (std::size_t j = 0; j < r.methods.size(); ++j) {
                    if (r.methods[j].method == best) ib = j;
                    if (r.methods[j].method == "eblup-reml") ir = j;
                }
                double mean = 0.0, ss = 0.0;
                for (const auto& row : r.losses) mean += row[ir] - row[ib];
                mean /= r.n_used;
                for (const auto& row : r.losses) ss += (row[ir] - row[ib] - mean) * (row[ir] - row[ib] - mean);
                d << " (eblup-reml behind by " << fmt("%.2e", mean) << ", paired SE "
                  << fmt("%.2e", std::sqrt(ss / (r.n_used - 1) / r.n_used)) << ")";
            }
            d << "; ";
        }
        if (std::abs(s.pop.rho - 0.5) < 1e-9) {
            ok = ok && (best == "direct" || best == "spline-regression");
            d << "rho=0.5 best " << best << "; ";
        }
    }
    ok = ok && worst_cbp <= 1.5;
    d << "worst cbp ratio " << fmt("%.3f", worst_cbp);
    return {ok, d.str()};
}

Outcome ac7() {
    auto mean_gap = [](int k) {
        SimScenario s;
        s.k = k;
        s.n_rep = 1000;
        s.latent.beta1 = 1.0;
        double total = 0.0;
        for (int r = 0; r < s.n_rep; ++r) {
            const auto rep = generate(s, r);
            total += oracle_fit(rep.data, rep.theta).gap;
        }
        return total / s.n_rep;
    };
    const double g20 = mean_gap(20);
    const double g200 = mean_gap(200);
    return {g200 < g20, "mean per-area gap K=20 " + fmt("%.5f", g20) + ", K=200 " + fmt("%.5f", g200)};
}

Outcome ac8() {
    double worst = 0.0;
    auto track = [&](double v) { worst = std::max(worst, v); };
    for (std::uint64_t seed = 1; seed <= 10; ++seed) {
        const auto in = oracle::random_instance(8 + static_cast<int>(seed) * 3, 1 + static_cast<int>(seed % 3), seed);
        const AreaDataset data(in.y, in.x, in.sigma2);
        const VectorXd& s2 = data.sigma2();
        const Index k = data.size();
        for (double tau : {0.0, 0.3, 1.7}) {
            track((compromise_weights(s2, 0.0, tau).values() - bpe_weights(s2, tau).values()).cwiseAbs().maxCoeff());
            track((compromise_weights(s2, 1.0, tau).values() - mle_weights(s2, tau).values()).cwiseAbs().maxCoeff());
            const auto w = compromise_weights(s2, 0.4, tau);
            track((predictor_matrix(data, w, tau).u * data.x()).cwiseAbs().maxCoeff());
            const auto b = shrinkage_factors(s2, tau);
            track(std::abs((tau * tau * b.values().array() + s2.array() * b.values().array()).sum() - s2.sum()) /
                  s2.sum());
            const auto gm = fay_herriot_as_general(data);
            const MatrixXd wm = w.values().asDiagonal();
            track((l_matrix(gm, wm, VectorXd::Constant(1, tau)).l * data.x()).cwiseAbs().maxCoeff());
        }

        // The fitted compromise predictor, rebuilt through the general form.
        const auto cbp = fit_cbp(data);
        const auto gm = fay_herriot_as_general(data);
        const double tau = cbp.tau_star;
        const VectorXd lambda = VectorXd::Constant(1, tau);
        const double s1 = (s2.array() + tau * tau).inverse().sum();
        const double sb = shrinkage_factors(s2, tau).values().squaredNorm();
        const double a = *cbp.alpha_star;
        const double a_general = a * sb / (a * sb + (1.0 - a) * s1);
        const auto cw = compromise_weight_matrix(gm, a_general, lambda);
        const double scale = 1.0 + std::abs(cbp.risk_estimate);
        track(std::abs(general_mspe_estimate(gm, cw.w, lambda).value - cbp.risk_estimate) / scale);
        track((general_predict(gm, cw.w, lambda) - cbp.theta_hat).cwiseAbs().maxCoeff());

        // Population mean as a general-form target.
        VectorXd n(k);
        for (Index i = 0; i < k; ++i) n[i] = 1.0 / s2[i];
        const PopMeanInput pin(data.y(), n, 1.0);
        GeneralModel pm = gm;
        pm.sigma = pin.sigma2_k().asDiagonal();
        pm.x = MatrixXd::Ones(k, 1);
        pm.a = VectorXd::Constant(k, 1.0 / static_cast<double>(k));
        pm.r = pm.a;
        for (double t : {0.0, 0.5, 1.2}) {
            const auto w = compromise_weights(pin.sigma2_k(), 0.6, t);
            const MatrixXd wm = w.values().asDiagonal();
            const VectorXd l = VectorXd::Constant(1, t);
            track(std::abs(general_predict(pm, wm, l)[0] - mu_family(pin, w, t).mu_hat));
            track(std::abs(general_mspe_estimate(pm, wm, l).value - popmean_risk(pin, w, t)));
        }
    }
    return {worst <= 1e-8, "max deviation " + fmt("%.2e", worst)};
}

Outcome ac9() {
    int bad = 0;
    double worst = -std::numeric_limits<double>::infinity();
    for (int i = 0; i < 50; ++i) {
        const auto in = oracle::random_instance(10 + (i % 5) * 8, 1 + i % 3, 1000 + static_cast<std::uint64_t>(i),
                                                0.3 + 0.1 * (i % 10));
        const AreaDataset data(in.y, in.x, in.sigma2);
        const auto fit = fit_cbp(data);
        const double tau_max = tau_upper_bound(data.y());
        double grid = std::numeric_limits<double>::infinity();
        for (int ia = 0; ia <= 200; ++ia)
            for (int it = 0; it <= 200; ++it)
                grid = std::min(grid, compromise_risk(data, ia / 200.0, tau_max * it / 200.0).value);
        const double excess = (fit.risk_estimate - grid) / (1.0 + std::abs(fit.risk_estimate));
        worst = std::max(worst, excess);
        if (excess > 1e-6) ++bad;
    }
    return {bad == 0, std::to_string(bad) + " of 50 above grid, max relative excess " + fmt("%.2e", worst)};
}

std::string slurp(const std::filesystem::path& p) {
    std::ifstream f(p, std::ios::binary);
    return {std::istreambuf_iterator<char>(f), std::istreambuf_iterator<char>()};
}

Outcome ac10() {
    namespace fs = std::filesystem;
    const fs::path root = fs::temp_directory_path() / "cbp_acceptance_determinism";
    fs::remove_all(root);
    std::ostringstream sink;
    auto run = [&](const std::string& threads) {
        const std::string out = (root / ("t" + threads)).string();
        const char* argv[] = {"cbp", "simulate", "--preset", "fig4b", "--n-rep", "40", "--seed", "99",
                              "--threads", threads.c_str(), "--out", out.c_str()};
        return run_cli(static_cast<int>(std::size(argv)), argv, sink, sink);
    };
    if (run("1") != 0 || run("8") != 0) return {false, "simulate failed: " + sink.str()};
    int files = 0;
    bool same = true;
    for (const auto& e : fs::directory_iterator(root / "t1")) {
        ++files;
        same = same && slurp(e.path()) == slurp(root / "t8" / e.path().filename());
    }
    fs::remove_all(root);
    return {same && files == 3, std::to_string(files) + " report files, " + (same ? "identical" : "different")};
}

}  // namespace

int main() {
    const std::vector<std::pair<std::string, Outcome (*)()>> criteria{
        {"AC1 risk estimate unbiased", ac1},       {"AC2 closed-form popmean alpha", ac2},
        {"AC3 beta1 sweep ordering", ac3},         {"AC4 irrelevant covariates", ac4},
        {"AC5 informative sample size", ac5},      {"AC6 population mean ordering", ac6},
        {"AC7 oracle gap shrinks with K", ac7},    {"AC8 identities", ac8},
        {"AC9 optimizer vs grid", ac9},            {"AC10 thread-count determinism", ac10}};
    int failed = 0;
    for (const auto& [name, fn] : criteria) {
        Outcome o;
        try {
            o = fn();
        } catch (const std::exception& e) {
            o = {false, std::string("exception: ") + e.what()};
        }
        if (!o.pass) ++failed;
        std::printf("%s %s: %s\n", o.pass ? "PASS" : "FAIL", name.c_str(), o.detail.c_str());
        std::fflush(stdout);
    }
    return failed == 0 ? 0 : 1;
}
