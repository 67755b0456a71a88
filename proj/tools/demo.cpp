// Fits every area-level predictor to one simulated latent-cluster dataset and
// prints the estimates next to the truth.

#include <cstdio>

#include "cbp/cbp.hpp"

int main() {
    cbp::SimScenario s;
    s.kind = cbp::ScenarioKind::LatentClusters;
    s.k = 20;
    s.n_rep = 1;
    s.latent.beta1 = 2.0;
    const auto rep = cbp::generate(s, 0);

    const cbp::Method methods[] = {cbp::Method::EblupReml, cbp::Method::Obp, cbp::Method::Cbp, cbp::Method::PlugInCbp};
    std::printf("%-12s %8s %8s %10s %10s\n", "method", "tau", "alpha", "M_hat", "loss");
    for (auto m : methods) {
        const auto f = cbp::fit(rep.data, m);
        std::printf("%-12s %8.4f %8s %10.4f %10.4f\n", cbp::to_string(m), f.tau_star,
                    f.alpha_star ? std::to_string(*f.alpha_star).substr(0, 6).c_str() : "-", f.risk_estimate,
                    (f.theta_hat - rep.theta).squaredNorm());
    }
    const auto oracle = cbp::oracle_fit(rep.data, rep.theta);
    std::printf("oracle alpha %.4f tau %.4f loss %.4f\n", oracle.alpha_or, oracle.tau_or,
                oracle.oracle_loss * s.k);
    return 0;
}
