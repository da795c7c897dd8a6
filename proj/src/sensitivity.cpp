#include "dnflex/sensitivity.hpp"

#include <cmath>
#include <cstdio>
#include <random>

namespace dnflex {

ScenarioSampler::ScenarioSampler(Injections nominal, std::uint64_t seed,
                                 double log10_min, double log10_max)
    : nominal_(std::move(nominal)), seed_(seed), log10_min_(log10_min),
      log10_max_(log10_max) {}

Injections ScenarioSampler::scenario(int k) const {
    std::mt19937_64 rng(seed_ * 0x2545f4914f6cdd1dULL + static_cast<std::uint64_t>(k));
    std::uniform_real_distribution<double> uni(log10_min_, log10_max_);
    const double scale = std::pow(10.0, uni(rng));
    Injections inj(nominal_.size());
    for (size_t i = 0; i < nominal_.size(); ++i) inj[i] = scale * nominal_[i];
    return inj;
}

ScenarioSampler nominal_sampler(const Network& net, const Profiles& prof,
                                std::uint64_t seed) {
    // Nominal operating point: time-mean of the load profile, PV excluded so
    // the sweep spans pure loading levels.
    Injections mean(net.num_nodes(), 0.0);
    const double s_base = net.bases().s_base_kva;
    for (int i = 0; i < net.num_nodes(); ++i) {
        double p = 0.0, q = 0.0;
        for (int t = 0; t < prof.horizon; ++t) {
            p += prof.p_load_kw[i][t];
            q += prof.q_load_kvar[i][t];
        }
        mean[i] = std::complex<double>(-p, -q) / (prof.horizon * s_base);
    }
    return ScenarioSampler(std::move(mean), seed);
}

std::vector<double> perturb_observe(const Network& net, const Injections& base,
                                    int target_index, double delta_pu,
                                    Channel channel) {
    if (delta_pu == 0.0) throw ValidationError("perturbation delta must be nonzero");
    NetworkState st0 = solve_power_flow(net, base);
    Injections pert = base;
    // A load perturbation of +delta reduces the net injection.
    if (channel == Channel::Active)
        pert[target_index] -= std::complex<double>(delta_pu, 0.0);
    else
        pert[target_index] -= std::complex<double>(0.0, delta_pu);
    NetworkState st1 = solve_power_flow(net, pert);
    std::vector<double> out(net.num_nodes());
    for (int i = 0; i < net.num_nodes(); ++i)
        out[i] = std::abs(st1.v_mag[i] - st0.v_mag[i]) / std::abs(delta_pu);
    return out;
}

SensitivityTable estimate_nvs(const Network& net, const ScenarioSampler& sampler,
                              int num_scenarios, double delta_kw) {
    if (num_scenarios < 1) throw ValidationError("need at least one scenario");
    if (delta_kw == 0.0) throw ValidationError("perturbation delta must be nonzero");
    const int n = net.num_nodes();
    const double delta_pu = delta_kw / net.bases().s_base_kva;

    SensitivityTable table;
    table.psi.assign(n, 0.0);
    table.beta.assign(n, 0.0);
    table.psi_samples.assign(n, {});
    table.beta_samples.assign(n, {});

    std::vector<int> targets;
    for (int i = 0; i < n; ++i)
        if (net.node(i).has_flexibility) targets.push_back(i);

    int used = 0, skipped = 0;
    for (int k = 0; k < num_scenarios; ++k) {
        const Injections base = sampler.scenario(k);
        try {
            NetworkState st0 = solve_power_flow(net, base);
            for (int x : targets) {
                for (Channel ch : {Channel::Active, Channel::Reactive}) {
                    Injections pert = base;
                    if (ch == Channel::Active)
                        pert[x] -= std::complex<double>(delta_pu, 0.0);
                    else
                        pert[x] -= std::complex<double>(0.0, delta_pu);
                    NetworkState st1 = solve_power_flow(net, pert);
                    double sum = 0.0;
                    for (int i = 0; i < n; ++i)
                        sum += std::abs(st1.v_mag[i] - st0.v_mag[i]) / delta_pu;
                    if (ch == Channel::Active)
                        table.psi_samples[x].push_back(sum);
                    else
                        table.beta_samples[x].push_back(sum);
                }
            }
            ++used;
        } catch (const DivergenceError&) {
            ++skipped;
        }
    }
    if (skipped > num_scenarios / 5)
        throw EstimationError("more than 20% of sensitivity scenarios diverged (" +
                              std::to_string(skipped) + "/" +
                              std::to_string(num_scenarios) + ")");
    table.num_scenarios = used;
    table.num_skipped = skipped;
    for (int x : targets) {
        double sp = 0.0, sb = 0.0;
        for (double v : table.psi_samples[x]) sp += v;
        for (double v : table.beta_samples[x]) sb += v;
        table.psi[x] = sp / used;
        table.beta[x] = sb / used;
    }
    return table;
}

std::string serialize_sensitivity_csv(const Network& net, const SensitivityTable& s) {
    std::string out = "node,psi,beta\n";
    char buf[96];
    for (int i = 0; i < net.num_nodes(); ++i) {
        std::snprintf(buf, sizeof(buf), "%d,%.10g,%.10g\n", net.node(i).id,
                      s.psi[i], s.beta[i]);
        out += buf;
    }
    return out;
}

}  // namespace dnflex
