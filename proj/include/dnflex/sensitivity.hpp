#pragma once

#include <cstdint>
#include <vector>

#include "dnflex/network.hpp"
#include "dnflex/powerflow.hpp"

namespace dnflex {

struct EstimationError : Error {
    using Error::Error;
};

enum class Channel { Active, Reactive };

// Mean nodal voltage sensitivities: network-aggregate per-unit voltage
// change per unit power perturbation at each node. Nodes without
// flexibility hold exact zeros. Per-scenario samples are retained for
// dispersion reporting.
struct SensitivityTable {
    std::vector<double> psi;   // pu V per pu P
    std::vector<double> beta;  // pu V per pu Q
    int num_scenarios = 0;
    int num_skipped = 0;
    std::vector<std::vector<double>> psi_samples;   // [node][scenario]
    std::vector<std::vector<double>> beta_samples;  // [node][scenario]
};

// Loading scenarios for the Monte Carlo sweep: the nominal snapshot scaled
// log-uniformly across three decades. Deterministic per (seed, k).
class ScenarioSampler {
  public:
    ScenarioSampler(Injections nominal, std::uint64_t seed,
                    double log10_min = -2.5, double log10_max = 0.5);
    Injections scenario(int k) const;

  private:
    Injections nominal_;
    std::uint64_t seed_;
    double log10_min_, log10_max_;
};

ScenarioSampler nominal_sampler(const Network& net, const Profiles& prof,
                                std::uint64_t seed);

// Two power-flow solves; returns |V_i - V_i0| / |delta| for every node i.
std::vector<double> perturb_observe(const Network& net, const Injections& base,
                                    int target_index, double delta_pu,
                                    Channel channel);

SensitivityTable estimate_nvs(const Network& net, const ScenarioSampler& sampler,
                              int num_scenarios = 100, double delta_kw = 1.0);

std::string serialize_sensitivity_csv(const Network& net, const SensitivityTable& s);

}  // namespace dnflex
