#pragma once

#include <cstdint>
#include <vector>

#include "dnflex/network.hpp"
#include "dnflex/powerflow.hpp"
#include "dnflex/sensitivity.hpp"

namespace dnflex {

struct FasConfig {
    double v_min = 0.92;
    double v_max = 1.08;
    double dv_perm = 0.04;        // pu
    double dt_perm = 75.0;        // percent
    double kappa_v = 0.2;
    double kappa_t = 0.2;
    double lambda_curt_gen = 0.47;
    double lambda_curt_load = 0.87;
    // Saturation levels exactly as printed feed the reactive sensitivity
    // into the thermal component; set false to use the active one instead.
    bool thermal_level_uses_beta = true;

    void validate() const;
};

// Per-node saturation magnitudes for the droop channels.
struct SaturationLevels {
    std::vector<double> vc_p, tc_p, vc_q, tc_q;
};

// Four-channel activation signal plus gating bits, [t][node].
struct FasSignal {
    std::vector<std::vector<double>> lam_p_plus, lam_p_minus;
    std::vector<std::vector<double>> lam_q_plus, lam_q_minus;
    std::vector<std::vector<std::uint8_t>> z1, z2, z3, z4;

    int horizon() const { return static_cast<int>(lam_p_plus.size()); }
};

// Sign-correct flexibility bounds and curtailment caps, [t][node], in kW.
struct FlexEnvelope {
    std::vector<std::vector<double>> p_flex_max, p_flex_min;
    std::vector<std::vector<double>> q_flex_max, q_flex_min;
    std::vector<std::vector<double>> gen_cap, load_cap;
};

// Nodal projection of branch loading: the incident-branch loading of
// maximum absolute value, sign preserved. Substation projects to zero.
std::vector<double> project_loadings(const Network& net, const NetworkState& st);

SaturationLevels saturation_levels(const SensitivityTable& sens, const FasConfig& cfg);

FasSignal compute_fas(const Network& net, const std::vector<NetworkState>& states,
                      const SaturationLevels& levels, const FasConfig& cfg);

// Ungated bounds at a flexibility level: +-level% of the instantaneous
// active (reactive) load at prosumer nodes.
FlexEnvelope raw_envelope_from_level(const Network& net, const Profiles& prof,
                                     double level_pct);

FlexEnvelope gate_envelopes(const FasSignal& fas, const FlexEnvelope& raw,
                            const Network& net, const Profiles& prof);

std::string serialize_fas_csv(const Network& net, const FasSignal& fas);

}  // namespace dnflex
