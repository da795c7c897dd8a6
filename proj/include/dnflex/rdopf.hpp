#pragma once

#include <optional>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "dnflex/fas.hpp"
#include "dnflex/network.hpp"
#include "dnflex/powerflow.hpp"

namespace dnflex {

struct RdopfConfig {
    enum class Formulation { Soc, Ac };

    double lambda_loss = 0.0;       // price per kWh of losses
    double lambda_curt_gen = 0.47;  // per kWh curtailed generation
    double lambda_curt_load = 0.87; // per kWh curtailed load
    double v_min = 0.92;
    double v_max = 1.08;
    double slack_p_max_pu = 5.0;    // substation import/export limit
    double slack_q_max_pu = 5.0;
    double kkt_tol = 1e-6;
    double cone_tol = 1e-8;
    Formulation formulation = Formulation::Soc;

    void validate() const;
};

// Single-timestep dispatch problem data, physical units (kW / kvar). Bounds
// are the gated envelope; curtailment caps are the instantaneous powers.
struct TimestepInputs {
    int t = 0;
    std::vector<double> p_load_kw, q_load_kvar, p_gen_kw;
    std::vector<double> lam_p_plus, lam_p_minus;  // prices; plus >= 0, minus <= 0
    std::vector<double> lam_q_plus, lam_q_minus;
    std::vector<double> p_flex_max, p_flex_min;   // kW, max >= 0 >= min
    std::vector<double> q_flex_max, q_flex_min;   // kvar
    std::vector<double> load_cap, gen_cap;        // kW curtailment ceilings
    // Optional gate bits; when present they multiply the flex bounds inside
    // the solver (equivalent to pre-gating the envelope).
    std::optional<std::vector<std::uint8_t>> z1, z2, z3, z4;
};

struct DispatchResult {
    Eigen::VectorXd dp_plus_kw, dp_minus_kw;      // per node; minus <= 0
    Eigen::VectorXd dq_plus_kvar, dq_minus_kvar;
    Eigen::VectorXd load_curt_kw, gen_curt_kw;    // >= 0
    double sigma = 0.0;                           // dispatch cost (Eq. 9 sum)
    // Certified optimality bound of the convex solve: the true SOC optimum
    // lies in [sigma - gap_bound, sigma]. Zero for AC results.
    double gap_bound = 0.0;
    double losses_kwh = 0.0;
    Eigen::VectorXd duals_p;                      // nodal balance, per kWh
    Eigen::VectorXd duals_q;
    bool duals_converged = false;
    std::string status;                           // "optimal" or "recovered"
    Eigen::VectorXd w_diag;                       // SOC u_i, empty for AC
    Eigen::VectorXd cone_slack;                   // SOC per-branch slack
};

struct FeasibilityReport {
    double max_v_upper_violation = 0.0;  // pu above v_max
    double max_v_lower_violation = 0.0;  // pu below v_min
    double max_loading_pct = 0.0;
    double mismatch = 0.0;               // power-flow residual
    bool pass = false;
};

TimestepInputs make_timestep_inputs(const Network& net, const Profiles& prof,
                                    const FasSignal& fas, const FlexEnvelope& env,
                                    int t);

DispatchResult solve_soc_rdopf(const Network& net, const TimestepInputs& in,
                               const RdopfConfig& cfg);

DispatchResult solve_ac_rdopf(const Network& net, const TimestepInputs& in,
                              const RdopfConfig& cfg);

// Net injections (pu) after applying the returned activations.
Injections dispatched_injections(const Network& net, const TimestepInputs& in,
                                 const DispatchResult& res);

FeasibilityReport verify_ac_feasibility(const Network& net, const DispatchResult& res,
                                        const TimestepInputs& in,
                                        const RdopfConfig& cfg);

// Active-power balance duals of a converged SOC solve; throws SolverError if
// the duals did not converge.
Eigen::VectorXd extract_power_balance_duals(const DispatchResult& res);

// Eq. 9 cost recomputed from the returned activations and losses.
double recompute_sigma(const TimestepInputs& in, const DispatchResult& res,
                       const RdopfConfig& cfg);

std::string serialize_dispatch_csv(const Network& net,
                                   const std::vector<DispatchResult>& series);

}  // namespace dnflex
