#pragma once

#include <optional>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "dnflex/fas.hpp"
#include "dnflex/network.hpp"
#include "dnflex/powerflow.hpp"
#include "dnflex/rdopf.hpp"
#include "dnflex/sensitivity.hpp"

namespace dnflex {

struct AnalysisError : Error {
    using Error::Error;
};

// (obj_ac - obj_soc) / obj_ac * 100; throws AnalysisError when obj_ac == 0.
double optimality_gap(double obj_ac, double obj_soc);

// One dispatch pass over the horizon with a fixed configuration.
struct HorizonRun {
    std::vector<DispatchResult> dispatch;  // per timestep
    double objective = 0.0;                // sum of per-step sigma
    double losses_kwh = 0.0;
};

HorizonRun run_horizon(const Network& net, const Profiles& prof,
                       const FasSignal& fas, const FlexEnvelope& env,
                       const RdopfConfig& cfg);

struct ParetoPoint {
    double lambda_loss = 0.0;
    double obj_soc = 0.0, obj_ac = 0.0;
    double soc_gap_bound = 0.0;  // summed certified per-step solver bounds
    // Computed against the certified SOC lower bound (obj_soc -
    // soc_gap_bound) so the relaxation ordering survives solver floors.
    double gap_pct = 0.0;
    double cost_loss = 0.0;  // lambda_loss * total SOC losses (kWh)
    double ramp_up_kwh = 0.0, ramp_down_kwh = 0.0;
    double load_curt_kwh = 0.0, gen_curt_kwh = 0.0;
    bool flagged = false;  // solve failure; excluded from knee detection
};

struct ParetoCurve {
    std::vector<ParetoPoint> points;  // sorted by lambda_loss
    std::optional<double> knee;       // selected lambda_loss
};

// 13 log-spaced penalties in [0.01, 2.0].
std::vector<double> default_lambda_grid();

ParetoCurve sweep_loss_penalty(const Network& net, const Profiles& prof,
                               const FasSignal& fas, const FlexEnvelope& env,
                               const RdopfConfig& base_cfg,
                               const std::vector<double>& lambda_grid);

// Index of the point at maximum distance from the endpoint chord after
// min-max normalizing both axes; throws AnalysisError when the curve is
// affine (max distance < 1e-6) or has fewer than 4 points.
int knee_index(const Eigen::VectorXd& x, const Eigen::VectorXd& y);

// Knee lambda_loss of a sweep (x = cost_loss, y = gap_pct, valid points only).
double knee_point(const ParetoCurve& curve);

// One needs matrix (kWh, nodes x timesteps) with its marginals.
struct NeedsMatrix {
    Eigen::MatrixXd kwh;          // N x T
    Eigen::VectorXd temporal;     // length T: column sums
    Eigen::VectorXd locational;   // length N: row sums
    double cumulative_kwh = 0.0;  // sum of all entries
    double peak_kw = 0.0;         // max entry / 0.25 h
};

NeedsMatrix make_needs_matrix(const Eigen::MatrixXd& kwh);

// Percentages of samples beyond each limit: voltages over nodes x timesteps
// (slack excluded), loadings over branches x timesteps.
struct Compliance {
    double pct_v_above_max = 0.0;
    double pct_v_below_min = 0.0;
    double pct_v_outside_perm = 0.0;
    double pct_loading_ge_100 = 0.0;
    double pct_loading_gt_75 = 0.0;
};

Compliance compliance_stats(const Network& net,
                            const std::vector<NetworkState>& states,
                            const FasConfig& cfg);

struct AssessmentReport {
    NeedsMatrix r_up, r_down, c_load, c_gen;
    Compliance compliance;       // of the supplied states
    double losses_kwh = 0.0;     // cumulative over the supplied states
};

AssessmentReport needs_assessment(const Network& net,
                                  const std::vector<DispatchResult>& dispatch,
                                  const std::vector<NetworkState>& states,
                                  const FasConfig& cfg);

// One (power factor, flexibility level) cell of the reactive study.
struct ReactiveCell {
    double pf = 0.0;
    double flex_level_pct = 0.0;
    double x_noq_kwh = 0.0;  // summed |activation| energies without Q channels
    double y_q_kwh = 0.0;    // active-channel equivalent with Q channels
    double obj_noq = 0.0, obj_withq = 0.0;
    double p_reduction_pct = 0.0;
    double profit_reactive_pct = 0.0;
    bool defined = false;  // false when a denominator vanished
};

struct ReactiveImpact {
    std::vector<ReactiveCell> cells;
};

// Rebuilds reactive load as P * tan(acos(pf)) for each pf, then dispatches
// the horizon with and without the reactive flexibility channels.
ReactiveImpact reactive_impact(const Network& net, const Profiles& prof,
                               const SensitivityTable& sens, const FasConfig& fcfg,
                               const RdopfConfig& rcfg,
                               const std::vector<double>& pf_set,
                               const std::vector<double>& flex_levels);

std::string serialize_pareto_csv(const ParetoCurve& curve);
std::string serialize_heatmap_csv(const Network& net, const NeedsMatrix& m);
std::string serialize_reactive_csv(const ReactiveImpact& r);
std::string serialize_fas_vs_duals_csv(const Network& net, const FasSignal& fas,
                                       const std::vector<DispatchResult>& dispatch);
std::string serialize_assessment_json(const Network& net,
                                      const AssessmentReport& rep);

}  // namespace dnflex
