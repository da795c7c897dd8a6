#pragma once

#include <complex>
#include <vector>

#include "dnflex/network.hpp"

namespace dnflex {

struct DivergenceError : Error {
    double last_mismatch;
    DivergenceError(const std::string& msg, double mismatch)
        : Error(msg), last_mismatch(mismatch) {}
};

struct ConditioningError : Error {
    using Error::Error;
};

// One power-flow snapshot. Branch quantities are stored in the network's
// branch order; flow_fwd is oriented upstream -> downstream (away from the
// substation), flow_rev the opposite way.
struct NetworkState {
    int t = 0;
    std::vector<double> v_mag;                    // pu, per node
    std::vector<double> v_ang;                    // rad, per node
    std::vector<std::complex<double>> flow_fwd;   // pu, per branch
    std::vector<std::complex<double>> flow_rev;   // pu, per branch
    std::vector<double> loading_pct;              // signed |S|/s_max * 100
    std::vector<double> branch_loss_kw;
    double total_loss_kw = 0.0;
};

// Net complex power injection per node (pu, generation positive). The slack
// entry is ignored; the slack absorbs the residual.
using Injections = std::vector<std::complex<double>>;

Injections injections_from_profiles(const Network& net, const Profiles& prof, int t);

NetworkState solve_power_flow(const Network& net, const Injections& inj,
                              double tol = 1e-10, int max_iter = 50);

std::vector<NetworkState> simulate_horizon(const Network& net, const Profiles& prof);

// Slack net injection (pu) of a solved state, for energy-balance checks.
std::complex<double> slack_injection(const Network& net, const NetworkState& st);

}  // namespace dnflex
