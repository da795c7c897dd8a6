#pragma once

// Shared fixtures for the dispatch tests: a 3-bus feeder small enough for
// exhaustive grid-search oracles, plus helpers to build single-timestep
// dispatch inputs by hand.

#include <cmath>
#include <complex>
#include <limits>
#include <random>
#include <vector>

#include "dnflex/network.hpp"
#include "dnflex/powerflow.hpp"
#include "dnflex/rdopf.hpp"

namespace dnflex::testing {

// Substation 0 - prosumer 1 - prosumer 2, deliberately resistive so a few
// tens of kW move the tail voltage outside [0.92, 1.08].
inline Network three_bus() {
    Bases bases;  // 400 V / 100 kVA
    std::vector<Node> nodes = {
        {0, NodeKind::Substation, 0.0, 0.0, 0.0, false},
        {1, NodeKind::Prosumer, 0.0, 0.0, 10.0, true},
        {2, NodeKind::Prosumer, 30.0, 0.0, 45.0, true},
    };
    std::vector<Branch> branches = {
        {0, 1, 0.15, 0.075, 0.5, -0.5, 0.5},
        {1, 2, 0.15, 0.075, 0.5, -0.5, 0.5},
    };
    return Network(bases, 0, std::move(nodes), std::move(branches));
}

// Blank single-timestep inputs (everything zero / closed).
inline TimestepInputs blank_inputs(const Network& net) {
    const int n = net.num_nodes();
    TimestepInputs in;
    in.p_load_kw.assign(n, 0.0);
    in.q_load_kvar.assign(n, 0.0);
    in.p_gen_kw.assign(n, 0.0);
    in.lam_p_plus.assign(n, 0.0);
    in.lam_p_minus.assign(n, 0.0);
    in.lam_q_plus.assign(n, 0.0);
    in.lam_q_minus.assign(n, 0.0);
    in.p_flex_max.assign(n, 0.0);
    in.p_flex_min.assign(n, 0.0);
    in.q_flex_max.assign(n, 0.0);
    in.q_flex_min.assign(n, 0.0);
    in.load_cap.assign(n, 0.0);
    in.gen_cap.assign(n, 0.0);
    return in;
}

// AC-feasibility check of one candidate dispatch: full power flow on the
// dispatched injections against the voltage / thermal limits. When feasible
// and `loss_kw` is given, stores the total network loss for the candidate.
inline bool candidate_feasible(const Network& net, const TimestepInputs& in,
                               const std::vector<double>& dp_kw,
                               const std::vector<double>& dq_kvar,
                               const std::vector<double>& lcurt_kw,
                               const std::vector<double>& gcurt_kw,
                               const RdopfConfig& cfg,
                               double* loss_kw = nullptr) {
    const double sb = net.bases().s_base_kva;
    Injections inj(net.num_nodes());
    for (int i = 0; i < net.num_nodes(); ++i) {
        const double p = in.p_gen_kw[i] - gcurt_kw[i] - in.p_load_kw[i] +
                         lcurt_kw[i] + dp_kw[i];
        // Load curtailment sheds reactive draw at the load's power factor.
        const double load_qp = in.p_load_kw[i] > 1e-12
                                   ? in.q_load_kvar[i] / in.p_load_kw[i]
                                   : 0.0;
        const double q = -in.q_load_kvar[i] + load_qp * lcurt_kw[i] + dq_kvar[i];
        inj[i] = std::complex<double>(p / sb, q / sb);
    }
    NetworkState st;
    try {
        st = solve_power_flow(net, inj);
    } catch (const Error&) {
        return false;
    }
    for (double v : st.v_mag)
        if (v < cfg.v_min - 1e-9 || v > cfg.v_max + 1e-9) return false;
    for (double l : st.loading_pct)
        if (std::abs(l) > 100.0 * (1.0 + 1e-9)) return false;
    if (loss_kw) *loss_kw = st.total_loss_kw;
    return true;
}

// Exhaustive grid search for instances with one flexibility variable at
// `flex_node` (ramp-up when `dir > 0`, ramp-down when `dir < 0`) and one
// curtailment variable at `curt_node` (generation when `gen_curt`, load
// otherwise). Prices are read from `in`. The curtailment price dominates
// cfg.lambda_loss times the loss slope (|dρ/dc| < 1 kW/kW on these toys),
// so for each flexibility point the cheapest feasible curtailment is the
// smallest one: a 0.01 kW ascending scan brackets it and a bisection pass
// sharpens the feasibility boundary, removing the grid-step cost bias.
inline double brute_force_sigma(const Network& net, const TimestepInputs& in,
                                const RdopfConfig& cfg, int flex_node, int dir,
                                int curt_node, bool gen_curt) {
    const int n = net.num_nodes();
    const double step = 0.01;
    const double flex_span = dir > 0 ? in.p_flex_max[flex_node]
                                     : -in.p_flex_min[flex_node];
    const double curt_span =
        gen_curt ? in.gen_cap[curt_node] : in.load_cap[curt_node];
    const double flex_price = dir > 0 ? in.lam_p_plus[flex_node]
                                      : -in.lam_p_minus[flex_node];
    const double curt_price = gen_curt ? cfg.lambda_curt_gen : cfg.lambda_curt_load;

    std::vector<double> dp(n, 0.0), dq(n, 0.0), lc(n, 0.0), gc(n, 0.0);
    const auto eval_at = [&](double f, double c, double* loss_kw) {
        dp[flex_node] = dir * f;
        lc[curt_node] = gen_curt ? 0.0 : c;
        gc[curt_node] = gen_curt ? c : 0.0;
        return candidate_feasible(net, in, dp, dq, lc, gc, cfg, loss_kw);
    };
    // Cost of the cheapest feasible point with flexibility fixed at f: scan
    // curtailment upward by `step`, then bisect the feasibility boundary.
    const auto cost_at = [&](double f) {
        const int nc = static_cast<int>(std::ceil(curt_span / step));
        double c_hi = std::numeric_limits<double>::quiet_NaN();
        for (int b = 0; b <= nc; ++b) {
            const double c = std::min(b * step, curt_span);
            if (eval_at(f, c, nullptr)) {
                c_hi = c;
                break;
            }
        }
        if (std::isnan(c_hi)) return std::numeric_limits<double>::infinity();
        double c_lo = std::max(0.0, c_hi - step);
        if (c_hi > 0.0 && !eval_at(f, c_lo, nullptr)) {
            for (int it = 0; it < 40; ++it) {
                const double mid = 0.5 * (c_lo + c_hi);
                (eval_at(f, mid, nullptr) ? c_hi : c_lo) = mid;
            }
        } else {
            c_hi = c_lo;  // already feasible at the lower bracket edge
        }
        double loss_kw = 0.0;
        if (!eval_at(f, c_hi, &loss_kw))
            return std::numeric_limits<double>::infinity();
        return cfg.lambda_loss * loss_kw * 0.25 +
               0.25 * (flex_price * f + curt_price * c_hi);
    };

    double best = std::numeric_limits<double>::infinity();
    double f_best = 0.0;
    const int nf = static_cast<int>(std::ceil(flex_span / step));
    for (int a = 0; a <= nf; ++a) {
        const double f = std::min(a * step, flex_span);
        const double cost = cost_at(f);
        if (cost < best) {
            best = cost;
            f_best = f;
        }
    }
    if (!std::isfinite(best)) return best;
    // Golden-section refinement of the flexibility coordinate around the
    // best coarse sample.
    double lo = std::max(0.0, f_best - step), hi = std::min(flex_span, f_best + step);
    const double gr = 0.5 * (std::sqrt(5.0) - 1.0);
    double x1 = hi - gr * (hi - lo), x2 = lo + gr * (hi - lo);
    double y1 = cost_at(x1), y2 = cost_at(x2);
    for (int it = 0; it < 40; ++it) {
        if (y1 < y2) {
            hi = x2;
            x2 = x1;
            y2 = y1;
            x1 = hi - gr * (hi - lo);
            y1 = cost_at(x1);
        } else {
            lo = x1;
            x1 = x2;
            y1 = y2;
            x2 = lo + gr * (hi - lo);
            y2 = cost_at(x2);
        }
    }
    return std::min({best, y1, y2});
}

}  // namespace dnflex::testing
