#include "dnflex/rdopf.hpp"

#include <algorithm>
#include <cmath>
#include <complex>
#include <cstdio>
#include <limits>
#include <map>

#include "dnflex/barrier.hpp"

namespace dnflex {

using Eigen::MatrixXd;
using Eigen::RowVectorXd;
using Eigen::VectorXd;
using std::complex;

namespace {

constexpr double kWidthEps = 1e-12;

double kwh_per_pu(const Network& net) { return net.bases().s_base_kva * 0.25; }

// One created dispatch variable. Kinds: 0 dp+, 1 dp-, 2 dq+, 3 dq-,
// 4 load curtailment, 5 generation curtailment. Bounds in pu, cost in
// price-units per pu of activation (15-minute energy step folded in).
struct DispVar {
    int node;
    int kind;
    double lo, hi;
    double cost;
    // Reactive injection per pu of the variable: 1 for the Q channels, the
    // load's Q/P ratio for load curtailment (shedding a load removes its
    // reactive draw at constant power factor), 0 otherwise.
    double qc = 0.0;
};

// Injection sensitivity: one pu of the variable adds dp_sign pu of active
// injection at its node (ramp-down, ramp-up and load curtailment raise the
// net injection; generation curtailment lowers it).
double dp_sign(int kind) {
    switch (kind) {
        case 0: case 1: case 4: return 1.0;
        case 5: return -1.0;
        default: return 0.0;
    }
}

std::vector<DispVar> build_disp_vars(const Network& net, const TimestepInputs& in,
                                     const RdopfConfig& cfg) {
    const double sb = net.bases().s_base_kva;
    const double e = kwh_per_pu(net);
    std::vector<DispVar> vars;
    for (int i = 0; i < net.num_nodes(); ++i) {
        const double g1 = in.z1 ? double((*in.z1)[i]) : 1.0;
        const double g2 = in.z2 ? double((*in.z2)[i]) : 1.0;
        const double g3 = in.z3 ? double((*in.z3)[i]) : 1.0;
        const double g4 = in.z4 ? double((*in.z4)[i]) : 1.0;
        const double pp = g1 * in.p_flex_max[i] / sb;
        const double pm = g2 * in.p_flex_min[i] / sb;
        const double qp = g3 * in.q_flex_max[i] / sb;
        const double qm = g4 * in.q_flex_min[i] / sb;
        const double cl = in.load_cap[i] / sb;
        const double cg = in.gen_cap[i] / sb;
        const double load_qp = in.p_load_kw[i] > kWidthEps
                                   ? in.q_load_kvar[i] / in.p_load_kw[i]
                                   : 0.0;
        if (pp > kWidthEps)
            vars.push_back({i, 0, 0.0, pp, in.lam_p_plus[i] * e, 0.0});
        if (pm < -kWidthEps)
            vars.push_back({i, 1, pm, 0.0, in.lam_p_minus[i] * e, 0.0});
        if (qp > kWidthEps)
            vars.push_back({i, 2, 0.0, qp, in.lam_q_plus[i] * e, 1.0});
        if (qm < -kWidthEps)
            vars.push_back({i, 3, qm, 0.0, in.lam_q_minus[i] * e, 1.0});
        if (cl > kWidthEps)
            vars.push_back({i, 4, 0.0, cl, cfg.lambda_curt_load * e, load_qp});
        if (cg > kWidthEps)
            vars.push_back({i, 5, 0.0, cg, cfg.lambda_curt_gen * e, 0.0});
    }
    return vars;
}

void store_activation(DispatchResult& res, const DispVar& v, double value_pu,
                      double s_base) {
    const double kw = value_pu * s_base;
    switch (v.kind) {
        case 0: res.dp_plus_kw(v.node) += kw; break;
        case 1: res.dp_minus_kw(v.node) += kw; break;
        case 2: res.dq_plus_kvar(v.node) += kw; break;
        case 3: res.dq_minus_kvar(v.node) += kw; break;
        case 4: res.load_curt_kw(v.node) += kw; break;
        case 5: res.gen_curt_kw(v.node) += kw; break;
    }
}

double fetch_activation(const DispatchResult& res, const DispVar& v) {
    switch (v.kind) {
        case 0: return res.dp_plus_kw(v.node);
        case 1: return res.dp_minus_kw(v.node);
        case 2: return res.dq_plus_kvar(v.node);
        case 3: return res.dq_minus_kvar(v.node);
        case 4: return res.load_curt_kw(v.node);
        case 5: return res.gen_curt_kw(v.node);
        default: return 0.0;
    }
}

// Activations below 0.1 W are interior-point residue, not dispatch. Zero
// them and recompute sigma so reported activations and cost stay consistent;
// the removed cost is folded into gap_bound so [sigma - gap_bound, sigma]
// still brackets the solver's objective.
void snap_small_activations(const Network& net, DispatchResult& res,
                            const TimestepInputs& in, const RdopfConfig& cfg) {
    constexpr double kSnapKw = 1e-3;
    const double before = recompute_sigma(in, res, cfg);
    res.sigma = before;
    DispatchResult snapped = res;
    const auto snap = [](VectorXd& v) {
        for (int i = 0; i < v.size(); ++i)
            if (std::abs(v(i)) < kSnapKw) v(i) = 0.0;
    };
    snap(snapped.dp_plus_kw);
    snap(snapped.dp_minus_kw);
    snap(snapped.dq_plus_kvar);
    snap(snapped.dq_minus_kvar);
    snap(snapped.load_curt_kw);
    snap(snapped.gen_curt_kw);
    snapped.sigma = recompute_sigma(in, snapped, cfg);
    snapped.gap_bound += std::max(0.0, before - snapped.sigma);
    // Zeroing sub-watt residue moves the operating point slightly; keep the
    // snapped solution only while it still verifies against an independent
    // power flow, otherwise stay on the verified original.
    if (verify_ac_feasibility(net, snapped, in, cfg).pass)
        res = std::move(snapped);
}

DispatchResult blank_result(const Network& net, int t) {
    DispatchResult res;
    const int n = net.num_nodes();
    res.dp_plus_kw = VectorXd::Zero(n);
    res.dp_minus_kw = VectorXd::Zero(n);
    res.dq_plus_kvar = VectorXd::Zero(n);
    res.dq_minus_kvar = VectorXd::Zero(n);
    res.load_curt_kw = VectorXd::Zero(n);
    res.gen_curt_kw = VectorXd::Zero(n);
    res.duals_p = VectorXd::Zero(n);
    res.duals_q = VectorXd::Zero(n);
    (void)t;
    return res;
}

// The dispatch problem is feasible at any flexibility level iff the fully
// curtailed (unloaded) network respects all limits.
bool feasible_when_fully_curtailed(const Network& net, const RdopfConfig& cfg) {
    Injections inj(net.num_nodes(), {0.0, 0.0});
    try {
        NetworkState st = solve_power_flow(net, inj);
        for (double v : st.v_mag)
            if (v < cfg.v_min - 1e-9 || v > cfg.v_max + 1e-9) return false;
        for (double l : st.loading_pct)
            if (std::abs(l) > 100.0 + 1e-9) return false;
        return true;
    } catch (const Error&) {
        return false;
    }
}

}  // namespace

void RdopfConfig::validate() const {
    if (lambda_loss < 0.0) throw ValidationError("lambda_loss must be >= 0");
    if (!(v_min > 0.0 && v_min < v_max))
        throw ValidationError("voltage bounds must satisfy 0 < v_min < v_max");
    if (lambda_curt_gen <= 0.0 || lambda_curt_load <= 0.0)
        throw ValidationError("curtailment prices must be positive");
    if (slack_p_max_pu <= 0.0 || slack_q_max_pu <= 0.0)
        throw ValidationError("slack limits must be positive");
}

TimestepInputs make_timestep_inputs(const Network& net, const Profiles& prof,
                                    const FasSignal& fas, const FlexEnvelope& env,
                                    int t) {
    const int n = net.num_nodes();
    if (t < 0 || t >= prof.horizon) throw ValidationError("timestep out of range");
    TimestepInputs in;
    in.t = t;
    in.p_load_kw.resize(n);
    in.q_load_kvar.resize(n);
    in.p_gen_kw.resize(n);
    for (int i = 0; i < n; ++i) {
        in.p_load_kw[i] = prof.p_load_kw[i][t];
        in.q_load_kvar[i] = prof.q_load_kvar[i][t];
        in.p_gen_kw[i] = prof.p_gen_kw[i][t];
    }
    in.lam_p_plus = fas.lam_p_plus[t];
    in.lam_p_minus = fas.lam_p_minus[t];
    in.lam_q_plus = fas.lam_q_plus[t];
    in.lam_q_minus = fas.lam_q_minus[t];
    in.p_flex_max = env.p_flex_max[t];
    in.p_flex_min = env.p_flex_min[t];
    in.q_flex_max = env.q_flex_max[t];
    in.q_flex_min = env.q_flex_min[t];
    in.load_cap = env.load_cap[t];
    in.gen_cap = env.gen_cap[t];
    return in;
}

// ---------------------------------------------------------------------------
// SOC relaxation on the W-formulation: u_i = |V_i|^2 and, per branch (u->d),
// R = Re(V_u V_d*), I = Im(V_u V_d*), with the rotated cone R^2 + I^2 <= u_u u_d.
// With series admittance y = g + jb (b < 0 inductive) every flow is linear:
//   P_ud = g(u_u - R) - b I      Q_ud = -b(u_u - R) - g I
//   P_du = g(u_d - R) + b I      Q_du = -b(u_d - R) + g I
// and the branch loss is g(u_u + u_d - 2R).
// ---------------------------------------------------------------------------

DispatchResult solve_soc_rdopf(const Network& net, const TimestepInputs& in,
                               const RdopfConfig& cfg) {
    cfg.validate();
    const int n = net.num_nodes();
    const int nb = net.num_branches();
    const int slack = net.slack_index();
    const double sb = net.bases().s_base_kva;
    const double e = kwh_per_pu(net);

    const std::vector<DispVar> disp = build_disp_vars(net, in, cfg);
    const int nd = static_cast<int>(disp.size());

    // Layout: u(n) | R(nb) | I(nb) | dispatch(nd) | slack P, Q.
    const int off_u = 0, off_r = n, off_i = n + nb, off_d = n + 2 * nb;
    const int ipg = off_d + nd, iqg = ipg + 1;
    BarrierProblem prob(iqg + 1);

    std::vector<double> g(nb), b(nb);
    for (int k = 0; k < nb; ++k) {
        const Branch& br = net.branch(k);
        const double z2 = br.r_pu * br.r_pu + br.x_pu * br.x_pu;
        g[k] = br.r_pu / z2;
        b[k] = -br.x_pu / z2;
    }

    // Nodal balance, P then Q per node: branch-flow terms minus dispatch and
    // slack injections equal the fixed net load/generation.
    std::vector<int> eq_p(n), eq_q(n);
    for (int i = 0; i < n; ++i) {
        std::vector<std::pair<int, double>> pt, qt;
        for (int k : net.incident_branches(i)) {
            const int up = net.upstream_index(k), dn = net.downstream_index(k);
            const double si = i == up ? -1.0 : 1.0;  // sign of the I term
            const int ui = i == up ? up : dn;
            pt.push_back({off_u + ui, g[k]});
            pt.push_back({off_r + k, -g[k]});
            pt.push_back({off_i + k, si * b[k]});
            qt.push_back({off_u + ui, -b[k]});
            qt.push_back({off_r + k, b[k]});
            qt.push_back({off_i + k, si * g[k]});
        }
        for (int k = 0; k < nd; ++k) {
            if (disp[k].node != i) continue;
            const double sp = dp_sign(disp[k].kind), sq = disp[k].qc;
            if (sp != 0.0) pt.push_back({off_d + k, -sp});
            if (sq != 0.0) qt.push_back({off_d + k, -sq});
        }
        if (i == slack) {
            pt.push_back({ipg, -1.0});
            qt.push_back({iqg, -1.0});
        }
        eq_p[i] = prob.add_equality(pt, (in.p_gen_kw[i] - in.p_load_kw[i]) / sb);
        eq_q[i] = prob.add_equality(qt, -in.q_load_kvar[i] / sb);
    }
    prob.add_equality({{off_u + slack, 1.0}}, 1.0);

    const double u_lo = cfg.v_min * cfg.v_min, u_hi = cfg.v_max * cfg.v_max;
    for (int i = 0; i < n; ++i)
        if (i != slack) prob.add_box(off_u + i, u_lo, u_hi);
    for (int k = 0; k < nd; ++k) prob.add_box(off_d + k, disp[k].lo, disp[k].hi);
    prob.add_box(ipg, -cfg.slack_p_max_pu, cfg.slack_p_max_pu);
    prob.add_box(iqg, -cfg.slack_q_max_pu, cfg.slack_q_max_pu);

    for (int k = 0; k < nb; ++k) {
        const Branch& br = net.branch(k);
        const int up = net.upstream_index(k), dn = net.downstream_index(k);
        prob.add_rotated_cone(off_u + up, off_u + dn, off_r + k, off_i + k);
        // Thermal |S|^2 <= s_max^2 at both ends, affine in (u, R, I).
        prob.add_quad_ball(
            {{off_u + up, g[k]}, {off_r + k, -g[k]}, {off_i + k, -b[k]}}, 0.0,
            {{off_u + up, -b[k]}, {off_r + k, b[k]}, {off_i + k, -g[k]}}, 0.0,
            br.s_max_pu);
        prob.add_quad_ball(
            {{off_u + dn, g[k]}, {off_r + k, -g[k]}, {off_i + k, b[k]}}, 0.0,
            {{off_u + dn, -b[k]}, {off_r + k, b[k]}, {off_i + k, g[k]}}, 0.0,
            br.s_max_pu);
        // Angle-difference limits: I/R = tan(theta_u - theta_d).
        prob.add_lin_ineq(
            {{off_i + k, 1.0}, {off_r + k, -std::tan(br.theta_max_rad)}}, 0.0);
        prob.add_lin_ineq(
            {{off_i + k, -1.0}, {off_r + k, std::tan(br.theta_min_rad)}}, 0.0);
    }

    VectorXd c = VectorXd::Zero(prob.num_vars());
    for (int k = 0; k < nd; ++k) c(off_d + k) = disp[k].cost;
    const double loss_w = cfg.lambda_loss * e;
    for (int k = 0; k < nb; ++k) {
        c(off_u + net.upstream_index(k)) += loss_w * g[k];
        c(off_u + net.downstream_index(k)) += loss_w * g[k];
        c(off_r + k) -= 2.0 * loss_w * g[k];
    }
    prob.objective() = c;

    // Start from the power-flow state of a nearly fully curtailed dispatch:
    // the quiet network sits well inside the voltage and thermal limits and
    // the balance residual is tiny. R, I are shrunk off the (tight) cone.
    VectorXd x0 = VectorXd::Zero(prob.num_vars());
    VectorXd d0(nd);
    for (int k = 0; k < nd; ++k) {
        const DispVar& v = disp[k];
        if (v.kind == 4 || v.kind == 5)
            d0(k) = 0.98 * v.hi;
        else
            d0(k) = v.kind == 0 || v.kind == 2 ? 0.02 * v.hi : 0.02 * v.lo;
    }
    bool seeded = false;
    {
        Injections inj(n);
        for (int i = 0; i < n; ++i)
            inj[i] = {(in.p_gen_kw[i] - in.p_load_kw[i]) / sb,
                      -in.q_load_kvar[i] / sb};
        for (int k = 0; k < nd; ++k)
            inj[disp[k].node] += std::complex<double>(
                dp_sign(disp[k].kind) * d0(k), disp[k].qc * d0(k));
        try {
            NetworkState st = solve_power_flow(net, inj);
            for (int i = 0; i < n; ++i) x0(off_u + i) = st.v_mag[i] * st.v_mag[i];
            for (int k = 0; k < nb; ++k) {
                const int up = net.upstream_index(k), dn = net.downstream_index(k);
                const std::complex<double> w =
                    std::polar(st.v_mag[up], st.v_ang[up]) *
                    std::polar(st.v_mag[dn], -st.v_ang[dn]);
                x0(off_r + k) = w.real() * (1.0 - 1e-4);
                x0(off_i + k) = w.imag() * (1.0 - 1e-4);
            }
            for (int k = 0; k < nd; ++k) x0(off_d + k) = d0(k);
            const std::complex<double> sl = slack_injection(net, st);
            x0(ipg) = std::clamp(sl.real(), -0.9 * cfg.slack_p_max_pu,
                                 0.9 * cfg.slack_p_max_pu);
            x0(iqg) = std::clamp(sl.imag(), -0.9 * cfg.slack_q_max_pu,
                                 0.9 * cfg.slack_q_max_pu);
            seeded = prob.in_domain(x0);
        } catch (const Error&) {
        }
    }
    if (!seeded) {
        // Flat fallback start; the balance residual is handled by the
        // infeasible-start Newton steps.
        const double u0 = std::clamp(1.0, u_lo + 0.05 * (u_hi - u_lo),
                                     u_hi - 0.05 * (u_hi - u_lo));
        for (int i = 0; i < n; ++i) x0(off_u + i) = u0;
        for (int k = 0; k < nb; ++k) {
            const Branch& br = net.branch(k);
            const double zmag = std::hypot(br.r_pu, br.x_pu);
            const double delta = std::min(0.005, 0.4 * br.s_max_pu * zmag / u0);
            x0(off_r + k) = (1.0 - delta) * u0;
            x0(off_i + k) = 0.0;
        }
        for (int k = 0; k < nd; ++k) x0(off_d + k) = 0.5 * (disp[k].lo + disp[k].hi);
        x0(ipg) = 0.0;
        x0(iqg) = 0.0;
    }

    BarrierOptions opts;
    opts.gap_tol = 1e-8;
    BarrierResult sol;
    try {
        sol = prob.solve(x0, opts);
    } catch (const SolverError&) {
        if (!feasible_when_fully_curtailed(net, cfg))
            throw InfeasibleError(
                "dispatch infeasible even with full curtailment: limits "
                "violated on the unloaded network");
        throw;
    }

    DispatchResult res = blank_result(net, in.t);
    for (int k = 0; k < nd; ++k) store_activation(res, disp[k], sol.x(off_d + k), sb);
    res.w_diag = sol.x.segment(off_u, n);
    res.cone_slack = VectorXd(nb);
    double loss_pu = 0.0;
    for (int k = 0; k < nb; ++k) {
        const int up = net.upstream_index(k), dn = net.downstream_index(k);
        res.cone_slack(k) = sol.x(off_u + up) * sol.x(off_u + dn) -
                            sol.x(off_r + k) * sol.x(off_r + k) -
                            sol.x(off_i + k) * sol.x(off_i + k);
        loss_pu +=
            g[k] * (sol.x(off_u + up) + sol.x(off_u + dn) - 2.0 * sol.x(off_r + k));
    }
    res.losses_kwh = loss_pu * e;
    res.sigma = sol.objective;
    res.gap_bound = sol.gap_bound;
    for (int i = 0; i < n; ++i) {
        res.duals_p(i) = sol.eq_duals(eq_p[i]) / e;
        res.duals_q(i) = sol.eq_duals(eq_q[i]) / e;
    }
    res.duals_converged = true;
    res.status = "optimal";
    snap_small_activations(net, res, in, cfg);
    return res;
}

// ---------------------------------------------------------------------------
// Nonlinear AC dispatch: reduced-space barrier method over the dispatch
// variables only. Every candidate point is evaluated through a full power
// flow, so nodal balance holds by construction; constraint gradients come
// from the power-flow Jacobian (implicit-function rule).
// ---------------------------------------------------------------------------

namespace {

struct AcEval {
    bool ok = false;
    VectorXd h;       // network inequality margins, all > 0 when ok
    MatrixXd dh;      // dh / d dispatch
    double loss_pu = 0.0;
    VectorXd dloss;
    NetworkState state;
};

class AcModel {
  public:
    AcModel(const Network& net, const TimestepInputs& in, const RdopfConfig& cfg,
            const std::vector<DispVar>& disp)
        : net_(net), cfg_(cfg), disp_(disp) {
        const int n = net.num_nodes();
        gmat_ = MatrixXd::Zero(n, n);
        bmat_ = MatrixXd::Zero(n, n);
        for (int k = 0; k < net.num_branches(); ++k) {
            const Branch& br = net.branch(k);
            const complex<double> y = 1.0 / complex<double>(br.r_pu, br.x_pu);
            const int a = net.from_index(k), bb = net.to_index(k);
            gmat_(a, a) += y.real();
            bmat_(a, a) += y.imag();
            gmat_(bb, bb) += y.real();
            bmat_(bb, bb) += y.imag();
            gmat_(a, bb) -= y.real();
            bmat_(a, bb) -= y.imag();
            gmat_(bb, a) -= y.real();
            bmat_(bb, a) -= y.imag();
        }
        for (int i = 0; i < n; ++i)
            if (i != net.slack_index()) pq_.push_back(i);
        for (int k = 0; k < static_cast<int>(pq_.size()); ++k) pos_[pq_[k]] = k;
        base_inj_.resize(n);
        const double sb = net.bases().s_base_kva;
        for (int i = 0; i < n; ++i)
            base_inj_[i] = {(in.p_gen_kw[i] - in.p_load_kw[i]) / sb,
                            -in.q_load_kvar[i] / sb};
    }

    Injections injections(const VectorXd& d) const {
        Injections inj = base_inj_;
        for (int k = 0; k < d.size(); ++k)
            inj[disp_[k].node] += complex<double>(dp_sign(disp_[k].kind) * d(k),
                                                  disp_[k].qc * d(k));
        return inj;
    }

    AcEval evaluate(const VectorXd& d, bool with_gradients) const;

  private:
    const Network& net_;
    const RdopfConfig& cfg_;
    const std::vector<DispVar>& disp_;
    MatrixXd gmat_, bmat_;
    std::vector<int> pq_;
    std::map<int, int> pos_;
    Injections base_inj_;
};

AcEval AcModel::evaluate(const VectorXd& d, bool with_gradients) const {
    AcEval ev;
    NetworkState st;
    try {
        st = solve_power_flow(net_, injections(d));
    } catch (const Error&) {
        return ev;
    }
    const int n = net_.num_nodes();
    const int nb = net_.num_branches();
    const int m = n - 1;
    const int nd = static_cast<int>(disp_.size());
    ev.state = st;

    // Constraint order: v upper (m), v lower (m), thermal fwd (nb),
    // thermal rev (nb), angle upper (nb), angle lower (nb).
    ev.h = VectorXd(2 * m + 4 * nb);
    for (int k = 0; k < m; ++k) {
        ev.h(k) = cfg_.v_max - st.v_mag[pq_[k]];
        ev.h(m + k) = st.v_mag[pq_[k]] - cfg_.v_min;
    }
    for (int k = 0; k < nb; ++k) {
        const Branch& br = net_.branch(k);
        const double s2 = br.s_max_pu * br.s_max_pu;
        ev.h(2 * m + k) = s2 - std::norm(st.flow_fwd[k]);
        ev.h(2 * m + nb + k) = s2 - std::norm(st.flow_rev[k]);
        const double dth = st.v_ang[net_.upstream_index(k)] -
                           st.v_ang[net_.downstream_index(k)];
        ev.h(2 * m + 2 * nb + k) = br.theta_max_rad - dth;
        ev.h(2 * m + 3 * nb + k) = dth - br.theta_min_rad;
    }
    ev.loss_pu = st.total_loss_kw / net_.bases().s_base_kva;
    ev.ok = ev.h.minCoeff() > 0.0;
    if (!ev.ok || !with_gradients) return ev;

    // Power-flow Jacobian at the solution, same convention as the solver:
    // rows [dP_pq; dQ_pq], columns [theta_pq; vmag_pq].
    VectorXd p_calc(n), q_calc(n);
    for (int i = 0; i < n; ++i) {
        double pi = 0.0, qi = 0.0;
        for (int j = 0; j < n; ++j) {
            if (gmat_(i, j) == 0.0 && bmat_(i, j) == 0.0) continue;
            const double dth = st.v_ang[i] - st.v_ang[j];
            const double co = std::cos(dth), si = std::sin(dth);
            pi += st.v_mag[i] * st.v_mag[j] * (gmat_(i, j) * co + bmat_(i, j) * si);
            qi += st.v_mag[i] * st.v_mag[j] * (gmat_(i, j) * si - bmat_(i, j) * co);
        }
        p_calc(i) = pi;
        q_calc(i) = qi;
    }
    MatrixXd jac(2 * m, 2 * m);
    for (int a = 0; a < m; ++a) {
        const int i = pq_[a];
        const double vi = st.v_mag[i];
        for (int cc = 0; cc < m; ++cc) {
            const int j = pq_[cc];
            if (i == j) {
                jac(a, cc) = -q_calc(i) - bmat_(i, i) * vi * vi;
                jac(a, m + cc) = p_calc(i) / vi + gmat_(i, i) * vi;
                jac(m + a, cc) = p_calc(i) - gmat_(i, i) * vi * vi;
                jac(m + a, m + cc) = q_calc(i) / vi - bmat_(i, i) * vi;
            } else {
                const double dth = st.v_ang[i] - st.v_ang[j];
                const double co = std::cos(dth), si = std::sin(dth);
                const double gb1 = gmat_(i, j) * si - bmat_(i, j) * co;
                const double gb2 = gmat_(i, j) * co + bmat_(i, j) * si;
                jac(a, cc) = vi * st.v_mag[j] * gb1;
                jac(a, m + cc) = vi * gb2;
                jac(m + a, cc) = -vi * st.v_mag[j] * gb2;
                jac(m + a, m + cc) = vi * gb1;
            }
        }
    }
    MatrixXd em = MatrixXd::Zero(2 * m, nd);
    for (int k = 0; k < nd; ++k) {
        const DispVar& v = disp_[k];
        if (v.node == net_.slack_index()) continue;
        const int r = pos_.at(v.node);
        em(r, k) = dp_sign(v.kind);
        em(m + r, k) = v.qc;
    }
    // Mismatch F = calc - spec: J dy = dF_spec => dy/dd = J^-1 E.
    MatrixXd sens = Eigen::PartialPivLU<MatrixXd>(jac).solve(em);
    if (!sens.allFinite()) {
        ev.ok = false;
        return ev;
    }
    const int slack = net_.slack_index();
    const auto dtheta = [&](int i) -> RowVectorXd {
        return i == slack ? RowVectorXd::Zero(nd) : sens.row(pos_.at(i)).eval();
    };
    const auto dvmag = [&](int i) -> RowVectorXd {
        return i == slack ? RowVectorXd::Zero(nd) : sens.row(m + pos_.at(i)).eval();
    };

    ev.dh = MatrixXd::Zero(2 * m + 4 * nb, nd);
    for (int k = 0; k < m; ++k) {
        ev.dh.row(k) = -sens.row(m + k);
        ev.dh.row(m + k) = sens.row(m + k);
    }
    ev.dloss = VectorXd::Zero(nd);
    for (int k = 0; k < nb; ++k) {
        const Branch& br = net_.branch(k);
        const int up = net_.upstream_index(k), dn = net_.downstream_index(k);
        const complex<double> ys =
            std::conj(1.0 / complex<double>(br.r_pu, br.x_pu));
        // S_ab = y*(|V_a|^2 - V_a conj(V_b)); partials via e = V_a conj(V_b).
        for (int side = 0; side < 2; ++side) {
            const int a = side == 0 ? up : dn;
            const int bn = side == 0 ? dn : up;
            const complex<double> va = std::polar(st.v_mag[a], st.v_ang[a]);
            const complex<double> vb = std::polar(st.v_mag[bn], st.v_ang[bn]);
            const complex<double> e = va * std::conj(vb);
            const complex<double> s = side == 0 ? st.flow_fwd[k] : st.flow_rev[k];
            const complex<double> ds_dva = ys * (2.0 * st.v_mag[a] - e / st.v_mag[a]);
            const complex<double> ds_dvb = ys * (-e / st.v_mag[bn]);
            const complex<double> ds_dta = ys * complex<double>(0, -1) * e;
            const complex<double> ds_dtb = ys * complex<double>(0, 1) * e;
            const RowVectorXd dp = ds_dva.real() * dvmag(a) +
                                   ds_dvb.real() * dvmag(bn) +
                                   ds_dta.real() * dtheta(a) +
                                   ds_dtb.real() * dtheta(bn);
            const RowVectorXd dq = ds_dva.imag() * dvmag(a) +
                                   ds_dvb.imag() * dvmag(bn) +
                                   ds_dta.imag() * dtheta(a) +
                                   ds_dtb.imag() * dtheta(bn);
            ev.dh.row(2 * m + side * nb + k) =
                -2.0 * s.real() * dp - 2.0 * s.imag() * dq;
            ev.dloss += dp.transpose();
        }
        const RowVectorXd dth = dtheta(up) - dtheta(dn);
        ev.dh.row(2 * m + 2 * nb + k) = -dth;
        ev.dh.row(2 * m + 3 * nb + k) = dth;
    }
    return ev;
}

DispatchResult result_from_activations(const Network& net, const TimestepInputs& in,
                                       const RdopfConfig& cfg,
                                       const std::vector<DispVar>& disp,
                                       const VectorXd& d, const NetworkState& st,
                                       const std::string& status) {
    DispatchResult res = blank_result(net, in.t);
    const double sb = net.bases().s_base_kva;
    for (int k = 0; k < d.size(); ++k) store_activation(res, disp[k], d(k), sb);
    res.losses_kwh = st.total_loss_kw * 0.25;
    res.status = status;
    res.sigma = recompute_sigma(in, res, cfg);
    snap_small_activations(net, res, in, cfg);
    return res;
}

}  // namespace

DispatchResult solve_ac_rdopf(const Network& net, const TimestepInputs& in,
                              const RdopfConfig& cfg) {
    cfg.validate();
    const std::vector<DispVar> disp = build_disp_vars(net, in, cfg);
    const int nd = static_cast<int>(disp.size());
    AcModel model(net, in, cfg, disp);
    const double e = kwh_per_pu(net);
    const double sb = net.bases().s_base_kva;

    DispatchResult soc;
    bool have_soc = false;
    try {
        soc = solve_soc_rdopf(net, in, cfg);
        have_soc = true;
    } catch (const InfeasibleError&) {
        throw;
    } catch (const Error&) {
    }
    const auto interior = [&](VectorXd d) {
        for (int k = 0; k < nd; ++k) {
            const double w = std::min(1e-6, 0.05 * (disp[k].hi - disp[k].lo));
            d(k) = std::clamp(d(k), disp[k].lo + w, disp[k].hi - w);
        }
        return d;
    };
    const auto soc_vector = [&]() {
        VectorXd d(nd);
        for (int k = 0; k < nd; ++k) d(k) = fetch_activation(soc, disp[k]) / sb;
        return d;
    };

    // Warm start from the SOC point; fall back to near-full curtailment,
    // which quiets the network and is strictly interior.
    std::vector<VectorXd> starts;
    if (have_soc) starts.push_back(interior(soc_vector()));
    {
        VectorXd d(nd);
        for (int k = 0; k < nd; ++k) {
            const DispVar& v = disp[k];
            if (v.kind == 4 || v.kind == 5)
                d(k) = v.lo + 0.98 * (v.hi - v.lo);
            else
                d(k) = v.kind == 0 || v.kind == 2 ? 0.02 * v.hi : 0.02 * v.lo;
        }
        starts.push_back(interior(d));
    }

    const auto fallback = [&]() -> DispatchResult {
        if (!have_soc)
            throw SolverError("AC dispatch failed with no SOC fallback");
        VectorXd d = soc_vector();
        for (int k = 0; k < nd; ++k) d(k) = std::clamp(d(k), disp[k].lo, disp[k].hi);
        NetworkState st = solve_power_flow(net, model.injections(d));
        DispatchResult res =
            result_from_activations(net, in, cfg, disp, d, st, "recovered");
        if (!verify_ac_feasibility(net, res, in, cfg).pass)
            throw SolverError("AC dispatch failed; SOC activations infeasible");
        return res;
    };

    VectorXd dcur;
    AcEval ev;
    bool started = false;
    for (const VectorXd& s : starts) {
        ev = model.evaluate(s, true);
        if (ev.ok) {
            dcur = s;
            started = true;
            break;
        }
    }
    if (!started) return fallback();

    VectorXd c(nd);
    for (int k = 0; k < nd; ++k) c(k) = disp[k].cost;
    const double loss_w = cfg.lambda_loss * e;
    const int n_ineq = static_cast<int>(ev.h.size()) + 2 * nd;
    const double gscale = std::max(1.0, c.lpNorm<Eigen::Infinity>());

    const auto phi_of = [&](const VectorXd& d, const AcEval& evx) {
        double phi = 0.0;
        for (int j = 0; j < evx.h.size(); ++j) phi -= std::log(evx.h(j));
        for (int k = 0; k < nd; ++k)
            phi -= std::log(d(k) - disp[k].lo) + std::log(disp[k].hi - d(k));
        return phi;
    };

    // Barrier path over t with damped Gauss-Newton centering on
    // merit(d) = sigma(d) + phi(d)/t.
    bool failed = false;
    for (double t = 16.0; static_cast<double>(n_ineq) / t >= 1e-7 && !failed;
         t *= 12.0) {
        double damp = 1e-8;
        double prev_gn = std::numeric_limits<double>::infinity();
        int stall = 0;
        for (int it = 0; it < 150; ++it) {
            VectorXd grad = c + loss_w * ev.dloss;
            MatrixXd hess = MatrixXd::Zero(nd, nd);
            for (int j = 0; j < ev.h.size(); ++j) {
                grad -= ev.dh.row(j).transpose() / (t * ev.h(j));
                hess.noalias() += ev.dh.row(j).transpose() * ev.dh.row(j) /
                                  (t * ev.h(j) * ev.h(j));
            }
            for (int k = 0; k < nd; ++k) {
                const double lo = dcur(k) - disp[k].lo, hi = disp[k].hi - dcur(k);
                grad(k) += (1.0 / hi - 1.0 / lo) / t;
                hess(k, k) += (1.0 / (lo * lo) + 1.0 / (hi * hi)) / t;
            }
            const double gn = grad.lpNorm<Eigen::Infinity>();
            if (gn < 1e-8 * gscale) break;
            stall = gn > 0.9 * prev_gn ? stall + 1 : 0;
            prev_gn = gn;
            if (stall >= 6) break;  // numerical floor for this t

            MatrixXd hd = hess;
            hd.diagonal().array() += damp;
            VectorXd step = hd.ldlt().solve(-grad);
            if (!step.allFinite()) {
                failed = true;
                break;
            }
            const double merit0 =
                c.dot(dcur) + loss_w * ev.loss_pu + phi_of(dcur, ev) / t;
            const double slope = grad.dot(step);
            double alpha = 1.0;
            bool accepted = false;
            for (int ls = 0; ls < 40 && !accepted; ++ls, alpha *= 0.5) {
                const VectorXd dn = dcur + alpha * step;
                bool inbox = true;
                for (int k = 0; k < nd && inbox; ++k)
                    inbox = dn(k) > disp[k].lo && dn(k) < disp[k].hi;
                if (!inbox) continue;
                const AcEval evn = model.evaluate(dn, false);
                if (!evn.ok) continue;
                const double mn =
                    c.dot(dn) + loss_w * evn.loss_pu + phi_of(dn, evn) / t;
                if (mn <= merit0 + 1e-4 * alpha * slope +
                              1e-12 * std::abs(merit0)) {
                    dcur = dn;
                    accepted = true;
                }
            }
            if (!accepted) {
                damp *= 10.0;
                if (damp > 1e8) break;
                continue;
            }
            damp = std::max(damp * 0.3, 1e-10);
            ev = model.evaluate(dcur, true);
            if (!ev.ok) {
                failed = true;
                break;
            }
        }
    }
    if (failed) return fallback();

    ev = model.evaluate(dcur, false);
    if (!ev.ok) return fallback();
    DispatchResult res =
        result_from_activations(net, in, cfg, disp, dcur, ev.state, "optimal");
    if (!verify_ac_feasibility(net, res, in, cfg).pass) return fallback();
    return res;
}

Injections dispatched_injections(const Network& net, const TimestepInputs& in,
                                 const DispatchResult& res) {
    const double sb = net.bases().s_base_kva;
    Injections inj(net.num_nodes());
    for (int i = 0; i < net.num_nodes(); ++i) {
        const double p = in.p_gen_kw[i] - res.gen_curt_kw(i) - in.p_load_kw[i] +
                         res.load_curt_kw(i) + res.dp_plus_kw(i) + res.dp_minus_kw(i);
        const double load_qp = in.p_load_kw[i] > 1e-12
                                   ? in.q_load_kvar[i] / in.p_load_kw[i]
                                   : 0.0;
        const double q = -in.q_load_kvar[i] + load_qp * res.load_curt_kw(i) +
                         res.dq_plus_kvar(i) + res.dq_minus_kvar(i);
        inj[i] = complex<double>(p / sb, q / sb);
    }
    return inj;
}

FeasibilityReport verify_ac_feasibility(const Network& net, const DispatchResult& res,
                                        const TimestepInputs& in,
                                        const RdopfConfig& cfg) {
    const Injections inj = dispatched_injections(net, in, res);
    FeasibilityReport rep;
    NetworkState st;
    try {
        st = solve_power_flow(net, inj);
    } catch (const DivergenceError& e) {
        rep.mismatch = e.last_mismatch;
        return rep;
    }
    for (double v : st.v_mag) {
        rep.max_v_upper_violation = std::max(rep.max_v_upper_violation, v - cfg.v_max);
        rep.max_v_lower_violation = std::max(rep.max_v_lower_violation, cfg.v_min - v);
    }
    for (double l : st.loading_pct)
        rep.max_loading_pct = std::max(rep.max_loading_pct, std::abs(l));
    rep.pass = rep.max_v_upper_violation <= 1e-6 &&
               rep.max_v_lower_violation <= 1e-6 &&
               rep.max_loading_pct <= 100.0 * (1.0 + 1e-6);
    return rep;
}

Eigen::VectorXd extract_power_balance_duals(const DispatchResult& res) {
    if (!res.duals_converged)
        throw SolverError("power-balance duals did not converge");
    return res.duals_p;
}

double recompute_sigma(const TimestepInputs& in, const DispatchResult& res,
                       const RdopfConfig& cfg) {
    double sigma = cfg.lambda_loss * res.losses_kwh;
    for (std::size_t i = 0; i < in.p_load_kw.size(); ++i) {
        sigma += 0.25 * (in.lam_p_plus[i] * res.dp_plus_kw(i) +
                         in.lam_p_minus[i] * res.dp_minus_kw(i) +
                         in.lam_q_plus[i] * res.dq_plus_kvar(i) +
                         in.lam_q_minus[i] * res.dq_minus_kvar(i) +
                         cfg.lambda_curt_load * res.load_curt_kw(i) +
                         cfg.lambda_curt_gen * res.gen_curt_kw(i));
    }
    return sigma;
}

std::string serialize_dispatch_csv(const Network& net,
                                   const std::vector<DispatchResult>& series) {
    std::string out =
        "t,node,dp_plus_kw,dp_minus_kw,dq_plus_kvar,dq_minus_kvar,"
        "load_curt_kw,gen_curt_kw,dual\n";
    char buf[256];
    for (std::size_t t = 0; t < series.size(); ++t) {
        const DispatchResult& r = series[t];
        for (int i = 0; i < net.num_nodes(); ++i) {
            std::snprintf(buf, sizeof(buf),
                          "%zu,%d,%.10g,%.10g,%.10g,%.10g,%.10g,%.10g,%.10g\n", t,
                          net.node(i).id, r.dp_plus_kw(i), r.dp_minus_kw(i),
                          r.dq_plus_kvar(i), r.dq_minus_kvar(i), r.load_curt_kw(i),
                          r.gen_curt_kw(i), r.duals_p(i));
            out += buf;
        }
    }
    return out;
}

}  // namespace dnflex
