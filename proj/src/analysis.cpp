#include "dnflex/analysis.hpp"

#include <algorithm>
#include <cmath>
#include <cstdarg>
#include <cstdio>

#include <json.hpp>

#include "dnflex/barrier.hpp"

namespace dnflex {

using Eigen::MatrixXd;
using Eigen::VectorXd;

namespace {

void append_f(std::string& out, const char* fmt, ...) {
    char buf[512];
    va_list args;
    va_start(args, fmt);
    std::vsnprintf(buf, sizeof(buf), fmt, args);
    va_end(args);
    out += buf;
}

double activation_energy_kwh(const DispatchResult& r) {
    return 0.25 * (r.dp_plus_kw.cwiseAbs().sum() + r.dp_minus_kw.cwiseAbs().sum() +
                   r.load_curt_kw.sum() + r.gen_curt_kw.sum());
}

}  // namespace

double optimality_gap(double obj_ac, double obj_soc) {
    if (obj_ac == 0.0)
        throw AnalysisError("optimality gap undefined for zero AC objective");
    return (obj_ac - obj_soc) / obj_ac * 100.0;
}

HorizonRun run_horizon(const Network& net, const Profiles& prof,
                       const FasSignal& fas, const FlexEnvelope& env,
                       const RdopfConfig& cfg) {
    HorizonRun run;
    run.dispatch.reserve(prof.horizon);
    for (int t = 0; t < prof.horizon; ++t) {
        const TimestepInputs in = make_timestep_inputs(net, prof, fas, env, t);
        DispatchResult res;
        try {
            res = cfg.formulation == RdopfConfig::Formulation::Ac
                      ? solve_ac_rdopf(net, in, cfg)
                      : solve_soc_rdopf(net, in, cfg);
        } catch (const Error& e) {
            throw SolverError("t=" + std::to_string(t) + ": " + e.what());
        }
        run.objective += res.sigma;
        run.losses_kwh += res.losses_kwh;
        run.dispatch.push_back(std::move(res));
    }
    return run;
}

std::vector<double> default_lambda_grid() {
    const int n = 13;
    const double lo = std::log10(0.01), hi = std::log10(2.0);
    std::vector<double> grid(n);
    for (int k = 0; k < n; ++k)
        grid[k] = std::pow(10.0, lo + (hi - lo) * k / (n - 1));
    return grid;
}

ParetoCurve sweep_loss_penalty(const Network& net, const Profiles& prof,
                               const FasSignal& fas, const FlexEnvelope& env,
                               const RdopfConfig& base_cfg,
                               const std::vector<double>& lambda_grid) {
    if (lambda_grid.size() < 4)
        throw AnalysisError("loss-penalty grid needs at least 4 points");
    if (!std::is_sorted(lambda_grid.begin(), lambda_grid.end()) ||
        std::adjacent_find(lambda_grid.begin(), lambda_grid.end()) !=
            lambda_grid.end())
        throw AnalysisError("loss-penalty grid must be strictly increasing");

    ParetoCurve curve;
    int flagged = 0;
    for (double lam : lambda_grid) {
        ParetoPoint pt;
        pt.lambda_loss = lam;
        try {
            RdopfConfig cfg = base_cfg;
            cfg.lambda_loss = lam;
            cfg.formulation = RdopfConfig::Formulation::Soc;
            const HorizonRun soc = run_horizon(net, prof, fas, env, cfg);
            cfg.formulation = RdopfConfig::Formulation::Ac;
            const HorizonRun ac = run_horizon(net, prof, fas, env, cfg);
            pt.obj_soc = soc.objective;
            pt.obj_ac = ac.objective;
            for (const DispatchResult& r : soc.dispatch)
                pt.soc_gap_bound += r.gap_bound;
            pt.gap_pct =
                optimality_gap(ac.objective, soc.objective - pt.soc_gap_bound);
            pt.cost_loss = lam * soc.losses_kwh;
            for (const DispatchResult& r : soc.dispatch) {
                pt.ramp_up_kwh += 0.25 * r.dp_plus_kw.sum();
                pt.ramp_down_kwh += 0.25 * r.dp_minus_kw.cwiseAbs().sum();
                pt.load_curt_kwh += 0.25 * r.load_curt_kw.sum();
                pt.gen_curt_kwh += 0.25 * r.gen_curt_kw.sum();
            }
        } catch (const Error&) {
            pt.flagged = true;
            ++flagged;
        }
        curve.points.push_back(pt);
    }
    if (4 * flagged > static_cast<int>(lambda_grid.size()))
        throw AnalysisError("more than 25% of sweep points failed to solve");
    try {
        curve.knee = knee_point(curve);
    } catch (const AnalysisError&) {
        curve.knee.reset();
    }
    return curve;
}

int knee_index(const VectorXd& x, const VectorXd& y) {
    const int n = static_cast<int>(x.size());
    if (n < 4 || y.size() != n)
        throw AnalysisError("knee detection needs at least 4 points");
    const double xr = x.maxCoeff() - x.minCoeff();
    const double yr = y.maxCoeff() - y.minCoeff();
    if (xr <= 0.0 || yr <= 0.0)
        throw AnalysisError("knee detection: degenerate axis range");
    const VectorXd xn = (x.array() - x.minCoeff()) / xr;
    const VectorXd yn = (y.array() - y.minCoeff()) / yr;
    // Distance from the chord between the normalized endpoints.
    const double dx = xn(n - 1) - xn(0), dy = yn(n - 1) - yn(0);
    const double len = std::hypot(dx, dy);
    int best = -1;
    double best_dist = 0.0;
    for (int k = 0; k < n; ++k) {
        const double dist =
            std::abs(dx * (yn(k) - yn(0)) - dy * (xn(k) - xn(0))) / len;
        if (dist > best_dist) {
            best_dist = dist;
            best = k;
        }
    }
    if (best < 0 || best_dist < 1e-6)
        throw AnalysisError("curve is affine: no knee point");
    return best;
}

double knee_point(const ParetoCurve& curve) {
    std::vector<const ParetoPoint*> valid;
    for (const ParetoPoint& p : curve.points)
        if (!p.flagged) valid.push_back(&p);
    const int n = static_cast<int>(valid.size());
    if (n < 4) throw AnalysisError("knee detection needs at least 4 valid points");
    VectorXd x(n), y(n);
    for (int k = 0; k < n; ++k) {
        x(k) = valid[k]->cost_loss;
        y(k) = valid[k]->gap_pct;
    }
    return valid[knee_index(x, y)]->lambda_loss;
}

NeedsMatrix make_needs_matrix(const MatrixXd& kwh) {
    NeedsMatrix m;
    m.kwh = kwh;
    m.temporal = kwh.colwise().sum();
    m.locational = kwh.rowwise().sum();
    m.cumulative_kwh = kwh.sum();
    m.peak_kw = kwh.size() > 0 ? kwh.maxCoeff() / 0.25 : 0.0;
    return m;
}

Compliance compliance_stats(const Network& net,
                            const std::vector<NetworkState>& states,
                            const FasConfig& cfg) {
    Compliance c;
    // A state whose voltage sits on a limit to within the dispatch
    // feasibility tolerance is compliant, not a violation; without the
    // tolerance, boundary-tight optima would be miscounted on floating-point
    // round-off alone.
    constexpr double kTol = 1e-6;
    long v_samples = 0, v_hi = 0, v_lo = 0, v_perm = 0;
    long l_samples = 0, l_100 = 0, l_75 = 0;
    for (const NetworkState& st : states) {
        for (int i = 0; i < net.num_nodes(); ++i) {
            if (i == net.slack_index()) continue;
            ++v_samples;
            if (st.v_mag[i] > cfg.v_max + kTol) ++v_hi;
            if (st.v_mag[i] < cfg.v_min - kTol) ++v_lo;
            if (st.v_mag[i] > 1.0 + cfg.dv_perm + kTol ||
                st.v_mag[i] < 1.0 - cfg.dv_perm - kTol)
                ++v_perm;
        }
        for (double l : st.loading_pct) {
            ++l_samples;
            if (std::abs(l) >= 100.0 * (1.0 + kTol)) ++l_100;
            if (std::abs(l) > cfg.dt_perm * (1.0 + kTol)) ++l_75;
        }
    }
    if (v_samples > 0) {
        c.pct_v_above_max = 100.0 * v_hi / v_samples;
        c.pct_v_below_min = 100.0 * v_lo / v_samples;
        c.pct_v_outside_perm = 100.0 * v_perm / v_samples;
    }
    if (l_samples > 0) {
        c.pct_loading_ge_100 = 100.0 * l_100 / l_samples;
        c.pct_loading_gt_75 = 100.0 * l_75 / l_samples;
    }
    return c;
}

AssessmentReport needs_assessment(const Network& net,
                                  const std::vector<DispatchResult>& dispatch,
                                  const std::vector<NetworkState>& states,
                                  const FasConfig& cfg) {
    const int n = net.num_nodes();
    const int t_len = static_cast<int>(dispatch.size());
    if (states.size() != dispatch.size())
        throw ValidationError("dispatch and state series lengths differ");
    MatrixXd r_up(n, t_len), r_down(n, t_len), c_load(n, t_len), c_gen(n, t_len);
    for (int t = 0; t < t_len; ++t) {
        const DispatchResult& r = dispatch[t];
        if (r.dp_plus_kw.size() != n)
            throw ValidationError("dispatch dimension does not match network");
        r_up.col(t) = 0.25 * r.dp_plus_kw;
        r_down.col(t) = 0.25 * r.dp_minus_kw.cwiseAbs();
        c_load.col(t) = 0.25 * r.load_curt_kw;
        c_gen.col(t) = 0.25 * r.gen_curt_kw;
    }
    AssessmentReport rep;
    rep.r_up = make_needs_matrix(r_up);
    rep.r_down = make_needs_matrix(r_down);
    rep.c_load = make_needs_matrix(c_load);
    rep.c_gen = make_needs_matrix(c_gen);
    rep.compliance = compliance_stats(net, states, cfg);
    for (const NetworkState& st : states) rep.losses_kwh += st.total_loss_kw * 0.25;
    return rep;
}

ReactiveImpact reactive_impact(const Network& net, const Profiles& prof,
                               const SensitivityTable& sens, const FasConfig& fcfg,
                               const RdopfConfig& rcfg,
                               const std::vector<double>& pf_set,
                               const std::vector<double>& flex_levels) {
    for (double pf : pf_set)
        if (!(pf > 0.0 && pf <= 1.0))
            throw ValidationError("power factors must lie in (0, 1]");
    const SaturationLevels levels = saturation_levels(sens, fcfg);

    ReactiveImpact out;
    for (double pf : pf_set) {
        Profiles p = prof;
        const double tan_phi = std::tan(std::acos(pf));
        for (std::size_t i = 0; i < p.q_load_kvar.size(); ++i)
            for (int t = 0; t < p.horizon; ++t)
                p.q_load_kvar[i][t] = p.p_load_kw[i][t] * tan_phi;

        const std::vector<NetworkState> states = simulate_horizon(net, p);
        const FasSignal fas = compute_fas(net, states, levels, fcfg);

        for (double level : flex_levels) {
            const FlexEnvelope raw = raw_envelope_from_level(net, p, level);
            FlexEnvelope raw_noq = raw;
            for (auto& row : raw_noq.q_flex_max) std::fill(row.begin(), row.end(), 0.0);
            for (auto& row : raw_noq.q_flex_min) std::fill(row.begin(), row.end(), 0.0);

            ReactiveCell cell;
            cell.pf = pf;
            cell.flex_level_pct = level;
            const HorizonRun no_q =
                run_horizon(net, p, fas, gate_envelopes(fas, raw_noq, net, p), rcfg);
            const HorizonRun with_q =
                run_horizon(net, p, fas, gate_envelopes(fas, raw, net, p), rcfg);
            for (const DispatchResult& r : no_q.dispatch)
                cell.x_noq_kwh += activation_energy_kwh(r);
            for (const DispatchResult& r : with_q.dispatch)
                cell.y_q_kwh += activation_energy_kwh(r);
            cell.obj_noq = no_q.objective;
            cell.obj_withq = with_q.objective;
            if (cell.x_noq_kwh > 0.0 && cell.obj_noq > 0.0) {
                cell.defined = true;
                cell.p_reduction_pct =
                    (cell.x_noq_kwh - cell.y_q_kwh) / cell.x_noq_kwh * 100.0;
                cell.profit_reactive_pct =
                    (cell.obj_noq - cell.obj_withq) / cell.obj_noq * 100.0;
            }
            out.cells.push_back(cell);
        }
    }
    return out;
}

std::string serialize_pareto_csv(const ParetoCurve& curve) {
    std::string out =
        "lambda_loss,obj_soc,obj_ac,soc_gap_bound,gap_pct,cost_loss,ramp_up_kwh,"
        "ramp_down_kwh,load_curt_kwh,gen_curt_kwh,flagged,knee\n";
    for (const ParetoPoint& p : curve.points) {
        const bool is_knee =
            curve.knee.has_value() && *curve.knee == p.lambda_loss && !p.flagged;
        append_f(out,
                 "%.10g,%.10g,%.10g,%.10g,%.10g,%.10g,%.10g,%.10g,%.10g,%.10g,%d,"
                 "%d\n",
                 p.lambda_loss, p.obj_soc, p.obj_ac, p.soc_gap_bound, p.gap_pct,
                 p.cost_loss,
                 p.ramp_up_kwh, p.ramp_down_kwh, p.load_curt_kwh, p.gen_curt_kwh,
                 p.flagged ? 1 : 0, is_knee ? 1 : 0);
    }
    return out;
}

std::string serialize_heatmap_csv(const Network& net, const NeedsMatrix& m) {
    std::string out = "node";
    for (int t = 0; t < m.kwh.cols(); ++t) append_f(out, ",t%d", t);
    out += "\n";
    for (int i = 0; i < m.kwh.rows(); ++i) {
        append_f(out, "%d", net.node(i).id);
        for (int t = 0; t < m.kwh.cols(); ++t) append_f(out, ",%.10g", m.kwh(i, t));
        out += "\n";
    }
    return out;
}

std::string serialize_reactive_csv(const ReactiveImpact& r) {
    std::string out =
        "pf,flex_level_pct,x_noq_kwh,y_q_kwh,obj_noq,obj_withq,"
        "p_reduction_pct,profit_reactive_pct,defined\n";
    for (const ReactiveCell& c : r.cells)
        append_f(out, "%.10g,%.10g,%.10g,%.10g,%.10g,%.10g,%.10g,%.10g,%d\n", c.pf,
                 c.flex_level_pct, c.x_noq_kwh, c.y_q_kwh, c.obj_noq, c.obj_withq,
                 c.p_reduction_pct, c.profit_reactive_pct, c.defined ? 1 : 0);
    return out;
}

std::string serialize_fas_vs_duals_csv(const Network& net, const FasSignal& fas,
                                       const std::vector<DispatchResult>& dispatch) {
    std::string out = "t,node,fas_abs_max,dual_p\n";
    for (std::size_t t = 0; t < dispatch.size(); ++t) {
        for (int i = 0; i < net.num_nodes(); ++i) {
            const double fmax = std::max(
                std::max(std::abs(fas.lam_p_plus[t][i]), std::abs(fas.lam_p_minus[t][i])),
                std::max(std::abs(fas.lam_q_plus[t][i]), std::abs(fas.lam_q_minus[t][i])));
            append_f(out, "%zu,%d,%.10g,%.10g\n", t, net.node(i).id, fmax,
                     dispatch[t].duals_p(i));
        }
    }
    return out;
}

std::string serialize_assessment_json(const Network& net,
                                      const AssessmentReport& rep) {
    nlohmann::json j;
    const auto matrix_json = [](const NeedsMatrix& m) {
        nlohmann::json mj;
        mj["cumulative_kwh"] = m.cumulative_kwh;
        mj["peak_kw"] = m.peak_kw;
        mj["temporal_kwh"] =
            std::vector<double>(m.temporal.data(), m.temporal.data() + m.temporal.size());
        mj["locational_kwh"] = std::vector<double>(
            m.locational.data(), m.locational.data() + m.locational.size());
        return mj;
    };
    j["r_up"] = matrix_json(rep.r_up);
    j["r_down"] = matrix_json(rep.r_down);
    j["c_load"] = matrix_json(rep.c_load);
    j["c_gen"] = matrix_json(rep.c_gen);
    j["compliance"] = {{"pct_v_above_max", rep.compliance.pct_v_above_max},
                       {"pct_v_below_min", rep.compliance.pct_v_below_min},
                       {"pct_v_outside_perm", rep.compliance.pct_v_outside_perm},
                       {"pct_loading_ge_100", rep.compliance.pct_loading_ge_100},
                       {"pct_loading_gt_75", rep.compliance.pct_loading_gt_75}};
    j["losses_kwh"] = rep.losses_kwh;
    std::vector<int> ids;
    for (const Node& nd : net.nodes()) ids.push_back(nd.id);
    j["node_ids"] = ids;
    return j.dump(2) + "\n";
}

}  // namespace dnflex
