#include "dnflex/fas.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>

namespace dnflex {

void FasConfig::validate() const {
    if (!(dv_perm > 0.0 && dv_perm < v_max - 1.0 && dv_perm < 1.0 - v_min))
        throw ValidationError("dv_perm must lie strictly inside both voltage margins");
    if (!(dt_perm > 0.0 && dt_perm < 100.0))
        throw ValidationError("dt_perm must lie in (0, 100)");
    if (kappa_v <= 0.0 || kappa_t <= 0.0)
        throw ValidationError("saturation scalings must be positive");
    if (kappa_v + kappa_t >= std::min(lambda_curt_gen, lambda_curt_load))
        throw ValidationError(
            "kappa_v + kappa_t must stay below the curtailment prices so "
            "curtailment is never cheaper than flexibility");
}

std::vector<double> project_loadings(const Network& net, const NetworkState& st) {
    std::vector<double> out(net.num_nodes(), 0.0);
    for (int i = 0; i < net.num_nodes(); ++i) {
        if (i == net.slack_index()) continue;
        double best = 0.0;
        for (int b : net.incident_branches(i))
            if (std::abs(st.loading_pct[b]) > std::abs(best)) best = st.loading_pct[b];
        out[i] = best;
    }
    return out;
}

SaturationLevels saturation_levels(const SensitivityTable& sens, const FasConfig& cfg) {
    cfg.validate();
    const int n = static_cast<int>(sens.psi.size());
    SaturationLevels lv;
    lv.vc_p.assign(n, 0.0);
    lv.tc_p.assign(n, 0.0);
    lv.vc_q.assign(n, 0.0);
    lv.tc_q.assign(n, 0.0);

    double psi_max = 0.0, beta_max = 0.0;
    for (int i = 0; i < n; ++i) {
        if (!std::isfinite(sens.psi[i]) || !std::isfinite(sens.beta[i]))
            throw EstimationError("non-finite sensitivity entry");
        psi_max = std::max(psi_max, sens.psi[i]);
        beta_max = std::max(beta_max, sens.beta[i]);
    }
    const double thermal_max = cfg.thermal_level_uses_beta ? beta_max : psi_max;
    for (int i = 0; i < n; ++i) {
        const double thermal = cfg.thermal_level_uses_beta ? sens.beta[i] : sens.psi[i];
        if (psi_max > 0.0) {
            lv.vc_p[i] = cfg.kappa_v * sens.psi[i] / psi_max;
            lv.vc_q[i] = cfg.kappa_v * sens.psi[i] / psi_max;
        }
        if (thermal_max > 0.0) {
            lv.tc_p[i] = cfg.kappa_t * thermal / thermal_max;
            lv.tc_q[i] = cfg.kappa_t * thermal / thermal_max;
        }
    }
    return lv;
}

namespace {

// Droop value in [0, 1]: zero at the inner threshold, one at the limit and
// beyond (saturation).
double droop(double value, double inner, double limit) {
    if (limit > inner) {
        if (value >= limit) return 1.0;
        if (value <= inner) return 0.0;
    } else {
        if (value <= limit) return 1.0;
        if (value >= inner) return 0.0;
    }
    return (value - inner) / (limit - inner);
}

}  // namespace

FasSignal compute_fas(const Network& net, const std::vector<NetworkState>& states,
                      const SaturationLevels& levels, const FasConfig& cfg) {
    cfg.validate();
    const int n = net.num_nodes();
    const int T = static_cast<int>(states.size());
    FasSignal fas;
    auto zeros = [&] { return std::vector<std::vector<double>>(T, std::vector<double>(n, 0.0)); };
    auto bits = [&] {
        return std::vector<std::vector<std::uint8_t>>(T, std::vector<std::uint8_t>(n, 0));
    };
    fas.lam_p_plus = zeros();
    fas.lam_p_minus = zeros();
    fas.lam_q_plus = zeros();
    fas.lam_q_minus = zeros();
    fas.z1 = bits();
    fas.z2 = bits();
    fas.z3 = bits();
    fas.z4 = bits();

    for (int t = 0; t < T; ++t) {
        const std::vector<double> loading = project_loadings(net, states[t]);
        for (int i = 0; i < n; ++i) {
            const double v = states[t].v_mag[i];
            const double tl = loading[i];

            // Voltage component: under-voltage opens the positive (net-load
            // reducing) channel, over-voltage the negative one.
            const double under = droop(v, 1.0 - cfg.dv_perm, cfg.v_min);
            const double over = droop(v, 1.0 + cfg.dv_perm, cfg.v_max);

            // Thermal component routed by loading sign: forward overload
            // wants less downstream load, reverse overload more.
            const double fwd = tl > 0.0 ? droop(tl, cfg.dt_perm, 100.0) : 0.0;
            const double rev = tl < 0.0 ? droop(-tl, cfg.dt_perm, 100.0) : 0.0;

            fas.lam_p_plus[t][i] = under * levels.vc_p[i] + fwd * levels.tc_p[i];
            fas.lam_p_minus[t][i] = -(over * levels.vc_p[i] + rev * levels.tc_p[i]);
            fas.lam_q_plus[t][i] = under * levels.vc_q[i] + fwd * levels.tc_q[i];
            fas.lam_q_minus[t][i] = -(over * levels.vc_q[i] + rev * levels.tc_q[i]);

            fas.z1[t][i] = fas.lam_p_plus[t][i] != 0.0;
            fas.z2[t][i] = fas.lam_p_minus[t][i] != 0.0;
            fas.z3[t][i] = fas.lam_q_plus[t][i] != 0.0;
            fas.z4[t][i] = fas.lam_q_minus[t][i] != 0.0;
        }
    }
    return fas;
}

FlexEnvelope raw_envelope_from_level(const Network& net, const Profiles& prof,
                                     double level_pct) {
    if (level_pct < 0.0) throw ValidationError("flexibility level must be nonnegative");
    const int n = net.num_nodes();
    const int T = prof.horizon;
    FlexEnvelope env;
    auto zeros = [&] { return std::vector<std::vector<double>>(T, std::vector<double>(n, 0.0)); };
    env.p_flex_max = zeros();
    env.p_flex_min = zeros();
    env.q_flex_max = zeros();
    env.q_flex_min = zeros();
    env.gen_cap = zeros();
    env.load_cap = zeros();
    const double frac = level_pct / 100.0;
    for (int t = 0; t < T; ++t) {
        for (int i = 0; i < n; ++i) {
            env.gen_cap[t][i] = prof.p_gen_kw[i][t];
            env.load_cap[t][i] = prof.p_load_kw[i][t];
            if (!net.node(i).has_flexibility) continue;
            env.p_flex_max[t][i] = frac * prof.p_load_kw[i][t];
            env.p_flex_min[t][i] = -frac * prof.p_load_kw[i][t];
            env.q_flex_max[t][i] = frac * std::abs(prof.q_load_kvar[i][t]);
            env.q_flex_min[t][i] = -frac * std::abs(prof.q_load_kvar[i][t]);
        }
    }
    return env;
}

FlexEnvelope gate_envelopes(const FasSignal& fas, const FlexEnvelope& raw,
                            const Network& net, const Profiles& prof) {
    const int n = net.num_nodes();
    const int T = prof.horizon;
    FlexEnvelope env = raw;
    for (int t = 0; t < T; ++t) {
        for (int i = 0; i < n; ++i) {
            if (raw.p_flex_max[t][i] < 0.0 || raw.p_flex_min[t][i] > 0.0 ||
                raw.q_flex_max[t][i] < 0.0 || raw.q_flex_min[t][i] > 0.0)
                throw ValidationError("raw envelope bounds have the wrong sign");
            env.p_flex_max[t][i] *= fas.z1[t][i];
            env.p_flex_min[t][i] *= fas.z2[t][i];
            env.q_flex_max[t][i] *= fas.z3[t][i];
            env.q_flex_min[t][i] *= fas.z4[t][i];
            env.gen_cap[t][i] = prof.p_gen_kw[i][t];
            env.load_cap[t][i] = prof.p_load_kw[i][t];
        }
    }
    return env;
}

std::string serialize_fas_csv(const Network& net, const FasSignal& fas) {
    std::string out = "t,node,lam_p_plus,lam_p_minus,lam_q_plus,lam_q_minus,z1,z2,z3,z4\n";
    char buf[200];
    for (int t = 0; t < fas.horizon(); ++t) {
        for (int i = 0; i < net.num_nodes(); ++i) {
            std::snprintf(buf, sizeof(buf), "%d,%d,%.10g,%.10g,%.10g,%.10g,%d,%d,%d,%d\n",
                          t, net.node(i).id, fas.lam_p_plus[t][i], fas.lam_p_minus[t][i],
                          fas.lam_q_plus[t][i], fas.lam_q_minus[t][i], fas.z1[t][i],
                          fas.z2[t][i], fas.z3[t][i], fas.z4[t][i]);
            out += buf;
        }
    }
    return out;
}

}  // namespace dnflex
