#include "dnflex/scenario.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>

#include <json.hpp>

#include "dnflex/barrier.hpp"
#include "dnflex/powerflow.hpp"
#include "dnflex/sensitivity.hpp"

namespace dnflex {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr const char* kVersion = "dnflex 1.0.0";

std::string fnv1a_hex(const std::string& s) {
    std::uint64_t h = 14695981039346656037ULL;
    for (unsigned char c : s) {
        h ^= c;
        h *= 1099511628211ULL;
    }
    char buf[20];
    std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
    return buf;
}

// Writes artifacts under ".partial" names; finalize() strips the suffix once
// the whole run has succeeded.
class ArtifactWriter {
  public:
    explicit ArtifactWriter(fs::path dir) : dir_(std::move(dir)) {
        fs::create_directories(dir_);
    }

    void write(const std::string& name, const std::string& content) {
        const fs::path tmp = dir_ / (name + ".partial");
        std::ofstream out(tmp, std::ios::binary);
        if (!out) throw Error("cannot write artifact: " + tmp.string());
        out << content;
        out.close();
        names_.push_back(name);
    }

    void finalize() {
        for (const std::string& name : names_)
            fs::rename(dir_ / (name + ".partial"), dir_ / name);
    }

    const std::vector<std::string>& names() const { return names_; }

  private:
    fs::path dir_;
    std::vector<std::string> names_;
};

std::string flex_tag(double level) {
    char buf[32];
    if (level == std::floor(level))
        std::snprintf(buf, sizeof(buf), "%d", static_cast<int>(level));
    else
        std::snprintf(buf, sizeof(buf), "%g", level);
    return buf;
}

std::string states_nodes_csv(const Network& net,
                             const std::vector<NetworkState>& states) {
    std::string out = "t,node,v_mag,v_ang\n";
    char buf[128];
    for (const NetworkState& st : states)
        for (int i = 0; i < net.num_nodes(); ++i) {
            std::snprintf(buf, sizeof(buf), "%d,%d,%.10g,%.10g\n", st.t,
                          net.node(i).id, st.v_mag[i], st.v_ang[i]);
            out += buf;
        }
    return out;
}

std::string states_branches_csv(const Network& net,
                                const std::vector<NetworkState>& states) {
    std::string out = "t,from,to,p_pu,q_pu,loading_pct,loss_kw\n";
    char buf[160];
    for (const NetworkState& st : states)
        for (int k = 0; k < net.num_branches(); ++k) {
            std::snprintf(buf, sizeof(buf), "%d,%d,%d,%.10g,%.10g,%.10g,%.10g\n",
                          st.t, net.branch(k).from, net.branch(k).to,
                          st.flow_fwd[k].real(), st.flow_fwd[k].imag(),
                          st.loading_pct[k], st.branch_loss_kw[k]);
            out += buf;
        }
    return out;
}

std::vector<NetworkState> post_dispatch_states(const Network& net,
                                               const Profiles& prof,
                                               const FasSignal& fas,
                                               const FlexEnvelope& env,
                                               const HorizonRun& run) {
    std::vector<NetworkState> states;
    states.reserve(run.dispatch.size());
    for (std::size_t t = 0; t < run.dispatch.size(); ++t) {
        const TimestepInputs in =
            make_timestep_inputs(net, prof, fas, env, static_cast<int>(t));
        NetworkState st =
            solve_power_flow(net, dispatched_injections(net, in, run.dispatch[t]));
        st.t = static_cast<int>(t);
        states.push_back(std::move(st));
    }
    return states;
}

void read_fas_config(const json& j, FasConfig& cfg) {
    for (const auto& [key, val] : j.items()) {
        if (key == "v_min") cfg.v_min = val.get<double>();
        else if (key == "v_max") cfg.v_max = val.get<double>();
        else if (key == "dv_perm") cfg.dv_perm = val.get<double>();
        else if (key == "dt_perm") cfg.dt_perm = val.get<double>();
        else if (key == "kappa_v") cfg.kappa_v = val.get<double>();
        else if (key == "kappa_t") cfg.kappa_t = val.get<double>();
        else if (key == "lambda_curt_gen") cfg.lambda_curt_gen = val.get<double>();
        else if (key == "lambda_curt_load") cfg.lambda_curt_load = val.get<double>();
        else if (key == "thermal_level_uses_beta")
            cfg.thermal_level_uses_beta = val.get<bool>();
        else throw ParseError("unknown fas config key: " + key);
    }
}

void read_rdopf_config(const json& j, RdopfConfig& cfg) {
    for (const auto& [key, val] : j.items()) {
        if (key == "lambda_loss") cfg.lambda_loss = val.get<double>();
        else if (key == "lambda_curt_gen") cfg.lambda_curt_gen = val.get<double>();
        else if (key == "lambda_curt_load") cfg.lambda_curt_load = val.get<double>();
        else if (key == "v_min") cfg.v_min = val.get<double>();
        else if (key == "v_max") cfg.v_max = val.get<double>();
        else if (key == "slack_p_max_pu") cfg.slack_p_max_pu = val.get<double>();
        else if (key == "slack_q_max_pu") cfg.slack_q_max_pu = val.get<double>();
        else if (key == "kkt_tol") cfg.kkt_tol = val.get<double>();
        else if (key == "cone_tol") cfg.cone_tol = val.get<double>();
        else if (key == "formulation") {
            const std::string f = val.get<std::string>();
            if (f == "soc") cfg.formulation = RdopfConfig::Formulation::Soc;
            else if (f == "ac") cfg.formulation = RdopfConfig::Formulation::Ac;
            else throw ParseError("unknown rdopf formulation: " + f);
        } else {
            throw ParseError("unknown rdopf config key: " + key);
        }
    }
}

}  // namespace

RunMode parse_run_mode(const std::string& s) {
    if (s == "dispatch") return RunMode::Dispatch;
    if (s == "pareto-sweep") return RunMode::ParetoSweep;
    if (s == "needs-assessment") return RunMode::NeedsAssessment;
    if (s == "reactive-study") return RunMode::ReactiveStudy;
    if (s == "fas-only") return RunMode::FasOnly;
    if (s == "twin-only") return RunMode::TwinOnly;
    throw ParseError("unknown run mode: " + s);
}

std::string run_mode_name(RunMode m) {
    switch (m) {
        case RunMode::Dispatch: return "dispatch";
        case RunMode::ParetoSweep: return "pareto-sweep";
        case RunMode::NeedsAssessment: return "needs-assessment";
        case RunMode::ReactiveStudy: return "reactive-study";
        case RunMode::FasOnly: return "fas-only";
        case RunMode::TwinOnly: return "twin-only";
    }
    throw ParseError("invalid run mode value");
}

ScenarioConfig parse_scenario_config(const std::string& json_text) {
    json j;
    try {
        j = json::parse(json_text);
    } catch (const json::exception& e) {
        throw ParseError(std::string("config is not valid JSON: ") + e.what());
    }
    ScenarioConfig cfg;
    for (const auto& [key, val] : j.items()) {
        if (key == "network") cfg.network_path = val.get<std::string>();
        else if (key == "profiles") cfg.profiles_path = val.get<std::string>();
        else if (key == "seed") cfg.seed = val.get<std::uint64_t>();
        else if (key == "load_scale") cfg.load_scale = val.get<double>();
        else if (key == "horizon") cfg.horizon = val.get<int>();
        else if (key == "power_factor") cfg.power_factor = val.get<double>();
        else if (key == "mode") cfg.mode = parse_run_mode(val.get<std::string>());
        else if (key == "flex_levels") cfg.flex_levels = val.get<std::vector<double>>();
        else if (key == "pf_set") cfg.pf_set = val.get<std::vector<double>>();
        else if (key == "lambda_grid") cfg.lambda_grid = val.get<std::vector<double>>();
        else if (key == "nvs_scenarios") cfg.nvs_scenarios = val.get<int>();
        else if (key == "nvs_delta_kw") cfg.nvs_delta_kw = val.get<double>();
        else if (key == "out_dir") cfg.out_dir = val.get<std::string>();
        else if (key == "fas") read_fas_config(val, cfg.fas);
        else if (key == "rdopf") read_rdopf_config(val, cfg.rdopf);
        else throw ParseError("unknown config key: " + key);
    }
    if (cfg.horizon <= 0) throw ParseError("horizon must be positive");
    if (cfg.flex_levels.empty()) throw ParseError("flex_levels must be nonempty");
    return cfg;
}

std::string serialize_scenario_config(const ScenarioConfig& cfg) {
    json j;
    j["network"] = cfg.network_path;
    if (!cfg.profiles_path.empty()) j["profiles"] = cfg.profiles_path;
    j["seed"] = cfg.seed;
    j["load_scale"] = cfg.load_scale;
    j["horizon"] = cfg.horizon;
    j["power_factor"] = cfg.power_factor;
    j["mode"] = run_mode_name(cfg.mode);
    j["flex_levels"] = cfg.flex_levels;
    j["pf_set"] = cfg.pf_set;
    j["lambda_grid"] =
        cfg.lambda_grid.empty() ? default_lambda_grid() : cfg.lambda_grid;
    j["nvs_scenarios"] = cfg.nvs_scenarios;
    j["nvs_delta_kw"] = cfg.nvs_delta_kw;
    j["out_dir"] = cfg.out_dir;
    j["fas"] = {{"v_min", cfg.fas.v_min},
                {"v_max", cfg.fas.v_max},
                {"dv_perm", cfg.fas.dv_perm},
                {"dt_perm", cfg.fas.dt_perm},
                {"kappa_v", cfg.fas.kappa_v},
                {"kappa_t", cfg.fas.kappa_t},
                {"lambda_curt_gen", cfg.fas.lambda_curt_gen},
                {"lambda_curt_load", cfg.fas.lambda_curt_load},
                {"thermal_level_uses_beta", cfg.fas.thermal_level_uses_beta}};
    j["rdopf"] = {
        {"lambda_loss", cfg.rdopf.lambda_loss},
        {"lambda_curt_gen", cfg.rdopf.lambda_curt_gen},
        {"lambda_curt_load", cfg.rdopf.lambda_curt_load},
        {"v_min", cfg.rdopf.v_min},
        {"v_max", cfg.rdopf.v_max},
        {"slack_p_max_pu", cfg.rdopf.slack_p_max_pu},
        {"slack_q_max_pu", cfg.rdopf.slack_q_max_pu},
        {"kkt_tol", cfg.rdopf.kkt_tol},
        {"cone_tol", cfg.rdopf.cone_tol},
        {"formulation",
         cfg.rdopf.formulation == RdopfConfig::Formulation::Ac ? "ac" : "soc"}};
    return j.dump(2) + "\n";
}

RunManifest run_scenario(const ScenarioConfig& cfg) {
    const auto t_start = std::chrono::steady_clock::now();
    RunManifest man;
    man.mode = run_mode_name(cfg.mode);
    man.seed = cfg.seed;
    {
        // The hash identifies the inputs; where the artifacts land is not one.
        ScenarioConfig hashed = cfg;
        hashed.out_dir.clear();
        man.inputs_hash = fnv1a_hex(serialize_scenario_config(hashed));
    }
    man.version = kVersion;

    ArtifactWriter writer{fs::path(cfg.out_dir)};
    const auto finish = [&](bool ok, const std::string& error) {
        man.ok = ok;
        man.error = error;
        man.wall_time_s =
            std::chrono::duration<double>(std::chrono::steady_clock::now() - t_start)
                .count();
        if (ok) {
            writer.finalize();
            man.files = writer.names();
        }
        json j;
        j["ok"] = man.ok;
        j["mode"] = man.mode;
        j["stage"] = man.stage;
        j["error"] = man.error;
        j["wall_time_s"] = man.wall_time_s;
        j["seed"] = man.seed;
        j["inputs_hash"] = man.inputs_hash;
        j["version"] = man.version;
        j["files"] = man.files;
        std::ofstream out(fs::path(cfg.out_dir) / "manifest.json", std::ios::binary);
        out << j.dump(2) + "\n";
        return man;
    };

    try {
        man.stage = "parse";
        cfg.fas.validate();
        cfg.rdopf.validate();
        const Network net = cfg.network_path == "builtin"
                                ? builtin_test_feeder()
                                : parse_network(cfg.network_path);
        const Profiles prof =
            cfg.profiles_path.empty()
                ? synth_profiles(net, cfg.seed, cfg.load_scale, cfg.horizon,
                                 cfg.power_factor)
                : parse_profiles_csv(cfg.profiles_path, net);

        man.stage = "twin";
        const std::vector<NetworkState> states = simulate_horizon(net, prof);
        writer.write("states_nodes.csv", states_nodes_csv(net, states));
        writer.write("states_branches.csv", states_branches_csv(net, states));
        if (cfg.mode == RunMode::TwinOnly) return finish(true, "");

        man.stage = "sensitivity";
        const SensitivityTable sens = estimate_nvs(
            net, nominal_sampler(net, prof, cfg.seed), cfg.nvs_scenarios,
            cfg.nvs_delta_kw);
        writer.write("sensitivity.csv", serialize_sensitivity_csv(net, sens));

        man.stage = "fas";
        const SaturationLevels levels = saturation_levels(sens, cfg.fas);
        const FasSignal fas = compute_fas(net, states, levels, cfg.fas);
        writer.write("fas.csv", serialize_fas_csv(net, fas));
        if (cfg.mode == RunMode::FasOnly) return finish(true, "");

        if (cfg.mode == RunMode::Dispatch) {
            man.stage = "dispatch";
            const double level = cfg.flex_levels.front();
            const FlexEnvelope env = gate_envelopes(
                fas, raw_envelope_from_level(net, prof, level), net, prof);
            const HorizonRun run = run_horizon(net, prof, fas, env, cfg.rdopf);
            writer.write("dispatch.csv", serialize_dispatch_csv(net, run.dispatch));

            // Duals come from the convex relaxation regardless of the
            // dispatch formulation.
            HorizonRun dual_run = run;
            if (cfg.rdopf.formulation != RdopfConfig::Formulation::Soc) {
                RdopfConfig soc_cfg = cfg.rdopf;
                soc_cfg.formulation = RdopfConfig::Formulation::Soc;
                dual_run = run_horizon(net, prof, fas, env, soc_cfg);
            }
            writer.write("fas_vs_duals.csv",
                         serialize_fas_vs_duals_csv(net, fas, dual_run.dispatch));

            man.stage = "verify";
            const std::vector<NetworkState> post =
                post_dispatch_states(net, prof, fas, env, run);

            man.stage = "analysis";
            const AssessmentReport rep =
                needs_assessment(net, run.dispatch, post, cfg.fas);
            writer.write("assessment.json", serialize_assessment_json(net, rep));
            writer.write("heatmap_r_up.csv", serialize_heatmap_csv(net, rep.r_up));
            writer.write("heatmap_r_down.csv", serialize_heatmap_csv(net, rep.r_down));
            writer.write("heatmap_c_load.csv", serialize_heatmap_csv(net, rep.c_load));
            writer.write("heatmap_c_gen.csv", serialize_heatmap_csv(net, rep.c_gen));
            return finish(true, "");
        }

        if (cfg.mode == RunMode::NeedsAssessment) {
            std::string summary =
                "flex_level_pct,objective,ramp_up_kwh,ramp_down_kwh,load_curt_kwh,"
                "gen_curt_kwh,losses_kwh,pct_v_above_max,pct_v_below_min,"
                "pct_loading_ge_100\n";
            for (double level : cfg.flex_levels) {
                man.stage = "dispatch flex=" + flex_tag(level);
                const FlexEnvelope env = gate_envelopes(
                    fas, raw_envelope_from_level(net, prof, level), net, prof);
                const HorizonRun run = run_horizon(net, prof, fas, env, cfg.rdopf);
                const std::vector<NetworkState> post =
                    post_dispatch_states(net, prof, fas, env, run);
                const AssessmentReport rep =
                    needs_assessment(net, run.dispatch, post, cfg.fas);
                const std::string tag = flex_tag(level);
                writer.write("dispatch_flex" + tag + ".csv",
                             serialize_dispatch_csv(net, run.dispatch));
                writer.write("assessment_flex" + tag + ".json",
                             serialize_assessment_json(net, rep));
                char buf[320];
                std::snprintf(buf, sizeof(buf),
                              "%s,%.10g,%.10g,%.10g,%.10g,%.10g,%.10g,%.10g,%.10g,"
                              "%.10g\n",
                              tag.c_str(), run.objective, rep.r_up.cumulative_kwh,
                              rep.r_down.cumulative_kwh, rep.c_load.cumulative_kwh,
                              rep.c_gen.cumulative_kwh, rep.losses_kwh,
                              rep.compliance.pct_v_above_max,
                              rep.compliance.pct_v_below_min,
                              rep.compliance.pct_loading_ge_100);
                summary += buf;
            }
            man.stage = "analysis";
            writer.write("needs_summary.csv", summary);
            return finish(true, "");
        }

        if (cfg.mode == RunMode::ParetoSweep) {
            man.stage = "sweep";
            const double level = cfg.flex_levels.front();
            const FlexEnvelope env = gate_envelopes(
                fas, raw_envelope_from_level(net, prof, level), net, prof);
            const std::vector<double> grid =
                cfg.lambda_grid.empty() ? default_lambda_grid() : cfg.lambda_grid;
            const ParetoCurve curve =
                sweep_loss_penalty(net, prof, fas, env, cfg.rdopf, grid);
            writer.write("pareto.csv", serialize_pareto_csv(curve));
            return finish(true, "");
        }

        // Reactive study. The convex formulation keeps the with-Q objective
        // a guaranteed improvement over the no-Q one.
        man.stage = "reactive";
        RdopfConfig soc_cfg = cfg.rdopf;
        soc_cfg.formulation = RdopfConfig::Formulation::Soc;
        const ReactiveImpact impact = reactive_impact(
            net, prof, sens, cfg.fas, soc_cfg, cfg.pf_set, cfg.flex_levels);
        writer.write("reactive.csv", serialize_reactive_csv(impact));
        return finish(true, "");
    } catch (const Error& e) {
        return finish(false, e.what());
    }
}

}  // namespace dnflex
