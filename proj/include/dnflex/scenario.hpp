#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "dnflex/analysis.hpp"
#include "dnflex/fas.hpp"
#include "dnflex/network.hpp"
#include "dnflex/rdopf.hpp"

namespace dnflex {

enum class RunMode {
    Dispatch,
    ParetoSweep,
    NeedsAssessment,
    ReactiveStudy,
    FasOnly,
    TwinOnly,
};

RunMode parse_run_mode(const std::string& s);
std::string run_mode_name(RunMode m);

// End-to-end scenario description. Defaults reproduce the built-in feeder
// study; any field can be overridden from the JSON config or CLI flags.
struct ScenarioConfig {
    std::string network_path = "builtin";   // file path or "builtin"
    std::string profiles_path;              // empty => synthesize
    std::uint64_t seed = 1;
    double load_scale = 1.5;
    int horizon = 96;
    double power_factor = 0.98;

    FasConfig fas;
    // Dispatch defaults to the nonlinear formulation so post-dispatch
    // compliance is verified against full AC power flows.
    RdopfConfig rdopf = [] {
        RdopfConfig c;
        c.formulation = RdopfConfig::Formulation::Ac;
        return c;
    }();

    RunMode mode = RunMode::Dispatch;
    std::vector<double> flex_levels = {0.0, 25.0, 50.0, 75.0, 100.0};
    std::vector<double> pf_set = {0.98, 0.95, 0.90, 0.85, 0.80};
    std::vector<double> lambda_grid;        // empty => default grid
    int nvs_scenarios = 100;
    double nvs_delta_kw = 1.0;

    std::string out_dir = "out";
};

ScenarioConfig parse_scenario_config(const std::string& json_text);
std::string serialize_scenario_config(const ScenarioConfig& cfg);

struct RunManifest {
    bool ok = false;
    std::string mode;
    std::string stage;        // last stage entered
    std::string error;        // empty on success
    double wall_time_s = 0.0;
    std::uint64_t seed = 0;
    std::string inputs_hash;  // hash of the effective config
    std::string version;
    std::vector<std::string> files;  // artifacts written (relative names)
};

// Orchestrates twin -> NVS -> FAS -> RDOPF -> analysis per the configured
// mode, writing the artifact bundle plus manifest.json into cfg.out_dir.
// On a stage failure the manifest records the stage and cause and artifacts
// already produced keep a ".partial" suffix.
RunManifest run_scenario(const ScenarioConfig& cfg);

}  // namespace dnflex
