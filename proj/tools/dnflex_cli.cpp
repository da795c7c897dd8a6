#include <cstdio>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "dnflex/analysis.hpp"
#include "dnflex/barrier.hpp"
#include "dnflex/scenario.hpp"

namespace {

// Exit codes: 0 success, 2 usage/config, 3 input parse, 4 solve,
// 5 verification, 6 analysis, 1 anything else.
constexpr int kExitUsage = 2;
constexpr int kExitParse = 3;
constexpr int kExitSolve = 4;
constexpr int kExitVerify = 5;
constexpr int kExitAnalysis = 6;

std::vector<double> parse_csv_list(const std::string& s) {
    std::vector<double> out;
    std::stringstream ss(s);
    std::string item;
    while (std::getline(ss, item, ',')) {
        if (item.empty()) continue;
        out.push_back(std::stod(item));
    }
    return out;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{
        "dnflex: flexibility activation signals and resource-dispatch OPF for "
        "LV distribution feeders"};

    std::string config_path, mode_str, out_dir, flex_csv, pf_csv;
    std::uint64_t seed = 0;
    double lambda_loss = -1.0;
    bool print_default = false;

    app.add_option("--config", config_path, "Scenario config JSON file");
    app.add_option("--mode", mode_str,
                   "Run mode: dispatch|pareto-sweep|needs-assessment|"
                   "reactive-study|fas-only|twin-only");
    app.add_option("--out", out_dir, "Output directory");
    app.add_option("--seed", seed, "Profile / sampler RNG seed");
    app.add_option("--flex", flex_csv, "Flexibility levels, percent (CSV list)");
    app.add_option("--lambda-loss", lambda_loss, "Loss penalty per kWh");
    app.add_option("--pf", pf_csv, "Power factors for the reactive study (CSV)");
    app.add_flag("--print-default-config", print_default,
                 "Print the default config JSON and exit");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        return app.exit(e) == 0 ? 0 : kExitUsage;
    }

    try {
        dnflex::ScenarioConfig cfg;
        if (!config_path.empty()) {
            std::ifstream in(config_path, std::ios::binary);
            if (!in) {
                std::cerr << "cannot open config: " << config_path << "\n";
                return kExitUsage;
            }
            std::ostringstream buf;
            buf << in.rdbuf();
            cfg = dnflex::parse_scenario_config(buf.str());
        }
        if (!mode_str.empty()) cfg.mode = dnflex::parse_run_mode(mode_str);
        if (!out_dir.empty()) cfg.out_dir = out_dir;
        if (app.count("--seed") > 0) cfg.seed = seed;
        if (!flex_csv.empty()) cfg.flex_levels = parse_csv_list(flex_csv);
        if (!pf_csv.empty()) cfg.pf_set = parse_csv_list(pf_csv);
        if (lambda_loss >= 0.0) cfg.rdopf.lambda_loss = lambda_loss;
        if (cfg.flex_levels.empty()) {
            std::cerr << "flex levels must be nonempty\n";
            return kExitUsage;
        }

        if (print_default) {
            std::cout << dnflex::serialize_scenario_config(dnflex::ScenarioConfig{});
            return 0;
        }
        if (config_path.empty() && mode_str.empty()) {
            std::cerr << "nothing to do: pass --config and/or --mode "
                         "(see --help)\n";
            return kExitUsage;
        }

        const dnflex::RunManifest man = dnflex::run_scenario(cfg);
        if (man.ok) {
            std::printf("ok: mode=%s artifacts=%zu wall=%.2fs -> %s\n",
                        man.mode.c_str(), man.files.size(), man.wall_time_s,
                        cfg.out_dir.c_str());
            return 0;
        }
        std::cerr << "failed at stage '" << man.stage << "': " << man.error << "\n";
        if (man.stage == "parse") return kExitParse;
        if (man.stage == "verify") return kExitVerify;
        if (man.stage == "analysis" || man.stage == "sweep") return kExitAnalysis;
        return kExitSolve;
    } catch (const dnflex::ParseError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitUsage;
    } catch (const dnflex::Error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
}
