#include "dnflex/network.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <queue>
#include <random>
#include <sstream>

#include <json.hpp>

namespace dnflex {

namespace {

constexpr double kPi = 3.14159265358979323846;

std::string kind_to_string(NodeKind k) {
    switch (k) {
        case NodeKind::Substation: return "substation";
        case NodeKind::Junction: return "junction";
        case NodeKind::Prosumer: return "prosumer";
    }
    return "junction";
}

NodeKind kind_from_string(const std::string& s) {
    if (s == "substation") return NodeKind::Substation;
    if (s == "junction") return NodeKind::Junction;
    if (s == "prosumer") return NodeKind::Prosumer;
    throw ParseError("unknown node kind: " + s);
}

}  // namespace

Network::Network(Bases bases, int slack_id, std::vector<Node> nodes,
                 std::vector<Branch> branches)
    : bases_(bases), slack_id_(slack_id), nodes_(std::move(nodes)),
      branches_(std::move(branches)) {
    if (nodes_.empty()) throw ValidationError("network has no nodes");

    std::map<int, int> id_to_idx;
    for (int i = 0; i < num_nodes(); ++i) {
        if (!id_to_idx.emplace(nodes_[i].id, i).second)
            throw ValidationError("duplicate node id " + std::to_string(nodes_[i].id));
        const Node& n = nodes_[i];
        if (n.kind == NodeKind::Prosumer && n.peak_load_kw <= 0.0)
            throw ValidationError("prosumer node " + std::to_string(n.id) +
                                  " must have positive peak load");
        if (n.kind != NodeKind::Prosumer &&
            (n.peak_load_kw != 0.0 || n.pv_kwp != 0.0 || n.hp_kw != 0.0))
            throw ValidationError("non-prosumer node " + std::to_string(n.id) +
                                  " must carry zero load and generation");
    }
    auto slack_it = id_to_idx.find(slack_id_);
    if (slack_it == id_to_idx.end())
        throw TopologyError("slack node " + std::to_string(slack_id_) + " does not exist");
    slack_index_ = slack_it->second;

    from_idx_.resize(branches_.size());
    to_idx_.resize(branches_.size());
    incident_.assign(nodes_.size(), {});
    for (int b = 0; b < num_branches(); ++b) {
        const Branch& br = branches_[b];
        auto f = id_to_idx.find(br.from);
        auto t = id_to_idx.find(br.to);
        if (f == id_to_idx.end() || t == id_to_idx.end())
            throw TopologyError("branch " + std::to_string(br.from) + "-" +
                                std::to_string(br.to) + " references unknown node");
        if (f == t) throw TopologyError("self-loop at node " + std::to_string(br.from));
        if (br.r_pu <= 0.0 || br.x_pu <= 0.0 || br.s_max_pu <= 0.0)
            throw ValidationError("branch " + std::to_string(br.from) + "-" +
                                  std::to_string(br.to) +
                                  " has nonpositive impedance or rating");
        if (!(br.theta_min_rad < 0.0 && br.theta_max_rad > 0.0))
            throw ValidationError("branch angle limits must straddle zero");
        from_idx_[b] = f->second;
        to_idx_[b] = t->second;
        incident_[f->second].push_back(b);
        incident_[t->second].push_back(b);
    }

    // Connectivity check plus BFS parents from the slack node. The parent
    // orientation defines the away-from-substation direction per branch.
    upstream_idx_.assign(branches_.size(), -1);
    downstream_idx_.assign(branches_.size(), -1);
    std::vector<int> dist(nodes_.size(), -1);
    std::queue<int> q;
    dist[slack_index_] = 0;
    q.push(slack_index_);
    int seen = 1;
    while (!q.empty()) {
        int u = q.front();
        q.pop();
        for (int b : incident_[u]) {
            int v = from_idx_[b] == u ? to_idx_[b] : from_idx_[b];
            if (dist[v] < 0) {
                dist[v] = dist[u] + 1;
                upstream_idx_[b] = u;
                downstream_idx_[b] = v;
                ++seen;
                q.push(v);
            } else if (upstream_idx_[b] < 0) {
                // Cross edge closing a cycle; orient by distance.
                upstream_idx_[b] = dist[u] <= dist[v] ? u : v;
                downstream_idx_[b] = dist[u] <= dist[v] ? v : u;
            }
        }
    }
    if (seen != num_nodes()) throw TopologyError("network graph is disconnected");
    radial_ = num_branches() == num_nodes() - 1;
}

int Network::index_of(int node_id) const {
    for (int i = 0; i < num_nodes(); ++i)
        if (nodes_[i].id == node_id) return i;
    throw TopologyError("unknown node id " + std::to_string(node_id));
}

double Network::mean_rx_ratio() const {
    double s = 0.0;
    for (const Branch& b : branches_) s += b.r_pu / b.x_pu;
    return s / num_branches();
}

Network parse_network_json(const std::string& json_text) {
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(json_text);
    } catch (const nlohmann::json::exception& e) {
        throw ParseError(std::string("network JSON: ") + e.what());
    }
    try {
        Bases bases;
        bases.v_base_v = j.at("bases").at("v_base_v").get<double>();
        bases.s_base_kva = j.at("bases").at("s_base_kva").get<double>();
        int slack = j.at("slack").get<int>();
        std::vector<Node> nodes;
        for (const auto& jn : j.at("nodes")) {
            Node n;
            n.id = jn.at("id").get<int>();
            n.kind = kind_from_string(jn.at("kind").get<std::string>());
            n.pv_kwp = jn.at("pv_kwp").get<double>();
            n.hp_kw = jn.at("hp_kw").get<double>();
            n.peak_load_kw = jn.at("peak_load_kw").get<double>();
            n.has_flexibility = jn.at("has_flexibility").get<bool>();
            nodes.push_back(n);
        }
        std::vector<Branch> branches;
        for (const auto& jb : j.at("branches")) {
            Branch b;
            b.from = jb.at("from").get<int>();
            b.to = jb.at("to").get<int>();
            b.r_pu = jb.at("r_pu").get<double>();
            b.x_pu = jb.at("x_pu").get<double>();
            b.s_max_pu = jb.at("s_max_pu").get<double>();
            b.theta_min_rad = jb.at("theta_min_rad").get<double>();
            b.theta_max_rad = jb.at("theta_max_rad").get<double>();
            branches.push_back(b);
        }
        return Network(bases, slack, std::move(nodes), std::move(branches));
    } catch (const nlohmann::json::exception& e) {
        throw ParseError(std::string("network JSON field: ") + e.what());
    }
}

Network parse_network(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ParseError("cannot open network file: " + path);
    std::stringstream ss;
    ss << in.rdbuf();
    return parse_network_json(ss.str());
}

std::string serialize_network(const Network& net) {
    nlohmann::json j;
    j["bases"] = {{"v_base_v", net.bases().v_base_v},
                  {"s_base_kva", net.bases().s_base_kva}};
    j["slack"] = net.slack_id();
    j["nodes"] = nlohmann::json::array();
    for (const Node& n : net.nodes()) {
        j["nodes"].push_back({{"id", n.id},
                              {"kind", kind_to_string(n.kind)},
                              {"pv_kwp", n.pv_kwp},
                              {"hp_kw", n.hp_kw},
                              {"peak_load_kw", n.peak_load_kw},
                              {"has_flexibility", n.has_flexibility}});
    }
    j["branches"] = nlohmann::json::array();
    for (const Branch& b : net.branches()) {
        j["branches"].push_back({{"from", b.from},
                                 {"to", b.to},
                                 {"r_pu", b.r_pu},
                                 {"x_pu", b.x_pu},
                                 {"s_max_pu", b.s_max_pu},
                                 {"theta_min_rad", b.theta_min_rad},
                                 {"theta_max_rad", b.theta_max_rad}});
    }
    return j.dump(2) + "\n";
}

Network builtin_test_feeder() {
    // Main branch 0-2-5-8-11-14-17: 150 mm2 Al, 300 m per segment.
    // Spurs to the twelve consumers: 35 mm2 Al, 150 m each.
    // Bases 400 V / 100 kVA, Z_base = 1.6 ohm. Reactance is set from the
    // feeder's branch-mean R/X ratio of 2.01, the only impedance ratio the
    // cable data pins down.
    const double z_base = 0.4 * 0.4 * 1000.0 / 100.0;  // ohm
    const double r_main = 0.206 * 0.3 / z_base;
    const double r_spur = 0.868 * 0.15 / z_base;
    const double rx = 2.01;
    const double s_main = 0.80;   // 80 kVA main-segment rating
    const double s_spur = 0.12;   // 12 kVA service-spur rating
    const double th = 30.0 * kPi / 180.0;

    std::vector<Node> nodes;
    auto junction = [&](int id, NodeKind k) {
        Node n;
        n.id = id;
        n.kind = k;
        nodes.push_back(n);
    };
    auto prosumer = [&](int id, double pv, double hp, double peak) {
        Node n;
        n.id = id;
        n.kind = NodeKind::Prosumer;
        n.pv_kwp = pv;
        n.hp_kw = hp;
        n.peak_load_kw = peak;
        n.has_flexibility = true;
        nodes.push_back(n);
    };
    junction(0, NodeKind::Substation);
    prosumer(1, 0, 0, 20);
    junction(2, NodeKind::Junction);
    prosumer(3, 10, 0, 7);
    prosumer(4, 20, 0, 4);
    junction(5, NodeKind::Junction);
    prosumer(6, 8, 0, 2);
    prosumer(7, 20, 0, 9);
    junction(8, NodeKind::Junction);
    prosumer(9, 12, 0, 12);
    prosumer(10, 15, 6, 14);
    junction(11, NodeKind::Junction);
    prosumer(12, 12, 0, 14);
    prosumer(13, 10, 0, 14);
    junction(14, NodeKind::Junction);
    prosumer(15, 18, 0, 16);
    prosumer(16, 18, 0, 20);
    junction(17, NodeKind::Junction);
    prosumer(18, 18, 7.5, 10);

    std::vector<Branch> branches;
    auto add = [&](int f, int t, double r, double s) {
        branches.push_back({f, t, r, r / rx, s, -th, th});
    };
    const int main_nodes[] = {0, 2, 5, 8, 11, 14, 17};
    for (int k = 0; k + 1 < 7; ++k)
        add(main_nodes[k], main_nodes[k + 1], r_main, s_main);
    const std::pair<int, int> spurs[] = {{2, 1},  {2, 3},   {2, 4},   {5, 6},
                                         {5, 7},  {8, 9},   {8, 10},  {11, 12},
                                         {11, 13}, {14, 15}, {14, 16}, {17, 18}};
    for (auto [f, t] : spurs) add(f, t, r_spur, s_spur);

    return Network(Bases{400.0, 100.0}, 0, std::move(nodes), std::move(branches));
}

Profiles synth_profiles(const Network& net, std::uint64_t seed, double scale,
                        int horizon, double power_factor) {
    if (scale < 0.0) throw ValidationError("profile scale must be nonnegative");
    const int n = net.num_nodes();
    Profiles prof;
    prof.horizon = horizon;
    prof.seed = seed;
    prof.p_load_kw.assign(n, std::vector<double>(horizon, 0.0));
    prof.q_load_kvar.assign(n, std::vector<double>(horizon, 0.0));
    prof.p_gen_kw.assign(n, std::vector<double>(horizon, 0.0));

    const double tan_phi = std::tan(std::acos(power_factor));
    const double step_h = 24.0 / horizon;

    for (int i = 0; i < n; ++i) {
        const Node& node = net.node(i);
        if (node.kind != NodeKind::Prosumer) continue;

        // Per-node stream so the result is independent of node ordering.
        std::mt19937_64 rng(seed * 0x9e3779b97f4a7c15ULL + node.id);
        std::uniform_real_distribution<double> uni(-1.0, 1.0);

        // Peak times jittered per node: coincident full peaks would collapse
        // the feeder, real consumers do not align.
        const double t_morning = 7.3 + 1.2 * uni(rng);
        const double t_lunch = 12.5 + 0.8 * uni(rng);
        const double t_evening = 19.0 + 1.8 * uni(rng);
        const double morning_frac = 0.50 + 0.10 * uni(rng);
        const double lunch_frac = 0.25 + 0.05 * uni(rng);
        const double width_m = 1.1 + 0.2 * uni(rng);
        const double width_l = 1.0 + 0.2 * uni(rng);
        const double width_e = 1.3 + 0.3 * uni(rng);
        const double base_frac = 0.10 + 0.03 * uni(rng);
        // Orientation / temperature derating of the clear-sky output.
        const double pv_factor = 0.55 + 0.04 * uni(rng);

        std::vector<double> shape(horizon);
        double peak_shape = 0.0;
        for (int t = 0; t < horizon; ++t) {
            const double h = (t + 0.5) * step_h;
            double s = base_frac;
            const double dm = h - t_morning;
            const double dl = h - t_lunch;
            const double de = h - t_evening;
            s += morning_frac * std::exp(-dm * dm / (2.0 * width_m * width_m));
            s += lunch_frac * std::exp(-dl * dl / (2.0 * width_l * width_l));
            s += std::exp(-de * de / (2.0 * width_e * width_e));
            shape[t] = s;
            peak_shape = std::max(peak_shape, s);
        }
        // A typical spring-day maximum sits below the contracted peak.
        const double day_factor = 0.60;
        for (int t = 0; t < horizon; ++t) {
            const double p =
                node.peak_load_kw * day_factor * scale * shape[t] / peak_shape;
            prof.p_load_kw[i][t] = p;
            prof.q_load_kvar[i][t] = p * tan_phi;
        }

        // Clear-sky bell between sunrise and sunset (spring day).
        const double sunrise = 6.5, sunset = 20.5;
        for (int t = 0; t < horizon; ++t) {
            const double h = (t + 0.5) * step_h;
            if (h <= sunrise || h >= sunset) continue;
            const double u = (h - sunrise) / (sunset - sunrise);
            const double bell = std::pow(std::sin(kPi * u), 1.5);
            prof.p_gen_kw[i][t] = node.pv_kwp * std::max(0.0, bell * pv_factor);
        }
    }
    return prof;
}

Profiles parse_profiles_csv(const std::string& path, const Network& net) {
    std::ifstream in(path);
    if (!in) throw ParseError("cannot open profiles file: " + path);
    std::string line;
    if (!std::getline(in, line)) throw ParseError("empty profiles file");
    if (line.find("node_id") == std::string::npos)
        throw ParseError("profiles CSV missing header row");

    struct Row {
        int node, t;
        double p, q, g;
    };
    std::vector<Row> rows;
    int max_t = -1;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        Row r{};
        if (std::sscanf(line.c_str(), "%d,%d,%lf,%lf,%lf", &r.node, &r.t, &r.p,
                        &r.q, &r.g) != 5)
            throw ParseError("bad profiles row: " + line);
        max_t = std::max(max_t, r.t);
        rows.push_back(r);
    }
    Profiles prof;
    prof.horizon = max_t + 1;
    const int n = net.num_nodes();
    prof.p_load_kw.assign(n, std::vector<double>(prof.horizon, 0.0));
    prof.q_load_kvar.assign(n, std::vector<double>(prof.horizon, 0.0));
    prof.p_gen_kw.assign(n, std::vector<double>(prof.horizon, 0.0));
    for (const Row& r : rows) {
        int i = net.index_of(r.node);
        if (r.t < 0 || r.t >= prof.horizon) throw ParseError("t_index out of range");
        if (r.p < 0.0 || r.g < 0.0)
            throw ValidationError("negative load or generation in profiles");
        prof.p_load_kw[i][r.t] = r.p;
        prof.q_load_kvar[i][r.t] = r.q;
        prof.p_gen_kw[i][r.t] = r.g;
    }
    return prof;
}

std::string serialize_profiles_csv(const Profiles& prof, const Network& net) {
    std::string out = "node_id,t_index,p_load_kw,q_load_kvar,p_gen_kw\n";
    char buf[160];
    for (int i = 0; i < net.num_nodes(); ++i) {
        for (int t = 0; t < prof.horizon; ++t) {
            std::snprintf(buf, sizeof(buf), "%d,%d,%.10g,%.10g,%.10g\n",
                          net.node(i).id, t, prof.p_load_kw[i][t],
                          prof.q_load_kvar[i][t], prof.p_gen_kw[i][t]);
            out += buf;
        }
    }
    return out;
}

}  // namespace dnflex
