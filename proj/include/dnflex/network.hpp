#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

namespace dnflex {

// All errors surfaced by the library derive from this.
struct Error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct ParseError : Error {
    using Error::Error;
};
struct TopologyError : Error {
    using Error::Error;
};
struct ValidationError : Error {
    using Error::Error;
};

enum class NodeKind { Substation, Junction, Prosumer };

struct Node {
    int id = 0;
    NodeKind kind = NodeKind::Junction;
    double pv_kwp = 0.0;
    double hp_kw = 0.0;
    double peak_load_kw = 0.0;
    bool has_flexibility = false;
};

struct Branch {
    int from = 0;
    int to = 0;
    double r_pu = 0.0;
    double x_pu = 0.0;
    double s_max_pu = 0.0;
    double theta_min_rad = 0.0;
    double theta_max_rad = 0.0;
};

struct Bases {
    double v_base_v = 400.0;    // line-line
    double s_base_kva = 100.0;
};

// Immutable radial feeder model. Node ids are remapped to dense indices
// on construction; `index_of` translates external ids.
class Network {
  public:
    Network(Bases bases, int slack_id, std::vector<Node> nodes,
            std::vector<Branch> branches);

    const Bases& bases() const { return bases_; }
    int slack_id() const { return slack_id_; }
    int slack_index() const { return slack_index_; }
    int num_nodes() const { return static_cast<int>(nodes_.size()); }
    int num_branches() const { return static_cast<int>(branches_.size()); }
    const std::vector<Node>& nodes() const { return nodes_; }
    const std::vector<Branch>& branches() const { return branches_; }
    const Node& node(int idx) const { return nodes_.at(idx); }
    const Branch& branch(int idx) const { return branches_.at(idx); }

    int index_of(int node_id) const;

    // Dense-index endpoints of branch b.
    int from_index(int b) const { return from_idx_[b]; }
    int to_index(int b) const { return to_idx_[b]; }

    // Orientation away from the substation: the endpoint nearer the slack.
    // For branch b, upstream_index(b) is the parent in the BFS tree rooted
    // at the slack node.
    int upstream_index(int b) const { return upstream_idx_[b]; }
    int downstream_index(int b) const { return downstream_idx_[b]; }

    // Branch indices incident to dense node index i.
    const std::vector<int>& incident_branches(int i) const { return incident_[i]; }

    bool is_radial() const { return radial_; }

    double mean_rx_ratio() const;

  private:
    Bases bases_;
    int slack_id_;
    int slack_index_;
    bool radial_ = false;
    std::vector<Node> nodes_;
    std::vector<Branch> branches_;
    std::vector<int> from_idx_, to_idx_;
    std::vector<int> upstream_idx_, downstream_idx_;
    std::vector<std::vector<int>> incident_;
};

// Per-node 15-minute time series, all in physical units (kW / kvar).
struct Profiles {
    int horizon = 0;                                // number of 15-min steps
    std::uint64_t seed = 0;                         // 0 if loaded from file
    std::vector<std::vector<double>> p_load_kw;     // [node][t]
    std::vector<std::vector<double>> q_load_kvar;   // [node][t]
    std::vector<std::vector<double>> p_gen_kw;      // [node][t]
};

Network parse_network(const std::string& path);
Network parse_network_json(const std::string& json_text);
std::string serialize_network(const Network& net);

// The 19-node LV test feeder: main branch 0-2-5-8-11-14-17, twelve
// prosumers on spurs, Table-driven PV / heat pump / peak load attributes.
Network builtin_test_feeder();

// Deterministic synthetic day: double-peaked loads scaled to each
// prosumer's peak, clear-sky PV bell scaled to kWp. `scale` multiplies
// loads only; PV is untouched.
Profiles synth_profiles(const Network& net, std::uint64_t seed, double scale,
                        int horizon = 96, double power_factor = 0.98);

Profiles parse_profiles_csv(const std::string& path, const Network& net);
std::string serialize_profiles_csv(const Profiles& prof, const Network& net);

}  // namespace dnflex
