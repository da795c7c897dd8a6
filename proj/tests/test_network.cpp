#include <doctest.h>

#include <cmath>

#include "dnflex/network.hpp"

using namespace dnflex;

TEST_CASE("builtin feeder matches the published topology and attributes") {
    Network net = builtin_test_feeder();
    CHECK(net.num_nodes() == 19);
    CHECK(net.num_branches() == 18);
    CHECK(net.is_radial());
    CHECK(net.slack_id() == 0);

    // Branch-mean R/X ratio of the feeder.
    CHECK(std::abs(net.mean_rx_ratio() - 2.01) < 0.05);

    const Node& h3 = net.node(net.index_of(3));
    CHECK(h3.pv_kwp == 10.0);
    CHECK(h3.peak_load_kw == 7.0);
    const Node& h10 = net.node(net.index_of(10));
    CHECK(h10.pv_kwp == 15.0);
    CHECK(h10.hp_kw == 6.0);
    CHECK(h10.peak_load_kw == 14.0);
    const Node& h18 = net.node(net.index_of(18));
    CHECK(h18.pv_kwp == 18.0);
    CHECK(h18.hp_kw == 7.5);
    CHECK(h18.peak_load_kw == 10.0);

    double pv_sum = 0.0;
    int prosumers = 0, junctions = 0;
    for (const Node& n : net.nodes()) {
        pv_sum += n.pv_kwp;
        if (n.kind == NodeKind::Prosumer) ++prosumers;
        if (n.kind == NodeKind::Junction) ++junctions;
    }
    CHECK(pv_sum == 161.0);
    CHECK(prosumers == 12);
    CHECK(junctions == 6);

    // Main segments share one impedance, spurs another.
    const int mains[] = {0, 1, 2, 3, 4, 5};
    for (int b : mains) {
        CHECK(net.branch(b).r_pu == net.branch(0).r_pu);
        CHECK(net.branch(b).x_pu == net.branch(0).x_pu);
    }
    for (int b = 6; b < 18; ++b) {
        CHECK(net.branch(b).r_pu == net.branch(6).r_pu);
        CHECK(net.branch(b).x_pu == net.branch(6).x_pu);
    }
}

TEST_CASE("network JSON round-trips") {
    Network net = builtin_test_feeder();
    Network again = parse_network_json(serialize_network(net));
    CHECK(serialize_network(again) == serialize_network(net));
    CHECK(again.num_nodes() == net.num_nodes());
    CHECK(again.num_branches() == net.num_branches());
}

TEST_CASE("minimal two-node network parses") {
    const char* doc = R"({
      "bases": {"v_base_v": 400, "s_base_kva": 100},
      "slack": 0,
      "nodes": [
        {"id": 0, "kind": "substation", "pv_kwp": 0, "hp_kw": 0,
         "peak_load_kw": 0, "has_flexibility": false},
        {"id": 1, "kind": "prosumer", "pv_kwp": 0, "hp_kw": 0,
         "peak_load_kw": 10, "has_flexibility": true}
      ],
      "branches": [
        {"from": 0, "to": 1, "r_pu": 0.01, "x_pu": 0.005, "s_max_pu": 1.0,
         "theta_min_rad": -0.5, "theta_max_rad": 0.5}
      ]
    })";
    Network net = parse_network_json(doc);
    CHECK(net.num_nodes() == 2);
    CHECK(net.num_branches() == 1);
}

TEST_CASE("referential and validity errors are reported") {
    Network net = builtin_test_feeder();
    std::string good = serialize_network(net);

    SUBCASE("unknown branch endpoint") {
        std::string bad = good;
        auto pos = bad.find("\"to\": 1,");
        REQUIRE(pos != std::string::npos);
        bad.replace(pos, 8, "\"to\": 99,");
        CHECK_THROWS_AS(parse_network_json(bad), TopologyError);
    }
    SUBCASE("malformed JSON") {
        CHECK_THROWS_AS(parse_network_json("{not json"), ParseError);
    }
    SUBCASE("missing field") {
        CHECK_THROWS_AS(parse_network_json("{\"slack\": 0}"), ParseError);
    }
    SUBCASE("nonpositive impedance") {
        std::vector<Node> nodes = net.nodes();
        std::vector<Branch> branches = net.branches();
        branches[0].r_pu = 0.0;
        CHECK_THROWS_AS(Network(net.bases(), 0, nodes, branches), ValidationError);
    }
    SUBCASE("disconnected graph") {
        std::vector<Node> nodes = net.nodes();
        std::vector<Branch> branches = net.branches();
        branches.pop_back();  // orphan node 18
        branches.push_back({1, 3, 0.01, 0.005, 1.0, -0.5, 0.5});  // keep count
        CHECK_THROWS_AS(Network(net.bases(), 0, nodes, branches), TopologyError);
    }
}

TEST_CASE("synthetic profiles are deterministic and respect peaks") {
    Network net = builtin_test_feeder();
    Profiles a = synth_profiles(net, 1, 1.0);
    Profiles b = synth_profiles(net, 1, 1.0);
    CHECK(a.p_load_kw == b.p_load_kw);
    CHECK(a.q_load_kvar == b.q_load_kvar);
    CHECK(a.p_gen_kw == b.p_gen_kw);

    Profiles c = synth_profiles(net, 2, 1.0);
    CHECK(a.p_load_kw != c.p_load_kw);

    for (int i = 0; i < net.num_nodes(); ++i) {
        const Node& n = net.node(i);
        double pmax = 0.0, gmax = 0.0;
        for (int t = 0; t < a.horizon; ++t) {
            pmax = std::max(pmax, a.p_load_kw[i][t]);
            gmax = std::max(gmax, a.p_gen_kw[i][t]);
            CHECK(a.p_load_kw[i][t] >= 0.0);
            CHECK(a.p_gen_kw[i][t] >= 0.0);
            CHECK(a.q_load_kvar[i][t] >= 0.0);
        }
        CHECK(pmax <= 1.05 * n.peak_load_kw + 1e-12);
        CHECK(gmax <= 1.05 * n.pv_kwp + 1e-12);
        if (n.kind == NodeKind::Prosumer) CHECK(pmax > 0.0);
    }
}

TEST_CASE("scale multiplies loads only; zero scale keeps PV") {
    Network net = builtin_test_feeder();
    Profiles p0 = synth_profiles(net, 1, 0.0);
    Profiles p1 = synth_profiles(net, 1, 1.0);
    for (int i = 0; i < net.num_nodes(); ++i)
        for (int t = 0; t < p0.horizon; ++t) {
            CHECK(p0.p_load_kw[i][t] == 0.0);
            CHECK(p0.p_gen_kw[i][t] == p1.p_gen_kw[i][t]);
        }
}

TEST_CASE("aggregate net load at scale 1 goes negative during daylight") {
    Network net = builtin_test_feeder();
    Profiles p = synth_profiles(net, 1, 1.0);
    bool reverse = false;
    for (int t = 0; t < p.horizon; ++t) {
        double net_load = 0.0;
        for (int i = 0; i < net.num_nodes(); ++i)
            net_load += p.p_load_kw[i][t] - p.p_gen_kw[i][t];
        if (net_load < 0.0) reverse = true;
    }
    CHECK(reverse);
}

TEST_CASE("profiles CSV round-trips through the documented schema") {
    Network net = builtin_test_feeder();
    Profiles p = synth_profiles(net, 7, 1.0);
    std::string csv = serialize_profiles_csv(p, net);
    // Write to a temp file and parse back.
    std::string path = "profiles_roundtrip_tmp.csv";
    {
        FILE* f = fopen(path.c_str(), "w");
        REQUIRE(f);
        fwrite(csv.data(), 1, csv.size(), f);
        fclose(f);
    }
    Profiles q = parse_profiles_csv(path, net);
    remove(path.c_str());
    CHECK(q.horizon == p.horizon);
    CHECK(serialize_profiles_csv(q, net) == csv);
}
