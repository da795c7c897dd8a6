#include <doctest.h>

#include <cmath>
#include <complex>

#include "dnflex/network.hpp"
#include "dnflex/powerflow.hpp"

using namespace dnflex;
using std::complex;

namespace {

Network two_bus(double r = 0.01, double x = 0.005) {
    std::vector<Node> nodes(2);
    nodes[0].id = 0;
    nodes[0].kind = NodeKind::Substation;
    nodes[1].id = 1;
    nodes[1].kind = NodeKind::Prosumer;
    nodes[1].peak_load_kw = 10;
    nodes[1].has_flexibility = true;
    std::vector<Branch> branches{{0, 1, r, x, 2.0, -0.5, 0.5}};
    return Network(Bases{400, 100}, 0, nodes, branches);
}

// Independent fixed-point oracle for a single load behind impedance z:
// V2 <- 1 - z * conj(S_load / V2), iterated to stationarity (Z-bus Gauss).
complex<double> two_bus_oracle(complex<double> z, complex<double> s_load) {
    complex<double> v = 1.0;
    for (int it = 0; it < 500; ++it) {
        complex<double> next = 1.0 - z * std::conj(s_load / v);
        if (std::abs(next - v) < 1e-14) return next;
        v = next;
    }
    return v;
}

}  // namespace

TEST_CASE("no-load flat start") {
    Network net = builtin_test_feeder();
    Injections inj(net.num_nodes(), 0.0);
    NetworkState st = solve_power_flow(net, inj);
    for (double v : st.v_mag) CHECK(v == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(st.total_loss_kw == doctest::Approx(0.0).epsilon(1e-9));
    for (double l : st.loading_pct) CHECK(std::abs(l) < 1e-9);
}

TEST_CASE("two-bus case matches the fixed-point oracle") {
    Network net = two_bus();
    Injections inj(2, 0.0);
    inj[1] = complex<double>(-0.10, -0.05);
    NetworkState st = solve_power_flow(net, inj);
    complex<double> v_oracle = two_bus_oracle({0.01, 0.005}, {0.10, 0.05});
    complex<double> v_nr = std::polar(st.v_mag[1], st.v_ang[1]);
    CHECK(std::abs(v_nr - v_oracle) < 1e-8);
    CHECK(st.v_mag[0] == 1.0);
    CHECK(st.v_ang[0] == 0.0);
}

TEST_CASE("slack energy balance and nonnegative losses") {
    Network net = builtin_test_feeder();
    Profiles prof = synth_profiles(net, 3, 1.0);
    auto states = simulate_horizon(net, prof);
    REQUIRE(static_cast<int>(states.size()) == prof.horizon);
    const double s_base = net.bases().s_base_kva;
    for (const NetworkState& st : states) {
        double load = 0.0, gen = 0.0;
        for (int i = 0; i < net.num_nodes(); ++i) {
            load += prof.p_load_kw[i][st.t];
            gen += prof.p_gen_kw[i][st.t];
        }
        const double slack_p = slack_injection(net, st).real() * s_base;
        CHECK(std::abs(slack_p - (load - gen + st.total_loss_kw)) < 1e-6 * s_base);
        CHECK(st.total_loss_kw >= -1e-9);
        for (double l : st.branch_loss_kw) CHECK(l >= -1e-9);
    }
}

TEST_CASE("horizon of one equals single solve") {
    Network net = builtin_test_feeder();
    Profiles prof = synth_profiles(net, 3, 1.0);
    prof.horizon = 1;
    auto states = simulate_horizon(net, prof);
    REQUIRE(states.size() == 1);
    NetworkState direct = solve_power_flow(net, injections_from_profiles(net, prof, 0));
    CHECK(states[0].v_mag == direct.v_mag);
    CHECK(states[0].total_loss_kw == direct.total_loss_kw);
}

TEST_CASE("zero-scale horizon is flat with zero cumulative loss") {
    Network net = builtin_test_feeder();
    Profiles prof = synth_profiles(net, 1, 0.0);
    // Kill PV as well so the horizon is truly unloaded.
    for (auto& row : prof.p_gen_kw) std::fill(row.begin(), row.end(), 0.0);
    auto states = simulate_horizon(net, prof);
    double sum_loss = 0.0;
    for (const auto& st : states) sum_loss += st.total_loss_kw;
    CHECK(sum_loss == doctest::Approx(0.0).epsilon(1e-10));
}

TEST_CASE("raising loads monotonically depresses the minimum voltage") {
    Network net = builtin_test_feeder();
    Profiles prof = synth_profiles(net, 1, 1.0);
    // Time-mean loading, no PV: a plain stress ramp.
    std::vector<double> p_mean(net.num_nodes(), 0.0), q_mean(net.num_nodes(), 0.0);
    for (int i = 0; i < net.num_nodes(); ++i)
        for (int t = 0; t < prof.horizon; ++t) {
            p_mean[i] += prof.p_load_kw[i][t] / prof.horizon;
            q_mean[i] += prof.q_load_kvar[i][t] / prof.horizon;
        }
    double prev_min = 2.0;
    for (double alpha : {1.0, 1.2, 1.5}) {
        Injections inj(net.num_nodes());
        const double s_base = net.bases().s_base_kva;
        for (int i = 0; i < net.num_nodes(); ++i)
            inj[i] = complex<double>(-alpha * p_mean[i] / s_base,
                                     -alpha * q_mean[i] / s_base);
        NetworkState st = solve_power_flow(net, inj);
        double vmin = 2.0;
        for (double v : st.v_mag) vmin = std::min(vmin, v);
        CHECK(vmin <= prev_min + 1e-12);
        prev_min = vmin;
    }
}

TEST_CASE("reverse flow reports negative loading") {
    Network net = two_bus();
    Injections inj(2, 0.0);
    inj[1] = complex<double>(0.2, 0.0);  // net generation at the far end
    NetworkState st = solve_power_flow(net, inj);
    CHECK(st.loading_pct[0] < 0.0);
}

TEST_CASE("divergence raises a tagged error") {
    Network net = two_bus();
    Injections inj(2, 0.0);
    inj[1] = complex<double>(-100.0, -50.0);  // far beyond deliverable power
    CHECK_THROWS_AS(solve_power_flow(net, inj), DivergenceError);
}
