#include <doctest.h>

#include <cmath>
#include <random>

#include "dnflex/barrier.hpp"
#include "dnflex/rdopf.hpp"
#include "test_support.hpp"

using namespace dnflex;
using namespace dnflex::testing;

TEST_CASE("barrier solver: box LP with equality") {
    // min x1 + 2 x2  s.t.  x1 + x2 = 1,  x in [0, 0.8]^2  ->  (0.8, 0.2).
    BarrierProblem p(2);
    p.objective() << 1, 2;
    p.add_equality({{0, 1.0}, {1, 1.0}}, 1.0);
    p.add_box(0, 0.0, 0.8);
    p.add_box(1, 0.0, 0.8);
    const BarrierResult r = p.solve(Eigen::Vector2d(0.4, 0.4));
    CHECK(std::abs(r.x(0) - 0.8) < 1e-5);
    CHECK(std::abs(r.x(1) - 0.2) < 1e-5);
    CHECK(std::abs(r.objective - 1.2) < 1e-5);
    // Raising the rhs by d moves x2 (the free variable) by d: nu = -2.
    CHECK(std::abs(r.eq_duals(0) + 2.0) < 1e-4);
}

TEST_CASE("barrier solver: quadratic ball") {
    // min -x  s.t.  x^2 + y^2 <= 1  ->  x = 1.
    BarrierProblem p(2);
    p.objective() << -1, 0;
    p.add_quad_ball({{0, 1.0}}, 0.0, {{1, 1.0}}, 0.0, 1.0);
    const BarrierResult r = p.solve(Eigen::Vector2d(0, 0));
    CHECK(std::abs(r.objective + 1.0) < 1e-6);
    CHECK(std::abs(r.x(0) - 1.0) < 1e-6);
}

TEST_CASE("barrier solver: rotated cone") {
    // min -r  s.t.  r^2 + s^2 <= u v,  u, v <= 2  ->  r = 2 at u = v = 2.
    BarrierProblem p(4);
    p.objective() << 0, 0, -1, 0;
    p.add_box(0, 1e-9, 2.0);
    p.add_box(1, 1e-9, 2.0);
    p.add_box(2, -10.0, 10.0);
    p.add_box(3, -10.0, 10.0);
    p.add_rotated_cone(0, 1, 2, 3);
    const BarrierResult r = p.solve(Eigen::Vector4d(1, 1, 0.2, 0.1));
    CHECK(std::abs(r.x(2) - 2.0) < 1e-4);
}

TEST_CASE("barrier solver: equality dual sign convention") {
    // min 3 x1 + x2  s.t.  x1 = 0.5: raising the rhs raises the objective
    // by 3, so nu = -3.
    BarrierProblem p(2);
    p.objective() << 3, 1;
    p.add_box(0, -5.0, 5.0);
    p.add_box(1, 0.2, 1.0);
    p.add_equality({{0, 1.0}}, 0.5);
    const BarrierResult r = p.solve(Eigen::Vector2d(0.1, 0.5));
    CHECK(std::abs(r.eq_duals(0) + 3.0) < 1e-4);
    CHECK(std::abs(r.x(1) - 0.2) < 1e-3);
}

TEST_CASE("quiet timestep dispatches nothing") {
    const Network net = three_bus();
    TimestepInputs in = blank_inputs(net);
    in.p_load_kw[2] = 10.0;
    in.q_load_kvar[2] = 2.0;
    in.load_cap[2] = 10.0;  // curtailment available but never free
    RdopfConfig cfg;
    const DispatchResult soc = solve_soc_rdopf(net, in, cfg);
    CHECK(soc.status == "optimal");
    CHECK(soc.dp_plus_kw.cwiseAbs().maxCoeff() < 1e-6);
    CHECK(soc.load_curt_kw.maxCoeff() < 1e-5);
    CHECK(soc.sigma < 1e-5);
    CHECK(extract_power_balance_duals(soc).cwiseAbs().maxCoeff() < 1e-6);

    const DispatchResult ac = solve_ac_rdopf(net, in, cfg);
    CHECK(ac.sigma < 1e-5);
    CHECK(verify_ac_feasibility(net, ac, in, cfg).pass);
}

TEST_CASE("over-voltage instance matches the exhaustive grid oracle") {
    const Network net = three_bus();
    TimestepInputs in = blank_inputs(net);
    in.p_gen_kw[2] = 30.0;  // tail export; lifts v2 above 1.08
    in.gen_cap[2] = 30.0;
    in.p_flex_min[2] = -2.0;  // cheap ramp-down channel
    in.lam_p_minus[2] = -0.2;
    RdopfConfig cfg;
    // With free losses the relaxation absorbs an over-voltage by padding the
    // cone slack (fictitious dissipation); a loss penalty above the flex
    // price restores exactness on this instance.
    cfg.lambda_loss = 0.3;

    const double oracle = brute_force_sigma(net, in, cfg, 2, -1, 2, true);
    REQUIRE(std::isfinite(oracle));

    const DispatchResult soc = solve_soc_rdopf(net, in, cfg);
    CHECK(std::abs(soc.sigma - oracle) <= 1e-3);
    CHECK(soc.dp_minus_kw(2) < 0.0);  // flexibility used before curtailment

    const DispatchResult ac = solve_ac_rdopf(net, in, cfg);
    CHECK(std::abs(ac.sigma - oracle) <= 1e-3);
    CHECK(verify_ac_feasibility(net, ac, in, cfg).pass);
    CHECK(ac.sigma >= soc.sigma - 1e-6);
}

TEST_CASE("under-voltage instance matches the exhaustive grid oracle") {
    const Network net = three_bus();
    TimestepInputs in = blank_inputs(net);
    in.p_load_kw[2] = 32.0;  // tail load; drops v2 below 0.92
    in.q_load_kvar[2] = 4.0;
    in.load_cap[2] = 32.0;
    in.p_flex_max[2] = 2.0;  // cheap ramp-up channel
    in.lam_p_plus[2] = 0.2;
    RdopfConfig cfg;

    const double oracle = brute_force_sigma(net, in, cfg, 2, +1, 2, false);
    REQUIRE(std::isfinite(oracle));

    const DispatchResult soc = solve_soc_rdopf(net, in, cfg);
    CHECK(std::abs(soc.sigma - oracle) <= 1e-3);

    const DispatchResult ac = solve_ac_rdopf(net, in, cfg);
    CHECK(std::abs(ac.sigma - oracle) <= 1e-3);
    CHECK(verify_ac_feasibility(net, ac, in, cfg).pass);
    CHECK(ac.sigma >= soc.sigma - 1e-6);
}

TEST_CASE("sigma recomputes exactly from the returned activations") {
    const Network net = three_bus();
    TimestepInputs in = blank_inputs(net);
    in.p_load_kw[2] = 32.0;
    in.load_cap[2] = 32.0;
    in.p_flex_max[2] = 2.0;
    in.lam_p_plus[2] = 0.2;
    RdopfConfig cfg;
    cfg.lambda_loss = 0.1;
    const DispatchResult soc = solve_soc_rdopf(net, in, cfg);
    CHECK(std::abs(soc.sigma - recompute_sigma(in, soc, cfg)) < 1e-8);
}

TEST_CASE("activations respect their envelope and curtailment caps") {
    const Network net = three_bus();
    TimestepInputs in = blank_inputs(net);
    in.p_load_kw[2] = 34.0;
    in.load_cap[2] = 34.0;
    in.p_flex_max[2] = 1.5;
    in.lam_p_plus[2] = 0.2;
    in.q_flex_max[2] = 1.0;
    in.lam_q_plus[2] = 0.1;
    RdopfConfig cfg;
    const DispatchResult r = solve_soc_rdopf(net, in, cfg);
    CHECK(r.dp_plus_kw(2) <= in.p_flex_max[2] + 1e-9);
    CHECK(r.dp_plus_kw(2) >= -1e-9);
    CHECK(r.dq_plus_kvar(2) <= in.q_flex_max[2] + 1e-9);
    CHECK(r.load_curt_kw(2) <= in.load_cap[2] + 1e-9);
    CHECK(r.load_curt_kw(2) >= -1e-9);
    // Cone tightness and voltage-proxy bounds of the relaxation.
    CHECK(r.cone_slack.minCoeff() > -1e-8);
    for (int i = 0; i < net.num_nodes(); ++i) {
        CHECK(r.w_diag(i) >= cfg.v_min * cfg.v_min - 1e-8);
        CHECK(r.w_diag(i) <= cfg.v_max * cfg.v_max + 1e-8);
    }
}

TEST_CASE("binding voltage limit produces a nonzero dual") {
    const Network net = three_bus();
    TimestepInputs in = blank_inputs(net);
    in.p_load_kw[2] = 32.0;
    in.load_cap[2] = 32.0;
    in.p_flex_max[2] = 2.0;
    in.lam_p_plus[2] = 0.2;
    RdopfConfig cfg;
    const DispatchResult r = solve_soc_rdopf(net, in, cfg);
    const Eigen::VectorXd duals = extract_power_balance_duals(r);
    CHECK(std::abs(duals(2)) > 1e-6);
}

TEST_CASE("gated bounds equal explicit gate bits on random instances") {
    const Network net = three_bus();
    std::mt19937_64 rng(2024);
    std::uniform_real_distribution<double> load(0.0, 20.0);
    std::uniform_real_distribution<double> gen(0.0, 15.0);
    std::uniform_real_distribution<double> bound(0.0, 3.0);
    std::uniform_real_distribution<double> price(0.05, 0.35);
    std::bernoulli_distribution gate(0.5);
    RdopfConfig cfg;

    int checked = 0;
    for (int trial = 0; trial < 60; ++trial) {
        TimestepInputs in = blank_inputs(net);
        std::vector<std::uint8_t> z1(3), z2(3), z3(3), z4(3);
        for (int i = 1; i < 3; ++i) {
            in.p_load_kw[i] = load(rng);
            in.q_load_kvar[i] = 0.2 * in.p_load_kw[i];
            in.p_gen_kw[i] = gen(rng);
            in.load_cap[i] = in.p_load_kw[i];
            in.gen_cap[i] = in.p_gen_kw[i];
            in.p_flex_max[i] = bound(rng);
            in.p_flex_min[i] = -bound(rng);
            in.q_flex_max[i] = bound(rng);
            in.q_flex_min[i] = -bound(rng);
            in.lam_p_plus[i] = price(rng);
            in.lam_p_minus[i] = -price(rng);
            in.lam_q_plus[i] = price(rng);
            in.lam_q_minus[i] = -price(rng);
            z1[i] = gate(rng);
            z2[i] = gate(rng);
            z3[i] = gate(rng);
            z4[i] = gate(rng);
        }

        // Route A: gate bits passed to the solver as explicit binaries.
        TimestepInputs with_bits = in;
        with_bits.z1 = z1;
        with_bits.z2 = z2;
        with_bits.z3 = z3;
        with_bits.z4 = z4;

        // Route B: bounds pre-multiplied by the bits, no binaries anywhere.
        TimestepInputs gated = in;
        for (int i = 0; i < 3; ++i) {
            gated.p_flex_max[i] *= z1[i];
            gated.p_flex_min[i] *= z2[i];
            gated.q_flex_max[i] *= z3[i];
            gated.q_flex_min[i] *= z4[i];
        }

        const DispatchResult a = solve_soc_rdopf(net, with_bits, cfg);
        const DispatchResult b = solve_soc_rdopf(net, gated, cfg);
        CHECK(std::abs(a.sigma - b.sigma) <= 1e-6);
        ++checked;
    }
    CHECK(checked >= 50);
}

TEST_CASE("infeasible even under full curtailment raises a certificate") {
    // A feeder whose no-load state already violates the upper voltage bound
    // can never be dispatched into compliance.
    Bases bases;
    std::vector<Node> nodes = {
        {0, NodeKind::Substation, 0.0, 0.0, 0.0, false},
        {1, NodeKind::Prosumer, 0.0, 0.0, 5.0, true},
    };
    std::vector<Branch> branches = {{0, 1, 0.1, 0.05, 0.5, -0.5, 0.5}};
    const Network net{bases, 0, std::move(nodes), std::move(branches)};
    TimestepInputs in = blank_inputs(net);
    in.p_load_kw[1] = 5.0;
    in.load_cap[1] = 5.0;
    RdopfConfig cfg;
    cfg.v_max = 0.999;  // even the unloaded flat profile violates this
    cfg.v_min = 0.9;
    CHECK_THROWS_AS(solve_soc_rdopf(net, in, cfg), InfeasibleError);
}
