#include "dnflex/powerflow.hpp"

#include <cmath>

#include <Eigen/Dense>

namespace dnflex {

namespace {

using Eigen::MatrixXcd;
using Eigen::MatrixXd;
using Eigen::VectorXd;

MatrixXcd build_ybus(const Network& net) {
    const int n = net.num_nodes();
    MatrixXcd y = MatrixXcd::Zero(n, n);
    for (int b = 0; b < net.num_branches(); ++b) {
        const Branch& br = net.branch(b);
        const std::complex<double> yb = 1.0 / std::complex<double>(br.r_pu, br.x_pu);
        const int f = net.from_index(b), t = net.to_index(b);
        y(f, f) += yb;
        y(t, t) += yb;
        y(f, t) -= yb;
        y(t, f) -= yb;
    }
    return y;
}

}  // namespace

Injections injections_from_profiles(const Network& net, const Profiles& prof, int t) {
    const double s_base = net.bases().s_base_kva;
    Injections inj(net.num_nodes());
    for (int i = 0; i < net.num_nodes(); ++i) {
        const double p = (prof.p_gen_kw[i][t] - prof.p_load_kw[i][t]) / s_base;
        const double q = -prof.q_load_kvar[i][t] / s_base;
        inj[i] = {p, q};
    }
    return inj;
}

NetworkState solve_power_flow(const Network& net, const Injections& inj,
                              double tol, int max_iter) {
    const int n = net.num_nodes();
    if (static_cast<int>(inj.size()) != n)
        throw ValidationError("injection vector size does not match network");
    const int slack = net.slack_index();
    const MatrixXcd ybus = build_ybus(net);
    const MatrixXd g = ybus.real(), b = ybus.imag();

    // Indices of non-slack nodes in the reduced unknown vector.
    std::vector<int> pq;
    pq.reserve(n - 1);
    for (int i = 0; i < n; ++i)
        if (i != slack) pq.push_back(i);
    const int m = static_cast<int>(pq.size());

    VectorXd vm = VectorXd::Ones(n);
    VectorXd va = VectorXd::Zero(n);

    VectorXd p_calc(n), q_calc(n);
    auto compute_pq = [&]() {
        for (int i = 0; i < n; ++i) {
            double pi = 0.0, qi = 0.0;
            for (int j = 0; j < n; ++j) {
                if (g(i, j) == 0.0 && b(i, j) == 0.0) continue;
                const double d = va(i) - va(j);
                const double c = std::cos(d), s = std::sin(d);
                pi += vm(i) * vm(j) * (g(i, j) * c + b(i, j) * s);
                qi += vm(i) * vm(j) * (g(i, j) * s - b(i, j) * c);
            }
            p_calc(i) = pi;
            q_calc(i) = qi;
        }
    };

    double mismatch = 0.0;
    bool converged = false;
    for (int it = 0; it <= max_iter; ++it) {
        compute_pq();
        VectorXd f(2 * m);
        for (int k = 0; k < m; ++k) {
            f(k) = p_calc(pq[k]) - inj[pq[k]].real();
            f(m + k) = q_calc(pq[k]) - inj[pq[k]].imag();
        }
        mismatch = f.lpNorm<Eigen::Infinity>();
        if (mismatch < tol) {
            converged = true;
            break;
        }
        if (it == max_iter) break;

        MatrixXd jac(2 * m, 2 * m);
        for (int a = 0; a < m; ++a) {
            const int i = pq[a];
            for (int c = 0; c < m; ++c) {
                const int j = pq[c];
                if (i == j) {
                    jac(a, c) = -q_calc(i) - b(i, i) * vm(i) * vm(i);
                    jac(a, m + c) = p_calc(i) / vm(i) + g(i, i) * vm(i);
                    jac(m + a, c) = p_calc(i) - g(i, i) * vm(i) * vm(i);
                    jac(m + a, m + c) = q_calc(i) / vm(i) - b(i, i) * vm(i);
                } else {
                    const double d = va(i) - va(j);
                    const double co = std::cos(d), si = std::sin(d);
                    const double gb1 = g(i, j) * si - b(i, j) * co;
                    const double gb2 = g(i, j) * co + b(i, j) * si;
                    jac(a, c) = vm(i) * vm(j) * gb1;
                    jac(a, m + c) = vm(i) * gb2;
                    jac(m + a, c) = -vm(i) * vm(j) * gb2;
                    jac(m + a, m + c) = vm(i) * gb1;
                }
            }
        }
        Eigen::FullPivLU<MatrixXd> lu(jac);
        lu.setThreshold(1e-12);
        if (!lu.isInvertible())
            throw ConditioningError("singular power-flow Jacobian");
        VectorXd dx = lu.solve(-f);
        if (!dx.allFinite())
            throw ConditioningError("non-finite Newton step in power flow");
        for (int k = 0; k < m; ++k) {
            va(pq[k]) += dx(k);
            vm(pq[k]) += dx(m + k);
        }
        if (vm.minCoeff() <= 0.0)
            throw DivergenceError("voltage magnitude collapsed", mismatch);
    }
    if (!converged)
        throw DivergenceError("power flow did not converge in " +
                                  std::to_string(max_iter) + " iterations",
                              mismatch);

    NetworkState st;
    st.v_mag.assign(vm.data(), vm.data() + n);
    st.v_ang.assign(va.data(), va.data() + n);
    const int nb = net.num_branches();
    st.flow_fwd.resize(nb);
    st.flow_rev.resize(nb);
    st.loading_pct.resize(nb);
    st.branch_loss_kw.resize(nb);
    st.total_loss_kw = 0.0;
    const double s_base = net.bases().s_base_kva;
    for (int bidx = 0; bidx < nb; ++bidx) {
        const Branch& br = net.branch(bidx);
        const int u = net.upstream_index(bidx), d = net.downstream_index(bidx);
        const std::complex<double> y = 1.0 / std::complex<double>(br.r_pu, br.x_pu);
        const std::complex<double> vu = std::polar(vm(u), va(u));
        const std::complex<double> vd = std::polar(vm(d), va(d));
        st.flow_fwd[bidx] = vu * std::conj(y * (vu - vd));
        st.flow_rev[bidx] = vd * std::conj(y * (vd - vu));
        const double mag =
            std::max(std::abs(st.flow_fwd[bidx]), std::abs(st.flow_rev[bidx]));
        const double sign = st.flow_fwd[bidx].real() < 0.0 ? -1.0 : 1.0;
        st.loading_pct[bidx] = sign * mag / br.s_max_pu * 100.0;
        st.branch_loss_kw[bidx] =
            (st.flow_fwd[bidx].real() + st.flow_rev[bidx].real()) * s_base;
        st.total_loss_kw += st.branch_loss_kw[bidx];
    }
    return st;
}

std::vector<NetworkState> simulate_horizon(const Network& net, const Profiles& prof) {
    std::vector<NetworkState> states;
    states.reserve(prof.horizon);
    for (int t = 0; t < prof.horizon; ++t) {
        try {
            NetworkState st = solve_power_flow(net, injections_from_profiles(net, prof, t));
            st.t = t;
            states.push_back(std::move(st));
        } catch (const Error& e) {
            throw DivergenceError("t=" + std::to_string(t) + ": " + e.what(), 0.0);
        }
    }
    return states;
}

std::complex<double> slack_injection(const Network& net, const NetworkState& st) {
    std::complex<double> s = 0.0;
    const int slack = net.slack_index();
    for (int b : net.incident_branches(slack)) {
        s += net.upstream_index(b) == slack ? st.flow_fwd[b] : st.flow_rev[b];
    }
    return s;
}

}  // namespace dnflex
