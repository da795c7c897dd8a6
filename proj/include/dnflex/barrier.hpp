#pragma once

#include <vector>

#include <Eigen/Dense>

#include "dnflex/network.hpp"

namespace dnflex {

struct SolverError : Error {
    using Error::Error;
};
struct InfeasibleError : Error {
    using Error::Error;
};

struct BarrierOptions {
    double t0 = 8.0;
    double mu = 12.0;
    double gap_tol = 1e-8;     // m / t stopping threshold
    double newton_tol = 1e-9;  // KKT residual per centering step, relative to t
    double stall_tol = 1e-5;   // accept a stalled center if residual < this * t
    int max_newton = 400;
    double feas_tol = 1e-6;    // final equality residual requirement
};

struct BarrierResult {
    Eigen::VectorXd x;
    Eigen::VectorXd eq_duals;  // per equality row; nu_i = -d(objective)/d(rhs_i)
    double objective = 0.0;
    double gap_bound = 0.0;
    int newton_iters = 0;
};

// Convex program  min c'x  s.t.  A x = b,  x in the interior of a product
// of barrier domains. Solved by log-barrier path following with
// infeasible-start Newton steps; equality duals come out of the KKT solve.
class BarrierProblem {
  public:
    explicit BarrierProblem(int num_vars);

    int num_vars() const { return n_; }
    int num_equalities() const { return static_cast<int>(b_.size()); }
    int num_inequalities() const;

    Eigen::VectorXd& objective() { return c_; }

    // a'x = rhs
    int add_equality(const std::vector<std::pair<int, double>>& terms, double rhs);
    // lo <= x_i <= hi; infinite ends allowed
    void add_box(int var, double lo, double hi);
    // a'x <= ub
    void add_lin_ineq(const std::vector<std::pair<int, double>>& terms, double ub);
    // p(x)^2 + q(x)^2 <= r^2 with p, q affine
    void add_quad_ball(const std::vector<std::pair<int, double>>& p_terms, double p0,
                       const std::vector<std::pair<int, double>>& q_terms, double q0,
                       double radius);
    // x_r^2 + x_s^2 <= x_u * x_v (rotated cone, x_u, x_v > 0)
    void add_rotated_cone(int u, int v, int r, int s);

    // x0 must lie strictly inside every barrier domain (equalities may be
    // violated). Throws InfeasibleError / SolverError on failure.
    BarrierResult solve(const Eigen::VectorXd& x0,
                        const BarrierOptions& opt = {}) const;

    bool in_domain(const Eigen::VectorXd& x) const;
    // Smallest inequality margin (positive inside the domain).
    double domain_margin(const Eigen::VectorXd& x) const;

  private:
    struct Box {
        int var;
        double lo, hi;
    };
    struct LinIneq {
        Eigen::VectorXd a;
        double ub;
    };
    struct QuadBall {
        Eigen::VectorXd pa, qa;
        double p0, q0, r2;
    };
    struct RotCone {
        int u, v, r, s;
    };

    // phi, grad, hess accumulated over all barrier terms; returns false if
    // x is outside the domain.
    bool eval_barrier(const Eigen::VectorXd& x, double* phi, Eigen::VectorXd* grad,
                      Eigen::MatrixXd* hess) const;

    int n_;
    Eigen::VectorXd c_;
    std::vector<Eigen::VectorXd> eq_rows_;
    std::vector<double> b_;
    std::vector<Box> boxes_;
    std::vector<LinIneq> lin_;
    std::vector<QuadBall> quad_;
    std::vector<RotCone> cones_;
};

}  // namespace dnflex
