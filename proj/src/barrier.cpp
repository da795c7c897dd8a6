#include "dnflex/barrier.hpp"

#include <cmath>
#include <limits>

namespace dnflex {

using Eigen::MatrixXd;
using Eigen::VectorXd;

namespace {
constexpr double kInf = std::numeric_limits<double>::infinity();
}

BarrierProblem::BarrierProblem(int num_vars)
    : n_(num_vars), c_(VectorXd::Zero(num_vars)) {}

int BarrierProblem::num_inequalities() const {
    int m = 0;
    for (const Box& b : boxes_) {
        if (b.lo > -kInf) ++m;
        if (b.hi < kInf) ++m;
    }
    m += static_cast<int>(lin_.size() + quad_.size() + cones_.size());
    return m;
}

int BarrierProblem::add_equality(const std::vector<std::pair<int, double>>& terms,
                                 double rhs) {
    VectorXd row = VectorXd::Zero(n_);
    for (auto [i, v] : terms) row(i) += v;
    eq_rows_.push_back(std::move(row));
    b_.push_back(rhs);
    return static_cast<int>(b_.size()) - 1;
}

void BarrierProblem::add_box(int var, double lo, double hi) {
    if (lo >= hi) throw SolverError("empty box bound");
    boxes_.push_back({var, lo, hi});
}

void BarrierProblem::add_lin_ineq(const std::vector<std::pair<int, double>>& terms,
                                  double ub) {
    VectorXd a = VectorXd::Zero(n_);
    for (auto [i, v] : terms) a(i) += v;
    lin_.push_back({std::move(a), ub});
}

void BarrierProblem::add_quad_ball(const std::vector<std::pair<int, double>>& p_terms,
                                   double p0,
                                   const std::vector<std::pair<int, double>>& q_terms,
                                   double q0, double radius) {
    QuadBall qb;
    qb.pa = VectorXd::Zero(n_);
    qb.qa = VectorXd::Zero(n_);
    for (auto [i, v] : p_terms) qb.pa(i) += v;
    for (auto [i, v] : q_terms) qb.qa(i) += v;
    qb.p0 = p0;
    qb.q0 = q0;
    qb.r2 = radius * radius;
    quad_.push_back(std::move(qb));
}

void BarrierProblem::add_rotated_cone(int u, int v, int r, int s) {
    cones_.push_back({u, v, r, s});
}

bool BarrierProblem::eval_barrier(const VectorXd& x, double* phi, VectorXd* grad,
                                  MatrixXd* hess) const {
    double f = 0.0;
    for (const Box& b : boxes_) {
        if (b.lo > -kInf) {
            const double s = x(b.var) - b.lo;
            if (s <= 0.0) return false;
            f -= std::log(s);
            if (grad) (*grad)(b.var) -= 1.0 / s;
            if (hess) (*hess)(b.var, b.var) += 1.0 / (s * s);
        }
        if (b.hi < kInf) {
            const double s = b.hi - x(b.var);
            if (s <= 0.0) return false;
            f -= std::log(s);
            if (grad) (*grad)(b.var) += 1.0 / s;
            if (hess) (*hess)(b.var, b.var) += 1.0 / (s * s);
        }
    }
    for (const LinIneq& l : lin_) {
        const double s = l.ub - l.a.dot(x);
        if (s <= 0.0) return false;
        f -= std::log(s);
        if (grad) *grad += l.a / s;
        if (hess) hess->noalias() += (l.a * l.a.transpose()) / (s * s);
    }
    for (const QuadBall& q : quad_) {
        const double p = q.pa.dot(x) + q.p0;
        const double qq = q.qa.dot(x) + q.q0;
        const double s = q.r2 - p * p - qq * qq;
        if (s <= 0.0) return false;
        f -= std::log(s);
        if (grad || hess) {
            VectorXd ds = -2.0 * (p * q.pa + qq * q.qa);  // gradient of s
            if (grad) *grad -= ds / s;
            if (hess) {
                // -d2s/s + ds ds'/s^2 with d2s = -2(pa pa' + qa qa')
                hess->noalias() += (2.0 / s) * (q.pa * q.pa.transpose());
                hess->noalias() += (2.0 / s) * (q.qa * q.qa.transpose());
                hess->noalias() += (ds * ds.transpose()) / (s * s);
            }
        }
    }
    for (const RotCone& cn : cones_) {
        const double u = x(cn.u), v = x(cn.v), r = x(cn.r), s_ = x(cn.s);
        if (u <= 0.0 || v <= 0.0) return false;
        const double s = u * v - r * r - s_ * s_;
        if (s <= 0.0) return false;
        f -= std::log(s);
        if (grad) {
            (*grad)(cn.u) -= v / s;
            (*grad)(cn.v) -= u / s;
            (*grad)(cn.r) += 2.0 * r / s;
            (*grad)(cn.s) += 2.0 * s_ / s;
        }
        if (hess) {
            // ds = (v, u, -2r, -2s); d2s has uv cross term 1 and -2 diagonals.
            const int idx[4] = {cn.u, cn.v, cn.r, cn.s};
            const double ds[4] = {v, u, -2.0 * r, -2.0 * s_};
            for (int a = 0; a < 4; ++a)
                for (int bb = 0; bb < 4; ++bb)
                    (*hess)(idx[a], idx[bb]) += ds[a] * ds[bb] / (s * s);
            (*hess)(cn.u, cn.v) -= 1.0 / s;
            (*hess)(cn.v, cn.u) -= 1.0 / s;
            (*hess)(cn.r, cn.r) += 2.0 / s;
            (*hess)(cn.s, cn.s) += 2.0 / s;
        }
    }
    if (phi) *phi = f;
    return true;
}

bool BarrierProblem::in_domain(const VectorXd& x) const {
    return eval_barrier(x, nullptr, nullptr, nullptr);
}

double BarrierProblem::domain_margin(const VectorXd& x) const {
    double margin = kInf;
    for (const Box& b : boxes_) {
        if (b.lo > -kInf) margin = std::min(margin, x(b.var) - b.lo);
        if (b.hi < kInf) margin = std::min(margin, b.hi - x(b.var));
    }
    for (const LinIneq& l : lin_) margin = std::min(margin, l.ub - l.a.dot(x));
    for (const QuadBall& q : quad_) {
        const double p = q.pa.dot(x) + q.p0;
        const double qq = q.qa.dot(x) + q.q0;
        margin = std::min(margin, q.r2 - p * p - qq * qq);
    }
    for (const RotCone& cn : cones_) {
        margin = std::min(margin, x(cn.u) * x(cn.v) - x(cn.r) * x(cn.r) -
                                      x(cn.s) * x(cn.s));
    }
    return margin;
}

BarrierResult BarrierProblem::solve(const VectorXd& x0,
                                    const BarrierOptions& opt) const {
    if (!in_domain(x0))
        throw SolverError("barrier start point is not strictly feasible");

    const int n = n_;
    const int p = num_equalities();
    const int m = num_inequalities();

    MatrixXd A(p, n);
    VectorXd b(p);
    for (int i = 0; i < p; ++i) {
        A.row(i) = eq_rows_[i].transpose();
        b(i) = b_[i];
    }

    VectorXd x = x0;
    VectorXd nu = VectorXd::Zero(p);
    double t = opt.t0;
    int total_newton = 0;

    // Minimum-norm equality correction, reused to pin iterates onto Ax = b.
    Eigen::CompleteOrthogonalDecomposition<MatrixXd> a_cod;
    if (p > 0) a_cod.compute(A);
    const auto reproject = [&](VectorXd& xn) {
        if (p == 0) return;
        VectorXd corr = a_cod.solve(b - A * xn);
        if (in_domain(xn + corr)) xn += corr;
    };

    MatrixXd kkt(n + p, n + p);
    VectorXd rhs(n + p), grad(n);
    MatrixXd hess(n, n);

    // Centering on min c'x + phi(x)/t s.t. Ax = b. Residuals and duals stay
    // O(1) in this scaling; nu is directly the equality dual. Returns false
    // when the subproblem cannot be centered at this t (numerical floor or
    // ill-conditioning), leaving x/nu wherever the iteration stopped.
    enum class Center { Converged, Floor, Fail };
    const auto center = [&](double tc) -> Center {
        double prev_res = kInf;
        int stalled = 0;
        for (int it = 0;; ++it) {
            ++total_newton;
            grad.setZero();
            hess.setZero();
            double phi;
            if (!eval_barrier(x, &phi, &grad, &hess)) return Center::Fail;
            VectorXd r_dual = c_ + grad / tc + A.transpose() * nu;
            VectorXd r_pri = A * x - b;
            const double res = std::sqrt(r_dual.squaredNorm() + r_pri.squaredNorm());
            const bool feas = p == 0 || r_pri.lpNorm<Eigen::Infinity>() < opt.feas_tol;
            if (res < opt.newton_tol && feas) return Center::Converged;
            stalled = res > 0.995 * prev_res ? stalled + 1 : 0;
            prev_res = res;
            if (stalled >= 3 && res < opt.stall_tol && feas) return Center::Converged;
            if (it >= opt.max_newton || stalled >= 12)
                return res < 100.0 * opt.stall_tol && feas ? Center::Floor
                                                           : Center::Fail;

            kkt.setZero();
            kkt.topLeftCorner(n, n) = hess / tc;
            kkt.topRightCorner(n, p) = A.transpose();
            kkt.bottomLeftCorner(p, n) = A;
            rhs.head(n) = -r_dual;
            rhs.tail(p) = -r_pri;
            Eigen::FullPivLU<MatrixXd> lu(kkt);
            VectorXd step = lu.solve(rhs);
            if (!step.allFinite()) return Center::Fail;
            VectorXd dx = step.head(n);
            VectorXd dnu = step.tail(p);

            // Backtrack on the residual norm, staying inside the domain.
            double alpha = 1.0;
            bool accepted = false;
            for (int ls = 0; ls < 60; ++ls) {
                VectorXd xn = x + alpha * dx;
                reproject(xn);
                VectorXd nun = nu + alpha * dnu;
                VectorXd gn = VectorXd::Zero(n);
                double phin;
                if (eval_barrier(xn, &phin, &gn, nullptr)) {
                    VectorXd rd = c_ + gn / tc + A.transpose() * nun;
                    VectorXd rp = A * xn - b;
                    const double resn =
                        std::sqrt(rd.squaredNorm() + rp.squaredNorm());
                    if (resn <= (1.0 - 0.01 * alpha) * res) {
                        x = xn;
                        nu = nun;
                        accepted = true;
                        break;
                    }
                }
                alpha *= 0.5;
            }
            if (!accepted) {
                if (res < opt.stall_tol && feas) return Center::Converged;
                return res < 100.0 * opt.stall_tol && feas ? Center::Floor
                                                           : Center::Fail;
            }
        }
    };

    // Path following with recovery: a failed centering step restores the
    // last centered point and retries with a gentler t increase; once the
    // increase cannot be softened further the achieved gap is kept.
    VectorXd x_best, nu_best;
    bool have_center = false;
    double t_best = t;
    double mu = opt.mu;
    while (true) {
        const Center st = center(t);
        if (st == Center::Fail) {
            if (!have_center)
                throw SolverError("barrier centering failed (t=" +
                                  std::to_string(t) + ")");
            x = x_best;
            nu = nu_best;
            mu = std::sqrt(mu);
            if (mu < 1.2) {
                t = t_best;
                break;
            }
            t = t_best * mu;
            continue;
        }
        x_best = x;
        nu_best = nu;
        t_best = t;
        have_center = true;
        if (st == Center::Floor || static_cast<double>(m) / t < opt.gap_tol) break;
        t *= mu;
    }

    BarrierResult res;
    res.x = x;
    res.eq_duals = nu;
    res.objective = c_.dot(x);
    res.gap_bound = static_cast<double>(m) / t;
    res.newton_iters = total_newton;
    return res;
}

}  // namespace dnflex
