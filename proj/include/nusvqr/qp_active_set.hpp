#pragma once

// Primal active-set method for small dense QPs with arbitrary equality and
// inequality coefficients. The Hessian may be singular: zero-curvature
// descent directions are followed to the nearest blocking constraint, which
// always exists because the box is bounded.

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <vector>

#include "nusvqr/error.hpp"
#include "nusvqr/qp_problem.hpp"

namespace nusvqr::detail {

/// Minimizes g'z over { lo <= z <= hi, a'z = r } (continuous knapsack, solved
/// by sweeping the breakpoints g_i / a_i of the Lagrangian relaxation).
inline Eigen::VectorXd knapsack_min(const Eigen::VectorXd& g, const Eigen::VectorXd& a, double r,
                                    const Eigen::VectorXd& lo, const Eigen::VectorXd& hi) {
    const Eigen::Index m = g.size();
    Eigen::VectorXd z(m);
    double s = 0.0;
    std::vector<Eigen::Index> movable;
    for (Eigen::Index i = 0; i < m; ++i) {
        if (a(i) == 0.0) {
            z(i) = g(i) > 0.0 ? lo(i) : (g(i) < 0.0 ? hi(i) : lo(i));
            continue;
        }
        z(i) = a(i) > 0.0 ? lo(i) : hi(i);  // smallest contribution to a'z
        s += a(i) * z(i);
        movable.push_back(i);
    }
    std::stable_sort(movable.begin(), movable.end(),
                     [&](Eigen::Index x, Eigen::Index y) { return g(x) / a(x) < g(y) / a(y); });
    const double tol = 1e-12 * (1.0 + std::abs(r) + a.cwiseAbs().dot(lo.cwiseAbs() + hi.cwiseAbs()));
    if (s > r + tol) throw InfeasibleError("equality constraint cannot be met inside the box");
    for (Eigen::Index i : movable) {
        if (s >= r) break;
        const double full = std::abs(a(i)) * (hi(i) - lo(i));
        if (s + full >= r) {
            const double frac = (r - s) / std::abs(a(i));
            z(i) = a(i) > 0.0 ? lo(i) + frac : hi(i) - frac;
            z(i) = std::clamp(z(i), lo(i), hi(i));
            s = r;
            break;
        }
        z(i) = a(i) > 0.0 ? hi(i) : lo(i);
        s += full;
    }
    if (s < r - tol) throw InfeasibleError("equality constraint cannot be met inside the box");
    return z;
}

class ActiveSetSolver {
public:
    ActiveSetSolver(const QpProblem& p, QpOptions opt) : p_(p), opt_(opt), q_(p.quad.to_dense()), m_(p.size()) {}

    QpSolution solve() {
        init();
        long iter = 0;
        for (; iter < opt_.max_iter; ++iter) {
            const Eigen::VectorXd grad = q_ * z_ + p_.linear;
            Direction dir = direction(grad);
            if (dir.p.lpNorm<Eigen::Infinity>() <= 1e-14 * (1.0 + z_.lpNorm<Eigen::Infinity>())) {
                Multipliers mult = multipliers(grad);
                if (mult.worst < 0) return finish(iter, mult);
                release(mult.worst);
                continue;
            }
            step(dir);
        }
        const Eigen::VectorXd grad = q_ * z_ + p_.linear;
        const Multipliers mult = multipliers(grad);
        const auto sol = finish(iter, mult);
        throw NonConvergenceError("active-set solver reached max_iter=" + std::to_string(opt_.max_iter),
                                  std::vector<double>(z_.data(), z_.data() + z_.size()), sol.kkt_residual, iter);
    }

private:
    enum class Bound : signed char { Free = 0, Lower = 1, Upper = 2 };

    struct Direction {
        Eigen::VectorXd p;
        bool unbounded = false;  // zero-curvature ray, full step is not defined
    };

    struct Multipliers {
        double mu = 0.0;
        double lambda = 0.0;
        Eigen::VectorXd bound;  // per coordinate, sign-adjusted so >= 0 is correct
        Eigen::Index worst = -1;  // coordinate to release, m_ for the inequality, -1 if optimal
    };

    void init() {
        if (p_.ineq) {
            z_ = knapsack_min(p_.ineq->coeffs, p_.eq_coeffs, p_.eq_rhs, p_.lower, p_.upper);
            if (p_.ineq->coeffs.dot(z_) > p_.ineq->rhs + 1e-12 * (1.0 + std::abs(p_.ineq->rhs))) {
                throw InfeasibleError("inequality constraint cannot be met together with the equality");
            }
        } else {
            z_ = knapsack_min(Eigen::VectorXd::Zero(m_), p_.eq_coeffs, p_.eq_rhs, p_.lower, p_.upper);
        }
        state_.assign(static_cast<std::size_t>(m_), Bound::Free);
        ineq_in_ = false;
        // Working set: only constraints that stay linearly independent of the ones already in.
        std::vector<Eigen::VectorXd> normals{p_.eq_coeffs};
        auto independent = [&](const Eigen::VectorXd& n) {
            Eigen::MatrixXd a(m_, static_cast<Eigen::Index>(normals.size()) + 1);
            for (std::size_t k = 0; k < normals.size(); ++k) a.col(static_cast<Eigen::Index>(k)) = normals[k];
            a.col(a.cols() - 1) = n;
            Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(a);
            qr.setThreshold(1e-10);
            return qr.rank() == a.cols();
        };
        for (Eigen::Index i = 0; i < m_; ++i) {
            const bool lo = z_(i) <= p_.lower(i);
            const bool hi = z_(i) >= p_.upper(i);
            if (!lo && !hi) continue;
            Eigen::VectorXd e = Eigen::VectorXd::Unit(m_, i);
            if (independent(e)) {
                normals.push_back(e);
                state_[static_cast<std::size_t>(i)] = lo ? Bound::Lower : Bound::Upper;
                z_(i) = lo ? p_.lower(i) : p_.upper(i);
            }
        }
        if (p_.ineq && p_.ineq->coeffs.dot(z_) >= p_.ineq->rhs - 1e-12 * (1.0 + std::abs(p_.ineq->rhs)) &&
            independent(p_.ineq->coeffs)) {
            ineq_in_ = true;
        }
    }

    [[nodiscard]] std::vector<Eigen::Index> free_indices() const {
        std::vector<Eigen::Index> f;
        for (Eigen::Index i = 0; i < m_; ++i) {
            if (state_[static_cast<std::size_t>(i)] == Bound::Free) f.push_back(i);
        }
        return f;
    }

    Direction direction(const Eigen::VectorXd& grad) const {
        Direction d;
        d.p = Eigen::VectorXd::Zero(m_);
        const auto free = free_indices();
        const auto nf = static_cast<Eigen::Index>(free.size());
        if (nf == 0) return d;

        const Eigen::Index rows = ineq_in_ ? 2 : 1;
        Eigen::MatrixXd at(nf, rows);  // constraint normals restricted to free coordinates
        Eigen::VectorXd gf(nf);
        Eigen::MatrixXd qff(nf, nf);
        for (Eigen::Index r = 0; r < nf; ++r) {
            at(r, 0) = p_.eq_coeffs(free[static_cast<std::size_t>(r)]);
            if (ineq_in_) at(r, 1) = p_.ineq->coeffs(free[static_cast<std::size_t>(r)]);
            gf(r) = grad(free[static_cast<std::size_t>(r)]);
            for (Eigen::Index c = 0; c < nf; ++c) {
                qff(r, c) = q_(free[static_cast<std::size_t>(r)], free[static_cast<std::size_t>(c)]);
            }
        }
        Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(at);
        qr.setThreshold(1e-12);
        const Eigen::Index rank = qr.rank();
        if (rank >= nf) return d;
        const Eigen::MatrixXd qfull = qr.householderQ() * Eigen::MatrixXd::Identity(nf, nf);
        const Eigen::MatrixXd z = qfull.rightCols(nf - rank);

        const Eigen::MatrixXd h = z.transpose() * qff * z;
        const Eigen::VectorXd rg = z.transpose() * gf;
        const Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(h);
        const Eigen::VectorXd& ev = es.eigenvalues();
        const Eigen::MatrixXd& vecs = es.eigenvectors();
        const double cut = 1e-11 * std::max(1.0, ev.cwiseAbs().maxCoeff());
        const Eigen::VectorXd proj = vecs.transpose() * rg;
        const double gscale = 1e-12 * (1.0 + gf.cwiseAbs().maxCoeff());

        Eigen::VectorXd pz = Eigen::VectorXd::Zero(z.cols());
        bool flat_descent = false;
        for (Eigen::Index k = 0; k < ev.size(); ++k) {
            if (ev(k) <= cut && std::abs(proj(k)) > gscale) {
                pz -= proj(k) * vecs.col(k);
                flat_descent = true;
            }
        }
        if (!flat_descent) {
            for (Eigen::Index k = 0; k < ev.size(); ++k) {
                if (ev(k) > cut) pz -= (proj(k) / ev(k)) * vecs.col(k);
            }
        }
        const Eigen::VectorXd pf = z * pz;
        for (Eigen::Index r = 0; r < nf; ++r) d.p(free[static_cast<std::size_t>(r)]) = pf(r);
        d.unbounded = flat_descent;
        return d;
    }

    void step(const Direction& dir) {
        constexpr double kInf = std::numeric_limits<double>::infinity();
        double alpha = dir.unbounded ? kInf : 1.0;
        Eigen::Index block = -1;
        for (Eigen::Index i = 0; i < m_; ++i) {
            if (state_[static_cast<std::size_t>(i)] != Bound::Free) continue;
            const double pi = dir.p(i);
            double a = kInf;
            if (pi < 0.0) a = std::max(0.0, z_(i) - p_.lower(i)) / -pi;
            if (pi > 0.0) a = std::max(0.0, p_.upper(i) - z_(i)) / pi;
            if (a < alpha) {
                alpha = a;
                block = i;
            }
        }
        if (p_.ineq && !ineq_in_) {
            const double gp = p_.ineq->coeffs.dot(dir.p);
            if (gp > 0.0) {
                const double a = std::max(0.0, p_.ineq->rhs - p_.ineq->coeffs.dot(z_)) / gp;
                if (a < alpha) {
                    alpha = a;
                    block = m_;
                }
            }
        }
        if (std::isinf(alpha)) throw InputError("QP is unbounded below along a feasible ray");
        z_ += alpha * dir.p;
        for (Eigen::Index i = 0; i < m_; ++i) z_(i) = std::clamp(z_(i), p_.lower(i), p_.upper(i));
        if (block == m_) {
            ineq_in_ = true;
        } else if (block >= 0) {
            const bool lo = dir.p(block) < 0.0;
            z_(block) = lo ? p_.lower(block) : p_.upper(block);
            state_[static_cast<std::size_t>(block)] = lo ? Bound::Lower : Bound::Upper;
        }
    }

    // Stationarity over the working set: grad = mu a - lambda g + sum_bounds nu_i (+/- e_i).
    Multipliers multipliers(const Eigen::VectorXd& grad) const {
        std::vector<Eigen::Index> bounded;
        for (Eigen::Index i = 0; i < m_; ++i) {
            if (state_[static_cast<std::size_t>(i)] != Bound::Free) bounded.push_back(i);
        }
        const Eigen::Index nb = static_cast<Eigen::Index>(bounded.size());
        const Eigen::Index cols = nb + 1 + (ineq_in_ ? 1 : 0);
        Eigen::MatrixXd n = Eigen::MatrixXd::Zero(m_, cols);
        n.col(0) = p_.eq_coeffs;
        if (ineq_in_) n.col(1) = -p_.ineq->coeffs;
        const Eigen::Index off = ineq_in_ ? 2 : 1;
        for (Eigen::Index k = 0; k < nb; ++k) {
            const Eigen::Index i = bounded[static_cast<std::size_t>(k)];
            n(i, off + k) = state_[static_cast<std::size_t>(i)] == Bound::Lower ? 1.0 : -1.0;
        }
        const Eigen::VectorXd nu = n.colPivHouseholderQr().solve(grad);

        Multipliers out;
        out.mu = nu(0);
        out.lambda = ineq_in_ ? nu(1) : 0.0;
        out.bound = Eigen::VectorXd::Zero(m_);
        double most_negative = -1e-12 * (1.0 + grad.cwiseAbs().maxCoeff());
        if (ineq_in_ && out.lambda < most_negative) {
            most_negative = out.lambda;
            out.worst = m_;
        }
        for (Eigen::Index k = 0; k < nb; ++k) {
            const Eigen::Index i = bounded[static_cast<std::size_t>(k)];
            out.bound(i) = nu(off + k);
            if (nu(off + k) < most_negative) {
                most_negative = nu(off + k);
                out.worst = i;
            }
        }
        return out;
    }

    void release(Eigen::Index idx) {
        if (idx == m_) {
            ineq_in_ = false;
        } else {
            state_[static_cast<std::size_t>(idx)] = Bound::Free;
        }
    }

    QpSolution finish(long iterations, const Multipliers& mult) const {
        QpSolution sol;
        sol.z = z_;
        sol.eq_multiplier = mult.mu;
        sol.ineq_multiplier = std::max(0.0, mult.lambda);
        sol.iterations = iterations;
        sol.method = "active-set";
        const Eigen::VectorXd grad = q_ * z_ + p_.linear;
        sol.objective = 0.5 * z_.dot(grad + p_.linear);
        sol.kkt_residual = kkt_certificate(p_, z_, sol.eq_multiplier, sol.ineq_multiplier, &grad).total();
        return sol;
    }

    const QpProblem& p_;
    QpOptions opt_;
    Eigen::MatrixXd q_;
    Eigen::Index m_;
    Eigen::VectorXd z_;
    std::vector<Bound> state_;
    bool ineq_in_ = false;
};

}  // namespace nusvqr::detail
