#pragma once

// Pairwise (SMO-type) decomposition for QPs whose equality coefficients are
// all +1 or -1 and whose optional inequality has one coefficient per sign
// class. Every model dual in this library has that shape: alpha carries +1,
// beta carries -1, and the ν inequality weights them by (1-τ) and τ.
//
// A pair move keeps the equality satisfied. Pairs inside one class also keep
// the inequality value fixed; cross-class pairs shift it, so they are clipped
// at the inequality boundary and, once it is active, only the direction that
// decreases it stays admissible. The admissible pair directions generate the
// tangent cone of the feasible set, so "no admissible pair violates by more
// than tol" is the KKT condition at tolerance tol.

#include <Eigen/Dense>

#include <array>
#include <cmath>
#include <limits>
#include <optional>
#include <vector>

#include "nusvqr/error.hpp"
#include "nusvqr/qp_problem.hpp"

namespace nusvqr::detail {

struct TwoClassShape {
    std::vector<signed char> sign;  // +1 or -1 per variable
    double g_pos = 0.0;             // inequality coefficient of the +1 class
    double g_neg = 0.0;             // inequality coefficient of the -1 class
};

inline std::optional<TwoClassShape> detect_two_class(const QpProblem& p) {
    TwoClassShape shape;
    const Eigen::Index m = p.size();
    shape.sign.resize(static_cast<std::size_t>(m));
    bool seen_pos = false;
    bool seen_neg = false;
    for (Eigen::Index i = 0; i < m; ++i) {
        const double a = p.eq_coeffs(i);
        if (a != 1.0 && a != -1.0) return std::nullopt;
        shape.sign[static_cast<std::size_t>(i)] = a > 0 ? 1 : -1;
        if (!p.ineq) continue;
        const double g = p.ineq->coeffs(i);
        double& slot = a > 0 ? shape.g_pos : shape.g_neg;
        bool& seen = a > 0 ? seen_pos : seen_neg;
        if (!seen) {
            slot = g;
            seen = true;
        } else if (slot != g) {
            return std::nullopt;
        }
    }
    if (p.ineq && !(shape.g_pos + shape.g_neg > 0.0)) return std::nullopt;
    return shape;
}

class SmoSolver {
public:
    SmoSolver(const QpProblem& p, TwoClassShape shape, QpOptions opt)
        : p_(p), shape_(std::move(shape)), opt_(opt), m_(p.size()) {}

    QpSolution solve() {
        init_point();
        grad_ = p_.quad.times(z_) + p_.linear;
        refresh_ineq();

        long iter = 0;
        for (;;) {
            Selection sel = select();
            if (sel.converged) {
                // Drift control: rebuild gradient and inequality value, recheck.
                grad_ = p_.quad.times(z_) + p_.linear;
                refresh_ineq();
                sel = select();
                if (sel.converged) break;
            }
            if (iter >= opt_.max_iter) {
                auto sol = finish(iter);
                throw NonConvergenceError("SMO reached max_iter=" + std::to_string(opt_.max_iter) +
                                              " with KKT residual " + std::to_string(sol.kkt_residual),
                                          std::vector<double>(z_.data(), z_.data() + z_.size()), sol.kkt_residual,
                                          iter);
            }
            update(sel);
            ++iter;
            if (iter % kPolishEvery == 0) polish();
        }
        return finish(iter);
    }

private:
    struct Selection {
        bool converged = false;
        Eigen::Index i = -1;
        Eigen::Index j = -1;
        double violation = 0.0;
    };

    [[nodiscard]] int cls(Eigen::Index k) const { return shape_.sign[static_cast<std::size_t>(k)] > 0 ? 0 : 1; }
    [[nodiscard]] double y(Eigen::Index k) const { return shape_.sign[static_cast<std::size_t>(k)]; }
    [[nodiscard]] double gcoef(int c) const { return c == 0 ? shape_.g_pos : shape_.g_neg; }

    [[nodiscard]] bool in_up(Eigen::Index k) const {
        return y(k) > 0 ? z_(k) < p_.upper(k) : z_(k) > p_.lower(k);
    }
    [[nodiscard]] bool in_low(Eigen::Index k) const {
        return y(k) > 0 ? z_(k) > p_.lower(k) : z_(k) < p_.upper(k);
    }

    // Pair (i from class ci, j from class cj) moves z_i += y_i t, z_j -= y_j t.
    // Only (+, -) raises the inequality value.
    [[nodiscard]] bool allowed(int ci, int cj) const {
        if (!p_.ineq) return true;
        if (ci == 0 && cj == 1) return !ineq_active_;
        return true;
    }

    void init_point() {
        // Smallest class sums compatible with S_pos - S_neg = eq_rhs.
        z_ = p_.lower;
        std::array<double, 2> lo_sum{0.0, 0.0};
        std::array<double, 2> hi_sum{0.0, 0.0};
        for (Eigen::Index k = 0; k < m_; ++k) {
            lo_sum[cls(k)] += p_.lower(k);
            hi_sum[cls(k)] += p_.upper(k);
        }
        const double s_neg = std::max(lo_sum[1], lo_sum[0] - p_.eq_rhs);
        const double s_pos = s_neg + p_.eq_rhs;
        const double tol = 1e-12 * (1.0 + std::abs(s_pos) + std::abs(s_neg));
        if (s_pos > hi_sum[0] + tol || s_neg > hi_sum[1] + tol) {
            throw InfeasibleError("equality constraint cannot be met inside the box");
        }
        std::array<double, 2> need{s_pos - lo_sum[0], s_neg - lo_sum[1]};
        for (Eigen::Index k = 0; k < m_; ++k) {
            double& rem = need[cls(k)];
            if (rem <= 0.0) continue;
            const double room = p_.upper(k) - p_.lower(k);
            const double add = std::min(room, rem);
            z_(k) = add == room ? p_.upper(k) : p_.lower(k) + add;
            rem -= add;
        }
        if (p_.ineq) {
            const double w = p_.ineq->coeffs.dot(z_);
            if (w > p_.ineq->rhs + 1e-12 * (1.0 + std::abs(p_.ineq->rhs))) {
                throw InfeasibleError("inequality constraint cannot be met together with the equality");
            }
        }
    }

    void refresh_ineq() {
        if (!p_.ineq) return;
        ineq_value_ = p_.ineq->coeffs.dot(z_);
        const double slack = p_.ineq->rhs - ineq_value_;
        ineq_active_ = slack <= 1e-14 * (1.0 + std::abs(p_.ineq->rhs));
        if (ineq_active_) ineq_value_ = p_.ineq->rhs;
    }

    Selection select() const {
        constexpr double kInf = std::numeric_limits<double>::infinity();
        std::array<double, 2> gmax{-kInf, -kInf};
        std::array<Eigen::Index, 2> imax{-1, -1};
        std::array<double, 2> gmin{kInf, kInf};
        for (Eigen::Index k = 0; k < m_; ++k) {
            const double v = -y(k) * grad_(k);
            const int c = cls(k);
            if (in_up(k) && v > gmax[c]) {
                gmax[c] = v;
                imax[c] = k;
            }
            if (in_low(k) && v < gmin[c]) gmin[c] = v;
        }

        Selection sel;
        for (int ci = 0; ci < 2; ++ci) {
            for (int cj = 0; cj < 2; ++cj) {
                if (imax[ci] < 0 || gmin[cj] == kInf || !allowed(ci, cj)) continue;
                sel.violation = std::max(sel.violation, gmax[ci] - gmin[cj]);
            }
        }
        if (sel.violation <= opt_.tol) {
            sel.converged = true;
            return sel;
        }

        // Second-order choice of j for each candidate i.
        double best = kInf;
        std::array<double, 2> qii{0.0, 0.0};
        for (int c = 0; c < 2; ++c) {
            if (imax[c] >= 0) qii[c] = p_.quad(imax[c], imax[c]);
        }
        for (Eigen::Index k = 0; k < m_; ++k) {
            if (!in_low(k)) continue;
            const double vk = -y(k) * grad_(k);
            const int ck = cls(k);
            for (int ci = 0; ci < 2; ++ci) {
                const Eigen::Index i = imax[ci];
                if (i < 0 || i == k || !allowed(ci, ck)) continue;
                const double diff = gmax[ci] - vk;
                if (diff <= 0.0) continue;
                double quad = qii[ci] + p_.quad(k, k) - 2.0 * y(i) * y(k) * p_.quad(i, k);
                if (quad <= 0.0) quad = kTau;
                const double gain = -(diff * diff) / quad;
                if (gain < best) {
                    best = gain;
                    sel.i = i;
                    sel.j = k;
                }
            }
        }
        if (sel.i < 0) {
            // Violation came from a pair sharing its index; fall back to first-order pairing.
            for (int ci = 0; ci < 2 && sel.i < 0; ++ci) {
                for (Eigen::Index k = 0; k < m_; ++k) {
                    if (in_low(k) && k != imax[ci] && imax[ci] >= 0 && allowed(ci, cls(k)) &&
                        gmax[ci] + y(k) * grad_(k) > opt_.tol) {
                        sel.i = imax[ci];
                        sel.j = k;
                        break;
                    }
                }
            }
            if (sel.i < 0) sel.converged = true;
        }
        return sel;
    }

    void update(const Selection& sel) {
        const Eigen::Index i = sel.i;
        const Eigen::Index j = sel.j;
        const double yi = y(i);
        const double yj = y(j);
        const int ci = cls(i);
        const int cj = cls(j);

        const double diff = (-yi * grad_(i)) - (-yj * grad_(j));
        double quad = p_.quad(i, i) + p_.quad(j, j) - 2.0 * yi * yj * p_.quad(i, j);
        if (quad <= 0.0) quad = kTau;
        double t = diff / quad;

        enum class Limit { None, I, J, Ineq } limit = Limit::None;
        const double room_i = yi > 0 ? p_.upper(i) - z_(i) : z_(i) - p_.lower(i);
        const double room_j = yj > 0 ? z_(j) - p_.lower(j) : p_.upper(j) - z_(j);
        if (room_i <= t) {
            t = room_i;
            limit = Limit::I;
        }
        if (room_j <= t) {
            t = room_j;
            limit = Limit::J;
        }
        double dw = 0.0;
        if (p_.ineq) {
            const double rate = gcoef(ci) * yi - gcoef(cj) * yj;
            if (rate > 0.0) {
                const double room = std::max(0.0, p_.ineq->rhs - ineq_value_) / rate;
                if (room <= t) {
                    t = room;
                    limit = Limit::Ineq;
                }
            }
            dw = rate * t;
        }

        const double dzi = yi * t;
        const double dzj = -yj * t;
        z_(i) += dzi;
        z_(j) += dzj;
        if (limit == Limit::I) z_(i) = yi > 0 ? p_.upper(i) : p_.lower(i);
        if (limit == Limit::J) z_(j) = yj > 0 ? p_.lower(j) : p_.upper(j);
        z_(i) = std::clamp(z_(i), p_.lower(i), p_.upper(i));
        z_(j) = std::clamp(z_(j), p_.lower(j), p_.upper(j));

        p_.quad.add_column(i, dzi, grad_);
        p_.quad.add_column(j, dzj, grad_);

        if (p_.ineq) {
            if (limit == Limit::Ineq) {
                ineq_value_ = p_.ineq->rhs;
                ineq_active_ = true;
            } else {
                ineq_value_ += dw;
                if (dw < 0.0) ineq_active_ = false;
            }
        }
    }

    // Newton step on the free variables with the active constraints as
    // equalities. Accepted only if it lowers the objective; the step is cut at
    // the first box or inequality boundary.
    void polish() {
        std::vector<Eigen::Index> free;
        for (Eigen::Index k = 0; k < m_; ++k) {
            if (z_(k) > p_.lower(k) && z_(k) < p_.upper(k)) free.push_back(k);
        }
        const auto nf = static_cast<Eigen::Index>(free.size());
        if (nf == 0 || nf > kPolishMaxFree) return;
        const bool with_ineq = p_.ineq && ineq_active_;
        const Eigen::Index nc = with_ineq ? 2 : 1;
        Eigen::MatrixXd kkt = Eigen::MatrixXd::Zero(nf + nc, nf + nc);
        Eigen::VectorXd rhs = Eigen::VectorXd::Zero(nf + nc);
        for (Eigen::Index a = 0; a < nf; ++a) {
            const Eigen::Index i = free[static_cast<std::size_t>(a)];
            for (Eigen::Index b = 0; b <= a; ++b) {
                const double v = p_.quad(i, free[static_cast<std::size_t>(b)]);
                kkt(a, b) = v;
                kkt(b, a) = v;
            }
            kkt(nf, a) = kkt(a, nf) = y(i);
            if (with_ineq) kkt(nf + 1, a) = kkt(a, nf + 1) = gcoef(cls(i));
            rhs(a) = -grad_(i);
        }
        const Eigen::VectorXd sol = kkt.completeOrthogonalDecomposition().solve(rhs);
        const Eigen::VectorXd d = sol.head(nf);
        if (!d.allFinite()) return;

        double step = 1.0;
        double rate = 0.0;
        double slope = 0.0;
        for (Eigen::Index a = 0; a < nf; ++a) {
            const Eigen::Index i = free[static_cast<std::size_t>(a)];
            if (d(a) > 0.0) step = std::min(step, (p_.upper(i) - z_(i)) / d(a));
            if (d(a) < 0.0) step = std::min(step, (p_.lower(i) - z_(i)) / d(a));
            if (p_.ineq) rate += gcoef(cls(i)) * d(a);
            slope += grad_(i) * d(a);
        }
        if (p_.ineq && !with_ineq && rate > 0.0) {
            step = std::min(step, std::max(0.0, p_.ineq->rhs - ineq_value_) / rate);
        }
        double curv = 0.0;
        for (Eigen::Index a = 0; a < nf; ++a) curv += d(a) * kkt.row(a).head(nf).dot(d);
        // Change of the objective along the step must be negative.
        if (!(step > 0.0) || step * slope + 0.5 * step * step * curv >= 0.0) return;

        for (Eigen::Index a = 0; a < nf; ++a) {
            const Eigen::Index i = free[static_cast<std::size_t>(a)];
            const double old = z_(i);
            z_(i) = std::clamp(old + step * d(a), p_.lower(i), p_.upper(i));
            // Snap coordinates that land within rounding of a bound.
            const double snap = 1e-12 * (1.0 + std::abs(p_.upper(i)) + std::abs(p_.lower(i)));
            if (z_(i) - p_.lower(i) <= snap) z_(i) = p_.lower(i);
            if (p_.upper(i) - z_(i) <= snap) z_(i) = p_.upper(i);
            p_.quad.add_column(i, z_(i) - old, grad_);
        }
        refresh_ineq();
    }

    // Multipliers from the bound activity of each class. With r_k = grad_k - rho_c
    // for class c, coordinates at the lower bound need rho_c <= grad_k, at the
    // upper bound rho_c >= grad_k, interior ones rho_c == grad_k.
    // rho_pos = mu - lambda g_pos, rho_neg = -mu - lambda g_neg.
    QpSolution finish(long iterations) const {
        constexpr double kInf = std::numeric_limits<double>::infinity();
        std::array<double, 2> lo{-kInf, -kInf};
        std::array<double, 2> hi{kInf, kInf};
        for (Eigen::Index k = 0; k < m_; ++k) {
            if (p_.upper(k) <= p_.lower(k)) continue;
            const int c = cls(k);
            const bool at_lower = z_(k) <= p_.lower(k);
            const bool at_upper = z_(k) >= p_.upper(k);
            if (!at_upper) hi[c] = std::min(hi[c], grad_(k));
            if (!at_lower) lo[c] = std::max(lo[c], grad_(k));
        }
        auto mid = [](double a, double b) {
            if (std::isinf(a) && std::isinf(b)) return 0.0;
            if (std::isinf(a)) return b;
            if (std::isinf(b)) return a;
            return 0.5 * (a + b);
        };

        struct Candidate {
            double mu;
            double lambda;
        };
        std::vector<Candidate> candidates;
        // lambda = 0: rho_neg = -rho_pos.
        const double rho = mid(std::max(lo[0], -hi[1]), std::min(hi[0], -lo[1]));
        candidates.push_back({rho, 0.0});
        if (p_.ineq) {
            // Independent class levels; lambda follows from their sum and must be >= 0.
            auto levels = [&](int c) {
                std::vector<double> out;
                if (std::isinf(lo[c]) || std::isinf(hi[c])) {
                    out.push_back(mid(lo[c], hi[c]));
                } else {
                    for (double theta : {0.0, 0.25, 0.5, 0.75, 1.0}) out.push_back(lo[c] + theta * (hi[c] - lo[c]));
                }
                return out;
            };
            for (double rp : levels(0)) {
                for (double rn : levels(1)) {
                    const double lambda = -(rp + rn) / (shape_.g_pos + shape_.g_neg);
                    if (lambda > 0.0) candidates.push_back({rp + lambda * shape_.g_pos, lambda});
                }
            }
        }

        QpSolution sol;
        sol.z = z_;
        sol.iterations = iterations;
        sol.method = "smo";
        const Eigen::VectorXd g = p_.quad.times(z_) + p_.linear;
        double best = kInf;
        for (const auto& c : candidates) {
            const double r = kkt_certificate(p_, z_, c.mu, c.lambda, &g).total();
            if (r < best) {
                best = r;
                sol.eq_multiplier = c.mu;
                sol.ineq_multiplier = c.lambda;
            }
        }
        sol.kkt_residual = best;
        sol.objective = 0.5 * z_.dot(g + p_.linear);
        return sol;
    }

    static constexpr double kTau = 1e-12;
    static constexpr long kPolishEvery = 1000;
    static constexpr Eigen::Index kPolishMaxFree = 1500;

    const QpProblem& p_;
    TwoClassShape shape_;
    QpOptions opt_;
    Eigen::Index m_;
    Eigen::VectorXd z_;
    Eigen::VectorXd grad_;
    double ineq_value_ = 0.0;
    bool ineq_active_ = false;
};

}  // namespace nusvqr::detail
