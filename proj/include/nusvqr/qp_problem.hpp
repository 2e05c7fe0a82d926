#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <limits>
#include <memory>
#include <optional>
#include <string>
#include <variant>

#include "nusvqr/error.hpp"

namespace nusvqr {

/// Quadratic term of a QP.
///
/// Two storage forms: an explicit dense matrix, or the signed kernel block
/// [[K, -K], [-K, K]] built from one l x l Gram matrix (size 2l). The block
/// form is what every model dual in this library uses; it keeps memory at
/// O(l^2) instead of O(4 l^2).
class QuadraticTerm {
public:
    QuadraticTerm() = default;

    static QuadraticTerm dense(Eigen::MatrixXd q) {
        if (q.rows() != q.cols()) throw InputError("quadratic term must be square");
        QuadraticTerm t;
        t.dense_ = std::make_shared<const Eigen::MatrixXd>(std::move(q));
        return t;
    }

    static QuadraticTerm signed_kernel(std::shared_ptr<const Eigen::MatrixXd> gram) {
        if (!gram || gram->rows() != gram->cols()) throw InputError("Gram matrix must be square");
        QuadraticTerm t;
        t.gram_ = std::move(gram);
        return t;
    }

    [[nodiscard]] bool is_signed_kernel() const noexcept { return gram_ != nullptr; }
    [[nodiscard]] const Eigen::MatrixXd& gram() const { return *gram_; }

    [[nodiscard]] Eigen::Index size() const noexcept {
        if (gram_) return 2 * gram_->rows();
        return dense_ ? dense_->rows() : 0;
    }

    [[nodiscard]] double operator()(Eigen::Index i, Eigen::Index j) const {
        if (dense_) return (*dense_)(i, j);
        const Eigen::Index l = gram_->rows();
        const double v = (*gram_)(i % l, j % l);
        return ((i < l) == (j < l)) ? v : -v;
    }

    /// y += scale * Q(:, j)
    void add_column(Eigen::Index j, double scale, Eigen::VectorXd& y) const {
        if (dense_) {
            y.noalias() += scale * dense_->col(j);
            return;
        }
        const Eigen::Index l = gram_->rows();
        const double s = j < l ? scale : -scale;
        const double* col = gram_->data() + (j % l) * l;
        double* top = y.data();
        double* bottom = y.data() + l;
        for (Eigen::Index k = 0; k < l; ++k) {
            const double v = s * col[k];
            top[k] += v;
            bottom[k] -= v;
        }
    }

    [[nodiscard]] Eigen::VectorXd times(const Eigen::VectorXd& z) const {
        if (dense_) return (*dense_) * z;
        const Eigen::Index l = gram_->rows();
        const Eigen::VectorXd delta = z.head(l) - z.tail(l);
        const Eigen::VectorXd kd = (*gram_) * delta;
        Eigen::VectorXd out(2 * l);
        out.head(l) = kd;
        out.tail(l) = -kd;
        return out;
    }

    [[nodiscard]] Eigen::MatrixXd to_dense() const {
        if (dense_) return *dense_;
        const Eigen::Index l = gram_->rows();
        Eigen::MatrixXd q(2 * l, 2 * l);
        q.topLeftCorner(l, l) = *gram_;
        q.topRightCorner(l, l) = -*gram_;
        q.bottomLeftCorner(l, l) = -*gram_;
        q.bottomRightCorner(l, l) = *gram_;
        return q;
    }

private:
    std::shared_ptr<const Eigen::MatrixXd> dense_;
    std::shared_ptr<const Eigen::MatrixXd> gram_;
};

struct LinearInequality {
    Eigen::VectorXd coeffs;
    double rhs = 0.0;
};

/// min 1/2 z'Qz + c'z  s.t.  lower <= z <= upper,  a'z = eq_rhs,  [g'z <= ineq_rhs]
struct QpProblem {
    QuadraticTerm quad;
    Eigen::VectorXd linear;
    Eigen::VectorXd lower;
    Eigen::VectorXd upper;
    Eigen::VectorXd eq_coeffs;
    double eq_rhs = 0.0;
    std::optional<LinearInequality> ineq;

    [[nodiscard]] Eigen::Index size() const noexcept { return linear.size(); }

    [[nodiscard]] double objective(const Eigen::VectorXd& z) const {
        return 0.5 * z.dot(quad.times(z)) + linear.dot(z);
    }

    void validate() const {
        const Eigen::Index m = size();
        if (m == 0) throw InputError("QP has no variables");
        if (quad.size() != m || lower.size() != m || upper.size() != m || eq_coeffs.size() != m ||
            (ineq && ineq->coeffs.size() != m)) {
            throw InputError("QP component sizes disagree");
        }
        for (Eigen::Index i = 0; i < m; ++i) {
            if (!(lower(i) <= upper(i)) || !std::isfinite(lower(i)) || !std::isfinite(upper(i))) {
                throw InputError("QP box bounds must be finite with lower <= upper (index " + std::to_string(i) + ")");
            }
        }
        if (!quad.is_signed_kernel() && m <= 500) {
            const Eigen::MatrixXd q = quad.to_dense();
            const double qmax = q.cwiseAbs().maxCoeff();
            if ((q - q.transpose()).cwiseAbs().maxCoeff() > 1e-12 * (1.0 + qmax)) {
                throw InputError("quadratic term is not symmetric");
            }
            const Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(q, Eigen::EigenvaluesOnly);
            if (es.eigenvalues().minCoeff() < -1e-8) throw InputError("quadratic term is not positive semidefinite");
        }
    }
};

struct QpOptions {
    double tol = 1e-8;
    long max_iter = 100000;
};

struct QpSolution {
    Eigen::VectorXd z;
    double eq_multiplier = 0.0;    ///< mu in  Qz + c - mu a + lambda g - (bound terms) = 0
    double ineq_multiplier = 0.0;  ///< lambda >= 0
    double objective = 0.0;
    double kkt_residual = 0.0;
    long iterations = 0;
    std::string method;
};

/// Components of the KKT certificate; `total()` is what `kkt_residual` reports.
struct KktReport {
    double stationarity = 0.0;     ///< sign-aware gradient residual per coordinate
    double primal = 0.0;           ///< box, equality and inequality violation
    double complementarity = 0.0;  ///< lambda * inequality slack
    double dual_sign = 0.0;        ///< max(0, -lambda)

    [[nodiscard]] double total() const { return std::max({stationarity, primal, complementarity, dual_sign}); }
};

/// Evaluates the KKT conditions at z for the given equality/inequality
/// multipliers. Bound multipliers are implied: coordinate i at its lower bound
/// may carry a non-negative residual, at its upper bound a non-positive one,
/// and an interior coordinate must have zero residual.
inline KktReport kkt_certificate(const QpProblem& p, const Eigen::VectorXd& z, double mu, double lambda,
                                 const Eigen::VectorXd* gradient = nullptr) {
    const Eigen::VectorXd grad = gradient ? *gradient : Eigen::VectorXd(p.quad.times(z) + p.linear);
    KktReport r;
    for (Eigen::Index i = 0; i < z.size(); ++i) {
        const double scale = 1e-12 * (1.0 + std::max(std::abs(p.lower(i)), std::abs(p.upper(i))));
        r.primal = std::max({r.primal, p.lower(i) - z(i), z(i) - p.upper(i)});
        if (p.upper(i) - p.lower(i) <= scale) continue;
        double res = grad(i) - mu * p.eq_coeffs(i);
        if (p.ineq) res += lambda * p.ineq->coeffs(i);
        const bool at_lower = z(i) <= p.lower(i) + scale;
        const bool at_upper = z(i) >= p.upper(i) - scale;
        double v = 0.0;
        if (at_lower) {
            v = std::max(0.0, -res);
        } else if (at_upper) {
            v = std::max(0.0, res);
        } else {
            v = std::abs(res);
        }
        r.stationarity = std::max(r.stationarity, v);
    }
    r.primal = std::max(r.primal, std::abs(p.eq_coeffs.dot(z) - p.eq_rhs));
    if (p.ineq) {
        const double slack = p.ineq->rhs - p.ineq->coeffs.dot(z);
        r.primal = std::max(r.primal, -slack);
        r.complementarity = std::abs(lambda) * std::max(0.0, slack);
        r.dual_sign = std::max(0.0, -lambda);
    }
    return r;
}

}  // namespace nusvqr
