#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <limits>
#include <memory>
#include <string>
#include <utility>
#include <vector>

#include "nusvqr/dataset.hpp"
#include "nusvqr/error.hpp"
#include "nusvqr/kernel.hpp"
#include "nusvqr/loss.hpp"
#include "nusvqr/qp.hpp"

namespace nusvqr {

enum class ModelKind { StandardSVQR, EpsSVQR, NuSVQR };

inline std::string to_string(ModelKind k) {
    switch (k) {
        case ModelKind::StandardSVQR: return "standard";
        case ModelKind::EpsSVQR: return "eps";
        case ModelKind::NuSVQR: return "nu";
    }
    return "?";
}

inline ModelKind model_kind_from_string(const std::string& s) {
    if (s == "standard") return ModelKind::StandardSVQR;
    if (s == "eps") return ModelKind::EpsSVQR;
    if (s == "nu") return ModelKind::NuSVQR;
    throw InputError("unknown model '" + s + "' (expected standard, eps or nu)");
}

struct FitConfig {
    ModelKind model = ModelKind::NuSVQR;
    double tau = 0.5;
    double C = 1.0;
    double nu = 0.5;   ///< NuSVQR only
    double eps = 0.0;  ///< EpsSVQR only; StandardSVQR always uses 0
    KernelSpec kernel;
    QpOptions solver;

    /// Width of the insensitive zone handed to the dual (0 for StandardSVQR).
    [[nodiscard]] double fixed_eps() const { return model == ModelKind::EpsSVQR ? eps : 0.0; }

    void validate() const {
        TauLevel{tau};
        if (!(C > 0.0 && std::isfinite(C))) throw InputError("C must be positive and finite");
        if (model == ModelKind::NuSVQR && !(nu > 0.0 && nu <= 1.0)) throw InputError("nu must lie in (0, 1]");
        if (model == ModelKind::EpsSVQR && !(eps >= 0.0 && std::isfinite(eps))) {
            throw InputError("eps must be non-negative and finite");
        }
        kernel.validate();
        if (!(solver.tol > 0.0)) throw InputError("solver tolerance must be positive");
        if (solver.max_iter < 1) throw InputError("max_iter must be at least 1");
    }
};

/// Upper bounds of alpha and beta for a training set of size l.
struct DualBounds {
    double alpha = 0.0;
    double beta = 0.0;
};

inline DualBounds dual_bounds(const FitConfig& cfg, std::size_t l) {
    const double scale = cfg.model == ModelKind::NuSVQR ? cfg.C / static_cast<double>(l) : cfg.C;
    return {scale * cfg.tau, scale * (1.0 - cfg.tau)};
}

struct FitDiagnostics {
    double objective = 0.0;        ///< dual objective (minimization form)
    double eq_multiplier = 0.0;
    double ineq_multiplier = 0.0;
    double kkt_residual = 0.0;
    long iterations = 0;
    std::string method;
    bool recovery_degenerate = false;
    double max_alpha_beta_raw = 0.0;  ///< max alpha_i * beta_i straight from the solver
    std::size_t n_interior_alpha = 0;
    std::size_t n_interior_beta = 0;
};

struct TrainedModel {
    FitConfig config;
    Vector coeffs;  ///< alpha - beta
    Vector alpha;
    Vector beta;
    double bias = 0.0;
    double eps_width = 0.0;
    std::vector<std::size_t> sv_indices;
    std::vector<std::size_t> boundary_upper;  ///< interior alpha: on the upper tube edge
    std::vector<std::size_t> boundary_lower;  ///< interior beta: on the lower tube edge
    FeatureMatrix train_features;
    FitDiagnostics diagnostics;

    [[nodiscard]] std::size_t size() const noexcept { return static_cast<std::size_t>(coeffs.size()); }
    [[nodiscard]] DualBounds bounds() const { return dual_bounds(config, size()); }

    /// |coeffs_i| above this counts as a support vector.
    [[nodiscard]] double sv_tolerance() const {
        const auto b = bounds();
        return 1e-8 * (b.alpha + b.beta);
    }
};

// ---------------------------------------------------------------------------
// Dual assembly

namespace detail {

inline void check_training_data(const Dataset& data) {
    check_consistent(data);
    if (data.size() < 2) throw InputError("training needs at least 2 samples, got " + std::to_string(data.size()));
    if (data.dim() == 0) throw InputError("training data has no feature columns");
    for (Eigen::Index i = 0; i < data.response.size(); ++i) {
        if (!std::isfinite(data.response(i))) throw InputError("non-finite response at row " + std::to_string(i));
    }
}

inline QpProblem dual_skeleton(const Dataset& data, std::shared_ptr<const Eigen::MatrixXd> gram, DualBounds b) {
    const auto l = static_cast<Eigen::Index>(data.size());
    if (!gram || gram->rows() != l || gram->cols() != l) throw InputError("Gram matrix size does not match data");
    QpProblem p;
    p.quad = QuadraticTerm::signed_kernel(std::move(gram));
    p.linear.resize(2 * l);
    p.linear.head(l) = -data.response;
    p.linear.tail(l) = data.response;
    p.lower = Eigen::VectorXd::Zero(2 * l);
    p.upper.resize(2 * l);
    p.upper.head(l).setConstant(b.alpha);
    p.upper.tail(l).setConstant(b.beta);
    p.eq_coeffs.resize(2 * l);
    p.eq_coeffs.head(l).setOnes();
    p.eq_coeffs.tail(l).setConstant(-1.0);
    p.eq_rhs = 0.0;
    return p;
}

}  // namespace detail

/// Dual of the ν model over z = (alpha; beta). Accepts nu >= 0 (nu = 0 pins
/// every multiplier at zero); fit() itself requires nu in (0, 1].
inline QpProblem build_nu_dual(const Dataset& data, const FitConfig& cfg, std::shared_ptr<const Eigen::MatrixXd> gram) {
    TauLevel{cfg.tau};
    if (!(cfg.C > 0.0)) throw InputError("C must be positive");
    if (!(cfg.nu >= 0.0)) throw InputError("nu must be non-negative");
    QpProblem p = detail::dual_skeleton(data, std::move(gram), dual_bounds({ModelKind::NuSVQR, cfg.tau, cfg.C}, data.size()));
    const auto l = static_cast<Eigen::Index>(data.size());
    LinearInequality g;
    g.coeffs.resize(2 * l);
    g.coeffs.head(l).setConstant(1.0 - cfg.tau);
    g.coeffs.tail(l).setConstant(cfg.tau);
    g.rhs = cfg.C * cfg.nu * cfg.tau * (1.0 - cfg.tau);
    p.ineq = g;
    return p;
}

inline QpProblem build_nu_dual(const Dataset& data, const FitConfig& cfg, const Eigen::MatrixXd& gram) {
    return build_nu_dual(data, cfg, std::make_shared<const Eigen::MatrixXd>(gram));
}

/// Dual of the ε model (and of the standard model, which is the ε = 0 case).
inline QpProblem build_eps_dual(const Dataset& data, const FitConfig& cfg, std::shared_ptr<const Eigen::MatrixXd> gram) {
    TauLevel{cfg.tau};
    if (!(cfg.C > 0.0)) throw InputError("C must be positive");
    const double eps = cfg.fixed_eps();
    if (!(eps >= 0.0)) throw InputError("eps must be non-negative");
    QpProblem p = detail::dual_skeleton(data, std::move(gram), dual_bounds({ModelKind::EpsSVQR, cfg.tau, cfg.C}, data.size()));
    const auto l = static_cast<Eigen::Index>(data.size());
    p.linear.head(l).array() += (1.0 - cfg.tau) * eps;
    p.linear.tail(l).array() += cfg.tau * eps;
    return p;
}

inline QpProblem build_eps_dual(const Dataset& data, const FitConfig& cfg, const Eigen::MatrixXd& gram) {
    return build_eps_dual(data, cfg, std::make_shared<const Eigen::MatrixXd>(gram));
}

// ---------------------------------------------------------------------------
// Recovery of ε and b

/// Intermediate state between the QP solve and the finished model.
struct DualState {
    double tau = 0.5;
    DualBounds bounds;
    Vector alpha;
    Vector beta;
    Vector residual_nobias;  ///< y_i - sum_k coeffs_k K(x_k, x_i)
};

namespace detail {

enum class Side { Upper, Lower };

// Which multipliers sit strictly inside their box, judged with a margin
// proportional to the bound.
inline std::vector<std::size_t> interior(const Vector& v, double bound) {
    std::vector<std::size_t> out;
    const double margin = 1e-7 * bound;
    for (Eigen::Index i = 0; i < v.size(); ++i) {
        if (v(i) > margin && v(i) < bound - margin) out.push_back(static_cast<std::size_t>(i));
    }
    return out;
}

inline double mean_at(const Vector& u, const std::vector<std::size_t>& idx) {
    double s = 0.0;
    for (auto i : idx) s += u(static_cast<Eigen::Index>(i));
    return s / static_cast<double>(idx.size());
}

// Tube edge in bias-free coordinates: E_upper = b + (1 - tau) eps, E_lower = b - tau eps.
// With interior multipliers the edge is their mean residual. Otherwise it is
// read off the multipliers at the bound, and failing that off the inactive
// points (both give one end of the interval allowed by complementarity).
inline double edge(const DualState& s, Side side, bool& degenerate) {
    const Vector& v = side == Side::Upper ? s.alpha : s.beta;
    const double bound = side == Side::Upper ? s.bounds.alpha : s.bounds.beta;
    const auto inner = interior(v, bound);
    if (!inner.empty()) return mean_at(s.residual_nobias, inner);
    degenerate = true;
    const double margin = 1e-7 * bound;
    constexpr double kInf = std::numeric_limits<double>::infinity();
    double at_bound = side == Side::Upper ? kInf : -kInf;
    double at_zero = side == Side::Upper ? -kInf : kInf;
    for (Eigen::Index i = 0; i < v.size(); ++i) {
        const double u = s.residual_nobias(i);
        if (v(i) >= bound - margin) {
            at_bound = side == Side::Upper ? std::min(at_bound, u) : std::max(at_bound, u);
        } else if (v(i) <= margin) {
            at_zero = side == Side::Upper ? std::max(at_zero, u) : std::min(at_zero, u);
        }
    }
    return std::isfinite(at_bound) ? at_bound : at_zero;
}

// Interval of edge positions consistent with complementarity: bounded above by
// points at the box bound and below by points with a zero multiplier.
inline std::pair<double, double> edge_interval(const DualState& s, Side side) {
    const Vector& v = side == Side::Upper ? s.alpha : s.beta;
    const double bound = side == Side::Upper ? s.bounds.alpha : s.bounds.beta;
    const auto inner = interior(v, bound);
    if (!inner.empty()) {
        const double e = mean_at(s.residual_nobias, inner);
        return {e, e};
    }
    const double margin = 1e-7 * bound;
    constexpr double kInf = std::numeric_limits<double>::infinity();
    double below = -kInf;  // edge must lie above these residuals (upper side)
    double above = kInf;
    for (Eigen::Index i = 0; i < v.size(); ++i) {
        const double u = s.residual_nobias(i);
        const bool at_bound = v(i) >= bound - margin;
        const bool at_zero = v(i) <= margin;
        if (side == Side::Upper) {
            if (at_bound) above = std::min(above, u);
            if (at_zero) below = std::max(below, u);
        } else {
            if (at_bound) below = std::max(below, u);
            if (at_zero) above = std::min(above, u);
        }
    }
    return {below, above};
}

}  // namespace detail

/// Tube width of the ν model from points on the two tube edges. Needs no bias.
/// Sets `degenerate` when one edge has no interior multiplier and a fallback
/// edge estimate was used instead.
inline double recover_epsilon(const DualState& s, bool& degenerate) {
    const double upper = detail::edge(s, detail::Side::Upper, degenerate);
    const double lower = detail::edge(s, detail::Side::Lower, degenerate);
    return std::max(0.0, upper - lower);
}

/// Bias from the same edges, pooled over interior points of both sides.
inline double recover_bias(const DualState& s, double eps, bool& degenerate) {
    const double t = s.tau;
    const auto up = detail::interior(s.alpha, s.bounds.alpha);
    const auto lo = detail::interior(s.beta, s.bounds.beta);
    if (!up.empty() || !lo.empty()) {
        double sum = 0.0;
        for (auto i : up) sum += s.residual_nobias(static_cast<Eigen::Index>(i)) - (1.0 - t) * eps;
        for (auto j : lo) sum += s.residual_nobias(static_cast<Eigen::Index>(j)) + t * eps;
        return sum / static_cast<double>(up.size() + lo.size());
    }
    degenerate = true;
    bool ignored = false;
    const double upper = detail::edge(s, detail::Side::Upper, ignored);
    const double lower = detail::edge(s, detail::Side::Lower, ignored);
    return 0.5 * ((upper - (1.0 - t) * eps) + (lower + t * eps));
}

// ---------------------------------------------------------------------------
// Fit and predict

inline TrainedModel fit(const Dataset& data, const FitConfig& cfg, std::shared_ptr<const Eigen::MatrixXd> gram) {
    cfg.validate();
    detail::check_training_data(data);
    const auto l = static_cast<Eigen::Index>(data.size());
    const QpProblem problem =
        cfg.model == ModelKind::NuSVQR ? build_nu_dual(data, cfg, gram) : build_eps_dual(data, cfg, gram);
    const QpSolution sol = solve_qp(problem, cfg.solver);

    TrainedModel m;
    m.config = cfg;
    if (cfg.model == ModelKind::StandardSVQR) m.config.eps = 0.0;
    m.alpha = sol.z.head(l);
    m.beta = sol.z.tail(l);
    m.diagnostics.max_alpha_beta_raw = m.alpha.cwiseProduct(m.beta).maxCoeff();
    // When alpha_i and beta_i are both positive, removing their common part leaves
    // alpha - beta unchanged and never increases the objective.
    for (Eigen::Index i = 0; i < l; ++i) {
        const double common = std::min(m.alpha(i), m.beta(i));
        if (common > 0.0) {
            m.alpha(i) -= common;
            m.beta(i) -= common;
        }
    }
    m.coeffs = m.alpha - m.beta;
    m.train_features = data.features;

    DualState st;
    st.tau = cfg.tau;
    st.bounds = dual_bounds(cfg, data.size());
    st.alpha = m.alpha;
    st.beta = m.beta;
    st.residual_nobias = data.response - (*gram) * m.coeffs;

    bool degenerate = false;
    const double ineq_lhs = (1.0 - cfg.tau) * m.alpha.sum() + cfg.tau * m.beta.sum();
    const double ineq_rhs = problem.ineq ? problem.ineq->rhs : 0.0;
    const bool ineq_slack = cfg.model == ModelKind::NuSVQR && ineq_lhs < ineq_rhs * (1.0 - 1e-6);
    if (ineq_slack) {
        // A slack width constraint forces eps = 0; both edges then coincide with b.
        m.eps_width = 0.0;
        const auto [ul, uh] = detail::edge_interval(st, detail::Side::Upper);
        const auto [ll, lh] = detail::edge_interval(st, detail::Side::Lower);
        double lo = std::max(ul, ll);
        double hi = std::min(uh, lh);
        if (lo > hi) std::swap(lo, hi);
        degenerate = !(ul == uh || ll == lh);
        if (!std::isfinite(lo)) lo = hi;
        if (!std::isfinite(hi)) hi = lo;
        m.bias = std::isfinite(lo) ? 0.5 * (lo + hi) : 0.0;
    } else if (cfg.model == ModelKind::NuSVQR) {
        bool eps_degenerate = false;
        const double upper = detail::edge(st, detail::Side::Upper, eps_degenerate);
        const double lower = detail::edge(st, detail::Side::Lower, eps_degenerate);
        m.eps_width = std::max(0.0, upper - lower);
        if (eps_degenerate) {
            // b = tau E_upper + (1 - tau) E_lower solves both edge equations at once.
            degenerate = true;
            m.bias = cfg.tau * upper + (1.0 - cfg.tau) * lower;
        } else {
            m.bias = recover_bias(st, m.eps_width, degenerate);
        }
    } else {
        m.eps_width = m.config.fixed_eps();
        m.bias = recover_bias(st, m.eps_width, degenerate);
    }

    const double sv_tol = m.sv_tolerance();
    for (Eigen::Index i = 0; i < l; ++i) {
        if (std::abs(m.coeffs(i)) > sv_tol) m.sv_indices.push_back(static_cast<std::size_t>(i));
    }
    m.boundary_upper = detail::interior(m.alpha, st.bounds.alpha);
    m.boundary_lower = detail::interior(m.beta, st.bounds.beta);

    auto& d = m.diagnostics;
    d.objective = sol.objective;
    d.eq_multiplier = sol.eq_multiplier;
    d.ineq_multiplier = sol.ineq_multiplier;
    d.kkt_residual = sol.kkt_residual;
    d.iterations = sol.iterations;
    d.method = sol.method;
    d.recovery_degenerate = degenerate;
    d.n_interior_alpha = m.boundary_upper.size();
    d.n_interior_beta = m.boundary_lower.size();
    return m;
}

inline TrainedModel fit(const Dataset& data, const FitConfig& cfg) {
    cfg.validate();
    detail::check_training_data(data);
    return fit(data, cfg, std::make_shared<const Eigen::MatrixXd>(gram_matrix(cfg.kernel, data.features)));
}

/// f(x) = sum_i coeffs_i K(x, x_i) + b for every row of `x`.
inline Vector predict(const TrainedModel& m, const FeatureMatrix& x) {
    if (x.cols() != m.train_features.cols()) {
        throw InputError("feature dimension mismatch: model has " + std::to_string(m.train_features.cols()) +
                         ", input has " + std::to_string(x.cols()));
    }
    Vector out = Vector::Constant(x.rows(), m.bias);
    const auto n = static_cast<std::size_t>(x.cols());
    for (auto i : m.sv_indices) {
        const auto si = static_cast<Eigen::Index>(i);
        const double c = m.coeffs(si);
        const double* xi = m.train_features.row(si).data();
        for (Eigen::Index r = 0; r < x.rows(); ++r) {
            out(r) += c * detail::kernel_unchecked(m.config.kernel, x.row(r).data(), xi, n);
        }
    }
    return out;
}

// ---------------------------------------------------------------------------
// Primal reconstruction

struct PrimalPoint {
    Vector xi;       ///< excess above the upper tube edge
    Vector xi_star;  ///< excess below the lower tube edge
    double w_norm2 = 0.0;
    double objective = 0.0;
};

/// Slacks and primal objective at (coeffs, b, eps) on the training set.
/// Strong duality: objective == -diagnostics.objective at the optimum.
inline PrimalPoint primal_point(const TrainedModel& m, const Dataset& data, const Eigen::MatrixXd& gram) {
    const double t = m.config.tau;
    const Vector kd = gram * m.coeffs;
    const Vector r = data.response - kd - Vector::Constant(kd.size(), m.bias);
    PrimalPoint p;
    p.xi = (r.array() - (1.0 - t) * m.eps_width).max(0.0);
    p.xi_star = (-r.array() - t * m.eps_width).max(0.0);
    p.w_norm2 = m.coeffs.dot(kd);
    const double risk = t * p.xi.sum() + (1.0 - t) * p.xi_star.sum();
    if (m.config.model == ModelKind::NuSVQR) {
        p.objective = 0.5 * p.w_norm2 +
                      m.config.C * (m.config.nu * t * (1.0 - t) * m.eps_width + risk / static_cast<double>(r.size()));
    } else {
        p.objective = 0.5 * p.w_norm2 + m.config.C * risk;
    }
    return p;
}

}  // namespace nusvqr
