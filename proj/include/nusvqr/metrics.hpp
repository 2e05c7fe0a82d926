#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <limits>
#include <string>

#include "nusvqr/dataset.hpp"
#include "nusvqr/error.hpp"
#include "nusvqr/loss.hpp"
#include "nusvqr/svqr.hpp"

namespace nusvqr {

namespace detail {

inline void check_lengths(const Vector& a, const Vector& b) {
    if (a.size() != b.size()) {
        throw InputError("length mismatch: " + std::to_string(a.size()) + " vs " + std::to_string(b.size()));
    }
    if (a.size() == 0) throw InputError("metrics need at least one value");
}

}  // namespace detail

inline double rmse_vs_truth(const Vector& pred, const Vector& truth) {
    detail::check_lengths(pred, truth);
    return std::sqrt((pred - truth).squaredNorm() / static_cast<double>(pred.size()));
}

inline double mae_vs_truth(const Vector& pred, const Vector& truth) {
    detail::check_lengths(pred, truth);
    return (pred - truth).cwiseAbs().sum() / static_cast<double>(pred.size());
}

/// Fraction of responses at or below the estimate.
inline double coverage(const Vector& pred, const Vector& y) {
    detail::check_lengths(pred, y);
    Eigen::Index below = 0;
    for (Eigen::Index i = 0; i < y.size(); ++i) below += y(i) <= pred(i) ? 1 : 0;
    return static_cast<double>(below) / static_cast<double>(y.size());
}

/// |coverage - tau|
inline double coverage_error(const Vector& pred, const Vector& y, TauLevel tau) {
    return std::abs(coverage(pred, y) - tau.value());
}

/// Fraction of entries with |value| <= zero_tol.
inline double sparsity(const Vector& coeffs, double zero_tol) {
    if (coeffs.size() == 0) throw InputError("sparsity of an empty vector");
    Eigen::Index zeros = 0;
    for (Eigen::Index i = 0; i < coeffs.size(); ++i) zeros += std::abs(coeffs(i)) <= zero_tol ? 1 : 0;
    return static_cast<double>(zeros) / static_cast<double>(coeffs.size());
}

inline double sparsity(const TrainedModel& m) { return sparsity(m.coeffs, m.sv_tolerance()); }

/// Mean pinball loss of predictions; used for validation scoring.
inline double mean_pinball_loss(const Vector& pred, const Vector& y, TauLevel tau) {
    detail::check_lengths(pred, y);
    double s = 0.0;
    for (Eigen::Index i = 0; i < y.size(); ++i) s += pinball_loss(tau, y(i) - pred(i));
    return s / static_cast<double>(y.size());
}

struct TubeStats {
    std::size_t n_above = 0;
    std::size_t n_below = 0;
    std::size_t n_on_boundary = 0;
    std::size_t n_sv = 0;
    double frac_errors = 0.0;
    double frac_sv = 0.0;
    double ratio_above_below = 0.0;  ///< +inf when nothing lies below
    double eps_width = 0.0;
};

/// Residual tolerance for "on the tube edge".
inline double boundary_tolerance(const Vector& y) { return 1e-6 * (1.0 + y.cwiseAbs().maxCoeff()); }

/// Classifies each point by its residual against the tube edges
/// (1 - tau) eps and -tau eps.
inline TubeStats tube_stats(const TrainedModel& m, const Dataset& data) {
    check_consistent(data);
    const Vector r = data.response - predict(m, data.features);
    const double t = m.config.tau;
    const double tol = boundary_tolerance(data.response);
    const double up = (1.0 - t) * m.eps_width;
    const double lo = -t * m.eps_width;
    TubeStats s;
    s.eps_width = m.eps_width;
    for (Eigen::Index i = 0; i < r.size(); ++i) {
        if (r(i) > up + tol) {
            ++s.n_above;
        } else if (r(i) < lo - tol) {
            ++s.n_below;
        } else if (std::abs(r(i) - up) <= tol || std::abs(r(i) - lo) <= tol) {
            ++s.n_on_boundary;
        }
    }
    s.n_sv = m.sv_indices.size();
    const auto l = static_cast<double>(r.size());
    s.frac_errors = static_cast<double>(s.n_above + s.n_below) / l;
    s.frac_sv = static_cast<double>(s.n_sv) / l;
    s.ratio_above_below = s.n_below == 0 ? std::numeric_limits<double>::infinity()
                                         : static_cast<double>(s.n_above) / static_cast<double>(s.n_below);
    return s;
}

}  // namespace nusvqr
