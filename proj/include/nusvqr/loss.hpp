#pragma once

#include <cmath>
#include <span>
#include <string>

#include "nusvqr/error.hpp"

namespace nusvqr {

/// Quantile level, strictly inside (0, 1).
class TauLevel {
public:
    TauLevel(double tau) : tau_(tau) {  // NOLINT(google-explicit-constructor)
        if (!(tau > 0.0 && tau < 1.0)) {
            throw InputError("quantile level tau must lie in (0, 1), got " + std::to_string(tau));
        }
    }

    [[nodiscard]] double value() const noexcept { return tau_; }
    operator double() const noexcept { return tau_; }  // NOLINT(google-explicit-constructor)

private:
    double tau_;
};

/// Pinball loss: tau * u for u >= 0, (tau - 1) * u otherwise.
inline double pinball_loss(TauLevel tau, double u) noexcept {
    return u >= 0.0 ? tau.value() * u : (tau.value() - 1.0) * u;
}

/// Pinball loss with an asymmetric dead zone of total width eps: zero on the
/// closed band [-tau*eps, (1-tau)*eps], slope tau above it and -(1-tau) below.
inline double asym_eps_pinball_loss(TauLevel tau, double eps, double u) {
    if (!(eps >= 0.0)) throw InputError("insensitive-zone width eps must be non-negative");
    const double t = tau.value();
    const double upper = (1.0 - t) * eps;
    const double lower = -t * eps;
    if (u > upper) return t * (u - upper);
    if (u < lower) return (1.0 - t) * (lower - u);
    return 0.0;
}

inline double empirical_risk(TauLevel tau, double eps, std::span<const double> residuals) {
    if (!(eps >= 0.0)) throw InputError("insensitive-zone width eps must be non-negative");
    double sum = 0.0;
    for (double u : residuals) sum += asym_eps_pinball_loss(tau, eps, u);
    return sum;
}

}  // namespace nusvqr
