#pragma once

// Artificial datasets AD1 (Gaussian noise) and AD2 (uniform noise) around
//   g(x) = (1 - x + 2x^2) exp(-x^2 / 2),   x ~ U(-4, 4),
// with their exact conditional quantiles.
//
// Random numbers come from std::mt19937_64, whose output sequence is fixed by
// the C++ standard. Uniform doubles take the top 53 bits; normals use the
// Box-Muller transform. The std:: distributions are avoided on purpose since
// their algorithms differ between standard libraries.

#include <Eigen/Dense>

#include <cmath>
#include <cstdint>
#include <limits>
#include <numbers>
#include <random>
#include <string>

#include "nusvqr/dataset.hpp"
#include "nusvqr/error.hpp"
#include "nusvqr/loss.hpp"

namespace nusvqr {

enum class SynthKind { AD1, AD2 };

inline std::string to_string(SynthKind k) { return k == SynthKind::AD1 ? "AD1" : "AD2"; }

inline SynthKind synth_kind_from_string(const std::string& s) {
    if (s == "AD1" || s == "ad1") return SynthKind::AD1;
    if (s == "AD2" || s == "ad2") return SynthKind::AD2;
    throw InputError("unknown dataset '" + s + "' (expected AD1 or AD2)");
}

struct SynthSpec {
    SynthKind dataset = SynthKind::AD1;
    std::size_t l = 200;
    double sigma = 0.2;  ///< AD1 noise standard deviation
    double a = -0.1;     ///< AD2 noise lower bound
    double b = 0.1;      ///< AD2 noise upper bound
    std::uint64_t seed = 1;

    void validate() const {
        if (l < 1) throw InputError("sample count must be at least 1");
        if (dataset == SynthKind::AD1 && !(sigma > 0.0 && std::isfinite(sigma))) {
            throw InputError("AD1 noise sigma must be positive");
        }
        if (dataset == SynthKind::AD2 && !(a < b && std::isfinite(a) && std::isfinite(b))) {
            throw InputError("AD2 noise bounds need a < b");
        }
    }
};

/// Portable random stream on top of mt19937_64.
class Rng {
public:
    explicit Rng(std::uint64_t seed) : eng_(seed) {}

    /// Uniform on [0, 1).
    double uniform01() { return static_cast<double>(eng_() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform01(); }

    double normal() {
        if (has_spare_) {
            has_spare_ = false;
            return spare_;
        }
        double u1 = 0.0;
        do {
            u1 = uniform01();
        } while (u1 <= 0.0);
        const double u2 = uniform01();
        const double r = std::sqrt(-2.0 * std::log(u1));
        const double theta = 2.0 * std::numbers::pi * u2;
        spare_ = r * std::sin(theta);
        has_spare_ = true;
        return r * std::cos(theta);
    }

    /// Uniform integer in [0, n).
    std::uint64_t below(std::uint64_t n) {
        // Rejection keeps the result unbiased.
        const std::uint64_t limit = std::numeric_limits<std::uint64_t>::max() - std::numeric_limits<std::uint64_t>::max() % n;
        std::uint64_t v = 0;
        do {
            v = eng_();
        } while (v >= limit);
        return v % n;
    }

private:
    std::mt19937_64 eng_;
    double spare_ = 0.0;
    bool has_spare_ = false;
};

/// Independent seed for sub-stream `stream` of `base` (splitmix64 finalizer).
inline std::uint64_t derive_seed(std::uint64_t base, std::uint64_t stream) {
    std::uint64_t z = base + 0x9E3779B97F4A7C15ULL * (stream + 1);
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
}

inline double base_function(double x) { return (1.0 - x + 2.0 * x * x) * std::exp(-0.5 * x * x); }

/// Standard normal quantile. Rational approximation followed by one Halley
/// correction against the erfc-based CDF.
inline double inverse_normal(double p) {
    if (!(p > 0.0 && p < 1.0)) throw InputError("inverse_normal needs p in (0, 1)");
    static constexpr double a[] = {-3.969683028665376e+01, 2.209460984245205e+02, -2.759285104469687e+02,
                                   1.383577518672690e+02,  -3.066479806614716e+01, 2.506628277459239e+00};
    static constexpr double b[] = {-5.447609879822406e+01, 1.615858368580409e+02, -1.556989798598866e+02,
                                   6.680131188771972e+01,  -1.328068155288572e+01};
    static constexpr double c[] = {-7.784894002430293e-03, -3.223964580411365e-01, -2.400758277161838e+00,
                                   -2.549732539343734e+00, 4.374664141464968e+00,  2.938163982698783e+00};
    static constexpr double d[] = {7.784695709041462e-03, 3.224671290700398e-01, 2.445134137142996e+00,
                                   3.754408661907416e+00};
    constexpr double p_low = 0.02425;
    double x = 0.0;
    if (p < p_low) {
        const double q = std::sqrt(-2.0 * std::log(p));
        x = (((((c[0] * q + c[1]) * q + c[2]) * q + c[3]) * q + c[4]) * q + c[5]) /
            ((((d[0] * q + d[1]) * q + d[2]) * q + d[3]) * q + 1.0);
    } else if (p <= 1.0 - p_low) {
        const double q = p - 0.5;
        const double r = q * q;
        x = (((((a[0] * r + a[1]) * r + a[2]) * r + a[3]) * r + a[4]) * r + a[5]) * q /
            (((((b[0] * r + b[1]) * r + b[2]) * r + b[3]) * r + b[4]) * r + 1.0);
    } else {
        const double q = std::sqrt(-2.0 * std::log1p(-p));
        x = -(((((c[0] * q + c[1]) * q + c[2]) * q + c[3]) * q + c[4]) * q + c[5]) /
            ((((d[0] * q + d[1]) * q + d[2]) * q + d[3]) * q + 1.0);
    }
    const double e = 0.5 * std::erfc(-x / std::numbers::sqrt2) - p;
    const double u = e * std::sqrt(2.0 * std::numbers::pi) * std::exp(0.5 * x * x);
    return x - u / (1.0 + 0.5 * x * u);
}

/// tau-quantile of the noise law.
inline double noise_quantile(const SynthSpec& spec, TauLevel tau) {
    spec.validate();
    if (spec.dataset == SynthKind::AD1) return spec.sigma * inverse_normal(tau);
    return spec.a + tau.value() * (spec.b - spec.a);
}

inline double true_quantile(const SynthSpec& spec, TauLevel tau, double x) {
    return base_function(x) + noise_quantile(spec, tau);
}

/// Draws x_i then its noise, row by row, from one stream seeded with spec.seed.
inline Dataset generate(const SynthSpec& spec) {
    spec.validate();
    Rng rng(spec.seed);
    Dataset d;
    const auto l = static_cast<Eigen::Index>(spec.l);
    d.features.resize(l, 1);
    d.response.resize(l);
    d.feature_names = {"x"};
    for (Eigen::Index i = 0; i < l; ++i) {
        const double x = rng.uniform(-4.0, 4.0);
        const double noise = spec.dataset == SynthKind::AD1 ? spec.sigma * rng.normal() : rng.uniform(spec.a, spec.b);
        d.features(i, 0) = x;
        d.response(i) = base_function(x) + noise;
    }
    return d;
}

inline Vector true_quantiles(const SynthSpec& spec, TauLevel tau, const FeatureMatrix& x) {
    const double shift = noise_quantile(spec, tau);
    Vector q(x.rows());
    for (Eigen::Index i = 0; i < x.rows(); ++i) q(i) = base_function(x(i, 0)) + shift;
    return q;
}

}  // namespace nusvqr
