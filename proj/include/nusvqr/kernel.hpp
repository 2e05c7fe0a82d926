#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <span>
#include <string>

#include "nusvqr/dataset.hpp"
#include "nusvqr/error.hpp"

namespace nusvqr {

enum class KernelFamily { RBF, Linear };

/// Kernel family plus parameters. For RBF, k(x, y) = exp(-|x - y|^2 / q).
struct KernelSpec {
    KernelFamily family = KernelFamily::RBF;
    double q = 1.0;

    static KernelSpec rbf(double q) { return {KernelFamily::RBF, q}; }
    static KernelSpec linear() { return {KernelFamily::Linear, 1.0}; }

    void validate() const {
        if (family == KernelFamily::RBF && !(q > 0.0 && std::isfinite(q))) {
            throw InputError("RBF kernel width q must be positive and finite, got " + std::to_string(q));
        }
    }
};

inline std::string to_string(KernelFamily f) { return f == KernelFamily::RBF ? "rbf" : "linear"; }

inline KernelFamily kernel_family_from_string(const std::string& s) {
    if (s == "rbf") return KernelFamily::RBF;
    if (s == "linear") return KernelFamily::Linear;
    throw InputError("unknown kernel family '" + s + "'");
}

namespace detail {

inline double kernel_unchecked(const KernelSpec& spec, const double* x, const double* y, std::size_t n) {
    if (spec.family == KernelFamily::Linear) {
        double dot = 0.0;
        for (std::size_t k = 0; k < n; ++k) dot += x[k] * y[k];
        return dot;
    }
    double d2 = 0.0;
    for (std::size_t k = 0; k < n; ++k) {
        const double diff = x[k] - y[k];
        d2 += diff * diff;
    }
    return std::exp(-d2 / spec.q);
}

}  // namespace detail

inline double kernel_eval(const KernelSpec& spec, std::span<const double> x, std::span<const double> y) {
    spec.validate();
    if (x.size() != y.size()) {
        throw InputError("kernel arguments differ in dimension: " + std::to_string(x.size()) + " vs " +
                         std::to_string(y.size()));
    }
    return detail::kernel_unchecked(spec, x.data(), y.data(), x.size());
}

/// Dense Gram matrix G(i, j) = k(x_i, x_j). Each unordered pair is evaluated
/// once, so the result is exactly symmetric.
inline Eigen::MatrixXd gram_matrix(const KernelSpec& spec, const FeatureMatrix& x) {
    spec.validate();
    if (x.rows() == 0) throw InputError("gram_matrix: empty feature matrix");
    const Eigen::Index l = x.rows();
    const auto n = static_cast<std::size_t>(x.cols());
    Eigen::MatrixXd g(l, l);
    for (Eigen::Index j = 0; j < l; ++j) {
        const double* xj = x.row(j).data();
        for (Eigen::Index i = 0; i <= j; ++i) {
            const double v = detail::kernel_unchecked(spec, x.row(i).data(), xj, n);
            g(i, j) = v;
            g(j, i) = v;
        }
    }
    return g;
}

/// Rectangular kernel matrix K(i, j) = k(a_i, b_j).
inline Eigen::MatrixXd cross_kernel(const KernelSpec& spec, const FeatureMatrix& a, const FeatureMatrix& b) {
    spec.validate();
    if (a.cols() != b.cols()) {
        throw InputError("feature dimension mismatch: " + std::to_string(a.cols()) + " vs " +
                         std::to_string(b.cols()));
    }
    const auto n = static_cast<std::size_t>(a.cols());
    Eigen::MatrixXd k(a.rows(), b.rows());
    for (Eigen::Index j = 0; j < b.rows(); ++j) {
        for (Eigen::Index i = 0; i < a.rows(); ++i) {
            k(i, j) = detail::kernel_unchecked(spec, a.row(i).data(), b.row(j).data(), n);
        }
    }
    return k;
}

}  // namespace nusvqr
