#pragma once

#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace nusvqr {

/// Bad arguments, malformed files, dimension mismatches. CLI exit code 2.
class InputError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

/// The QP feasible set is empty.
class InfeasibleError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// The solver hit its iteration cap. CLI exit code 3.
///
/// The best iterate is kept so callers can inspect or reuse it; `best_point`
/// is the flattened primal iterate of the QP.
class NonConvergenceError : public std::runtime_error {
public:
    NonConvergenceError(const std::string& what, std::vector<double> best_point, double residual,
                        long iterations)
        : std::runtime_error(what),
          best_point_(std::move(best_point)),
          residual_(residual),
          iterations_(iterations) {}

    [[nodiscard]] const std::vector<double>& best_point() const noexcept { return best_point_; }
    [[nodiscard]] double residual() const noexcept { return residual_; }
    [[nodiscard]] long iterations() const noexcept { return iterations_; }

private:
    std::vector<double> best_point_;
    double residual_;
    long iterations_;
};

}  // namespace nusvqr
