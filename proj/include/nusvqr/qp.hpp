#pragma once

#include "nusvqr/qp_active_set.hpp"
#include "nusvqr/qp_problem.hpp"
#include "nusvqr/qp_smo.hpp"

namespace nusvqr {

/// Solves a convex QP with box bounds, one equality and at most one
/// inequality. Problems with +/-1 equality coefficients and a class-constant
/// inequality go to the SMO decomposition; anything else to the dense
/// active-set method.
///
/// Throws InputError for malformed problems, InfeasibleError for an empty
/// feasible set and NonConvergenceError when max_iter is exhausted.
inline QpSolution solve_qp(const QpProblem& problem, const QpOptions& options = {}) {
    if (!(options.tol > 0.0)) throw InputError("solver tolerance must be positive");
    if (options.max_iter < 1) throw InputError("max_iter must be at least 1");
    problem.validate();
    if (auto shape = detail::detect_two_class(problem)) {
        return detail::SmoSolver(problem, std::move(*shape), options).solve();
    }
    return detail::ActiveSetSolver(problem, options).solve();
}

}  // namespace nusvqr
