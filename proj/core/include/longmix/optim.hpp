#pragma once

#include <Eigen/Core>
#include <functional>

namespace longmix::optim {

using Objective = std::function<double(const Eigen::VectorXd&)>;

struct Options {
    int max_evals = 0;            // 0 -> 500*dim + 200
    double rel_f_tol = 1e-10;     // relative objective improvement
    double step_tol = 1e-8;       // simplex diameter / line-search step
    double init_step = 0.25;      // initial simplex edge
};

struct Result {
    Eigen::VectorXd x;
    double f = 0.0;
    int evals = 0;
    int iterations = 0;
    bool converged = false;       // both tolerances met within budget
    double last_rel_improvement = 0.0;
    double last_step = 0.0;
};

// Classic Nelder-Mead (reflect/expand/contract/shrink). Convergence requires
// BOTH the relative best-vs-worst objective spread < rel_f_tol AND the
// simplex diameter < step_tol.
Result nelder_mead(const Objective& f, const Eigen::VectorXd& x0, const Options& opts);

// Quasi-Newton polish: BFGS on central finite-difference gradients with
// Armijo backtracking. Converged when the last accepted step satisfies both
// tolerances (or the gradient is numerically zero at entry).
Result bfgs_polish(const Objective& f, const Eigen::VectorXd& x0, const Options& opts);

// Central finite-difference gradient (h = 1e-5 * (1 + |x_k|)).
Eigen::VectorXd fd_gradient(const Objective& f, const Eigen::VectorXd& x);

}  // namespace longmix::optim
