#pragma once

#include <functional>

#include <Eigen/Dense>

namespace mmr2 {

using Objective = std::function<double(const Eigen::VectorXd&)>;

struct OptimOptions {
    int max_iter = 2000;         // per Nelder-Mead run
    int restarts = 3;            // total runs, each restarted from the incumbent
    double ftol = 1e-10;         // simplex spread in objective value
    double xtol = 1e-8;          // simplex spread in parameters
    double initial_step = 0.5;
    bool polish = true;          // finite-difference Newton refinement after the simplex
    double polish_floor = -25.0; // coordinates below this are treated as on the boundary
};

struct OptimResult {
    Eigen::VectorXd x;
    double f = 0.0;
    int iterations = 0;
    int evaluations = 0;
    bool converged = false;
};

/// Derivative-free minimization: Nelder-Mead with adaptive coefficients,
/// restarted from the best vertex until a restart no longer improves the
/// objective by more than ftol, followed by an optional damped Newton polish
/// on central finite differences. Non-finite objective values are treated
/// as +infinity.
OptimResult minimize(const Objective& f, const Eigen::VectorXd& x0, const OptimOptions& options = {});

}  // namespace mmr2
