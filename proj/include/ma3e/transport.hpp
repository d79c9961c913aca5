#pragma once

#include <vector>

#include "ma3e/tensor.hpp"

namespace ma3e {

struct TransportProblem {
    Matrix cost;                  // n x n, finite and >= 0
    std::vector<double> supply;   // row marginals, sums to 1
    std::vector<double> demand;   // column marginals, sums to 1
    double epsilon = 0.0;         // entropic regularization strength
    int max_iters = 10000;
    double tol = 1e-6;            // max marginal violation for convergence
};

struct TransportPlan {
    Matrix plan;
    int iterations = 0;
    double marginal_error = 0.0;
    bool converged = false;
};

/// Cost-relative regularization: factor * mean(cost), floored at 1e-9.
double relative_epsilon(const Matrix& cost, double factor);

/// Uniform 1/n marginals with epsilon = relative_epsilon(cost, epsilon_rel).
TransportProblem make_uniform_problem(Matrix cost, double epsilon_rel = 0.1, int max_iters = 10000, double tol = 1e-6);

/// c_ij = mean over the D patch elements of (target_i - prediction_j)^2.
Matrix cost_matrix(const Matrix& targets, const Matrix& predictions);

/// Log-domain Sinkhorn-Knopp on the dual potentials (f, g). Stops once the
/// largest marginal violation is <= tol or after max_iters sweeps.
/// marginal_error and converged describe the iterate; the returned plan is
/// that iterate rounded onto the exact marginals.
TransportPlan sinkhorn_solve(const TransportProblem& problem);

/// Exact OT value with uniform marginals by enumerating all n! permutations
/// (the optimum sits on a permutation vertex of the Birkhoff polytope). n <= 8.
double exact_ot_oracle(const Matrix& cost);

// sum_ij c_ij * w_ij
double ot_loss(const Matrix& cost, const TransportPlan& plan);

/// Gradient of ot_loss with respect to predictions, with the plan held fixed:
/// dL/dpred_j = sum_i w_ij * 2 (pred_j - target_i) / D.
Matrix ot_loss_grad(const Matrix& targets, const Matrix& predictions, const TransportPlan& plan);

}  // namespace ma3e
