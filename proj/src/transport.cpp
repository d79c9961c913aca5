#include "ma3e/transport.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <string>

#include "ma3e/error.hpp"

namespace ma3e {

double relative_epsilon(const Matrix& cost, double factor) {
    if (cost.empty()) return 1e-9;
    const double mean = std::accumulate(cost.data().begin(), cost.data().end(), 0.0) / static_cast<double>(cost.size());
    return std::max(factor * mean, 1e-9);
}

TransportProblem make_uniform_problem(Matrix cost, double epsilon_rel, int max_iters, double tol) {
    const std::size_t n = cost.rows();
    TransportProblem problem;
    problem.epsilon = relative_epsilon(cost, epsilon_rel);
    problem.cost = std::move(cost);
    problem.supply.assign(n, 1.0 / static_cast<double>(n));
    problem.demand.assign(n, 1.0 / static_cast<double>(n));
    problem.max_iters = max_iters;
    problem.tol = tol;
    return problem;
}

Matrix cost_matrix(const Matrix& targets, const Matrix& predictions) {
    if (targets.rows() != predictions.rows() || targets.cols() != predictions.cols() || targets.cols() == 0)
        throw ValidationError("cost_matrix: shape mismatch between targets and predictions");
    const std::size_t n = targets.rows();
    const std::size_t d = targets.cols();
    Matrix cost(n, n);
    for (std::size_t i = 0; i < n; ++i) {
        const auto ti = targets.row(i);
        for (std::size_t j = 0; j < n; ++j) {
            const auto pj = predictions.row(j);
            double s = 0.0;
            for (std::size_t t = 0; t < d; ++t) {
                const double diff = ti[t] - pj[t];
                s += diff * diff;
            }
            cost(i, j) = s / static_cast<double>(d);
        }
    }
    return cost;
}

namespace {

void validate(const TransportProblem& problem) {
    const std::size_t n = problem.cost.rows();
    if (n == 0 || problem.cost.cols() != n) throw ValidationError("transport cost must be a non-empty square matrix");
    for (double c : problem.cost.data()) {
        if (!std::isfinite(c)) throw ValidationError("non-finite cost entry");
        if (c < 0.0) throw ValidationError("negative cost entry");
    }
    if (problem.supply.size() != n || problem.demand.size() != n)
        throw ValidationError("marginal lengths do not match the cost matrix");
    const auto check_marginal = [](const std::vector<double>& m) {
        double s = 0.0;
        for (double x : m) {
            if (!(x > 0.0)) throw ValidationError("marginals must be positive");
            s += x;
        }
        if (std::abs(s - 1.0) > 1e-9) throw ValidationError("marginals must sum to 1");
    };
    check_marginal(problem.supply);
    check_marginal(problem.demand);
    if (!(problem.epsilon > 0.0) || !std::isfinite(problem.epsilon)) throw ValidationError("epsilon must be positive");
    if (problem.max_iters < 1) throw ValidationError("max_iters must be >= 1");
    if (!(problem.tol > 0.0)) throw ValidationError("tol must be positive");
}

double log_sum_exp(const std::vector<double>& x) {
    const double m = *std::max_element(x.begin(), x.end());
    if (!std::isfinite(m)) return m;
    double s = 0.0;
    for (double v : x) s += std::exp(v - m);
    return m + std::log(s);
}

// Projects a near-feasible plan onto the transport polytope: shrink rows and
// columns that carry too much mass, then spread the deficit as a rank-one term.
void round_to_marginals(Matrix& w, const std::vector<double>& supply, const std::vector<double>& demand) {
    const std::size_t n = w.rows();
    for (std::size_t i = 0; i < n; ++i) {
        auto row = w.row(i);
        const double s = std::accumulate(row.begin(), row.end(), 0.0);
        if (s > supply[i])
            for (double& v : row) v *= supply[i] / s;
    }
    std::vector<double> col(n, 0.0);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < n; ++j) col[j] += w(i, j);
    for (std::size_t j = 0; j < n; ++j)
        if (col[j] > demand[j])
            for (std::size_t i = 0; i < n; ++i) w(i, j) *= demand[j] / col[j];
    std::vector<double> err_r(n), err_c(n, 0.0);
    double mass = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        double s = 0.0;
        for (std::size_t j = 0; j < n; ++j) {
            s += w(i, j);
            err_c[j] += w(i, j);
        }
        err_r[i] = std::max(0.0, supply[i] - s);
        mass += err_r[i];
    }
    for (std::size_t j = 0; j < n; ++j) err_c[j] = std::max(0.0, demand[j] - err_c[j]);
    if (mass <= 0.0) return;
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < n; ++j) w(i, j) += err_r[i] * err_c[j] / mass;
}

}  // namespace

TransportPlan sinkhorn_solve(const TransportProblem& problem) {
    validate(problem);
    const std::size_t n = problem.cost.rows();
    const double eps = problem.epsilon;
    const Matrix& c = problem.cost;
    std::vector<double> log_u(n), log_v(n);
    for (std::size_t i = 0; i < n; ++i) {
        log_u[i] = std::log(problem.supply[i]);
        log_v[i] = std::log(problem.demand[i]);
    }
    std::vector<double> f(n, 0.0), g(n, 0.0), scratch(n);

    TransportPlan result;
    result.plan = Matrix(n, n);
    double err = std::numeric_limits<double>::infinity();
    int it = 0;
    while (it < problem.max_iters) {
        ++it;
        for (std::size_t i = 0; i < n; ++i) {
            for (std::size_t j = 0; j < n; ++j) scratch[j] = (g[j] - c(i, j)) / eps;
            f[i] = eps * (log_u[i] - log_sum_exp(scratch));
        }
        for (std::size_t j = 0; j < n; ++j) {
            for (std::size_t i = 0; i < n; ++i) scratch[i] = (f[i] - c(i, j)) / eps;
            g[j] = eps * (log_v[j] - log_sum_exp(scratch));
        }
        // Columns are matched by the g update; rows carry the remaining violation.
        err = 0.0;
        std::vector<double> col(n, 0.0);
        for (std::size_t i = 0; i < n; ++i) {
            double row = 0.0;
            for (std::size_t j = 0; j < n; ++j) {
                const double w = std::exp((f[i] + g[j] - c(i, j)) / eps);
                row += w;
                col[j] += w;
            }
            err = std::max(err, std::abs(row - problem.supply[i]));
        }
        for (std::size_t j = 0; j < n; ++j) err = std::max(err, std::abs(col[j] - problem.demand[j]));
        if (err <= problem.tol) break;
    }
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < n; ++j) result.plan(i, j) = std::exp((f[i] + g[j] - c(i, j)) / eps);
    round_to_marginals(result.plan, problem.supply, problem.demand);
    result.iterations = it;
    result.marginal_error = err;
    result.converged = err <= problem.tol;
    return result;
}

double exact_ot_oracle(const Matrix& cost) {
    const std::size_t n = cost.rows();
    if (n == 0 || cost.cols() != n) throw ValidationError("exact_ot_oracle: cost must be a non-empty square matrix");
    if (n > 8) throw ValidationError("exact_ot_oracle: N too large (limit 8)");
    std::vector<std::size_t> perm(n);
    std::iota(perm.begin(), perm.end(), 0);
    double best = std::numeric_limits<double>::infinity();
    do {
        double s = 0.0;
        for (std::size_t i = 0; i < n; ++i) s += cost(i, perm[i]);
        best = std::min(best, s);
    } while (std::next_permutation(perm.begin(), perm.end()));
    return best / static_cast<double>(n);
}

double ot_loss(const Matrix& cost, const TransportPlan& plan) {
    if (cost.rows() != plan.plan.rows() || cost.cols() != plan.plan.cols())
        throw ValidationError("ot_loss: shape mismatch between cost and plan");
    double s = 0.0;
    for (std::size_t k = 0; k < cost.size(); ++k) s += cost.data()[k] * plan.plan.data()[k];
    return s;
}

Matrix ot_loss_grad(const Matrix& targets, const Matrix& predictions, const TransportPlan& plan) {
    const std::size_t n = targets.rows();
    if (predictions.rows() != n || predictions.cols() != targets.cols() || plan.plan.rows() != n ||
        plan.plan.cols() != n)
        throw ValidationError("ot_loss_grad: shape mismatch");
    const std::size_t d = targets.cols();
    const double scale = 2.0 / static_cast<double>(d);
    Matrix grad(n, d);
    for (std::size_t j = 0; j < n; ++j) {
        auto gj = grad.row(j);
        const auto pj = predictions.row(j);
        for (std::size_t i = 0; i < n; ++i) {
            const double w = plan.plan(i, j) * scale;
            const auto ti = targets.row(i);
            for (std::size_t t = 0; t < d; ++t) gj[t] += w * (pj[t] - ti[t]);
        }
    }
    return grad;
}

}  // namespace ma3e
