#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "cpflow/errors.hpp"

namespace cpflow {

// Matrix-free SPD operator. apply must be linear; CG/SLQ additionally assume
// symmetry and positive definiteness (see spd_probe for a debug check).
struct LinearOperator {
  long dim = 0;
  std::function<std::vector<double>(const std::vector<double>&)> apply;
};

// Wrap a dense row-major d x d matrix as an operator.
LinearOperator dense_operator(std::vector<double> h, long d);

struct SolverReport {
  std::string call_type;
  long iterations = 0;
  long hvp_calls = 0;  // operator applies / objective evaluations
  double residual_inf = 0.0;
  bool converged = false;

  std::string csv_row() const;
};
std::string solver_report_csv_header();

struct CgResult {
  std::vector<double> z;
  SolverReport report;
};

// CG from z0 = 0 with infinity-norm stopping rule on the residual. When the
// recurrence residual passes the tolerance the true residual v - Hz is
// recomputed; a failed recheck restarts the direction from the true residual.
// max_iter < 0 means d. Breakdown (p'Hp <= 0 or non-finite) raises
// NumericalError carrying the iteration index.
CgResult conjugate_gradient(const LinearOperator& H, const std::vector<double>& v,
                            double atol, long max_iter = -1);

// Same recurrence run on n right-hand sides at once with per-row coefficients
// and per-row freezing; apply maps a flattened [n,d] batch to a batch. One
// apply per iteration regardless of how many rows are still active.
struct BatchedCgResult {
  std::vector<double> z;  // flattened [n,d]
  SolverReport report;
};
BatchedCgResult conjugate_gradient_batched(
    const std::function<std::vector<double>(const std::vector<double>&)>& apply,
    long n, long d, const std::vector<double>& v, double atol, long max_iter = -1);

struct LbfgsResult {
  std::vector<double> x;
  SolverReport report;
};

// Two-loop-recursion L-BFGS with Armijo backtracking (c = 1e-4, shrink 0.5).
// objective fills grad and returns the value; hvp_calls counts evaluations.
// 50 failed shrinks raise StagnationError with the best iterate attached.
LbfgsResult lbfgs_minimize(
    const std::function<double(const std::vector<double>&, std::vector<double>&)>& objective,
    std::vector<double> x0, long history, double grad_tol, long max_iter);

// Rademacher probe vector, reproducible from the seed.
std::vector<double> hutchinson_probe(uint64_t seed, long d);

struct SlqResult {
  double estimate = 0.0;
  SolverReport report;
};

// Stochastic Lanczos quadrature estimate of log det H for SPD H. Per probe:
// m Lanczos steps with full reorthogonalization, tridiagonal QL with implicit
// shifts tracking first-row eigenvector components, Gauss-quadrature sum of
// tau_i^2 log theta_i scaled by ||v||^2. Probes are averaged in order.
SlqResult slq_logdet(const LinearOperator& H, int probes, int lanczos_steps,
                     uint64_t seed);

// Lower Cholesky factor of a dense row-major SPD matrix (upper triangle of
// the result is zeroed). Throws NumericalError naming the failing pivot when
// the matrix is not positive definite.
std::vector<double> cholesky_factor(const std::vector<double>& h_dense, long d);

// Solves H x = b given the lower factor from cholesky_factor.
std::vector<double> cholesky_solve(const std::vector<double>& l_factor, long d,
                                   const std::vector<double>& b);

// Cholesky log-determinant of a dense row-major SPD matrix.
double exact_logdet(const std::vector<double>& h_dense, long d);

// Debug check that an operator looks symmetric positive definite on random
// probe pairs. Returns false on an asymmetry or a non-positive quadratic form.
bool spd_probe(const LinearOperator& H, uint64_t seed, int trials = 4);

}  // namespace cpflow
