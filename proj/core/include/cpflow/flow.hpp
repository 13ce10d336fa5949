#pragma once

#include <cstdint>
#include <vector>

#include "cpflow/icnn.hpp"
#include "cpflow/solvers.hpp"

namespace cpflow {

// One flow layer: the gradient map of a strongly convex potential, hence a
// bijection on R^d.
struct FlowLayer {
  ICNNConfig config;
  PotentialParams params;
};

// Per-dimension affine map y = x * exp(logscale) + shift applied before a
// layer. Parameterizing the scale by its log keeps it positive under
// unconstrained optimization and makes its log-det contribution a plain sum.
struct PreActNorm {
  ArrayValue logscale;  // [d]
  ArrayValue shift;     // [d]
};

// Composition: data -> [norm_1] -> layer_1 -> ... -> [norm_K] -> layer_K ->
// base space, with a standard-normal base. norms is either empty or one per
// layer.
struct FlowStack {
  long dim = 2;
  std::vector<FlowLayer> layers;
  std::vector<PreActNorm> norms;

  bool interleaved() const { return !norms.empty(); }
  void validate() const;  // throws ContractError
};

// n_flows random-initialized layers sharing one ICNN shape (layer_cfg's
// input_dim is overridden by dim); identity norms when interleave is set.
FlowStack make_stack(long dim, long n_flows, const ICNNConfig& layer_cfg,
                     bool interleave, uint64_t seed);

// ICNN ActNorm data init for every layer, feeding each layer the batch as
// transformed by the already-initialized layers before it.
void stack_actnorm_data_init(FlowStack& s, const ArrayValue& x_batch);

// Named views over all stack parameters: "flow{k}." + the ICNN keys, plus
// "norm{k}.{logscale|shift}" (k starting at 1).
std::vector<NamedParam> stack_named_params(FlowStack& s);

ArrayValue layer_forward(const FlowLayer& l, const ArrayValue& x);
ArrayValue flow_forward(const FlowStack& s, const ArrayValue& x);

// Inversion by minimizing the batch-summed convex objective F(x) - y'x with
// L-BFGS from x0 = y; the gradient is f(x) - y, so grad_tol bounds the worst
// per-sample residual in the infinity norm. max_iter < 0 means 500*d.
// Stagnation before grad_tol raises NumericalError carrying the residual.
struct InverseResult {
  ArrayValue x;
  SolverReport report;
};
InverseResult layer_inverse(const FlowLayer& l, const ArrayValue& y,
                            double grad_tol = 1e-6, long max_iter = -1);
ArrayValue flow_inverse(const FlowStack& s, const ArrayValue& y,
                        double grad_tol = 1e-6);

// Model samples: base normals pushed through the inverse maps in reverse.
ArrayValue sample(const FlowStack& s, long n, uint64_t seed,
                  double grad_tol = 1e-6);

enum class LogDetMode { kExact, kSlq };

struct SlqOptions {
  long lanczos_steps = 20;
  long probes = 32;
};

// logp[i] = base log-density of the pushed-forward sample plus all per-layer
// log-det terms and norm log-scales. logdet_terms[k][i] is layer k's
// contribution for sample i (norm log-scales excluded).
struct LogDensityResult {
  std::vector<double> logp;
  std::vector<std::vector<double>> logdet_terms;
  LogDetMode estimator = LogDetMode::kExact;
};

// Exact mode assembles each layer's Hessian from d Hessian-vector products
// and takes a Cholesky log-det (requires d <= 256); slq mode runs stochastic
// Lanczos quadrature with per-(layer, sample) seeds derived from seed.
LogDensityResult log_density(const FlowStack& s, const ArrayValue& x,
                             LogDetMode mode, uint64_t seed = 0,
                             SlqOptions slq = {});

// Differentiable surrogate for the log-det gradient: draws one Rademacher r
// per sample, solves Hz = r by batched CG (z detached), and returns the
// batch-summed (Hz)'r node. Its value is not the log-det; its parameter
// gradient estimates grad log det H unbiasedly up to CG tolerance.
// per_sample_potential is the [n] potential built on x_node; sample i's probe
// seed is mix_seed(seed, sample_offset + i).
NodeId surrogate_logdet_core(Graph& g, NodeId per_sample_potential, NodeId x_node,
                             double cg_atol, uint64_t seed,
                             long sample_offset = 0,
                             SolverReport* report_out = nullptr);

// Layer-level wrapper building the potential on a fresh input leaf.
NodeId surrogate_logdet_grad_objective(Graph& g, const FlowLayer& l,
                                       const ArrayValue& x, double cg_atol,
                                       uint64_t seed,
                                       PotentialGraphRefs* refs_out = nullptr,
                                       SolverReport* report_out = nullptr);

// Batch-summed training objective: -(sum_i base logp + sum_k surrogate_k +
// n * sum norm log-scales). Layer inputs are not detached, so the gradient
// also flows into upstream layers through each log-det term. param_leaves
// aligns with stack_named_params.
struct NllResult {
  NodeId loss = 0;
  std::vector<NodeId> param_leaves;
  double cg_iters_mean = 0;
  bool cg_converged = true;
};
NllResult nll_training_loss(Graph& g, const FlowStack& s, const ArrayValue& x,
                            double cg_atol, uint64_t seed, long sample_offset = 0);

// Mean squared displacement E |x - f(x)|^2 over the batch.
double transport_cost(const FlowStack& s, const ArrayValue& x);

// Closed-form references against the standard normal target: squared
// 2-Wasserstein distance of N(mean, cov), and KL(N(mean, cov) || N(0, I)).
// cov must be SPD (checked by eigendecomposition).
double gaussian_w2_sq_to_standard(const std::vector<double>& mean,
                                  const std::vector<double>& cov, long d);
double gaussian_kl_to_standard(const std::vector<double>& mean,
                               const std::vector<double>& cov, long d);

}  // namespace cpflow
