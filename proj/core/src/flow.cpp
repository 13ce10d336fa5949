#include "cpflow/flow.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "cpflow/errors.hpp"
#include "cpflow/rng.hpp"

namespace cpflow {

namespace {

constexpr double kLog2Pi = 1.8378770664093454835606594728112;

ArrayValue as_batch(const ArrayValue& x) {
  return x.rank() == 2 ? x : x.reshaped({1, x.size()});
}

ArrayValue norm_apply(const PreActNorm& nrm, const ArrayValue& x) {
  const long n = x.rows(), d = x.cols();
  std::vector<double> out(static_cast<size_t>(n) * d);
  for (long i = 0; i < n; ++i)
    for (long j = 0; j < d; ++j)
      out[i * d + j] = x.at(i * d + j) * std::exp(nrm.logscale.at(j)) + nrm.shift.at(j);
  return ArrayValue::from({n, d}, std::move(out));
}

ArrayValue norm_invert(const PreActNorm& nrm, const ArrayValue& y) {
  const long n = y.rows(), d = y.cols();
  std::vector<double> out(static_cast<size_t>(n) * d);
  for (long i = 0; i < n; ++i)
    for (long j = 0; j < d; ++j)
      out[i * d + j] = (y.at(i * d + j) - nrm.shift.at(j)) * std::exp(-nrm.logscale.at(j));
  return ArrayValue::from({n, d}, std::move(out));
}

void check_vec(const ArrayValue& a, long d, const std::string& what) {
  if (a.rank() != 1 || a.size() != d)
    throw ContractError(what + " must have shape [" + std::to_string(d) + "], got " +
                        shape_str(a.shape()));
}

// All n per-sample d x d Hessians of the layer potential at u, flattened
// sample-major, assembled column by column from batched products with the
// unit vectors.
std::vector<double> batch_hessians(const FlowLayer& l, const ArrayValue& u) {
  const long n = u.rows(), d = u.cols();
  Graph g;
  PotentialGraphRefs refs = build_potential(g, l.config, l.params, u, false, true);
  NodeId total = g.sum_all(refs.value);
  const size_t wm = g.size();
  std::vector<double> hess(static_cast<size_t>(n) * d * d);
  std::vector<double> probe(static_cast<size_t>(n) * d);
  for (long j = 0; j < d; ++j) {
    std::fill(probe.begin(), probe.end(), 0.0);
    for (long i = 0; i < n; ++i) probe[i * d + j] = 1.0;
    NodeId hv = g.hvp(total, refs.x, ArrayValue::from({n, d}, probe), false);
    const double* p = g.value(hv).data();
    for (long i = 0; i < n; ++i)
      for (long r = 0; r < d; ++r) hess[(i * d + r) * d + j] = p[i * d + r];
    g.truncate(wm);
  }
  return hess;
}

void exact_layer_logdet(const FlowLayer& l, const ArrayValue& u, size_t layer_index,
                        std::vector<double>& out_row) {
  const long n = u.rows(), d = u.cols();
  std::vector<double> hess = batch_hessians(l, u);
  std::vector<double> hi(static_cast<size_t>(d) * d);
  for (long i = 0; i < n; ++i) {
    std::copy(hess.begin() + i * d * d, hess.begin() + (i + 1) * d * d, hi.begin());
    try {
      out_row[i] = exact_logdet(hi, d);
    } catch (const NumericalError& e) {
      throw NumericalError("log_density: layer " + std::to_string(layer_index + 1) +
                               ", sample " + std::to_string(i) + ": " + e.what(),
                           e.iteration);
    }
  }
}

void slq_layer_logdet(const FlowLayer& l, const ArrayValue& u, size_t layer_index,
                      uint64_t seed, const SlqOptions& slq, std::vector<double>& out_row) {
  const long n = u.rows(), d = u.cols();
  for (long i = 0; i < n; ++i) {
    std::vector<double> row(u.data() + i * d, u.data() + (i + 1) * d);
    Graph g;
    PotentialGraphRefs refs =
        build_potential(g, l.config, l.params, ArrayValue::from({1, d}, std::move(row)),
                        false, true);
    NodeId total = g.sum_all(refs.value);
    const size_t wm = g.size();
    LinearOperator H;
    H.dim = d;
    H.apply = [&g, &refs, total, wm, d](const std::vector<double>& v) {
      g.truncate(wm);
      NodeId hv = g.hvp(total, refs.x, ArrayValue::from({1, d}, v), false);
      const double* p = g.value(hv).data();
      return std::vector<double>(p, p + d);
    };
    try {
      // A Krylov basis cannot exceed the space dimension; past d steps the
      // quadrature is already exact per probe.
      SlqResult r = slq_logdet(H, static_cast<int>(slq.probes),
                               static_cast<int>(std::min(slq.lanczos_steps, d)),
                               mix_seed(seed, layer_index, static_cast<uint64_t>(i)));
      out_row[i] = r.estimate;
    } catch (const NumericalError& e) {
      throw NumericalError("log_density: layer " + std::to_string(layer_index + 1) +
                               ", sample " + std::to_string(i) + ": " + e.what(),
                           e.iteration);
    }
  }
}

std::vector<double> spd_eigenvalues(const std::vector<double>& cov, long d,
                                    const std::string& who) {
  if (static_cast<long>(cov.size()) != d * d)
    throw ContractError(who + ": cov must hold d*d entries");
  Eigen::MatrixXd m(d, d);
  for (long i = 0; i < d; ++i)
    for (long j = 0; j < d; ++j) m(i, j) = cov[i * d + j];
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(m);
  if (es.info() != Eigen::Success)
    throw NumericalError(who + ": eigendecomposition failed");
  std::vector<double> ev(static_cast<size_t>(d));
  for (long i = 0; i < d; ++i) {
    ev[i] = es.eigenvalues()[i];
    if (!(ev[i] > 0.0))
      throw NumericalError(who + ": covariance is not positive definite");
  }
  return ev;
}

}  // namespace

void FlowStack::validate() const {
  if (dim < 1) throw ContractError("FlowStack: dim must be positive");
  if (layers.empty()) throw ContractError("FlowStack: at least one layer required");
  if (!norms.empty() && norms.size() != layers.size())
    throw ContractError("FlowStack: norms must be empty or one per layer");
  for (size_t k = 0; k < layers.size(); ++k) {
    layers[k].config.validate();
    if (layers[k].config.input_dim != dim)
      throw ContractError("FlowStack: layer " + std::to_string(k + 1) +
                          " input_dim does not match stack dim");
  }
  for (size_t k = 0; k < norms.size(); ++k) {
    check_vec(norms[k].logscale, dim, "FlowStack: norm" + std::to_string(k + 1) + ".logscale");
    check_vec(norms[k].shift, dim, "FlowStack: norm" + std::to_string(k + 1) + ".shift");
  }
}

FlowStack make_stack(long dim, long n_flows, const ICNNConfig& layer_cfg,
                     bool interleave, uint64_t seed) {
  if (n_flows < 1) throw ContractError("make_stack: n_flows must be positive");
  ICNNConfig cfg = layer_cfg;
  cfg.input_dim = dim;
  cfg.validate();
  FlowStack s;
  s.dim = dim;
  for (long k = 0; k < n_flows; ++k) {
    FlowLayer l;
    l.config = cfg;
    l.params = init_params(cfg, mix_seed(seed, static_cast<uint64_t>(k)));
    s.layers.push_back(std::move(l));
    if (interleave) {
      PreActNorm nrm;
      nrm.logscale = ArrayValue::zeros({dim});
      nrm.shift = ArrayValue::zeros({dim});
      s.norms.push_back(std::move(nrm));
    }
  }
  return s;
}

void stack_actnorm_data_init(FlowStack& s, const ArrayValue& x_batch) {
  s.validate();
  ArrayValue u = as_batch(x_batch);
  for (size_t k = 0; k < s.layers.size(); ++k) {
    if (s.interleaved()) u = norm_apply(s.norms[k], u);
    actnorm_data_init(s.layers[k].params, s.layers[k].config, u);
    u = layer_forward(s.layers[k], u);
  }
}

std::vector<NamedParam> stack_named_params(FlowStack& s) {
  std::vector<NamedParam> out;
  for (size_t k = 0; k < s.layers.size(); ++k) {
    const std::string idx = std::to_string(k + 1);
    if (s.interleaved()) {
      out.push_back({"norm" + idx + ".logscale", &s.norms[k].logscale});
      out.push_back({"norm" + idx + ".shift", &s.norms[k].shift});
    }
    for (const NamedParam& np : named_params(s.layers[k].params, s.layers[k].config))
      out.push_back({"flow" + idx + "." + np.name, np.array});
  }
  return out;
}

ArrayValue layer_forward(const FlowLayer& l, const ArrayValue& x) {
  Graph g;
  NodeId f = grad_map(g, l.config, l.params, x, false);
  ArrayValue out = g.value(f);
  return x.rank() == 1 ? out.reshaped({x.size()}) : out;
}

ArrayValue flow_forward(const FlowStack& s, const ArrayValue& x) {
  s.validate();
  ArrayValue u = as_batch(x);
  if (u.cols() != s.dim) throw ContractError("flow_forward: data dim does not match stack");
  for (size_t k = 0; k < s.layers.size(); ++k) {
    if (s.interleaved()) u = norm_apply(s.norms[k], u);
    u = layer_forward(s.layers[k], u);
  }
  return x.rank() == 1 ? u.reshaped({s.dim}) : u;
}

InverseResult layer_inverse(const FlowLayer& l, const ArrayValue& y,
                            double grad_tol, long max_iter) {
  ArrayValue yb = as_batch(y);
  const long n = yb.rows(), d = yb.cols();
  if (d != l.config.input_dim) throw ContractError("layer_inverse: dim mismatch");
  if (max_iter < 0) max_iter = 500 * d;
  const double* yv = yb.data();

  // min_x sum_i F(x_i) - y_i'x_i is strongly convex with gradient f(x) - y,
  // so the solver's gradient stop bounds the worst inversion residual.
  Graph g;
  auto objective = [&](const std::vector<double>& xv, std::vector<double>& grad) {
    g.truncate(0);
    PotentialGraphRefs refs =
        build_potential(g, l.config, l.params, ArrayValue::from({n, d}, xv), false, true);
    NodeId total = g.sum_all(refs.value);
    NodeId gx = g.gradient(total, {refs.x}, false)[0];
    const double* fx = g.value(gx).data();
    grad.assign(fx, fx + n * d);
    double val = g.value(total).scalar_value();
    for (long i = 0; i < n * d; ++i) {
      grad[i] -= yv[i];
      val -= yv[i] * xv[i];
    }
    return val;
  };

  try {
    LbfgsResult r = lbfgs_minimize(objective, std::vector<double>(yv, yv + n * d), 10,
                                   grad_tol, max_iter);
    InverseResult out;
    out.x = ArrayValue::from(y.rank() == 1 ? std::vector<long>{d}
                                           : std::vector<long>{n, d},
                             std::move(r.x));
    out.report = std::move(r.report);
    return out;
  } catch (const StagnationError& e) {
    std::vector<double> gbuf;
    objective(e.best_iterate, gbuf);
    double rinf = 0.0;
    for (double v : gbuf) rinf = std::max(rinf, std::abs(v));
    char msg[128];
    std::snprintf(msg, sizeof msg, "layer_inverse: stagnated at residual %.3e (tol %.3e)",
                  rinf, grad_tol);
    throw NumericalError(msg, e.iteration);
  }
}

ArrayValue flow_inverse(const FlowStack& s, const ArrayValue& y, double grad_tol) {
  s.validate();
  ArrayValue u = as_batch(y);
  if (u.cols() != s.dim) throw ContractError("flow_inverse: data dim does not match stack");
  for (size_t k = s.layers.size(); k-- > 0;) {
    u = layer_inverse(s.layers[k], u, grad_tol).x;
    if (s.interleaved()) u = norm_invert(s.norms[k], u);
  }
  return y.rank() == 1 ? u.reshaped({s.dim}) : u;
}

ArrayValue sample(const FlowStack& s, long n, uint64_t seed, double grad_tol) {
  s.validate();
  if (n < 0) throw ContractError("sample: n must be non-negative");
  if (n == 0) return ArrayValue::from({0, s.dim}, {});
  Rng rng(seed);
  std::vector<double> z(static_cast<size_t>(n) * s.dim);
  for (double& v : z) v = rng.normal();
  return flow_inverse(s, ArrayValue::from({n, s.dim}, std::move(z)), grad_tol);
}

LogDensityResult log_density(const FlowStack& s, const ArrayValue& x, LogDetMode mode,
                             uint64_t seed, SlqOptions slq) {
  s.validate();
  ArrayValue u = as_batch(x);
  if (u.cols() != s.dim) throw ContractError("log_density: data dim does not match stack");
  const long n = u.rows(), d = s.dim;
  if (mode == LogDetMode::kExact && d > 256)
    throw ContractError("log_density: exact mode supports dim <= 256");
  if (mode == LogDetMode::kSlq && (slq.lanczos_steps < 1 || slq.probes < 1))
    throw ContractError("log_density: slq options must be positive");

  LogDensityResult out;
  out.estimator = mode;
  out.logdet_terms.assign(s.layers.size(), std::vector<double>(n, 0.0));
  double norm_logdet = 0.0;
  for (size_t k = 0; k < s.layers.size(); ++k) {
    if (s.interleaved()) {
      u = norm_apply(s.norms[k], u);
      for (long j = 0; j < d; ++j) norm_logdet += s.norms[k].logscale.at(j);
    }
    if (mode == LogDetMode::kExact)
      exact_layer_logdet(s.layers[k], u, k, out.logdet_terms[k]);
    else
      slq_layer_logdet(s.layers[k], u, k, seed, slq, out.logdet_terms[k]);
    u = layer_forward(s.layers[k], u);
  }

  out.logp.resize(n);
  for (long i = 0; i < n; ++i) {
    double lp = -0.5 * d * kLog2Pi + norm_logdet;
    for (long j = 0; j < d; ++j) lp -= 0.5 * u.at(i * d + j) * u.at(i * d + j);
    for (size_t k = 0; k < s.layers.size(); ++k) lp += out.logdet_terms[k][i];
    out.logp[i] = lp;
  }
  return out;
}

NodeId surrogate_logdet_core(Graph& g, NodeId per_sample_potential, NodeId x_node,
                             double cg_atol, uint64_t seed, long sample_offset,
                             SolverReport* report_out) {
  const ArrayValue& pv = g.value(per_sample_potential);
  const ArrayValue& xv = g.value(x_node);
  if (pv.rank() != 1 || xv.rank() != 2 || pv.size() != xv.rows())
    throw ContractError("surrogate_logdet_core: expected potential [n] over input [n,d]");
  const long n = xv.rows(), d = xv.cols();

  NodeId total = g.sum_all(per_sample_potential);
  std::vector<double> r(static_cast<size_t>(n) * d);
  for (long i = 0; i < n; ++i) {
    Rng rng(mix_seed(seed, static_cast<uint64_t>(sample_offset + i)));
    for (long j = 0; j < d; ++j) r[i * d + j] = rng.rademacher();
  }

  const size_t wm = g.size();
  auto apply = [&g, total, x_node, wm, n, d](const std::vector<double>& v) {
    g.truncate(wm);
    NodeId hv = g.hvp(total, x_node, ArrayValue::from({n, d}, v), false);
    const double* p = g.value(hv).data();
    return std::vector<double>(p, p + n * d);
  };
  BatchedCgResult cg = conjugate_gradient_batched(apply, n, d, r, cg_atol);
  g.truncate(wm);
  if (report_out) *report_out = cg.report;

  // z is constant by construction: the only differentiable inputs of the
  // surrogate are the potential's, so its gradient is z'(dH)r with z = H^{-1}r
  // frozen, the Hutchinson estimate of d(log det H).
  NodeId hz = g.hvp(total, x_node, ArrayValue::from({n, d}, cg.z), true);
  NodeId rc = g.constant(ArrayValue::from({n, d}, std::move(r)));
  return g.sum_all(g.mul(hz, rc));
}

NodeId surrogate_logdet_grad_objective(Graph& g, const FlowLayer& l, const ArrayValue& x,
                                       double cg_atol, uint64_t seed,
                                       PotentialGraphRefs* refs_out,
                                       SolverReport* report_out) {
  PotentialGraphRefs refs = build_potential(g, l.config, l.params, x, true, true);
  if (refs_out) *refs_out = refs;
  return surrogate_logdet_core(g, refs.value, refs.x, cg_atol, seed, 0, report_out);
}

NllResult nll_training_loss(Graph& g, const FlowStack& s, const ArrayValue& x,
                            double cg_atol, uint64_t seed, long sample_offset) {
  s.validate();
  ArrayValue xb = as_batch(x);
  if (xb.cols() != s.dim)
    throw ContractError("nll_training_loss: data dim does not match stack");
  const long n = xb.rows(), d = s.dim;
  if (n < 1) throw ContractError("nll_training_loss: empty batch");

  NllResult out;
  // The data leaf is differentiable so per-layer Hessians in the input exist;
  // its own gradient is never requested.
  NodeId u = g.leaf(xb, true);
  std::vector<NodeId> terms;
  double iter_acc = 0.0;
  bool all_converged = true;
  for (size_t k = 0; k < s.layers.size(); ++k) {
    if (s.interleaved()) {
      NodeId ls = g.leaf(s.norms[k].logscale, true);
      NodeId sh = g.leaf(s.norms[k].shift, true);
      out.param_leaves.push_back(ls);
      out.param_leaves.push_back(sh);
      u = g.add_bc(g.mul(u, g.exp(ls), Bcast::kRow), sh, Bcast::kRow);
      terms.push_back(g.scale(g.sum_all(ls), static_cast<double>(n)));
    }
    PotentialGraphRefs refs =
        build_potential(g, s.layers[k].config, s.layers[k].params, u, true);
    out.param_leaves.insert(out.param_leaves.end(), refs.param_leaves.begin(),
                            refs.param_leaves.end());
    SolverReport cg_report;
    terms.push_back(surrogate_logdet_core(g, refs.value, u, cg_atol,
                                          mix_seed(seed, static_cast<uint64_t>(k)),
                                          sample_offset, &cg_report));
    iter_acc += static_cast<double>(cg_report.iterations);
    all_converged = all_converged && cg_report.converged;
    // Layer inputs stay attached: each surrogate then also carries the
    // upstream parameter dependence of its Hessian's evaluation point.
    u = g.gradient(g.sum_all(refs.value), {u}, true)[0];
  }

  NodeId acc = g.add(g.scale(g.sum_all(g.squared_norm(u)), -0.5),
                     g.constant_scalar(-0.5 * static_cast<double>(n) * d * kLog2Pi));
  for (NodeId t : terms) acc = g.add(acc, t);
  out.loss = g.scale(acc, -1.0);
  out.cg_iters_mean = iter_acc / static_cast<double>(s.layers.size());
  out.cg_converged = all_converged;
  return out;
}

double transport_cost(const FlowStack& s, const ArrayValue& x) {
  ArrayValue xb = as_batch(x);
  ArrayValue y = flow_forward(s, xb);
  const long n = xb.rows(), d = xb.cols();
  if (n == 0) return 0.0;
  double acc = 0.0;
  for (long i = 0; i < n * d; ++i) {
    double diff = xb.at(i) - y.at(i);
    acc += diff * diff;
  }
  return acc / static_cast<double>(n);
}

double gaussian_w2_sq_to_standard(const std::vector<double>& mean,
                                  const std::vector<double>& cov, long d) {
  if (static_cast<long>(mean.size()) != d)
    throw ContractError("gaussian_w2_sq_to_standard: mean must hold d entries");
  std::vector<double> ev = spd_eigenvalues(cov, d, "gaussian_w2_sq_to_standard");
  double out = 0.0;
  for (double m : mean) out += m * m;
  for (double lam : ev) out += lam + 1.0 - 2.0 * std::sqrt(lam);
  return out;
}

double gaussian_kl_to_standard(const std::vector<double>& mean,
                               const std::vector<double>& cov, long d) {
  if (static_cast<long>(mean.size()) != d)
    throw ContractError("gaussian_kl_to_standard: mean must hold d entries");
  std::vector<double> ev = spd_eigenvalues(cov, d, "gaussian_kl_to_standard");
  double out = 0.0;
  for (double m : mean) out += m * m;
  for (double lam : ev) out += lam - 1.0 - std::log(lam);
  return 0.5 * out;
}

}  // namespace cpflow
