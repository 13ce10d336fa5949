#include "cpflow/icnn.hpp"

#include <cmath>
#include <string>
#include <utility>

#include "cpflow/errors.hpp"
#include "cpflow/rng.hpp"

namespace cpflow {

void ICNNConfig::validate() const {
  if (input_dim < 1) throw ContractError("ICNNConfig: input_dim must be positive");
  if (depth < 1) throw ContractError("ICNNConfig: depth must be positive");
  if (width < 1) throw ContractError("ICNNConfig: width must be positive");
  if (augmented && width % 2 != 0)
    throw ContractError("ICNNConfig: augmented width must be even");
  if (activation_first.gain <= 0 || activation_rest.gain <= 0)
    throw ContractError("ICNNConfig: activation gain must be positive");
  // Hidden layers past the first compose the activation with convex
  // (non-affine) functions of x, which is convexity-preserving only for
  // non-decreasing activations.
  if (!activation_nondecreasing(activation_rest))
    throw ContractError("ICNNConfig: activation_rest must be non-decreasing");
}

namespace {

void check_shape(const ArrayValue& a, const std::vector<long>& want,
                 const std::string& name) {
  if (a.shape() != want) {
    throw ContractError("PotentialParams: " + name + " has shape " +
                        shape_str(a.shape()) + ", expected " + shape_str(want));
  }
}

void check_params(const ICNNConfig& cfg, const PotentialParams& p) {
  long d = cfg.input_dim, m = cfg.width, mt = cfg.tilde_width();
  if (static_cast<long>(p.layers.size()) != cfg.depth)
    throw ContractError("PotentialParams: layer count does not match depth");
  for (long k = 0; k < cfg.depth; ++k) {
    const ParamLayer& L = p.layers[static_cast<size_t>(k)];
    std::string tag = "layer" + std::to_string(k + 1);
    check_shape(L.W, {mt, d}, tag + ".W");
    if (k > 0) check_shape(L.rawV, {mt, m}, tag + ".rawV");
    if (cfg.augmented) check_shape(L.A, {mt, d}, tag + ".A");
    check_shape(L.b, {m}, tag + ".b");
    check_shape(L.an_scale, {m}, tag + ".actnorm.scale");
    check_shape(L.an_shift, {m}, tag + ".actnorm.shift");
  }
  check_shape(p.raw_v_out, {m}, "out.rawv");
  check_shape(p.W_out, {1, d}, "out.W");
  check_shape(p.b_out, {}, "out.b");
  check_shape(p.w0, {}, "reparam.w0");
  check_shape(p.w1, {}, "reparam.w1");
}

struct LayerIds {
  NodeId W = 0, rawV = 0, A = 0, b = 0, an_scale = 0, an_shift = 0;
};

struct ForwardCtx {
  NodeId x = 0;
  std::vector<LayerIds> lids;
  NodeId v_out = 0, W_out = 0, b_out = 0, w0 = 0, w1 = 0;
};

// Leaf push order must mirror named_params(); the FD parameter-gradient tests
// pin the correspondence. The input node is the caller's to set.
ForwardCtx push_leaves(Graph& g, const ICNNConfig& cfg, const PotentialParams& p,
                       bool params_rg, std::vector<NodeId>* leaves_out) {
  ForwardCtx c;
  auto take = [&](const ArrayValue& a) {
    NodeId id = g.leaf(a, params_rg);
    if (leaves_out) leaves_out->push_back(id);
    return id;
  };
  for (long k = 0; k < cfg.depth; ++k) {
    const ParamLayer& L = p.layers[static_cast<size_t>(k)];
    LayerIds ids;
    ids.W = take(L.W);
    if (k > 0) ids.rawV = take(L.rawV);
    if (cfg.augmented) ids.A = take(L.A);
    ids.b = take(L.b);
    ids.an_scale = take(L.an_scale);
    ids.an_shift = take(L.an_shift);
    c.lids.push_back(ids);
  }
  c.v_out = take(p.raw_v_out);
  c.W_out = take(p.W_out);
  c.b_out = take(p.b_out);
  c.w0 = take(p.w0);
  c.w1 = take(p.w1);
  return c;
}

// Pre-activation of layer k: tilde half W_k x + b + V_k^+ h (V from layer 2
// on), augmented half A_k x + b. h is the previous post-activation.
NodeId layer_preact(Graph& g, const ICNNConfig& cfg, const ForwardCtx& c, long k,
                    NodeId h) {
  const LayerIds& ids = c.lids[static_cast<size_t>(k)];
  long m = cfg.width, mt = cfg.tilde_width();
  NodeId bt = cfg.augmented ? g.slice(ids.b, 0, mt) : ids.b;
  NodeId zt = g.affine(c.x, ids.W, bt);
  if (k > 0) {
    NodeId vpos = g.scale(g.activation(ActivationKind{}, ids.rawV), 1.0 / static_cast<double>(m));
    zt = g.add(zt, g.matmul(h, vpos, false, true));
  }
  if (!cfg.augmented) return zt;
  NodeId za = g.affine(c.x, ids.A, g.slice(ids.b, mt, mt));
  return g.concat({zt, za});
}

NodeId actnorm_apply(Graph& g, NodeId z, NodeId scale, NodeId shift) {
  return g.add_bc(g.mul(z, g.clamp_min(scale, 1e-3), Bcast::kRow), shift, Bcast::kRow);
}

const ActivationKind& layer_act(const ICNNConfig& cfg, long k) {
  return k == 0 ? cfg.activation_first : cfg.activation_rest;
}

ArrayValue promote(const ArrayValue& x) {
  if (x.rank() == 1) return x.reshaped({1, x.cols()});
  return x;
}

// softplus(inverse_softplus(1)) can land an ulp off 1 (two libm round trips);
// the init contract pins softplus(w0) == 1 exactly, so walk to the nearest
// raw value that hits it.
double unit_raw() {
  static const double r = [] {
    double v = inverse_softplus(1.0);
    for (int i = 0; i < 64 && logistic_softplus(v) != 1.0; ++i)
      v = std::nextafter(v, logistic_softplus(v) < 1.0 ? HUGE_VAL : -HUGE_VAL);
    return v;
  }();
  return r;
}

}  // namespace

std::vector<NamedParam> named_params(PotentialParams& p, const ICNNConfig& cfg) {
  std::vector<NamedParam> out;
  for (long k = 0; k < cfg.depth; ++k) {
    ParamLayer& L = p.layers[static_cast<size_t>(k)];
    std::string tag = "layer" + std::to_string(k + 1) + ".";
    out.push_back({tag + "W", &L.W});
    if (k > 0) out.push_back({tag + "rawV", &L.rawV});
    if (cfg.augmented) out.push_back({tag + "A", &L.A});
    out.push_back({tag + "b", &L.b});
    out.push_back({tag + "actnorm.scale", &L.an_scale});
    out.push_back({tag + "actnorm.shift", &L.an_shift});
  }
  out.push_back({"out.rawv", &p.raw_v_out});
  out.push_back({"out.W", &p.W_out});
  out.push_back({"out.b", &p.b_out});
  out.push_back({"reparam.w0", &p.w0});
  out.push_back({"reparam.w1", &p.w1});
  return out;
}

PotentialParams init_params(const ICNNConfig& cfg, uint64_t seed) {
  cfg.validate();
  Rng rng(seed);
  long d = cfg.input_dim, m = cfg.width, mt = cfg.tilde_width();
  auto uniform_arr = [&](std::vector<long> shape, double bound) {
    std::vector<double> v(static_cast<size_t>(shape_size(shape)));
    for (double& x : v) x = (2.0 * rng.uniform() - 1.0) * bound;
    return ArrayValue::from(std::move(shape), std::move(v));
  };
  auto raw_arr = [&](std::vector<long> shape, long fan_in) {
    double base = inverse_softplus(1.0);
    double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
    std::vector<double> v(static_cast<size_t>(shape_size(shape)));
    for (double& x : v) x = base + (2.0 * rng.uniform() - 1.0) * bound;
    return ArrayValue::from(std::move(shape), std::move(v));
  };
  PotentialParams p;
  for (long k = 0; k < cfg.depth; ++k) {
    ParamLayer L;
    L.W = uniform_arr({mt, d}, 1.0 / std::sqrt(static_cast<double>(d)));
    if (k > 0) L.rawV = raw_arr({mt, m}, m);
    if (cfg.augmented) L.A = uniform_arr({mt, d}, 1.0 / std::sqrt(static_cast<double>(d)));
    L.b = ArrayValue::zeros({m});
    L.an_scale = ArrayValue::full({m}, 1.0);
    L.an_shift = ArrayValue::zeros({m});
    p.layers.push_back(std::move(L));
  }
  p.raw_v_out = raw_arr({m}, m);
  p.W_out = uniform_arr({1, d}, 1.0 / std::sqrt(static_cast<double>(d)));
  p.b_out = ArrayValue::scalar(0.0);
  p.w0 = ArrayValue::scalar(unit_raw());
  p.w1 = ArrayValue::scalar(0.0);
  p.actnorm_initialized = false;
  return p;
}

PotentialParams identity_like(const ICNNConfig& cfg) {
  cfg.validate();
  long d = cfg.input_dim, m = cfg.width, mt = cfg.tilde_width();
  // softplus(-1000) underflows to +0.0, so every positive-path weight is
  // exactly zero and the ICNN term vanishes identically.
  const double kOff = -1000.0;
  PotentialParams p;
  for (long k = 0; k < cfg.depth; ++k) {
    ParamLayer L;
    L.W = ArrayValue::zeros({mt, d});
    if (k > 0) L.rawV = ArrayValue::full({mt, m}, kOff);
    if (cfg.augmented) L.A = ArrayValue::zeros({mt, d});
    L.b = ArrayValue::zeros({m});
    L.an_scale = ArrayValue::full({m}, 1.0);
    L.an_shift = ArrayValue::zeros({m});
    p.layers.push_back(std::move(L));
  }
  p.raw_v_out = ArrayValue::full({m}, kOff);
  p.W_out = ArrayValue::zeros({1, d});
  p.b_out = ArrayValue::scalar(0.0);
  p.w0 = ArrayValue::scalar(unit_raw());
  p.w1 = ArrayValue::scalar(0.0);
  p.actnorm_initialized = true;
  return p;
}

namespace {

PotentialGraphRefs build_potential_core(Graph& g, const ICNNConfig& cfg,
                                        const ForwardCtx& c, PotentialGraphRefs refs) {
  refs.x = c.x;
  long n = g.value(c.x).rows();
  NodeId h = 0;
  for (long k = 0; k < cfg.depth; ++k) {
    const LayerIds& ids = c.lids[static_cast<size_t>(k)];
    NodeId z = layer_preact(g, cfg, c, k, h);
    NodeId zn = actnorm_apply(g, z, ids.an_scale, ids.an_shift);
    refs.preacts.push_back(z);
    refs.normalized.push_back(zn);
    h = g.activation(layer_act(cfg, k), zn);
  }
  NodeId vpos_out =
      g.scale(g.activation(ActivationKind{}, c.v_out), 1.0 / static_cast<double>(cfg.width));
  NodeId icnn = g.sum_trail(g.mul(h, vpos_out, Bcast::kRow));
  NodeId lin = g.reshape(g.affine(c.x, c.W_out), {n});
  NodeId f_icnn = g.add_bc(g.add(icnn, lin), c.b_out, Bcast::kScalarB);
  NodeId quad = g.scale(g.squared_norm(c.x), 0.5);
  NodeId sp_w0 = g.activation(ActivationKind{}, c.w0);
  NodeId sp_w1 = g.activation(ActivationKind{}, c.w1);
  refs.value = g.add(g.mul(quad, sp_w0, Bcast::kScalarB),
                     g.mul(f_icnn, sp_w1, Bcast::kScalarB));
  return refs;
}

void check_ready(const ICNNConfig& cfg, const PotentialParams& p) {
  cfg.validate();
  check_params(cfg, p);
  if (!p.actnorm_initialized)
    throw ContractError("build_potential: ActNorm uninitialized; run actnorm_data_init");
}

}  // namespace

PotentialGraphRefs build_potential(Graph& g, const ICNNConfig& cfg,
                                   const PotentialParams& p, const ArrayValue& x,
                                   bool params_require_grad, bool x_requires_grad) {
  check_ready(cfg, p);
  ArrayValue xb = promote(x);
  if (xb.rank() != 2 || xb.cols() != cfg.input_dim)
    throw ContractError("build_potential: x must be [n," +
                        std::to_string(cfg.input_dim) + "], got " +
                        shape_str(x.shape()));
  PotentialGraphRefs refs;
  ForwardCtx c = push_leaves(g, cfg, p, params_require_grad, &refs.param_leaves);
  c.x = g.leaf(xb, x_requires_grad);
  return build_potential_core(g, cfg, c, std::move(refs));
}

PotentialGraphRefs build_potential(Graph& g, const ICNNConfig& cfg,
                                   const PotentialParams& p, NodeId x_node,
                                   bool params_require_grad) {
  check_ready(cfg, p);
  const ArrayValue& xv = g.value(x_node);
  if (xv.rank() != 2 || xv.cols() != cfg.input_dim)
    throw ContractError("build_potential: x node must be [n," +
                        std::to_string(cfg.input_dim) + "], got " +
                        shape_str(xv.shape()));
  PotentialGraphRefs refs;
  ForwardCtx c = push_leaves(g, cfg, p, params_require_grad, &refs.param_leaves);
  c.x = x_node;
  return build_potential_core(g, cfg, c, std::move(refs));
}

ArrayValue potential(const ICNNConfig& cfg, const PotentialParams& p,
                     const ArrayValue& x) {
  Graph g;
  return g.value(build_potential(g, cfg, p, x, false, false).value);
}

NodeId grad_map(Graph& g, const ICNNConfig& cfg, const PotentialParams& p,
                const ArrayValue& x, bool params_require_grad,
                PotentialGraphRefs* refs_out) {
  PotentialGraphRefs refs = build_potential(g, cfg, p, x, params_require_grad, true);
  // Rows are independent samples, so the gradient of the batch sum is the
  // per-sample gradient map.
  std::vector<NodeId> gr = g.gradient(g.sum_all(refs.value), {refs.x}, true);
  if (refs_out) *refs_out = refs;
  return gr[0];
}

void actnorm_data_init(PotentialParams& p, const ICNNConfig& cfg,
                       const ArrayValue& x_batch) {
  cfg.validate();
  check_params(cfg, p);
  if (p.actnorm_initialized) return;
  if (x_batch.rank() != 2 || x_batch.rows() < 2)
    throw ContractError("actnorm_data_init: need a batch of at least 2 rows");
  Graph g;
  ForwardCtx c = push_leaves(g, cfg, p, false, nullptr);
  c.x = g.leaf(x_batch, false);
  long n = x_batch.rows(), m = cfg.width;
  NodeId h = 0;
  for (long k = 0; k < cfg.depth; ++k) {
    NodeId z = layer_preact(g, cfg, c, k, h);
    const ArrayValue& zv = g.value(z);
    std::vector<double> scale(static_cast<size_t>(m)), shift(static_cast<size_t>(m));
    for (long j = 0; j < m; ++j) {
      double mean = 0;
      for (long i = 0; i < n; ++i) mean += zv.at(i * m + j);
      mean /= static_cast<double>(n);
      double var = 0;
      for (long i = 0; i < n; ++i) {
        double dlt = zv.at(i * m + j) - mean;
        var += dlt * dlt;
      }
      var /= static_cast<double>(n);
      double s = var <= 1e-24 ? 1.0 : std::max(1.0 / std::sqrt(var), 1e-3);
      scale[static_cast<size_t>(j)] = s;
      shift[static_cast<size_t>(j)] = -mean * s;
    }
    ParamLayer& L = p.layers[static_cast<size_t>(k)];
    L.an_scale = ArrayValue::from({m}, std::move(scale));
    L.an_shift = ArrayValue::from({m}, std::move(shift));
    // The stats for layer k+1 must see this layer normalized, so the freshly
    // set arrays enter as constants rather than the stale leaves.
    NodeId zn = actnorm_apply(g, z, g.constant(L.an_scale), g.constant(L.an_shift));
    h = g.activation(layer_act(cfg, k), zn);
  }
  p.actnorm_initialized = true;
}

}  // namespace cpflow
