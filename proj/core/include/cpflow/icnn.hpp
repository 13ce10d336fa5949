#pragma once

#include <string>
#include <vector>

#include "cpflow/activations.hpp"
#include "cpflow/autodiff.hpp"

namespace cpflow {

// Input-convex potential network. depth is the number of hidden layers; width
// is the total hidden width per layer. In augmented mode each hidden state is
// concat([tilde, aug]) with width/2 units per half: the tilde half follows the
// positive-weight recursion, the aug half re-reads the input through an
// unconstrained linear map. activation_first may be any variant (layer-1
// pre-activations are affine in x); activation_rest must be non-decreasing or
// convexity breaks, and validate() rejects it otherwise.
struct ICNNConfig {
  long input_dim = 2;
  long depth = 2;
  long width = 16;
  bool augmented = false;
  ActivationKind activation_first{SoftplusBase::kGaussian,
                                  SoftplusVariant::kSymmetrized, 1.0};
  ActivationKind activation_rest{SoftplusBase::kGaussian, SoftplusVariant::kPlain,
                                 1.0};

  // Width of the tilde (positive-path) half: width/2 augmented, width vanilla.
  long tilde_width() const { return augmented ? width / 2 : width; }
  void validate() const;  // throws ContractError
};

// One hidden layer. W maps the input to the tilde pre-activation; rawV is the
// pre-softplus hidden-path weight (empty for layer 1); A is the augmented
// input map (empty when not augmented); b covers the full width (tilde bias
// first, aug bias second). ActNorm scale/shift act on the full-width
// pre-activation before the activation is applied.
struct ParamLayer {
  ArrayValue W;         // [tilde_width, d]
  ArrayValue rawV;      // [tilde_width, width], empty for the first layer
  ArrayValue A;         // [tilde_width, d], empty when not augmented
  ArrayValue b;         // [width]
  ArrayValue an_scale;  // [width]
  ArrayValue an_shift;  // [width]
};

// Effective positive weights are softplus(raw)/fan_in, applied inside the
// graph so parameter gradients flow through the reparameterization. w0, w1
// gate the strongly convex total F_{w0,w1} = softplus(w0)/2 * |x|^2
// + softplus(w1) * F(x).
struct PotentialParams {
  std::vector<ParamLayer> layers;
  ArrayValue raw_v_out;  // [width]
  ArrayValue W_out;      // [1, d]
  ArrayValue b_out;      // scalar
  ArrayValue w0;         // scalar
  ArrayValue w1;         // scalar
  bool actnorm_initialized = false;
};

// Named views over every trainable array, in a fixed traversal order. Keys:
// "layer{k}.{W|rawV|A|b|actnorm.scale|actnorm.shift}" (k starting at 1),
// "out.rawv", "out.W", "out.b", "reparam.w0", "reparam.w1". Keys for arrays a
// config does not have (rawV at k=1, A when vanilla) are omitted.
struct NamedParam {
  std::string name;
  ArrayValue* array;
};
std::vector<NamedParam> named_params(PotentialParams& p, const ICNNConfig& cfg);

// Fan-in-uniform init: unconstrained weights ~ U(+-1/sqrt(fan_in)), raw
// positive-path weights inverse_softplus(1) + U(+-1/sqrt(fan_in)) so the
// effective weight has mean 1/fan_in, biases 0, w0 = inverse_softplus(1),
// w1 = 0, ActNorm identity but flagged uninitialized. Same seed, same bits.
PotentialParams init_params(const ICNNConfig& cfg, uint64_t seed);

// Exact identity map: every raw positive weight is driven so far negative
// that softplus underflows to +0.0, W_out and b_out are zero, so
// F_{w0,w1}(x) = |x|^2/2 and the gradient map is x itself. ActNorm is
// identity and flagged initialized.
PotentialParams identity_like(const ICNNConfig& cfg);

// Graph handles for one potential evaluation. param_leaves aligns with
// named_params order; preacts/normalized hold each layer's pre-activation
// before and after ActNorm.
struct PotentialGraphRefs {
  std::vector<NodeId> param_leaves;
  std::vector<NodeId> preacts;
  std::vector<NodeId> normalized;
  NodeId x = 0;
  NodeId value = 0;  // F_{w0,w1} per sample: [n] for x [n,d]
};

// Builds F_{w0,w1}(x) for a batch x [n,d] (rank-1 x is promoted to one row).
// Requires ActNorm initialized. With params_require_grad the parameter leaves
// are differentiable; x_requires_grad likewise for the input (needed by
// grad_map and Hessian products).
PotentialGraphRefs build_potential(Graph& g, const ICNNConfig& cfg,
                                   const PotentialParams& p, const ArrayValue& x,
                                   bool params_require_grad, bool x_requires_grad);

// Same, but on an existing [n,d] node so potentials can compose with other
// graph structure (flow stacks differentiate through layer inputs).
PotentialGraphRefs build_potential(Graph& g, const ICNNConfig& cfg,
                                   const PotentialParams& p, NodeId x_node,
                                   bool params_require_grad);

// Convenience: value-only evaluation, F_{w0,w1} per sample.
ArrayValue potential(const ICNNConfig& cfg, const PotentialParams& p,
                     const ArrayValue& x);

// f(x) = grad_x F_{w0,w1}(x), returned as a differentiable node [n,d] in g
// (create_graph backward, so it supports further differentiation). refs_out,
// if non-null, receives the graph handles of the underlying potential.
NodeId grad_map(Graph& g, const ICNNConfig& cfg, const PotentialParams& p,
                const ArrayValue& x, bool params_require_grad,
                PotentialGraphRefs* refs_out = nullptr);

// Data-dependent ActNorm init, layer by layer: scale = 1/std, shift =
// -mean*scale of each pre-activation unit over the batch (population
// statistics), so normalized units have mean 0 and variance 1. Zero-variance
// units fall back to scale 1; scale is floored at 1e-3. No-op when already
// initialized. Batch must have >= 2 rows.
void actnorm_data_init(PotentialParams& p, const ICNNConfig& cfg,
                       const ArrayValue& x_batch);

}  // namespace cpflow
