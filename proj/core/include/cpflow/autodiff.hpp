#pragma once

#include <cstdint>
#include <vector>

#include "cpflow/activations.hpp"
#include "cpflow/array.hpp"

namespace cpflow {

enum class Op : uint8_t {
  kLeaf,
  kAdd,
  kMul,
  kScale,
  kMatMul,
  kAct,
  kExp,
  kClampMin,
  kClampGate,
  kConcat,
  kSlice,
  kReduce,
  kReshape,
};

// How the second operand of kAdd/kMul is expanded to the first operand's
// shape. kRow: [m] repeated across the rows of [n,m]; kCol: [n] repeated
// across the columns; kScalarB: [] everywhere.
enum class Bcast : uint8_t { kNone, kScalarB, kRow, kCol };

// kAll: sum to scalar. kLead: [n,m] -> [m]. kTrail: [n,m] -> [n].
enum class ReduceKind : uint8_t { kAll, kLead, kTrail };

using NodeId = uint32_t;

struct NodeAttr {
  Bcast bcast = Bcast::kNone;
  ReduceKind reduce = ReduceKind::kAll;
  bool trans_a = false;
  bool trans_b = false;
  ActivationKind act{};
  int act_order = 0;
  double c = 0.0;  // kScale factor, kClampMin/kClampGate floor
  long start = 0;  // kSlice offset on the last axis
  long len = 0;    // kSlice extent
  std::vector<long> shape;  // kReshape target
};

struct Node {
  Op op = Op::kLeaf;
  NodeAttr attr;
  std::vector<NodeId> parents;
  ArrayValue value;
  bool requires_grad = false;
};

// Append-only reverse-mode tape over dense f64 arrays. Values are computed
// eagerly at build time, so insertion order is topological order and
// evaluation is bitwise deterministic. Every adjoint rule is written in terms
// of the same primitives, which closes the set under repeated
// differentiation: gradient() with create_graph can be applied to its own
// output, which is what Hessian-vector products and their parameter
// gradients require.
class Graph {
 public:
  NodeId leaf(ArrayValue v, bool requires_grad);
  NodeId constant(ArrayValue v) { return leaf(std::move(v), false); }
  NodeId constant_scalar(double v) { return constant(ArrayValue::scalar(v)); }

  // The primitive set used by the potential networks.
  // affine: y = x Wᵀ + b for x [n,d] or [d], W [m,d], optional b [m].
  NodeId affine(NodeId x, NodeId w, NodeId b);
  NodeId affine(NodeId x, NodeId w);
  NodeId activation(const ActivationKind& kind, NodeId x, int order = 0);
  NodeId add(NodeId a, NodeId b);          // same shape
  NodeId scale(NodeId a, double c);
  NodeId concat(const std::vector<NodeId>& parts);  // last axis
  NodeId sum_all(NodeId a);                // -> scalar
  NodeId sum_lead(NodeId a);               // [n,m] -> [m]
  NodeId sum_trail(NodeId a);              // [n,m] -> [n]
  // squared_norm/dot: rank <= 1 -> scalar; rank 2 -> per-row [n].
  NodeId squared_norm(NodeId a);
  NodeId dot(NodeId a, NodeId b);

  // Closure helpers (the adjoint language).
  NodeId add_bc(NodeId a, NodeId b, Bcast bc);
  NodeId mul(NodeId a, NodeId b, Bcast bc = Bcast::kNone);
  NodeId matmul(NodeId a, NodeId b, bool trans_a = false, bool trans_b = false);
  NodeId exp(NodeId a);
  NodeId clamp_min(NodeId a, double floor);
  NodeId reshape(NodeId a, std::vector<long> shape);
  NodeId slice(NodeId a, long start, long len);

  // Reverse-mode gradient of a scalar node. With create_graph the results are
  // differentiable nodes; without it they are detached constants. A wrt node
  // outside the scalar's ancestry yields zeros of its shape.
  std::vector<NodeId> gradient(NodeId scalar_root, const std::vector<NodeId>& wrt,
                               bool create_graph);
  // H·v where H = ∂²scalar/∂x², via gradient-of-(gradient·v); exact, not
  // finite-differenced. v must match x's shape; with a batched x the result
  // holds per-sample Hessian products.
  NodeId hvp(NodeId scalar_root, NodeId x, const ArrayValue& v, bool create_graph);
  NodeId detach(NodeId a);

  const ArrayValue& value(NodeId id) const { return nodes_[id].value; }
  const Node& node(NodeId id) const { return nodes_[id]; }
  size_t size() const { return nodes_.size(); }

  // Drops every node appended after the watermark. Callers must not hold ids
  // >= watermark afterwards. Used to keep scratch graphs bounded inside
  // iterative solvers.
  void truncate(size_t watermark) { nodes_.resize(watermark); }

 private:
  NodeId push(Op op, NodeAttr attr, std::vector<NodeId> parents, ArrayValue value);
  ArrayValue eval(Op op, const NodeAttr& attr, const std::vector<NodeId>& parents) const;
  // Accumulates parent adjoints of `id` given its adjoint node `g`.
  void backward_one(NodeId id, NodeId g, std::vector<NodeId>& adjoint);

  std::vector<Node> nodes_;
};

}  // namespace cpflow
