#include "cpflow/autodiff.hpp"

#include <Eigen/Dense>

#include <cmath>
#include <limits>
#include <sstream>

namespace cpflow {

namespace {

constexpr NodeId kNone = std::numeric_limits<NodeId>::max();

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapMat = Eigen::Map<const RowMat>;
using MapMatMut = Eigen::Map<RowMat>;

[[noreturn]] void shape_fail(const char* op, const std::string& detail) {
  throw ContractError(std::string("shape error in ") + op + ": " + detail);
}

void expect(bool cond, const char* op, const ArrayValue& a, const ArrayValue& b) {
  if (!cond) {
    shape_fail(op, shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  }
}

}  // namespace

NodeId Graph::push(Op op, NodeAttr attr, std::vector<NodeId> parents, ArrayValue value) {
  Node n;
  n.op = op;
  n.attr = std::move(attr);
  n.parents = std::move(parents);
  n.value = std::move(value);
  if (op != Op::kLeaf && op != Op::kClampGate) {
    for (NodeId p : n.parents) {
      if (nodes_[p].requires_grad) {
        n.requires_grad = true;
        break;
      }
    }
  }
  nodes_.push_back(std::move(n));
  return static_cast<NodeId>(nodes_.size() - 1);
}

NodeId Graph::leaf(ArrayValue v, bool requires_grad) {
  Node n;
  n.op = Op::kLeaf;
  n.value = std::move(v);
  n.requires_grad = requires_grad;
  nodes_.push_back(std::move(n));
  return static_cast<NodeId>(nodes_.size() - 1);
}

ArrayValue Graph::eval(Op op, const NodeAttr& attr,
                       const std::vector<NodeId>& parents) const {
  switch (op) {
    case Op::kAdd:
    case Op::kMul: {
      const ArrayValue& a = nodes_[parents[0]].value;
      const ArrayValue& b = nodes_[parents[1]].value;
      const bool is_add = op == Op::kAdd;
      const char* name = is_add ? "add" : "mul";
      long n = a.rows(), m = a.cols();
      auto out = std::make_shared<std::vector<double>>(static_cast<size_t>(a.size()));
      const double* pa = a.data();
      const double* pb = b.data();
      double* po = out->data();
      switch (attr.bcast) {
        case Bcast::kNone:
          expect(same_shape(a, b), name, a, b);
          for (long i = 0; i < a.size(); ++i)
            po[i] = is_add ? pa[i] + pb[i] : pa[i] * pb[i];
          break;
        case Bcast::kScalarB:
          expect(b.rank() == 0, name, a, b);
          for (long i = 0; i < a.size(); ++i)
            po[i] = is_add ? pa[i] + pb[0] : pa[i] * pb[0];
          break;
        case Bcast::kRow:
          expect(a.rank() == 2 && b.rank() == 1 && b.cols() == m, name, a, b);
          for (long i = 0; i < n; ++i)
            for (long j = 0; j < m; ++j)
              po[i * m + j] = is_add ? pa[i * m + j] + pb[j] : pa[i * m + j] * pb[j];
          break;
        case Bcast::kCol:
          expect(a.rank() == 2 && b.rank() == 1 && b.cols() == n, name, a, b);
          for (long i = 0; i < n; ++i)
            for (long j = 0; j < m; ++j)
              po[i * m + j] = is_add ? pa[i * m + j] + pb[i] : pa[i * m + j] * pb[i];
          break;
      }
      return ArrayValue(a.shape(), std::move(out));
    }
    case Op::kScale: {
      const ArrayValue& a = nodes_[parents[0]].value;
      auto out = std::make_shared<std::vector<double>>(static_cast<size_t>(a.size()));
      const double* pa = a.data();
      double* po = out->data();
      for (long i = 0; i < a.size(); ++i) po[i] = attr.c * pa[i];
      return ArrayValue(a.shape(), std::move(out));
    }
    case Op::kMatMul: {
      const ArrayValue& a = nodes_[parents[0]].value;
      const ArrayValue& b = nodes_[parents[1]].value;
      if (a.rank() != 2 || b.rank() != 2) shape_fail("matmul", "operands must be rank 2");
      long ar = a.shape()[0], ac = a.shape()[1];
      long br = b.shape()[0], bc = b.shape()[1];
      long p = attr.trans_a ? ac : ar;
      long q = attr.trans_a ? ar : ac;
      long qb = attr.trans_b ? bc : br;
      long r = attr.trans_b ? br : bc;
      if (q != qb) {
        shape_fail("matmul", shape_str(a.shape()) + (attr.trans_a ? "ᵀ" : "") + " x " +
                                 shape_str(b.shape()) + (attr.trans_b ? "ᵀ" : ""));
      }
      auto out = std::make_shared<std::vector<double>>(static_cast<size_t>(p * r));
      MapMat ma(a.data(), ar, ac);
      MapMat mb(b.data(), br, bc);
      MapMatMut mo(out->data(), p, r);
      if (!attr.trans_a && !attr.trans_b) {
        mo.noalias() = ma * mb;
      } else if (!attr.trans_a && attr.trans_b) {
        mo.noalias() = ma * mb.transpose();
      } else if (attr.trans_a && !attr.trans_b) {
        mo.noalias() = ma.transpose() * mb;
      } else {
        mo.noalias() = ma.transpose() * mb.transpose();
      }
      return ArrayValue({p, r}, std::move(out));
    }
    case Op::kAct: {
      const ArrayValue& a = nodes_[parents[0]].value;
      auto out = std::make_shared<std::vector<double>>(static_cast<size_t>(a.size()));
      const double* pa = a.data();
      double* po = out->data();
      for (long i = 0; i < a.size(); ++i)
        po[i] = activation_derivative(attr.act, attr.act_order, pa[i]);
      return ArrayValue(a.shape(), std::move(out));
    }
    case Op::kExp: {
      const ArrayValue& a = nodes_[parents[0]].value;
      auto out = std::make_shared<std::vector<double>>(static_cast<size_t>(a.size()));
      for (long i = 0; i < a.size(); ++i) (*out)[static_cast<size_t>(i)] = std::exp(a.at(i));
      return ArrayValue(a.shape(), std::move(out));
    }
    case Op::kClampMin: {
      const ArrayValue& a = nodes_[parents[0]].value;
      auto out = std::make_shared<std::vector<double>>(static_cast<size_t>(a.size()));
      for (long i = 0; i < a.size(); ++i)
        (*out)[static_cast<size_t>(i)] = std::max(a.at(i), attr.c);
      return ArrayValue(a.shape(), std::move(out));
    }
    case Op::kClampGate: {
      const ArrayValue& a = nodes_[parents[0]].value;
      auto out = std::make_shared<std::vector<double>>(static_cast<size_t>(a.size()));
      for (long i = 0; i < a.size(); ++i)
        (*out)[static_cast<size_t>(i)] = a.at(i) > attr.c ? 1.0 : 0.0;
      return ArrayValue(a.shape(), std::move(out));
    }
    case Op::kConcat: {
      const ArrayValue& first = nodes_[parents[0]].value;
      long rank = first.rank();
      if (rank == 0) shape_fail("concat", "rank-0 operand");
      long rows = first.rows();
      long total = 0;
      for (NodeId p : parents) {
        const ArrayValue& v = nodes_[p].value;
        if (v.rank() != rank || v.rows() != rows) expect(false, "concat", first, v);
        total += v.cols();
      }
      auto out = std::make_shared<std::vector<double>>(static_cast<size_t>(rows * total));
      long off = 0;
      for (NodeId p : parents) {
        const ArrayValue& v = nodes_[p].value;
        long m = v.cols();
        for (long i = 0; i < rows; ++i)
          for (long j = 0; j < m; ++j)
            (*out)[static_cast<size_t>(i * total + off + j)] = v.at(i * m + j);
        off += m;
      }
      std::vector<long> shape = first.shape();
      shape.back() = total;
      return ArrayValue(std::move(shape), std::move(out));
    }
    case Op::kSlice: {
      const ArrayValue& a = nodes_[parents[0]].value;
      if (a.rank() == 0) shape_fail("slice", "rank-0 operand");
      long rows = a.rows(), m = a.cols();
      if (attr.start < 0 || attr.len < 0 || attr.start + attr.len > m) {
        shape_fail("slice", "range [" + std::to_string(attr.start) + "," +
                                std::to_string(attr.start + attr.len) + ") of " +
                                shape_str(a.shape()));
      }
      auto out =
          std::make_shared<std::vector<double>>(static_cast<size_t>(rows * attr.len));
      for (long i = 0; i < rows; ++i)
        for (long j = 0; j < attr.len; ++j)
          (*out)[static_cast<size_t>(i * attr.len + j)] = a.at(i * m + attr.start + j);
      std::vector<long> shape = a.shape();
      shape.back() = attr.len;
      return ArrayValue(std::move(shape), std::move(out));
    }
    case Op::kReduce: {
      const ArrayValue& a = nodes_[parents[0]].value;
      switch (attr.reduce) {
        case ReduceKind::kAll: {
          double s = 0;
          for (long i = 0; i < a.size(); ++i) s += a.at(i);
          return ArrayValue::scalar(s);
        }
        case ReduceKind::kLead: {
          if (a.rank() != 2) shape_fail("sum_lead", "operand must be rank 2");
          long n = a.shape()[0], m = a.shape()[1];
          auto out = std::make_shared<std::vector<double>>(static_cast<size_t>(m), 0.0);
          for (long i = 0; i < n; ++i)
            for (long j = 0; j < m; ++j) (*out)[static_cast<size_t>(j)] += a.at(i * m + j);
          return ArrayValue({m}, std::move(out));
        }
        case ReduceKind::kTrail: {
          if (a.rank() != 2) shape_fail("sum_trail", "operand must be rank 2");
          long n = a.shape()[0], m = a.shape()[1];
          auto out = std::make_shared<std::vector<double>>(static_cast<size_t>(n), 0.0);
          for (long i = 0; i < n; ++i) {
            double s = 0;
            for (long j = 0; j < m; ++j) s += a.at(i * m + j);
            (*out)[static_cast<size_t>(i)] = s;
          }
          return ArrayValue({n}, std::move(out));
        }
      }
      break;
    }
    case Op::kReshape: {
      return nodes_[parents[0]].value.reshaped(attr.shape);
    }
    case Op::kLeaf:
      break;
  }
  throw ContractError("eval: unreachable op");
}

NodeId Graph::add_bc(NodeId a, NodeId b, Bcast bc) {
  NodeAttr attr;
  attr.bcast = bc;
  ArrayValue v = eval(Op::kAdd, attr, {a, b});
  return push(Op::kAdd, std::move(attr), {a, b}, std::move(v));
}

NodeId Graph::add(NodeId a, NodeId b) { return add_bc(a, b, Bcast::kNone); }

NodeId Graph::mul(NodeId a, NodeId b, Bcast bc) {
  NodeAttr attr;
  attr.bcast = bc;
  ArrayValue v = eval(Op::kMul, attr, {a, b});
  return push(Op::kMul, std::move(attr), {a, b}, std::move(v));
}

NodeId Graph::scale(NodeId a, double c) {
  NodeAttr attr;
  attr.c = c;
  ArrayValue v = eval(Op::kScale, attr, {a});
  return push(Op::kScale, std::move(attr), {a}, std::move(v));
}

NodeId Graph::matmul(NodeId a, NodeId b, bool trans_a, bool trans_b) {
  NodeAttr attr;
  attr.trans_a = trans_a;
  attr.trans_b = trans_b;
  ArrayValue v = eval(Op::kMatMul, attr, {a, b});
  return push(Op::kMatMul, std::move(attr), {a, b}, std::move(v));
}

NodeId Graph::activation(const ActivationKind& kind, NodeId x, int order) {
  NodeAttr attr;
  attr.act = kind;
  attr.act_order = order;
  ArrayValue v = eval(Op::kAct, attr, {x});
  return push(Op::kAct, std::move(attr), {x}, std::move(v));
}

NodeId Graph::exp(NodeId a) {
  NodeAttr attr;
  ArrayValue v = eval(Op::kExp, attr, {a});
  return push(Op::kExp, std::move(attr), {a}, std::move(v));
}

NodeId Graph::clamp_min(NodeId a, double floor) {
  NodeAttr attr;
  attr.c = floor;
  ArrayValue v = eval(Op::kClampMin, attr, {a});
  return push(Op::kClampMin, std::move(attr), {a}, std::move(v));
}

NodeId Graph::reshape(NodeId a, std::vector<long> shape) {
  NodeAttr attr;
  attr.shape = std::move(shape);
  ArrayValue v = eval(Op::kReshape, attr, {a});
  return push(Op::kReshape, std::move(attr), {a}, std::move(v));
}

NodeId Graph::slice(NodeId a, long start, long len) {
  NodeAttr attr;
  attr.start = start;
  attr.len = len;
  ArrayValue v = eval(Op::kSlice, attr, {a});
  return push(Op::kSlice, std::move(attr), {a}, std::move(v));
}

NodeId Graph::concat(const std::vector<NodeId>& parts) {
  if (parts.empty()) throw ContractError("concat: no operands");
  if (parts.size() == 1) return parts[0];
  NodeAttr attr;
  ArrayValue v = eval(Op::kConcat, attr, parts);
  return push(Op::kConcat, std::move(attr), parts, std::move(v));
}

NodeId Graph::sum_all(NodeId a) {
  NodeAttr attr;
  attr.reduce = ReduceKind::kAll;
  ArrayValue v = eval(Op::kReduce, attr, {a});
  return push(Op::kReduce, std::move(attr), {a}, std::move(v));
}

NodeId Graph::sum_lead(NodeId a) {
  NodeAttr attr;
  attr.reduce = ReduceKind::kLead;
  ArrayValue v = eval(Op::kReduce, attr, {a});
  return push(Op::kReduce, std::move(attr), {a}, std::move(v));
}

NodeId Graph::sum_trail(NodeId a) {
  NodeAttr attr;
  attr.reduce = ReduceKind::kTrail;
  ArrayValue v = eval(Op::kReduce, attr, {a});
  return push(Op::kReduce, std::move(attr), {a}, std::move(v));
}

NodeId Graph::affine(NodeId x, NodeId w, NodeId b) {
  NodeId y = affine(x, w);
  long rank = value(y).rank();
  return add_bc(y, b, rank == 2 ? Bcast::kRow : Bcast::kNone);
}

NodeId Graph::affine(NodeId x, NodeId w) {
  // Builders must not hold references into nodes_ across pushes (reallocation).
  long xrank = value(x).rank();
  long xcols = value(x).cols();
  if (xrank == 1) {
    NodeId x2 = reshape(x, {1, xcols});
    NodeId y2 = matmul(x2, w, false, true);
    long out_cols = value(y2).shape()[1];
    return reshape(y2, {out_cols});
  }
  return matmul(x, w, false, true);
}

NodeId Graph::squared_norm(NodeId a) { return dot(a, a); }

NodeId Graph::dot(NodeId a, NodeId b) {
  expect(same_shape(value(a), value(b)), "dot", value(a), value(b));
  long arank = value(a).rank();
  NodeId prod = mul(a, b, Bcast::kNone);
  return arank == 2 ? sum_trail(prod) : sum_all(prod);
}

NodeId Graph::detach(NodeId a) { return constant(nodes_[a].value); }

void Graph::backward_one(NodeId id, NodeId g, std::vector<NodeId>& adjoint) {
  // Copy: pushing adjoint nodes below may reallocate nodes_.
  const Node n = nodes_[id];
  auto accumulate = [&](NodeId parent, NodeId contrib) {
    if (!nodes_[parent].requires_grad) return;
    adjoint[parent] =
        adjoint[parent] == kNone ? contrib : add(adjoint[parent], contrib);
  };
  switch (n.op) {
    case Op::kLeaf:
      return;
    case Op::kAdd: {
      accumulate(n.parents[0], g);
      NodeId db = g;
      switch (n.attr.bcast) {
        case Bcast::kNone:
          break;
        case Bcast::kScalarB:
          db = sum_all(g);
          break;
        case Bcast::kRow:
          db = sum_lead(g);
          break;
        case Bcast::kCol:
          db = sum_trail(g);
          break;
      }
      accumulate(n.parents[1], db);
      return;
    }
    case Op::kMul: {
      if (nodes_[n.parents[0]].requires_grad) {
        accumulate(n.parents[0], mul(g, n.parents[1], n.attr.bcast));
      }
      if (nodes_[n.parents[1]].requires_grad) {
        NodeId t = mul(g, n.parents[0], Bcast::kNone);
        NodeId db = t;
        switch (n.attr.bcast) {
          case Bcast::kNone:
            break;
          case Bcast::kScalarB:
            db = sum_all(t);
            break;
          case Bcast::kRow:
            db = sum_lead(t);
            break;
          case Bcast::kCol:
            db = sum_trail(t);
            break;
        }
        accumulate(n.parents[1], db);
      }
      return;
    }
    case Op::kScale:
      accumulate(n.parents[0], scale(g, n.attr.c));
      return;
    case Op::kMatMul: {
      bool ta = n.attr.trans_a, tb = n.attr.trans_b;
      if (nodes_[n.parents[0]].requires_grad) {
        NodeId da = ta ? matmul(n.parents[1], g, tb, true)
                       : matmul(g, n.parents[1], false, !tb);
        accumulate(n.parents[0], da);
      }
      if (nodes_[n.parents[1]].requires_grad) {
        NodeId db = tb ? matmul(g, n.parents[0], true, ta)
                       : matmul(n.parents[0], g, !ta, false);
        accumulate(n.parents[1], db);
      }
      return;
    }
    case Op::kAct: {
      NodeId d = activation(n.attr.act, n.parents[0], n.attr.act_order + 1);
      accumulate(n.parents[0], mul(g, d, Bcast::kNone));
      return;
    }
    case Op::kExp:
      // d(exp x) = exp x: reuse this node's own value as the factor.
      accumulate(n.parents[0], mul(g, id, Bcast::kNone));
      return;
    case Op::kClampMin: {
      NodeAttr gate_attr;
      gate_attr.c = n.attr.c;
      ArrayValue gv = eval(Op::kClampGate, gate_attr, {n.parents[0]});
      NodeId gate = push(Op::kClampGate, std::move(gate_attr), {n.parents[0]}, std::move(gv));
      accumulate(n.parents[0], mul(g, gate, Bcast::kNone));
      return;
    }
    case Op::kClampGate:
      return;  // derivative zero almost everywhere
    case Op::kConcat: {
      long off = 0;
      for (NodeId p : n.parents) {
        long m = nodes_[p].value.cols();
        if (nodes_[p].requires_grad) accumulate(p, slice(g, off, m));
        off += m;
      }
      return;
    }
    case Op::kSlice: {
      const ArrayValue pv = nodes_[n.parents[0]].value;
      long m = pv.cols();
      std::vector<NodeId> parts;
      std::vector<long> lshape = pv.shape();
      if (n.attr.start > 0) {
        lshape.back() = n.attr.start;
        parts.push_back(constant(ArrayValue::zeros(lshape)));
      }
      parts.push_back(g);
      if (n.attr.start + n.attr.len < m) {
        std::vector<long> rshape = pv.shape();
        rshape.back() = m - n.attr.start - n.attr.len;
        parts.push_back(constant(ArrayValue::zeros(rshape)));
      }
      accumulate(n.parents[0], concat(parts));
      return;
    }
    case Op::kReduce: {
      const ArrayValue pv = nodes_[n.parents[0]].value;
      NodeId zeros = constant(ArrayValue::zeros(pv.shape()));
      Bcast bc = Bcast::kScalarB;
      if (n.attr.reduce == ReduceKind::kLead) bc = Bcast::kRow;
      if (n.attr.reduce == ReduceKind::kTrail) bc = Bcast::kCol;
      if (pv.rank() == 0) {
        accumulate(n.parents[0], g);
      } else {
        accumulate(n.parents[0], add_bc(zeros, g, bc));
      }
      return;
    }
    case Op::kReshape:
      accumulate(n.parents[0], reshape(g, nodes_[n.parents[0]].value.shape()));
      return;
  }
}

std::vector<NodeId> Graph::gradient(NodeId scalar_root,
                                    const std::vector<NodeId>& wrt,
                                    bool create_graph) {
  if (nodes_[scalar_root].value.rank() != 0) {
    throw ContractError("gradient: root must be a scalar, got shape " +
                        shape_str(nodes_[scalar_root].value.shape()));
  }
  std::vector<NodeId> adjoint(static_cast<size_t>(scalar_root) + 1, kNone);
  if (nodes_[scalar_root].requires_grad) {
    adjoint[scalar_root] = constant_scalar(1.0);
    for (NodeId id = scalar_root;; --id) {
      if (adjoint[id] != kNone && nodes_[id].requires_grad) {
        backward_one(id, adjoint[id], adjoint);
      }
      if (id == 0) break;
    }
  }
  std::vector<NodeId> out;
  out.reserve(wrt.size());
  for (NodeId w : wrt) {
    NodeId a = w <= scalar_root ? adjoint[w] : kNone;
    if (a == kNone) {
      out.push_back(constant(ArrayValue::zeros(nodes_[w].value.shape())));
    } else {
      out.push_back(create_graph ? a : detach(a));
    }
  }
  return out;
}

NodeId Graph::hvp(NodeId scalar_root, NodeId x, const ArrayValue& v,
                  bool create_graph) {
  if (!same_shape(nodes_[x].value, v)) {
    throw ContractError("hvp: v shape " + shape_str(v.shape()) +
                        " does not match x shape " + shape_str(nodes_[x].value.shape()));
  }
  NodeId g = gradient(scalar_root, {x}, /*create_graph=*/true)[0];
  NodeId s2 = sum_all(mul(g, constant(v), Bcast::kNone));
  return gradient(s2, {x}, create_graph)[0];
}

}  // namespace cpflow
