#include "doctest.h"

#include "cpflow/autodiff.hpp"
#include "cpflow/errors.hpp"
#include "cpflow/rng.hpp"

#include <cmath>
#include <functional>
#include <vector>

using namespace cpflow;

namespace {

ActivationKind logistic_plain() {
  return {SoftplusBase::kLogistic, SoftplusVariant::kPlain, 1.0};
}

// A composite scalar function exercising every primitive at least once:
// inputs x [2,3] and params W [4,3], b [4], c [4].
double composite_value(const std::vector<double>& xv, const std::vector<double>& wv,
                       const std::vector<double>& bv, const std::vector<double>& cv,
                       Graph* out_graph = nullptr, std::vector<NodeId>* leaves = nullptr) {
  Graph local;
  Graph& g = out_graph ? *out_graph : local;
  NodeId x = g.leaf(ArrayValue::from({2, 3}, xv), true);
  NodeId w = g.leaf(ArrayValue::from({4, 3}, wv), true);
  NodeId b = g.leaf(ArrayValue::from({4}, bv), true);
  NodeId c = g.leaf(ArrayValue::from({4}, cv), true);
  NodeId h = g.affine(x, w, b);                       // [2,4]
  NodeId a = g.activation(logistic_plain(), h);       // [2,4]
  NodeId m = g.mul(a, c, Bcast::kRow);                // [2,4]
  NodeId left = g.slice(m, 0, 2);                     // [2,2]
  NodeId right = g.slice(m, 2, 2);                    // [2,2]
  NodeId cat = g.concat({left, g.scale(right, 0.5)}); // [2,4]
  NodeId sq = g.squared_norm(cat);                    // [2]
  NodeId dt = g.dot(g.sum_lead(m), g.exp(g.scale(b, 0.1)));
  NodeId total = g.add(g.sum_all(sq), dt);
  NodeId guarded = g.clamp_min(g.add_bc(total, g.constant_scalar(-1.0), Bcast::kScalarB), -0.75);
  if (leaves) *leaves = {x, w, b, c};
  if (out_graph) {
    // caller wants the graph; stash root id in leaves' tail
    leaves->push_back(guarded);
  }
  return g.value(guarded).scalar_value();
}

// Central finite difference of composite_value w.r.t. one flattened leaf entry.
double composite_fd(int leaf, size_t idx, std::vector<double> xv, std::vector<double> wv,
                    std::vector<double> bv, std::vector<double> cv, double h) {
  std::vector<double>* tgt[] = {&xv, &wv, &bv, &cv};
  (*tgt[leaf])[idx] += h;
  double up = composite_value(xv, wv, bv, cv);
  (*tgt[leaf])[idx] -= 2 * h;
  double dn = composite_value(xv, wv, bv, cv);
  return (up - dn) / (2 * h);
}

}  // namespace

TEST_CASE("identity affine reproduces the input") {
  Graph g;
  NodeId x = g.leaf(ArrayValue::from({2}, {3, 4}), false);
  NodeId w = g.constant(ArrayValue::from({2, 2}, {1, 0, 0, 1}));
  NodeId b = g.constant(ArrayValue::from({2}, {0, 0}));
  NodeId y = g.affine(x, w, b);
  CHECK(g.value(y).at(0) == 3.0);
  CHECK(g.value(y).at(1) == 4.0);
  CHECK(g.value(y).rank() == 1);
}

TEST_CASE("squared norm and dot anchors") {
  Graph g;
  NodeId x = g.constant(ArrayValue::from({2}, {3, 4}));
  CHECK(g.value(g.squared_norm(x)).scalar_value() == 25.0);
  NodeId v = g.constant(ArrayValue::from({2}, {1, 2}));
  NodeId u = g.constant(ArrayValue::from({2}, {3, 4}));
  CHECK(g.value(g.dot(v, u)).scalar_value() == 11.0);
}

TEST_CASE("row-batched squared norm is per-sample") {
  Graph g;
  NodeId x = g.constant(ArrayValue::from({2, 2}, {3, 4, 1, 1}));
  NodeId s = g.squared_norm(x);
  CHECK(g.value(s).rank() == 1);
  CHECK(g.value(s).at(0) == 25.0);
  CHECK(g.value(s).at(1) == 2.0);
}

TEST_CASE("gradient of half squared norm is x") {
  Graph g;
  NodeId x = g.leaf(ArrayValue::from({2}, {3, 4}), true);
  NodeId s = g.scale(g.squared_norm(x), 0.5);
  auto grads = g.gradient(s, {x}, false);
  CHECK(g.value(grads[0]).at(0) == doctest::Approx(3.0).epsilon(1e-15));
  CHECK(g.value(grads[0]).at(1) == doctest::Approx(4.0).epsilon(1e-15));
}

TEST_CASE("gradient of quadratic form is Ax") {
  Graph g;
  NodeId x = g.leaf(ArrayValue::from({2}, {1, 0}), true);
  NodeId a = g.constant(ArrayValue::from({2, 2}, {2, 1, 1, 3}));
  NodeId ax = g.affine(x, a);  // A symmetric so Aᵀ = A
  NodeId q = g.scale(g.dot(x, ax), 0.5);
  auto grads = g.gradient(q, {x}, false);
  CHECK(g.value(grads[0]).at(0) == doctest::Approx(2.0).epsilon(1e-14));
  CHECK(g.value(grads[0]).at(1) == doctest::Approx(1.0).epsilon(1e-14));
}

TEST_CASE("gradient rejects non-scalar roots") {
  Graph g;
  NodeId x = g.leaf(ArrayValue::from({2}, {1, 2}), true);
  NodeId y = g.scale(x, 2.0);
  CHECK_THROWS_AS(g.gradient(y, {x}, false), ContractError);
}

TEST_CASE("gradient of every primitive matches finite differences") {
  Rng rng(17);
  std::vector<double> xv(6), wv(12), bv(4), cv(4);
  for (auto& v : xv) v = rng.normal();
  for (auto& v : wv) v = rng.normal() * 0.5;
  for (auto& v : bv) v = rng.normal() * 0.5;
  for (auto& v : cv) v = rng.normal();

  Graph g;
  std::vector<NodeId> handles;
  composite_value(xv, wv, bv, cv, &g, &handles);
  NodeId root = handles.back();
  handles.pop_back();
  auto grads = g.gradient(root, handles, false);

  const std::vector<std::vector<double>*> flats = {&xv, &wv, &bv, &cv};
  for (int leaf = 0; leaf < 4; ++leaf) {
    for (size_t idx = 0; idx < flats[leaf]->size(); ++idx) {
      double fd = composite_fd(leaf, idx, xv, wv, bv, cv, 1e-5);
      double an = g.value(grads[leaf]).at(static_cast<long>(idx));
      double denom = std::max({std::fabs(fd), std::fabs(an), 1e-8});
      CHECK(std::fabs(an - fd) / denom < 1e-5);
    }
  }
}

TEST_CASE("gradient w.r.t. a non-ancestor is zeros") {
  Graph g;
  NodeId x = g.leaf(ArrayValue::from({2}, {1, 2}), true);
  NodeId y = g.leaf(ArrayValue::from({3}, {1, 2, 3}), true);
  NodeId s = g.sum_all(x);
  auto grads = g.gradient(s, {y}, false);
  CHECK(g.value(grads[0]).rank() == 1);
  CHECK(g.value(grads[0]).cols() == 3);
  for (long i = 0; i < 3; ++i) CHECK(g.value(grads[0]).at(i) == 0.0);
}

TEST_CASE("detach blocks gradient flow") {
  Graph g;
  NodeId x = g.leaf(ArrayValue::from({2}, {1, 2}), true);
  NodeId s = g.sum_all(g.mul(x, g.detach(x)));
  auto grads = g.gradient(s, {x}, false);
  // d/dx of x·const(x) is const(x), so the gradient is x's value.
  CHECK(g.value(grads[0]).at(0) == doctest::Approx(1.0).epsilon(1e-15));
  CHECK(g.value(grads[0]).at(1) == doctest::Approx(2.0).epsilon(1e-15));
}

TEST_CASE("detached gradient contributes nothing to parameter gradients") {
  Graph g;
  NodeId x = g.leaf(ArrayValue::from({2}, {0.3, -0.7}), true);
  NodeId s = g.scale(g.squared_norm(x), 0.5);
  NodeId gx = g.gradient(s, {x}, false)[0];  // detached
  NodeId loss = g.sum_all(g.mul(gx, x));
  auto grads = g.gradient(loss, {x}, false);
  // With gx detached, d(loss)/dx = gx's value = x, not 2x.
  CHECK(g.value(grads[0]).at(0) == doctest::Approx(0.3).epsilon(1e-14));
  CHECK(g.value(grads[0]).at(1) == doctest::Approx(-0.7).epsilon(1e-14));
}

TEST_CASE("hvp on quadratic form returns Av") {
  Graph g;
  NodeId x = g.leaf(ArrayValue::from({2}, {0.2, -1.1}), true);
  NodeId a = g.constant(ArrayValue::from({2, 2}, {2, 1, 1, 3}));
  NodeId q = g.scale(g.dot(x, g.affine(x, a)), 0.5);
  NodeId hv = g.hvp(q, x, ArrayValue::from({2}, {1, 0}), false);
  CHECK(g.value(hv).at(0) == doctest::Approx(2.0).epsilon(1e-13));
  CHECK(g.value(hv).at(1) == doctest::Approx(1.0).epsilon(1e-13));
}

TEST_CASE("hvp of half squared norm is the identity") {
  Graph g;
  NodeId x = g.leaf(ArrayValue::from({3}, {0.5, 1.5, -2.0}), true);
  NodeId s = g.scale(g.squared_norm(x), 0.5);
  ArrayValue v = ArrayValue::from({3}, {-1.0, 0.25, 4.0});
  NodeId hv = g.hvp(s, x, v, false);
  for (long i = 0; i < 3; ++i)
    CHECK(g.value(hv).at(i) == doctest::Approx(v.at(i)).epsilon(1e-15));
}

namespace {

// Non-quadratic scalar with dense Hessian: F(x) = sum softplus(Wx) + 0.5 ||x||^2.
NodeId dense_test_scalar(Graph& g, NodeId x, const ArrayValue& wval) {
  NodeId w = g.constant(wval);
  NodeId pre = g.affine(x, w);
  NodeId act = g.activation(logistic_plain(), pre);
  return g.add(g.sum_all(act), g.scale(g.squared_norm(x), 0.5));
}

}  // namespace

TEST_CASE("hvp is linear in v") {
  Rng rng(23);
  const long d = 5;
  std::vector<double> wv(7 * d), xv(d), v1(d), v2(d);
  for (auto& t : wv) t = rng.normal() * 0.4;
  for (auto& t : xv) t = rng.normal();
  for (auto& t : v1) t = rng.normal();
  for (auto& t : v2) t = rng.normal();
  ArrayValue w = ArrayValue::from({7, d}, wv);
  const double a = 1.7, b = -0.6;

  auto run = [&](const std::vector<double>& v) {
    Graph g;
    NodeId x = g.leaf(ArrayValue::from({d}, xv), true);
    NodeId s = dense_test_scalar(g, x, w);
    NodeId hv = g.hvp(s, x, ArrayValue::from({d}, v), false);
    std::vector<double> out(d);
    for (long i = 0; i < d; ++i) out[i] = g.value(hv).at(i);
    return out;
  };

  std::vector<double> vc(d);
  for (long i = 0; i < d; ++i) vc[i] = a * v1[i] + b * v2[i];
  auto h1 = run(v1), h2 = run(v2), hc = run(vc);
  for (long i = 0; i < d; ++i) {
    CHECK(hc[i] == doctest::Approx(a * h1[i] + b * h2[i]).epsilon(1e-12));
  }
}

TEST_CASE("hvp agrees with the assembled Hessian and finite differences") {
  Rng rng(31);
  const long d = 6;
  std::vector<double> wv(4 * d), xv(d), vv(d);
  for (auto& t : wv) t = rng.normal() * 0.5;
  for (auto& t : xv) t = rng.normal();
  for (auto& t : vv) t = rng.normal();
  ArrayValue w = ArrayValue::from({4, d}, wv);

  // Column-by-column Hessian via unit-vector hvp calls.
  std::vector<std::vector<double>> H(d, std::vector<double>(d));
  for (long j = 0; j < d; ++j) {
    Graph g;
    NodeId x = g.leaf(ArrayValue::from({d}, xv), true);
    NodeId s = dense_test_scalar(g, x, w);
    std::vector<double> e(d, 0.0);
    e[j] = 1.0;
    NodeId hv = g.hvp(s, x, ArrayValue::from({d}, e), false);
    for (long i = 0; i < d; ++i) H[i][j] = g.value(hv).at(i);
  }
  // Symmetry of the assembled Hessian.
  for (long i = 0; i < d; ++i)
    for (long j = 0; j < d; ++j)
      CHECK(H[i][j] == doctest::Approx(H[j][i]).epsilon(1e-10));

  // hvp(v) vs H v.
  Graph g;
  NodeId x = g.leaf(ArrayValue::from({d}, xv), true);
  NodeId s = dense_test_scalar(g, x, w);
  NodeId hv = g.hvp(s, x, ArrayValue::from({d}, vv), false);
  for (long i = 0; i < d; ++i) {
    double acc = 0;
    for (long j = 0; j < d; ++j) acc += H[i][j] * vv[j];
    CHECK(g.value(hv).at(i) == doctest::Approx(acc).epsilon(1e-10));
  }

  // hvp vs central finite difference of the gradient (independent oracle).
  auto grad_at = [&](const std::vector<double>& pt) {
    Graph gg;
    NodeId xx = gg.leaf(ArrayValue::from({d}, pt), true);
    NodeId ss = dense_test_scalar(gg, xx, w);
    NodeId gr = gg.gradient(ss, {xx}, false)[0];
    std::vector<double> out(d);
    for (long i = 0; i < d; ++i) out[i] = gg.value(gr).at(i);
    return out;
  };
  const double h = 1e-4;
  std::vector<double> up = xv, dn = xv;
  for (long i = 0; i < d; ++i) {
    up[i] += h * vv[i];
    dn[i] -= h * vv[i];
  }
  auto gu = grad_at(up), gd = grad_at(dn);
  for (long i = 0; i < d; ++i) {
    double fd = (gu[i] - gd[i]) / (2 * h);
    double an = g.value(hv).at(i);
    double denom = std::max({std::fabs(fd), std::fabs(an), 1e-8});
    CHECK(std::fabs(an - fd) / denom < 1e-4);
  }
}

TEST_CASE("third-order path: gradient of hvp matches finite differences of hvp") {
  Rng rng(47);
  const long d = 4;
  std::vector<double> wv(3 * d), xv(d), vv(d), uv(d);
  for (auto& t : wv) t = rng.normal() * 0.6;
  for (auto& t : xv) t = rng.normal() * 0.8;
  for (auto& t : vv) t = rng.normal();
  for (auto& t : uv) t = rng.normal();
  ArrayValue w = ArrayValue::from({3, d}, wv);

  auto hvp_dot_u = [&](const std::vector<double>& pt) {
    Graph g;
    NodeId x = g.leaf(ArrayValue::from({d}, pt), true);
    NodeId s = dense_test_scalar(g, x, w);
    NodeId hv = g.hvp(s, x, ArrayValue::from({d}, vv), false);
    double acc = 0;
    for (long i = 0; i < d; ++i) acc += g.value(hv).at(i) * uv[i];
    return acc;
  };

  Graph g;
  NodeId x = g.leaf(ArrayValue::from({d}, xv), true);
  NodeId s = dense_test_scalar(g, x, w);
  NodeId hv = g.hvp(s, x, ArrayValue::from({d}, vv), /*create_graph=*/true);
  NodeId obj = g.dot(hv, g.constant(ArrayValue::from({d}, uv)));
  NodeId grad3 = g.gradient(obj, {x}, false)[0];

  const double h = 1e-5;
  for (long i = 0; i < d; ++i) {
    std::vector<double> up = xv, dn = xv;
    up[i] += h;
    dn[i] -= h;
    double fd = (hvp_dot_u(up) - hvp_dot_u(dn)) / (2 * h);
    double an = g.value(grad3).at(i);
    double denom = std::max({std::fabs(fd), std::fabs(an), 1e-6});
    CHECK(std::fabs(an - fd) / denom < 1e-4);
  }
}

TEST_CASE("surrogate pipeline on a diagonal quadratic recovers the closed form") {
  // Potential F(x; t1, t2) = 0.5 (e^{t1} x1^2 + e^{t2} x2^2).
  // H = diag(e^{t1}, e^{t2}), so d(log det H)/dt_i = 1 exactly, and the
  // Rademacher surrogate z = H^{-1} r, objective zᵀ H(θ) r has zero variance.
  const double t1 = 0.35, t2 = -1.2;
  Rng rng(91);
  for (int trial = 0; trial < 4; ++trial) {
    double r1 = rng.rademacher(), r2 = rng.rademacher();
    Graph g;
    NodeId th1 = g.leaf(ArrayValue::scalar(t1), true);
    NodeId th2 = g.leaf(ArrayValue::scalar(t2), true);
    NodeId x = g.leaf(ArrayValue::from({2}, {0.4, -0.9}), true);
    NodeId x1 = g.slice(x, 0, 1);
    NodeId x2 = g.slice(x, 1, 1);
    NodeId f = g.scale(
        g.add(g.mul(g.squared_norm(x1), g.exp(th1), Bcast::kNone),
              g.mul(g.squared_norm(x2), g.exp(th2), Bcast::kNone)),
        0.5);
    // z = H^{-1} r computed outside the graph (exact for diagonal H).
    ArrayValue z = ArrayValue::from({2}, {r1 / std::exp(t1), r2 / std::exp(t2)});
    NodeId hr = g.hvp(f, x, ArrayValue::from({2}, {r1, r2}), /*create_graph=*/true);
    NodeId surrogate = g.dot(g.constant(z), hr);
    auto grads = g.gradient(surrogate, {th1, th2}, false);
    CHECK(g.value(grads[0]).scalar_value() == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(g.value(grads[1]).scalar_value() == doctest::Approx(1.0).epsilon(1e-12));
  }
}

TEST_CASE("batched evaluation equals per-sample evaluation") {
  Rng rng(7);
  std::vector<double> wv(12), bv(4);
  for (auto& t : wv) t = rng.normal() * 0.5;
  for (auto& t : bv) t = rng.normal() * 0.2;
  ArrayValue w = ArrayValue::from({4, 3}, wv);
  ArrayValue b = ArrayValue::from({4}, bv);

  std::vector<double> batch(2 * 3);
  for (auto& t : batch) t = rng.normal();

  Graph g;
  NodeId xb = g.constant(ArrayValue::from({2, 3}, batch));
  NodeId yb = g.activation(logistic_plain(), g.affine(xb, g.constant(w), g.constant(b)));
  for (long s = 0; s < 2; ++s) {
    Graph gs;
    std::vector<double> row(batch.begin() + s * 3, batch.begin() + (s + 1) * 3);
    NodeId xs = gs.constant(ArrayValue::from({3}, row));
    NodeId ys = gs.activation(logistic_plain(), gs.affine(xs, gs.constant(w), gs.constant(b)));
    for (long j = 0; j < 4; ++j) {
      CHECK(g.value(yb).at(s * 4 + j) == gs.value(ys).at(j));
    }
  }
}

TEST_CASE("evaluation and gradients are bitwise deterministic") {
  auto run = [] {
    Rng rng(1234);
    std::vector<double> xv(6), wv(12), bv(4), cv(4);
    for (auto& v : xv) v = rng.normal();
    for (auto& v : wv) v = rng.normal();
    for (auto& v : bv) v = rng.normal();
    for (auto& v : cv) v = rng.normal();
    Graph g;
    std::vector<NodeId> handles;
    composite_value(xv, wv, bv, cv, &g, &handles);
    NodeId root = handles.back();
    handles.pop_back();
    auto grads = g.gradient(root, handles, false);
    std::vector<double> flat;
    flat.push_back(g.value(root).scalar_value());
    for (NodeId gr : grads)
      for (long i = 0; i < g.value(gr).size(); ++i) flat.push_back(g.value(gr).at(i));
    return flat;
  };
  auto a = run(), b = run();
  REQUIRE(a.size() == b.size());
  for (size_t i = 0; i < a.size(); ++i) CHECK(a[i] == b[i]);
}

TEST_CASE("shape errors name the op") {
  Graph g;
  NodeId a = g.constant(ArrayValue::zeros({2, 3}));
  NodeId b = g.constant(ArrayValue::zeros({3, 3}));
  CHECK_THROWS_WITH_AS(g.add(a, b), doctest::Contains("add"), ContractError);
  NodeId w = g.constant(ArrayValue::zeros({4, 4}));
  CHECK_THROWS_WITH_AS(g.matmul(a, w), doctest::Contains("matmul"), ContractError);
}

TEST_CASE("truncate rolls the tape back to a watermark") {
  Graph g;
  NodeId x = g.leaf(ArrayValue::from({2}, {1, 2}), true);
  size_t mark = g.size();
  for (int i = 0; i < 10; ++i) g.scale(x, 2.0);
  CHECK(g.size() == mark + 10);
  g.truncate(mark);
  CHECK(g.size() == mark);
  // Graph still usable afterwards.
  NodeId s = g.sum_all(x);
  CHECK(g.value(s).scalar_value() == 3.0);
}
