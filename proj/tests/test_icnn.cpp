#include "doctest.h"

#include "cpflow/icnn.hpp"

#include <Eigen/Dense>
#include <cmath>
#include <vector>

#include "cpflow/errors.hpp"
#include "cpflow/rng.hpp"

using namespace cpflow;

namespace {

ActivationKind gauss_sym() {
  return {SoftplusBase::kGaussian, SoftplusVariant::kSymmetrized, 1.0};
}
ActivationKind gauss_plain() {
  return {SoftplusBase::kGaussian, SoftplusVariant::kPlain, 1.0};
}
ActivationKind gauss_offset() {
  return {SoftplusBase::kGaussian, SoftplusVariant::kOffset, 1.0};
}

ArrayValue random_batch(long n, long d, uint64_t seed) {
  Rng rng(seed);
  std::vector<double> v(static_cast<size_t>(n * d));
  for (double& x : v) x = rng.normal();
  return ArrayValue::from({n, d}, std::move(v));
}

// Params ready for evaluation: random init plus data-dependent ActNorm.
PotentialParams ready_params(const ICNNConfig& cfg, uint64_t seed) {
  PotentialParams p = init_params(cfg, seed);
  actnorm_data_init(p, cfg, random_batch(64, cfg.input_dim, seed + 17));
  return p;
}

// Scalar test functional phi = sum_ij u_ij f(x)_ij over the batched gradient
// map; the anchor for parameter-gradient checks.
double functional_value(const ICNNConfig& cfg, const PotentialParams& p,
                        const ArrayValue& x, const ArrayValue& u) {
  Graph g;
  NodeId f = grad_map(g, cfg, p, x, false);
  return g.value(g.sum_all(g.mul(f, g.constant(u)))).scalar_value();
}

// Assembles the Hessian of the per-sample potential at a single point x [1,d]
// from d unit-vector Hessian products.
Eigen::MatrixXd assemble_hessian(const ICNNConfig& cfg, const PotentialParams& p,
                                 const ArrayValue& x) {
  long d = cfg.input_dim;
  Eigen::MatrixXd h(d, d);
  Graph g;
  PotentialGraphRefs refs = build_potential(g, cfg, p, x, false, true);
  NodeId root = g.sum_all(refs.value);
  for (long j = 0; j < d; ++j) {
    std::vector<double> e(static_cast<size_t>(d), 0.0);
    e[static_cast<size_t>(j)] = 1.0;
    NodeId hv = g.hvp(root, refs.x, ArrayValue::from({1, d}, e), false);
    for (long i = 0; i < d; ++i) h(i, j) = g.value(hv).at(i);
  }
  return h;
}

}  // namespace

TEST_CASE("init: reparam anchors, determinism, actnorm gating") {
  ICNNConfig cfg;
  cfg.input_dim = 3;
  cfg.depth = 2;
  cfg.width = 6;
  PotentialParams p = init_params(cfg, 42);

  CHECK(logistic_softplus(p.w0.scalar_value()) == 1.0);
  CHECK(p.w1.scalar_value() == 0.0);
  CHECK(logistic_softplus(p.w1.scalar_value()) == doctest::Approx(std::log(2.0)).epsilon(1e-15));
  CHECK_FALSE(p.actnorm_initialized);

  PotentialParams q = init_params(cfg, 42);
  auto pn = named_params(p, cfg);
  auto qn = named_params(q, cfg);
  REQUIRE(pn.size() == qn.size());
  for (size_t i = 0; i < pn.size(); ++i) {
    CHECK(pn[i].name == qn[i].name);
    REQUIRE(pn[i].array->size() == qn[i].array->size());
    for (long j = 0; j < pn[i].array->size(); ++j)
      CHECK(pn[i].array->at(j) == qn[i].array->at(j));
  }
  PotentialParams r = init_params(cfg, 43);
  bool any_diff = false;
  auto rn = named_params(r, cfg);
  for (size_t i = 0; i < pn.size() && !any_diff; ++i)
    for (long j = 0; j < pn[i].array->size() && !any_diff; ++j)
      any_diff = pn[i].array->at(j) != rn[i].array->at(j);
  CHECK(any_diff);

  CHECK_THROWS_AS(potential(cfg, p, random_batch(2, 3, 1)), ContractError);
}

TEST_CASE("config validation rejects broken setups") {
  ICNNConfig cfg;
  cfg.augmented = true;
  cfg.width = 7;
  CHECK_THROWS_AS(cfg.validate(), ContractError);
  cfg.width = 8;
  cfg.activation_rest = gauss_sym();
  CHECK_THROWS_WITH_AS(cfg.validate(), doctest::Contains("non-decreasing"),
                       ContractError);
  cfg.activation_rest = gauss_plain();
  CHECK_NOTHROW(cfg.validate());
  cfg.depth = 0;
  CHECK_THROWS_AS(cfg.validate(), ContractError);
  cfg.depth = 2;
  PotentialParams p = init_params(cfg, 1);
  p.layers.pop_back();
  CHECK_THROWS_AS(potential(cfg, p, random_batch(2, cfg.input_dim, 2)), ContractError);
}

TEST_CASE("identity params: F = |x|^2/2 and f(x) = x exactly") {
  for (bool aug : {false, true}) {
    ICNNConfig cfg;
    cfg.input_dim = 3;
    cfg.depth = 2;
    cfg.width = 6;
    cfg.augmented = aug;
    PotentialParams p = identity_like(cfg);
    ArrayValue x = random_batch(4, 3, 7);
    ArrayValue fx = potential(cfg, p, x);
    for (long i = 0; i < 4; ++i) {
      double nrm = 0;
      for (long j = 0; j < 3; ++j) nrm += x.at(i * 3 + j) * x.at(i * 3 + j);
      CHECK(fx.at(i) == doctest::Approx(0.5 * nrm).epsilon(1e-15));
    }
    Graph g;
    NodeId f = grad_map(g, cfg, p, x, false);
    for (long i = 0; i < x.size(); ++i) CHECK(g.value(f).at(i) == x.at(i));
  }
}

TEST_CASE("zeroed output weights reduce to the quadratic term") {
  ICNNConfig cfg;
  cfg.input_dim = 4;
  cfg.depth = 2;
  cfg.width = 6;
  PotentialParams p = ready_params(cfg, 5);
  // Hidden stack stays random; only the three output-side terms are cut.
  p.raw_v_out = ArrayValue::full({cfg.width}, -1000.0);
  p.W_out = ArrayValue::zeros({1, cfg.input_dim});
  p.b_out = ArrayValue::scalar(0.0);
  p.w0 = ArrayValue::scalar(0.3);
  double c0 = logistic_softplus(0.3);

  ArrayValue x = random_batch(3, 4, 11);
  ArrayValue fx = potential(cfg, p, x);
  Graph g;
  NodeId f = grad_map(g, cfg, p, x, false);
  for (long i = 0; i < 3; ++i) {
    double nrm = 0;
    for (long j = 0; j < 4; ++j) nrm += x.at(i * 4 + j) * x.at(i * 4 + j);
    CHECK(fx.at(i) == doctest::Approx(0.5 * c0 * nrm).epsilon(1e-14));
    for (long j = 0; j < 4; ++j)
      CHECK(g.value(f).at(i * 4 + j) ==
            doctest::Approx(c0 * x.at(i * 4 + j)).epsilon(1e-14));
  }
}

TEST_CASE("midpoint convexity on random triples, vanilla and augmented") {
  for (bool aug : {false, true}) {
    ICNNConfig cfg;
    cfg.input_dim = 3;
    cfg.depth = 3;
    cfg.width = 8;
    cfg.augmented = aug;
    PotentialParams p = ready_params(cfg, aug ? 21 : 20);
    Rng rng(99);
    for (int trial = 0; trial < 100; ++trial) {
      std::vector<double> rows(9);
      for (int j = 0; j < 6; ++j) rows[static_cast<size_t>(j)] = 2.0 * rng.normal();
      double t = rng.uniform();
      for (int j = 0; j < 3; ++j)
        rows[static_cast<size_t>(6 + j)] =
            t * rows[static_cast<size_t>(j)] + (1.0 - t) * rows[static_cast<size_t>(3 + j)];
      ArrayValue triple = ArrayValue::from({3, 3}, rows);
      ArrayValue fv = potential(cfg, p, triple);
      CHECK(fv.at(2) <= t * fv.at(0) + (1.0 - t) * fv.at(1) + 1e-9);
    }
  }
}

TEST_CASE("strong convexity: v'Hv >= softplus(w0)|v|^2 and min eigenvalue") {
  ICNNConfig cfg;
  cfg.input_dim = 4;
  cfg.depth = 2;
  cfg.width = 8;
  cfg.augmented = true;
  PotentialParams p = ready_params(cfg, 31);
  double floor = logistic_softplus(p.w0.scalar_value());

  ArrayValue x = random_batch(1, 4, 5);
  Graph g;
  PotentialGraphRefs refs = build_potential(g, cfg, p, x, false, true);
  NodeId root = g.sum_all(refs.value);
  Rng rng(77);
  for (int trial = 0; trial < 20; ++trial) {
    std::vector<double> v(4);
    double nrm = 0;
    for (double& c : v) {
      c = rng.normal();
      nrm += c * c;
    }
    NodeId hv = g.hvp(root, refs.x, ArrayValue::from({1, 4}, v), false);
    double quad = 0;
    for (long j = 0; j < 4; ++j) quad += v[static_cast<size_t>(j)] * g.value(hv).at(j);
    CHECK(quad >= floor * nrm - 1e-9);
  }

  Eigen::MatrixXd h = assemble_hessian(cfg, p, x);
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(h);
  CHECK(es.eigenvalues().minCoeff() >= floor - 1e-9);
}

TEST_CASE("the map's Jacobian is symmetric (it is a Hessian), d=6") {
  ICNNConfig cfg;
  cfg.input_dim = 6;
  cfg.depth = 2;
  cfg.width = 10;
  PotentialParams p = ready_params(cfg, 13);
  Eigen::MatrixXd h = assemble_hessian(cfg, p, random_batch(1, 6, 3));
  CHECK((h - h.transpose()).cwiseAbs().maxCoeff() < 1e-10);
}

TEST_CASE("d=1 single logistic unit matches the closed form") {
  ICNNConfig cfg;
  cfg.input_dim = 1;
  cfg.depth = 1;
  cfg.width = 1;
  cfg.activation_first = {SoftplusBase::kLogistic, SoftplusVariant::kPlain, 1.0};
  cfg.activation_rest = gauss_plain();
  PotentialParams p = identity_like(cfg);
  const double w11 = 1.7, b11 = -0.4, rv = 0.9, wo = 0.25, bo = -0.6;
  const double rw0 = 0.2, rw1 = 0.5;
  p.layers[0].W = ArrayValue::from({1, 1}, {w11});
  p.layers[0].b = ArrayValue::from({1}, {b11});
  p.raw_v_out = ArrayValue::from({1}, {rv});
  p.W_out = ArrayValue::from({1, 1}, {wo});
  p.b_out = ArrayValue::scalar(bo);
  p.w0 = ArrayValue::scalar(rw0);
  p.w1 = ArrayValue::scalar(rw1);

  double c0 = logistic_softplus(rw0), c1 = logistic_softplus(rw1);
  double vplus = logistic_softplus(rv);  // fan_in 1
  for (double x : {-2.0, -0.3, 0.0, 1.1, 2.4}) {
    double z = w11 * x + b11;
    double want_f = c0 * 0.5 * x * x + c1 * (vplus * logistic_softplus(z) + wo * x + bo);
    double want_g = c0 * x + c1 * (vplus * logistic_sigmoid(z) * w11 + wo);
    ArrayValue xv = ArrayValue::from({1, 1}, {x});
    CHECK(potential(cfg, p, xv).at(0) == doctest::Approx(want_f).epsilon(1e-14));
    Graph g;
    NodeId f = grad_map(g, cfg, p, xv, false);
    CHECK(g.value(f).at(0) == doctest::Approx(want_g).epsilon(1e-14));
  }
}

TEST_CASE("augmented net with dead augmented path equals half-width vanilla") {
  ICNNConfig acfg;
  acfg.input_dim = 3;
  acfg.depth = 2;
  acfg.width = 8;
  acfg.augmented = true;
  acfg.activation_first = gauss_offset();
  acfg.activation_rest = gauss_offset();
  PotentialParams pa = init_params(acfg, 57);
  long mt = acfg.tilde_width();
  // Kill the augmented half: A = 0 and zero aug biases make its
  // pre-activations 0, and the offset activation maps 0 to exactly 0.
  for (auto& L : pa.layers) {
    L.A = ArrayValue::zeros({mt, acfg.input_dim});
    std::vector<double> b(L.b.vec());
    for (long j = mt; j < acfg.width; ++j) b[static_cast<size_t>(j)] = 0.0;
    L.b = ArrayValue::from({acfg.width}, std::move(b));
  }
  pa.actnorm_initialized = true;

  ICNNConfig vcfg = acfg;
  vcfg.augmented = false;
  vcfg.width = mt;
  PotentialParams pv = identity_like(vcfg);
  // Positive weights divide by fan-in (full width on the augmented side, half
  // on the vanilla side), so matching raw values differ by a softplus factor
  // of 2.
  auto halve = [](const ArrayValue& raw, long rows, long keep, long stride) {
    std::vector<double> v(static_cast<size_t>(rows * keep));
    for (long i = 0; i < rows; ++i)
      for (long j = 0; j < keep; ++j)
        v[static_cast<size_t>(i * keep + j)] =
            inverse_softplus(logistic_softplus(raw.at(i * stride + j)) / 2.0);
    return v;
  };
  for (long k = 0; k < acfg.depth; ++k) {
    ParamLayer& L = pv.layers[static_cast<size_t>(k)];
    const ParamLayer& S = pa.layers[static_cast<size_t>(k)];
    L.W = S.W;
    if (k > 0)
      L.rawV = ArrayValue::from({mt, mt}, halve(S.rawV, mt, mt, acfg.width));
    std::vector<double> b(static_cast<size_t>(mt));
    for (long j = 0; j < mt; ++j) b[static_cast<size_t>(j)] = S.b.at(j);
    L.b = ArrayValue::from({mt}, std::move(b));
  }
  pv.raw_v_out = ArrayValue::from({mt}, halve(pa.raw_v_out, 1, mt, acfg.width));
  pv.W_out = pa.W_out;
  pv.b_out = pa.b_out;
  pv.w0 = pa.w0;
  pv.w1 = pa.w1;

  ArrayValue x = random_batch(6, 3, 8);
  ArrayValue fa = potential(acfg, pa, x);
  ArrayValue fv = potential(vcfg, pv, x);
  for (long i = 0; i < 6; ++i)
    CHECK(std::abs(fa.at(i) - fv.at(i)) <= 1e-12);
}

TEST_CASE("actnorm data init: unit statistics, clamping, idempotence") {
  ICNNConfig cfg;
  cfg.input_dim = 3;
  cfg.depth = 2;
  cfg.width = 6;
  PotentialParams p = init_params(cfg, 3);
  ArrayValue batch = random_batch(128, 3, 71);
  actnorm_data_init(p, cfg, batch);
  CHECK(p.actnorm_initialized);
  for (const auto& L : p.layers)
    for (long j = 0; j < cfg.width; ++j) CHECK(L.an_scale.at(j) >= 1e-3);

  Graph g;
  PotentialGraphRefs refs = build_potential(g, cfg, p, batch, false, false);
  long n = batch.rows();
  for (NodeId zn : refs.normalized) {
    const ArrayValue& v = g.value(zn);
    for (long j = 0; j < cfg.width; ++j) {
      double mean = 0, var = 0;
      for (long i = 0; i < n; ++i) mean += v.at(i * cfg.width + j);
      mean /= static_cast<double>(n);
      for (long i = 0; i < n; ++i) {
        double d = v.at(i * cfg.width + j) - mean;
        var += d * d;
      }
      var /= static_cast<double>(n);
      CHECK(std::abs(mean) < 1e-9);
      CHECK(var >= 0.99);
      CHECK(var <= 1.01);
    }
  }

  // Re-running with a different batch is a no-op once flagged.
  std::vector<double> before(p.layers[0].an_scale.vec());
  actnorm_data_init(p, cfg, random_batch(32, 3, 5));
  for (long j = 0; j < cfg.width; ++j)
    CHECK(p.layers[0].an_scale.at(j) == before[static_cast<size_t>(j)]);

  PotentialParams fresh = init_params(cfg, 4);
  CHECK_THROWS_AS(actnorm_data_init(fresh, cfg, random_batch(1, 3, 6)), ContractError);
}

TEST_CASE("actnorm data init: constant batch falls back to unit scale") {
  ICNNConfig cfg;
  cfg.input_dim = 2;
  cfg.depth = 1;
  cfg.width = 4;
  PotentialParams p = init_params(cfg, 9);
  std::vector<double> rows;
  for (int i = 0; i < 4; ++i) {
    rows.push_back(0.7);
    rows.push_back(-1.2);
  }
  actnorm_data_init(p, cfg, ArrayValue::from({4, 2}, rows));
  for (long j = 0; j < cfg.width; ++j) {
    CHECK(p.layers[0].an_scale.at(j) == 1.0);
    // shift is minus the unit mean, so the normalized value is exactly 0.
  }
  Graph g;
  PotentialGraphRefs refs =
      build_potential(g, cfg, p, ArrayValue::from({2, 2}, {0.7, -1.2, 0.7, -1.2}),
                      false, false);
  const ArrayValue& zn = g.value(refs.normalized[0]);
  for (long i = 0; i < zn.size(); ++i) CHECK(zn.at(i) == 0.0);
}

TEST_CASE("parameter gradients of the gradient map match finite differences") {
  for (bool aug : {false, true}) {
    ICNNConfig cfg;
    cfg.input_dim = 4;
    cfg.depth = aug ? 2 : 3;
    cfg.width = 6;
    cfg.augmented = aug;
    PotentialParams p = ready_params(cfg, aug ? 61 : 60);
    ArrayValue x = random_batch(2, 4, 14);
    ArrayValue u = random_batch(2, 4, 15);

    Graph g;
    PotentialGraphRefs refs;
    NodeId f = grad_map(g, cfg, p, x, true, &refs);
    NodeId phi = g.sum_all(g.mul(f, g.constant(u)));
    std::vector<NodeId> grads = g.gradient(phi, refs.param_leaves, false);

    auto named = named_params(p, cfg);
    REQUIRE(named.size() == refs.param_leaves.size());
    const double h = 1e-5;
    for (size_t i = 0; i < named.size(); ++i) {
      ArrayValue orig = *named[i].array;
      for (long j = 0; j < orig.size(); ++j) {
        std::vector<double> bumped(orig.vec());
        bumped[static_cast<size_t>(j)] = orig.at(j) + h;
        *named[i].array = ArrayValue::from(orig.shape(), bumped);
        double up = functional_value(cfg, p, x, u);
        bumped[static_cast<size_t>(j)] = orig.at(j) - h;
        *named[i].array = ArrayValue::from(orig.shape(), bumped);
        double dn = functional_value(cfg, p, x, u);
        *named[i].array = orig;
        double fd = (up - dn) / (2.0 * h);
        double an = g.value(grads[i]).at(j);
        double rel = std::abs(fd - an) / std::max({std::abs(fd), std::abs(an), 1e-6});
        INFO(named[i].name, " entry ", j);
        CHECK(rel < 1e-4);
      }
    }
  }
}
