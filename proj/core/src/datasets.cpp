#include "cpflow/datasets.hpp"

#include <cmath>
#include <cstring>

#include "cpflow/csv.hpp"
#include "cpflow/errors.hpp"
#include "cpflow/rng.hpp"
#include "cpflow/solvers.hpp"

namespace cpflow {

namespace {

constexpr double kPi = 3.14159265358979323846264338327950288;

}  // namespace

ToyKind toy_kind_from_string(const std::string& name) {
  if (name == "one_moon") return ToyKind::kOneMoon;
  if (name == "eight_gaussians") return ToyKind::kEightGaussians;
  if (name == "rings") return ToyKind::kRings;
  throw ParseError("unknown toy dataset '" + name +
                   "' (expected one_moon, eight_gaussians, or rings)");
}

std::string toy_kind_name(ToyKind kind) {
  switch (kind) {
    case ToyKind::kOneMoon: return "one_moon";
    case ToyKind::kEightGaussians: return "eight_gaussians";
    case ToyKind::kRings: return "rings";
  }
  throw ContractError("toy_kind_name: bad enum value");
}

ArrayValue generate_toy(ToyKind kind, long n, uint64_t seed) {
  if (n < 0) {
    throw ContractError("generate_toy: n must be non-negative");
  }
  std::vector<double> data(static_cast<size_t>(n) * 2);
  Rng rng(seed);
  switch (kind) {
    case ToyKind::kOneMoon: {
      for (long i = 0; i < n; ++i) {
        double theta = kPi * rng.uniform();
        data[static_cast<size_t>(2 * i)] = 2.0 * std::cos(theta) + 0.1 * rng.normal();
        data[static_cast<size_t>(2 * i + 1)] = 2.0 * std::sin(theta) + 0.1 * rng.normal();
      }
      break;
    }
    case ToyKind::kEightGaussians: {
      // Compass points then diagonals, all at radius 4 before the final
      // shrink by 1.414.
      const double r = 4.0;
      const double q = r / std::sqrt(2.0);
      const double cx[8] = {r, -r, 0.0, 0.0, q, q, -q, -q};
      const double cy[8] = {0.0, 0.0, r, -r, q, -q, q, -q};
      for (long i = 0; i < n; ++i) {
        // 2^64 is divisible by 8, so the low bits are exactly uniform.
        uint64_t k = rng.next_u64() & 7u;
        double x = cx[k] + 0.3 * rng.normal();
        double y = cy[k] + 0.3 * rng.normal();
        data[static_cast<size_t>(2 * i)] = x / 1.414;
        data[static_cast<size_t>(2 * i + 1)] = y / 1.414;
      }
      break;
    }
    case ToyKind::kRings: {
      const double radii[4] = {1.0, 2.0, 3.0, 4.0};
      for (long i = 0; i < n; ++i) {
        uint64_t k = rng.next_u64() & 3u;
        double theta = 2.0 * kPi * rng.uniform();
        double rad = radii[k] + 0.08 * rng.normal();
        data[static_cast<size_t>(2 * i)] = rad * std::cos(theta);
        data[static_cast<size_t>(2 * i + 1)] = rad * std::sin(theta);
      }
      break;
    }
  }
  return ArrayValue::from({n, 2}, std::move(data));
}

GaussianOtData generate_gaussian_ot(long d, long n, uint64_t seed) {
  if (d < 1 || n < 0) {
    throw ContractError("generate_gaussian_ot: need d >= 1 and n >= 0");
  }
  Rng rng(seed);
  GaussianOtData out;
  out.mean.resize(static_cast<size_t>(d));
  for (long i = 0; i < d; ++i) out.mean[static_cast<size_t>(i)] = rng.normal();

  std::vector<double> chol;
  for (int attempt = 0;; ++attempt) {
    std::vector<double> cov(static_cast<size_t>(d) * d, 0.0);
    std::vector<double> g(static_cast<size_t>(d));
    for (long k = 0; k < d + 1; ++k) {
      for (long i = 0; i < d; ++i) g[static_cast<size_t>(i)] = rng.normal();
      for (long i = 0; i < d; ++i)
        for (long j = 0; j < d; ++j)
          cov[static_cast<size_t>(i * d + j)] += g[static_cast<size_t>(i)] * g[static_cast<size_t>(j)];
    }
    try {
      chol = cholesky_factor(cov, d);
    } catch (const NumericalError&) {
      if (attempt >= 32) throw;
      continue;  // singular draw, take fresh Wishart factors from the stream
    }
    out.cov = std::move(cov);
    break;
  }

  std::vector<double> data(static_cast<size_t>(n) * d);
  std::vector<double> z(static_cast<size_t>(d));
  for (long i = 0; i < n; ++i) {
    for (long j = 0; j < d; ++j) z[static_cast<size_t>(j)] = rng.normal();
    for (long r = 0; r < d; ++r) {
      double v = out.mean[static_cast<size_t>(r)];
      for (long c = 0; c <= r; ++c)
        v += chol[static_cast<size_t>(r * d + c)] * z[static_cast<size_t>(c)];
      data[static_cast<size_t>(i * d + r)] = v;
    }
  }
  out.samples = ArrayValue::from({n, d}, std::move(data));
  return out;
}

Splits split_rows(const ArrayValue& rows, double train_frac, double val_frac,
                  uint64_t seed) {
  if (rows.rank() != 2) {
    throw ContractError("split_rows: rows must be rank 2");
  }
  if (!(train_frac >= 0.0) || !(val_frac >= 0.0) || !(train_frac + val_frac <= 1.0)) {
    throw ContractError("split_rows: fractions must be non-negative and sum to at most 1");
  }
  const long n = rows.rows();
  const long d = rows.cols();
  const long n_train = static_cast<long>(std::floor(static_cast<double>(n) * train_frac));
  const long n_val = static_cast<long>(std::floor(static_cast<double>(n) * val_frac));
  const long n_test = n - n_train - n_val;
  std::vector<long> perm = Rng(mix_seed(seed, 0x5917)).permutation(n);
  auto take = [&](long offset, long count) {
    std::vector<double> part(static_cast<size_t>(count) * d);
    for (long i = 0; i < count; ++i) {
      const double* src = rows.data() + perm[static_cast<size_t>(offset + i)] * d;
      std::memcpy(part.data() + static_cast<size_t>(i) * d, src, sizeof(double) * static_cast<size_t>(d));
    }
    return ArrayValue::from({count, d}, std::move(part));
  };
  Splits s;
  s.train = take(0, n_train);
  s.val = take(n_train, n_val);
  s.test = take(n_train + n_val, n_test);
  return s;
}

Standardizer fit_standardizer(const ArrayValue& train) {
  if (train.rank() != 2 || train.rows() < 1) {
    throw ContractError("fit_standardizer: need a non-empty rank-2 train split");
  }
  const long n = train.rows();
  const long d = train.cols();
  Standardizer s;
  s.mean.assign(static_cast<size_t>(d), 0.0);
  s.scale.assign(static_cast<size_t>(d), 1.0);
  for (long i = 0; i < n; ++i)
    for (long j = 0; j < d; ++j) s.mean[static_cast<size_t>(j)] += train.data()[i * d + j];
  for (long j = 0; j < d; ++j) s.mean[static_cast<size_t>(j)] /= static_cast<double>(n);
  for (long j = 0; j < d; ++j) {
    double ss = 0.0;
    for (long i = 0; i < n; ++i) {
      double c = train.data()[i * d + j] - s.mean[static_cast<size_t>(j)];
      ss += c * c;
    }
    double sd = std::sqrt(ss / static_cast<double>(n));
    s.scale[static_cast<size_t>(j)] = sd > 1e-12 ? sd : 1.0;
  }
  return s;
}

ArrayValue standardize(const Standardizer& s, const ArrayValue& x) {
  if (x.rank() != 2 || x.cols() != static_cast<long>(s.mean.size())) {
    throw ContractError("standardize: column count does not match the fitted stats");
  }
  const long n = x.rows();
  const long d = x.cols();
  std::vector<double> out(static_cast<size_t>(n) * d);
  for (long i = 0; i < n; ++i)
    for (long j = 0; j < d; ++j)
      out[static_cast<size_t>(i * d + j)] =
          (x.data()[i * d + j] - s.mean[static_cast<size_t>(j)]) / s.scale[static_cast<size_t>(j)];
  return ArrayValue::from({n, d}, std::move(out));
}

Dataset build_dataset(const DatasetSpec& spec) {
  Dataset out;
  ArrayValue rows;
  bool is_csv = false;
  if (spec.source.rfind("toy:", 0) == 0) {
    rows = generate_toy(toy_kind_from_string(spec.source.substr(4)), spec.n, spec.seed);
  } else if (spec.source.rfind("csv:", 0) == 0) {
    rows = load_csv(spec.source.substr(4), spec.csv_has_header);
    is_csv = true;
  } else if (spec.source == "gaussian_ot") {
    GaussianOtData g = generate_gaussian_ot(spec.dim, spec.n, spec.seed);
    rows = g.samples;
    out.has_gaussian_reference = true;
    out.ref_mean = std::move(g.mean);
    out.ref_cov = std::move(g.cov);
  } else {
    throw ParseError("unknown data source '" + spec.source +
                     "' (expected toy:NAME, csv:PATH, or gaussian_ot)");
  }
  out.dim = rows.cols();
  out.splits = split_rows(rows, spec.train_frac, spec.val_frac, spec.seed);
  if (is_csv) {
    if (out.splits.train.rows() < 1) {
      throw ContractError("build_dataset: csv train split is empty");
    }
    out.standardized = true;
    out.standardizer = fit_standardizer(out.splits.train);
    out.splits.train = standardize(out.standardizer, out.splits.train);
    out.splits.val = standardize(out.standardizer, out.splits.val);
    out.splits.test = standardize(out.standardizer, out.splits.test);
  }
  return out;
}

}  // namespace cpflow
