#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "cpflow/array.hpp"

namespace cpflow {

// Two-dimensional toy densities. All generators are deterministic in
// (kind, n, seed) and draw through the library Rng only.
enum class ToyKind { kOneMoon, kEightGaussians, kRings };

// Accepts "one_moon", "eight_gaussians", "rings"; anything else is a
// ParseError naming the string.
ToyKind toy_kind_from_string(const std::string& name);
std::string toy_kind_name(ToyKind kind);

// one_moon: angle uniform on [0, pi], radius 2, isotropic noise sigma 0.1.
// eight_gaussians: uniform mixture over compass and diagonal points at radius
//   4, isotropic sigma 0.3, every sample divided by 1.414.
// rings: ring index uniform over radii {1,2,3,4}, angle uniform, radial noise
//   sigma 0.08.
ArrayValue generate_toy(ToyKind kind, long n, uint64_t seed);

// A synthetic optimal-transport problem with known ground truth: mean drawn
// from a standard normal, covariance from Wishart(I, d+1) (sum of d+1 outer
// products), redrawn if the factorization fails numerically. `samples` holds
// n draws from N(mean, cov); `mean`/`cov` are the population moments, not
// sample estimates.
struct GaussianOtData {
  ArrayValue samples;        // [n, d]
  std::vector<double> mean;  // [d]
  std::vector<double> cov;   // [d*d] row-major
};
GaussianOtData generate_gaussian_ot(long d, long n, uint64_t seed);

struct Splits {
  ArrayValue train, val, test;
};

// Disjoint row split by a seeded permutation: floor(n*train_frac) rows train,
// floor(n*val_frac) rows val, the rest test. Deterministic in (rows, seed).
Splits split_rows(const ArrayValue& rows, double train_frac, double val_frac,
                  uint64_t seed);

// Per-column affine map to zero mean, unit variance, fit on one split and
// applied to all of them. Columns with (near) zero spread keep scale 1 so the
// map stays invertible.
struct Standardizer {
  std::vector<double> mean, scale;
};
Standardizer fit_standardizer(const ArrayValue& train);
ArrayValue standardize(const Standardizer& s, const ArrayValue& x);

// One descriptor for every data source the trainer accepts. `source` is
// "toy:NAME", "csv:PATH", or "gaussian_ot".
struct DatasetSpec {
  std::string source = "toy:eight_gaussians";
  long n = 10000;     // generated sources only; csv row count comes from the file
  long dim = 2;       // gaussian_ot only; toys are 2-d, csv infers from the file
  double train_frac = 0.8;
  double val_frac = 0.1;
  bool csv_has_header = false;
  uint64_t seed = 0;
};

struct Dataset {
  Splits splits;
  long dim = 0;
  bool standardized = false;   // csv sources only, stats from the train split
  Standardizer standardizer;
  bool has_gaussian_reference = false;
  std::vector<double> ref_mean, ref_cov;  // gaussian_ot population moments
};

// Materializes the spec: generates or loads rows, splits them, and for csv
// sources standardizes every split with train-split statistics. Unknown
// source strings and bad fractions raise ParseError / ContractError.
Dataset build_dataset(const DatasetSpec& spec);

}  // namespace cpflow
