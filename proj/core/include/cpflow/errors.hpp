#pragma once

#include <stdexcept>
#include <string>
#include <vector>

namespace cpflow {

// Caller broke an API contract: bad shape, non-scalar differentiation root,
// config field out of range. These are bugs at the call site, not data
// problems.
class ContractError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// A numerical routine failed: CG breakdown, indefinite operator under SLQ,
// non-finite loss. `iteration` is the failing iteration when known, -1
// otherwise. CLI maps these to exit code 2.
class NumericalError : public std::runtime_error {
 public:
  explicit NumericalError(const std::string& what, long iteration = -1)
      : std::runtime_error(what), iteration(iteration) {}
  long iteration;
};

// Line-search stagnation in L-BFGS. Keeps the best iterate found so callers
// (inversion) can report the achieved residual instead of losing the work.
class StagnationError : public NumericalError {
 public:
  StagnationError(const std::string& what, std::vector<double> best_iterate,
                  double best_value, long iteration)
      : NumericalError(what, iteration),
        best_iterate(std::move(best_iterate)),
        best_value(best_value) {}
  std::vector<double> best_iterate;
  double best_value;
};

// Malformed input: config files, CSV rows, checkpoints, CLI values. Messages
// carry the offending location (line number, key, or path). CLI maps these to
// exit code 1.
class ParseError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace cpflow
