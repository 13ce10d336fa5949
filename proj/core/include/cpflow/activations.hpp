#pragma once

#include <cstdint>
#include <string>

namespace cpflow {

// Softplus-type activation family: convex upper bounds of ReLU that agree
// with it asymptotically. Each base is the antiderivative of a symmetric
// zero-mean CDF, so deriv() is the base CDF and deriv2() the base density.
enum class SoftplusBase : uint8_t { kLogistic, kGaussian, kLaplace };

// plain:        g(x) = s(a·x)/a
// symmetrized:  g(x) = s(a·x)/a − x/2   (derivative ranges in ±1/2, tanh-like;
//                                        convexity-safe only on affine inputs)
// offset:       g(x) = (s(a·x) − s(0))/a  (g(0) = 0)
enum class SoftplusVariant : uint8_t { kPlain, kSymmetrized, kOffset };

struct ActivationKind {
  SoftplusBase base = SoftplusBase::kLogistic;
  SoftplusVariant variant = SoftplusVariant::kPlain;
  double gain = 1.0;

  bool operator==(const ActivationKind&) const = default;
};

// eval/deriv/deriv2 are orders 0/1/2 of activation_derivative. Order 3 exists
// because training differentiates an expression that already contains second
// derivatives. Orders above 3 are a contract error.
double activation_eval(const ActivationKind& kind, double x);
double activation_deriv(const ActivationKind& kind, double x);
double activation_deriv2(const ActivationKind& kind, double x);
double activation_derivative(const ActivationKind& kind, int order, double x);

// True for variants that are non-decreasing everywhere (required for hidden
// layers of an ICNN; symmetrized is not).
bool activation_nondecreasing(const ActivationKind& kind);

// Canonical text encoding "base+variant@gain=G", e.g.
// "gaussian+symmetrized@gain=1". Parsing accepts omitted variant (plain) and
// omitted gain (1).
std::string activation_to_string(const ActivationKind& kind);
ActivationKind activation_from_string(const std::string& text);

// Logistic softplus and its inverse; used by the positive-weight
// reparameterization and by the convexity coefficients softplus(w0/w1).
double logistic_softplus(double x);
double logistic_sigmoid(double x);
double inverse_softplus(double y);  // y > 0

}  // namespace cpflow
