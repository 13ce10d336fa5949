#include "cpflow/activations.hpp"

#include <cmath>
#include <cstdio>
#include <sstream>

#include "cpflow/errors.hpp"

namespace cpflow {

namespace {

constexpr double kSqrt2 = 1.4142135623730950488;
constexpr double kInvSqrt2Pi = 0.39894228040143267794;  // 1/sqrt(2*pi)

double normal_pdf(double x) { return kInvSqrt2Pi * std::exp(-0.5 * x * x); }

// erfc keeps the tail accurate where 0.5*(1+erf) would cancel.
double normal_cdf(double x) { return 0.5 * std::erfc(-x / kSqrt2); }

// Base softplus s and its derivatives. s' is the base CDF, s'' the base
// density (Prop.-1 structure); order 3 is the density's derivative.
double base_derivative(SoftplusBase base, int order, double x) {
  switch (base) {
    case SoftplusBase::kLogistic: {
      switch (order) {
        case 0:
          return x > 0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x));
        case 1:
          return logistic_sigmoid(x);
        case 2: {
          double s = logistic_sigmoid(x);
          return s * (1.0 - s);
        }
        case 3: {
          double s = logistic_sigmoid(x);
          return s * (1.0 - s) * (1.0 - 2.0 * s);
        }
        default:
          break;
      }
      break;
    }
    case SoftplusBase::kGaussian: {
      switch (order) {
        case 0:
          // x*Phi(x) + phi(x): antiderivative of the normal CDF. Equals the
          // erf closed form; tails underflow gracefully to max(0,x).
          return x * normal_cdf(x) + normal_pdf(x);
        case 1:
          return normal_cdf(x);
        case 2:
          return normal_pdf(x);
        case 3:
          return -x * normal_pdf(x);
        default:
          break;
      }
      break;
    }
    case SoftplusBase::kLaplace: {
      double e = 0.5 * std::exp(-std::abs(x));
      switch (order) {
        case 0:
          return std::max(0.0, x) + e;
        case 1:
          return x < 0 ? e : 1.0 - e;
        case 2:
          return e;
        case 3:
          return x == 0 ? 0.0 : (x < 0 ? e : -e);
        default:
          break;
      }
      break;
    }
  }
  throw ContractError("activation derivative order " + std::to_string(order) +
                      " not supported (max 3)");
}

const char* base_name(SoftplusBase base) {
  switch (base) {
    case SoftplusBase::kLogistic:
      return "logistic";
    case SoftplusBase::kGaussian:
      return "gaussian";
    case SoftplusBase::kLaplace:
      return "laplace";
  }
  return "?";
}

const char* variant_name(SoftplusVariant v) {
  switch (v) {
    case SoftplusVariant::kPlain:
      return "plain";
    case SoftplusVariant::kSymmetrized:
      return "symmetrized";
    case SoftplusVariant::kOffset:
      return "offset";
  }
  return "?";
}

}  // namespace

double logistic_softplus(double x) {
  return base_derivative(SoftplusBase::kLogistic, 0, x);
}

double logistic_sigmoid(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  double e = std::exp(x);
  return e / (1.0 + e);
}

double inverse_softplus(double y) {
  if (!(y > 0)) throw ContractError("inverse_softplus requires y > 0");
  // log(e^y - 1); for large y the expm1 overflows but the answer is ~y.
  if (y > 36.0) return y;
  return std::log(std::expm1(y));
}

double activation_derivative(const ActivationKind& kind, int order, double x) {
  if (!(kind.gain > 0)) throw ContractError("activation gain must be > 0");
  double a = kind.gain;
  double v;
  switch (order) {
    case 0:
      v = base_derivative(kind.base, 0, a * x) / a;
      if (kind.variant == SoftplusVariant::kSymmetrized) v -= 0.5 * x;
      if (kind.variant == SoftplusVariant::kOffset)
        v -= base_derivative(kind.base, 0, 0.0) / a;
      return v;
    case 1:
      v = base_derivative(kind.base, 1, a * x);
      if (kind.variant == SoftplusVariant::kSymmetrized) v -= 0.5;
      return v;
    case 2:
      return a * base_derivative(kind.base, 2, a * x);
    case 3:
      return a * a * base_derivative(kind.base, 3, a * x);
    default:
      throw ContractError("activation derivative order " + std::to_string(order) +
                          " not supported (max 3)");
  }
}

double activation_eval(const ActivationKind& kind, double x) {
  return activation_derivative(kind, 0, x);
}

double activation_deriv(const ActivationKind& kind, double x) {
  return activation_derivative(kind, 1, x);
}

double activation_deriv2(const ActivationKind& kind, double x) {
  return activation_derivative(kind, 2, x);
}

bool activation_nondecreasing(const ActivationKind& kind) {
  return kind.variant != SoftplusVariant::kSymmetrized;
}

std::string activation_to_string(const ActivationKind& kind) {
  std::ostringstream os;
  os << base_name(kind.base) << "+" << variant_name(kind.variant);
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%g", kind.gain);
  os << "@gain=" << buf;
  return os.str();
}

ActivationKind activation_from_string(const std::string& text) {
  ActivationKind kind;
  std::string rest = text;
  auto at = rest.find('@');
  if (at != std::string::npos) {
    std::string gain_part = rest.substr(at + 1);
    rest = rest.substr(0, at);
    if (gain_part.rfind("gain=", 0) != 0) {
      throw ParseError("activation '" + text + "': expected '@gain=...'");
    }
    std::string num = gain_part.substr(5);
    size_t pos = 0;
    double g;
    try {
      g = std::stod(num, &pos);
    } catch (const std::exception&) {
      throw ParseError("activation '" + text + "': bad gain value '" + num + "'");
    }
    if (pos != num.size() || !(g > 0)) {
      throw ParseError("activation '" + text + "': bad gain value '" + num + "'");
    }
    kind.gain = g;
  }
  auto plus = rest.find('+');
  std::string base = rest.substr(0, plus);
  std::string variant = plus == std::string::npos ? "plain" : rest.substr(plus + 1);
  if (base == "logistic") {
    kind.base = SoftplusBase::kLogistic;
  } else if (base == "gaussian") {
    kind.base = SoftplusBase::kGaussian;
  } else if (base == "laplace") {
    kind.base = SoftplusBase::kLaplace;
  } else {
    throw ParseError("activation '" + text + "': unknown base '" + base + "'");
  }
  if (variant == "plain") {
    kind.variant = SoftplusVariant::kPlain;
  } else if (variant == "symmetrized") {
    kind.variant = SoftplusVariant::kSymmetrized;
  } else if (variant == "offset") {
    kind.variant = SoftplusVariant::kOffset;
  } else {
    throw ParseError("activation '" + text + "': unknown variant '" + variant + "'");
  }
  return kind;
}

}  // namespace cpflow
