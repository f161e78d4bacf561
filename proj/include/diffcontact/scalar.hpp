#pragma once

#include <cmath>
#include <stdexcept>
#include <string>

#include "diffcontact/ad.hpp"

namespace diffcontact {

using std::abs;
using std::acos;
using std::cos;
using std::exp;
using std::log;
using std::log1p;
using std::pow;
using std::sin;
using std::sqrt;
using std::tanh;

/// Rejected input: bad shapes, out-of-range configuration, malformed files.
class ValidationError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// A computation produced a non-finite value or failed to converge.
class NumericalError : public std::runtime_error {
 public:
  NumericalError(const std::string& what, long step = -1)
      : std::runtime_error(step >= 0 ? what + " (at step " + std::to_string(step) + ")" : what),
        step_(step) {}
  long step() const { return step_; }

 private:
  long step_;
};

inline double val(double x) { return x; }
inline double val(const ad::Var& x) { return x.value(); }

inline double sigmoid(double x) { return ad::Var::sigmoid_value(x); }
inline double softplus(double x) { return ad::Var::softplus_value(x); }

template <class S>
S square(const S& x) {
  return x * x;
}

}  // namespace diffcontact
