#pragma once

// Minimal tape-based reverse-mode automatic differentiation.
//
// A Var either refers to a node on the thread's active Tape or is a constant
// (index < 0). Operations between constants never touch the tape, so generic
// code instantiated with Var only records the subgraph that actually depends
// on leaves.

#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <vector>

namespace diffcontact::ad {

class Tape;

namespace detail {
inline thread_local Tape* active_tape = nullptr;
}

class Tape {
 public:
  struct Node {
    double partial[2];
    std::int32_t parent[2];
  };

  Tape() { nodes_.reserve(4096); }

  std::int32_t push_leaf() { return push({0.0, 0.0}, {-1, -1}); }

  std::int32_t push_unary(std::int32_t a, double da) { return push({da, 0.0}, {a, -1}); }

  std::int32_t push_binary(std::int32_t a, double da, std::int32_t b, double db) {
    return push({da, db}, {a, b});
  }

  std::size_t size() const { return nodes_.size(); }

  void clear() {
    nodes_.clear();
    adjoints_.clear();
  }

  /// Adds `seed` to the adjoint of node `index`. Call before propagate().
  void seed(std::int32_t index, double seed) {
    if (index < 0) return;
    adjoints_.resize(nodes_.size(), 0.0);
    adjoints_[static_cast<std::size_t>(index)] += seed;
  }

  /// Sweeps the tape backwards, accumulating adjoints into parents.
  void propagate() {
    adjoints_.resize(nodes_.size(), 0.0);
    for (std::size_t i = nodes_.size(); i-- > 0;) {
      const double a = adjoints_[i];
      if (a == 0.0) continue;
      const Node& n = nodes_[i];
      if (n.parent[0] >= 0) adjoints_[static_cast<std::size_t>(n.parent[0])] += n.partial[0] * a;
      if (n.parent[1] >= 0) adjoints_[static_cast<std::size_t>(n.parent[1])] += n.partial[1] * a;
    }
  }

  double adjoint(std::int32_t index) const {
    if (index < 0 || static_cast<std::size_t>(index) >= adjoints_.size()) return 0.0;
    return adjoints_[static_cast<std::size_t>(index)];
  }

  void zero_adjoints() { adjoints_.assign(nodes_.size(), 0.0); }

 private:
  std::int32_t push(std::initializer_list<double> p, std::initializer_list<std::int32_t> q) {
    Node n{};
    n.partial[0] = *p.begin();
    n.partial[1] = *(p.begin() + 1);
    n.parent[0] = *q.begin();
    n.parent[1] = *(q.begin() + 1);
    nodes_.push_back(n);
    return static_cast<std::int32_t>(nodes_.size() - 1);
  }

  std::vector<Node> nodes_;
  std::vector<double> adjoints_;
};

/// Installs a tape as the thread's active tape for the lifetime of the scope.
class TapeScope {
 public:
  explicit TapeScope(Tape& tape) : previous_(detail::active_tape) { detail::active_tape = &tape; }
  ~TapeScope() { detail::active_tape = previous_; }
  TapeScope(const TapeScope&) = delete;
  TapeScope& operator=(const TapeScope&) = delete;

 private:
  Tape* previous_;
};

inline Tape& active_tape() {
  if (detail::active_tape == nullptr) throw std::logic_error("ad: no active tape");
  return *detail::active_tape;
}

class Var {
 public:
  Var() = default;
  Var(double v) : value_(v) {}  // NOLINT: implicit constant promotion

  static Var leaf(double v) {
    Var r(v);
    r.index_ = active_tape().push_leaf();
    return r;
  }

  double value() const { return value_; }
  std::int32_t index() const { return index_; }
  bool is_constant() const { return index_ < 0; }

  Var& operator+=(const Var& o) { return *this = *this + o; }
  Var& operator-=(const Var& o) { return *this = *this - o; }
  Var& operator*=(const Var& o) { return *this = *this * o; }
  Var& operator/=(const Var& o) { return *this = *this / o; }

  friend Var operator+(const Var& a, const Var& b) {
    return binary(a.value_ + b.value_, a, 1.0, b, 1.0);
  }
  friend Var operator-(const Var& a, const Var& b) {
    return binary(a.value_ - b.value_, a, 1.0, b, -1.0);
  }
  friend Var operator*(const Var& a, const Var& b) {
    return binary(a.value_ * b.value_, a, b.value_, b, a.value_);
  }
  friend Var operator/(const Var& a, const Var& b) {
    const double q = a.value_ / b.value_;
    return binary(q, a, 1.0 / b.value_, b, -q / b.value_);
  }
  friend Var operator-(const Var& a) { return unary(-a.value_, a, -1.0); }
  friend Var operator+(const Var& a) { return a; }

  friend bool operator<(const Var& a, const Var& b) { return a.value_ < b.value_; }
  friend bool operator>(const Var& a, const Var& b) { return a.value_ > b.value_; }
  friend bool operator<=(const Var& a, const Var& b) { return a.value_ <= b.value_; }
  friend bool operator>=(const Var& a, const Var& b) { return a.value_ >= b.value_; }

  friend Var exp(const Var& a) {
    const double e = std::exp(a.value_);
    return unary(e, a, e);
  }
  friend Var log(const Var& a) { return unary(std::log(a.value_), a, 1.0 / a.value_); }
  friend Var log1p(const Var& a) { return unary(std::log1p(a.value_), a, 1.0 / (1.0 + a.value_)); }
  friend Var sqrt(const Var& a) {
    const double s = std::sqrt(a.value_);
    return unary(s, a, 0.5 / s);
  }
  friend Var sin(const Var& a) { return unary(std::sin(a.value_), a, std::cos(a.value_)); }
  friend Var cos(const Var& a) { return unary(std::cos(a.value_), a, -std::sin(a.value_)); }
  friend Var tanh(const Var& a) {
    const double t = std::tanh(a.value_);
    return unary(t, a, 1.0 - t * t);
  }
  friend Var abs(const Var& a) { return a.value_ < 0.0 ? -a : a; }
  friend Var pow(const Var& a, double p) {
    const double v = std::pow(a.value_, p);
    return unary(v, a, p * std::pow(a.value_, p - 1.0));
  }
  friend Var acos(const Var& a) {
    return unary(std::acos(a.value_), a, -1.0 / std::sqrt(1.0 - a.value_ * a.value_));
  }

  friend Var sigmoid(const Var& a) {
    const double s = sigmoid_value(a.value_);
    return unary(s, a, s * (1.0 - s));
  }
  friend Var softplus(const Var& a) { return unary(softplus_value(a.value_), a, sigmoid_value(a.value_)); }

  static double sigmoid_value(double x) {
    if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
    const double e = std::exp(x);
    return e / (1.0 + e);
  }
  static double softplus_value(double x) {
    return x > 0.0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x));
  }

 private:
  static Var unary(double v, const Var& a, double da) {
    Var r(v);
    if (!a.is_constant()) r.index_ = active_tape().push_unary(a.index_, da);
    return r;
  }
  static Var binary(double v, const Var& a, double da, const Var& b, double db) {
    Var r(v);
    if (a.is_constant() && b.is_constant()) return r;
    if (a.is_constant()) {
      r.index_ = active_tape().push_unary(b.index_, db);
    } else if (b.is_constant()) {
      r.index_ = active_tape().push_unary(a.index_, da);
    } else {
      r.index_ = active_tape().push_binary(a.index_, da, b.index_, db);
    }
    return r;
  }

  double value_ = 0.0;
  std::int32_t index_ = -1;
};

/// Gradient of a scalar function of a vector, recorded on a private tape.
/// `f` must be callable with `const std::vector<Var>&` and return Var.
template <class F>
double value_and_gradient(F&& f, const std::vector<double>& x, std::vector<double>& grad) {
  Tape tape;
  TapeScope scope(tape);
  std::vector<Var> xs;
  xs.reserve(x.size());
  for (double v : x) xs.push_back(Var::leaf(v));
  const Var y = f(static_cast<const std::vector<Var>&>(xs));
  tape.seed(y.index(), 1.0);
  tape.propagate();
  grad.resize(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) grad[i] = tape.adjoint(xs[i].index());
  return y.value();
}

}  // namespace diffcontact::ad
