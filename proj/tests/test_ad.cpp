#include <gtest/gtest.h>

#include "test_util.hpp"

using namespace diffcontact;
using ad::Tape;
using ad::TapeScope;
using ad::Var;

namespace {

// Derivative of a unary expression at x, taped.
template <class F>
double tape_derivative(F&& f, double x) {
  std::vector<double> g;
  ad::value_and_gradient([&](const std::vector<Var>& v) { return f(v[0]); }, {x}, g);
  return g[0];
}

template <class F>
double fd(F&& f, double x, double h = 1e-6) {
  return (f(x + h) - f(x - h)) / (2.0 * h);
}

}  // namespace

TEST(Ad, ElementaryDerivativesMatchFiniteDifferences) {
  const double x = 0.37;
  EXPECT_NEAR(tape_derivative([](const Var& v) { return exp(v); }, x), std::exp(x), 1e-12);
  EXPECT_NEAR(tape_derivative([](const Var& v) { return log(v); }, x), 1.0 / x, 1e-12);
  EXPECT_NEAR(tape_derivative([](const Var& v) { return log1p(v); }, x), 1.0 / (1.0 + x), 1e-12);
  EXPECT_NEAR(tape_derivative([](const Var& v) { return sqrt(v); }, x), 0.5 / std::sqrt(x), 1e-12);
  EXPECT_NEAR(tape_derivative([](const Var& v) { return sin(v); }, x), std::cos(x), 1e-12);
  EXPECT_NEAR(tape_derivative([](const Var& v) { return cos(v); }, x), -std::sin(x), 1e-12);
  EXPECT_NEAR(tape_derivative([](const Var& v) { return tanh(v); }, x), 1.0 - std::tanh(x) * std::tanh(x), 1e-12);
  EXPECT_NEAR(tape_derivative([](const Var& v) { return pow(v, 2.5); }, x), 2.5 * std::pow(x, 1.5), 1e-12);
  EXPECT_NEAR(tape_derivative([](const Var& v) { return acos(v); }, x), -1.0 / std::sqrt(1.0 - x * x), 1e-12);
  EXPECT_NEAR(tape_derivative([](const Var& v) { return abs(v); }, -x), -1.0, 0.0);

  auto sig = [](double v) { return 1.0 / (1.0 + std::exp(-v)); };
  EXPECT_NEAR(tape_derivative([](const Var& v) { return sigmoid(v); }, x), fd(sig, x), 1e-9);
  auto sp = [](double v) { return std::log1p(std::exp(v)); };
  EXPECT_NEAR(tape_derivative([](const Var& v) { return softplus(v); }, x), fd(sp, x), 1e-9);
}

TEST(Ad, ArithmeticAndChainRule) {
  // f(a, b) = (a*b - a/b) * exp(a+b)
  std::vector<double> g;
  const double a = 0.7, b = -1.3;
  const double v = ad::value_and_gradient(
      [](const std::vector<Var>& x) { return (x[0] * x[1] - x[0] / x[1]) * exp(x[0] + x[1]); }, {a, b}, g);
  auto f = [](const std::vector<double>& x) { return (x[0] * x[1] - x[0] / x[1]) * std::exp(x[0] + x[1]); };
  EXPECT_DOUBLE_EQ(v, f({a, b}));
  EXPECT_NEAR(g[0], testutil::central_diff(f, {a, b}, 0, 1e-6), 1e-8);
  EXPECT_NEAR(g[1], testutil::central_diff(f, {a, b}, 1, 1e-6), 1e-8);
}

TEST(Ad, SaturatedSoftplusAndSigmoidStayFinite) {
  EXPECT_EQ(Var::softplus_value(-1000.0), 0.0);
  EXPECT_DOUBLE_EQ(Var::softplus_value(1000.0), 1000.0);
  EXPECT_DOUBLE_EQ(Var::softplus_value(0.0), std::log(2.0));
  EXPECT_DOUBLE_EQ(Var::sigmoid_value(-1000.0), 0.0);
  EXPECT_DOUBLE_EQ(Var::sigmoid_value(1000.0), 1.0);
  EXPECT_TRUE(std::isfinite(tape_derivative([](const Var& v) { return softplus(v); }, -800.0)));
}

TEST(Ad, ConstantsNeverTouchTheTape) {
  Tape tape;
  TapeScope scope(tape);
  const Var a(2.0), b(3.0);
  const Var c = exp(a * b + a);
  EXPECT_TRUE(c.is_constant());
  EXPECT_EQ(tape.size(), 0u);
  const Var x = Var::leaf(1.0);
  const Var y = x * a + b;
  EXPECT_FALSE(y.is_constant());
  EXPECT_EQ(tape.size(), 3u);  // leaf, multiply, add
}

TEST(Ad, FanOutAccumulatesAdjoints) {
  Tape tape;
  TapeScope scope(tape);
  const Var x = Var::leaf(1.5);
  Var y = x;
  for (int i = 0; i < 10; ++i) y = y + x;  // y = 11 x
  tape.seed(y.index(), 1.0);
  tape.propagate();
  EXPECT_DOUBLE_EQ(tape.adjoint(x.index()), 11.0);
  tape.zero_adjoints();
  tape.seed(y.index(), 2.0);
  tape.propagate();
  EXPECT_DOUBLE_EQ(tape.adjoint(x.index()), 22.0);
}

TEST(Ad, ScopesNestAndRestore) {
  Tape outer, inner;
  TapeScope s1(outer);
  {
    TapeScope s2(inner);
    (void)Var::leaf(1.0);
  }
  (void)Var::leaf(2.0);
  EXPECT_EQ(inner.size(), 1u);
  EXPECT_EQ(outer.size(), 1u);
}

TEST(Ad, LeafWithoutTapeThrows) { EXPECT_THROW((void)Var::leaf(1.0), std::logic_error); }

TEST(Ad, ComparisonsUseValues) {
  EXPECT_TRUE(Var(1.0) < Var(2.0));
  EXPECT_TRUE(Var(2.0) >= Var(2.0));
  EXPECT_FALSE(Var(3.0) <= Var(2.0));
}

TEST(Ad, QuadraticGradCheckIsExact) {
  testutil::Rng rng(5);
  std::vector<double> x(12);
  for (auto& v : x) v = rng.uniform(-2.0, 2.0);
  std::vector<double> g;
  ad::value_and_gradient(
      [](const std::vector<Var>& v) {
        Var s(0.0);
        for (const auto& e : v) s += e * e;
        return s;
      },
      x, g);
  auto f = [](const std::vector<double>& v) {
    double s = 0.0;
    for (double e : v) s += e * e;
    return s;
  };
  const GradCheckResult r = grad_check(f, x, g, 1e-5);
  EXPECT_LE(r.max_rel_error, 1e-9);
  EXPECT_TRUE(r.passed(1e-9));
}

TEST(Ad, GradCheckReportsNonFiniteCoordinates) {
  auto f = [](const std::vector<double>& v) { return v[0] > 0.0 ? std::log(v[0]) : std::nan(""); };
  const GradCheckResult r = grad_check(f, {1e-7}, {1e7}, 1e-6);
  ASSERT_EQ(r.nonfinite.size(), 1u);
  EXPECT_FALSE(r.passed(1.0));
}
