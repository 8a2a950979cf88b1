#include "test_util.hpp"

using namespace rrdn;
using namespace rrdn::testing;

TEST(Tensor, ShapeAndStorage) {
  TD t = TD::zeros({2, 3, 4, 5});
  EXPECT_EQ(t.size(), 120u);
  EXPECT_EQ(t.data().size(), t.shape().size());
  EXPECT_FALSE(t.has_grad());
  t.at(1, 2, 3, 4) = 9;
  EXPECT_EQ(t.data().back(), 9);
  EXPECT_THROW(TD::from({1, 1, 2, 2}, {1, 2, 3}), ShapeError);
}

TEST(Tensor, SquareGradientAtThree) {
  TD x = TD::scalar(3.0, true);
  backward(mul(x, x));
  ASSERT_TRUE(x.has_grad());
  EXPECT_DOUBLE_EQ(x.grad()[0], 6.0);
  const auto r = grad_check([](const TD& v) { return mul(v, v); }, TD::scalar(3.0));
  EXPECT_TRUE(r.passed);
  EXPECT_LT(r.max_rel_error, 1e-8);
}

TEST(Tensor, BackwardRejectsNonScalar) {
  TD x = TD::full({1, 1, 2, 2}, 1.0, true);
  EXPECT_THROW(backward(scalar_mul(x, 2.0)), ShapeError);
}

TEST(Tensor, ReusedTensorAccumulatesBothPaths) {
  const TD at = rand_tensor({1, 2, 3, 3}, 5);
  const auto twice = analytic_gradient([](const TD& x) { return reduce_sum(mul(x, x)); }, at);
  const auto sq = analytic_gradient([](const TD& x) { return reduce_sum(square(x)); }, at);
  for (std::size_t i = 0; i < at.size(); ++i) {
    EXPECT_NEAR(twice[i], sq[i], 1e-12);
    EXPECT_NEAR(twice[i], 2 * at.data()[i], 1e-12);
  }
}

TEST(Tensor, DiamondGraphSumsPaths) {
  // y = (x + 2x) * x -> dy/dx = 6x
  TD x = TD::scalar(1.5, true);
  TD y = mul(add(x, scalar_mul(x, 2.0)), x);
  backward(y);
  EXPECT_DOUBLE_EQ(x.grad()[0], 9.0);
}

TEST(Tensor, NonTrainableLeafGetsNoGradient) {
  TD x = TD::full({1, 1, 2, 2}, 2.0, true);
  TD c = TD::full({1, 1, 2, 2}, 3.0, false);
  backward(reduce_sum(mul(x, c)));
  EXPECT_TRUE(x.has_grad());
  EXPECT_FALSE(c.has_grad());
}

TEST(Tensor, NoGradGuardStopsRecording) {
  TD x = TD::full({1, 1, 1, 2}, 2.0, true);
  TD y;
  {
    NoGradGuard guard;
    EXPECT_FALSE(grad_enabled());
    y = reduce_sum(mul(x, x));
  }
  EXPECT_TRUE(grad_enabled());
  EXPECT_FALSE(y.requires_grad());
  backward(y);
  EXPECT_FALSE(x.has_grad());
}

TEST(Tensor, TapeVisitsEachOperationOnce) {
  TD x = rand_tensor({1, 1, 2, 3}, 1).clone(true);
  TD a = exp(x);
  TD b = mul(a, a);
  TD loss = reduce_mean(add(b, a));
  GradientTape<double> tape(loss);
  EXPECT_EQ(tape.size(), 4u);
  EXPECT_EQ(tape.replay(), 4u);
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double e = std::exp(x.data()[i]);
    EXPECT_NEAR(x.grad()[i], (2 * e * e + e) / 6.0, 1e-12);
  }
}

TEST(Tensor, GradientsHaveDataShape) {
  TD w = rand_tensor({2, 1, 3, 3}, 2).clone(true);
  TD in = rand_tensor({1, 1, 5, 5}, 3);
  TD b = TD::zeros({2, 1, 1, 1}, true);
  Conv2dOptions o;
  o.padding = {1, 1};
  backward(reduce_sum(conv2d(in, w, b, o)));
  EXPECT_EQ(w.grad().size(), w.size());
  EXPECT_EQ(b.grad().size(), b.size());
}

TEST(Tensor, DetachAndCast) {
  TD x = TD::full({1, 1, 1, 3}, 0.25, true);
  TD d = x.detach();
  EXPECT_FALSE(d.requires_grad());
  d.data()[0] = 5;
  EXPECT_EQ(x.data()[0], 0.25);
  Tensor<float> f = x.cast<float>();
  EXPECT_EQ(f.data()[1], 0.25f);
}

TEST(GradCheck, DetectsWrongBackwardRule) {
  // exp with its derivative replaced by 2 * exp must fail the check.
  auto bad_exp = [](const TD& a) {
    std::vector<double> out(a.size());
    for (std::size_t i = 0; i < a.size(); ++i) out[i] = std::exp(a.data()[i]);
    auto an = a.node();
    return detail::make_result<double>(a.shape(), out, {an}, [an](detail::Node<double>& self) {
      auto& g = an->grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * 2 * self.data[i];
    });
  };
  const auto r = grad_check([&](const TD& x) { return reduce_sum(bad_exp(x)); }, rand_tensor({1, 1, 2, 2}, 4));
  EXPECT_FALSE(r.passed);
  EXPECT_GT(r.max_rel_error, 0.4);
}

TEST(GradCheck, LibraryCheckerAgreesWithTestOracle) {
  const TD at = rand_tensor({1, 2, 3, 4}, 8, 0.2, 2);
  auto f = [](const TD& x) { return reduce_mean(mul(log(x), sigmoid(x))); };
  expect_gradients_match(f, at);
  EXPECT_TRUE(grad_check(f, at).passed);
}

TEST(GradCheck, FullSuitePasses) {
  const auto reports = run_gradient_suite(7);
  EXPECT_GE(reports.size(), 40u);
  for (const auto& r : reports) {
    EXPECT_TRUE(r.passed) << r.name << " max_rel " << r.max_rel_error;
    EXPECT_GT(r.checked, 0u) << r.name;
  }
}

TEST(GradCheck, SuiteHoldsForOtherSeeds) {
  for (std::uint64_t seed : {1u, 99u}) {
    for (const auto& r : run_gradient_suite(seed)) EXPECT_TRUE(r.passed) << r.name << " seed " << seed;
  }
}

TEST(ParamStore, UniqueNamesAndCount) {
  ParamStore<double> store;
  EXPECT_EQ(param_count(store), 0u);
  store.add("a.weight", TD::zeros({8, 4, 3, 5}));
  store.add("a.bias", TD::zeros({8, 1, 1, 1}));
  EXPECT_EQ(param_count(store), 488u);
  EXPECT_THROW(store.add("a.bias", TD::zeros({1, 1, 1, 1})), Error);
  EXPECT_THROW(store.get("missing"), Error);
  std::vector<std::string> names;
  for (const auto& [name, t] : store) names.push_back(name);
  EXPECT_EQ(names, (std::vector<std::string>{"a.weight", "a.bias"}));
}

TEST(ParamStore, KaimingIsSeededAndScaled) {
  std::mt19937_64 r1(42), r2(42);
  const TD a = kaiming_normal<double>({64, 32, 3, 3}, r1);
  const TD b = kaiming_normal<double>({64, 32, 3, 3}, r2);
  EXPECT_EQ(a.data(), b.data());
  double ss = 0;
  for (double v : a.data()) ss += v * v;
  const double var = ss / static_cast<double>(a.size());
  EXPECT_NEAR(var, 2.0 / (32 * 9), 0.1 * 2.0 / (32 * 9));
}
