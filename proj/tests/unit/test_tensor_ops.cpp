#include <cmath>
#include <functional>
#include <vector>

#include <gtest/gtest.h>

#include "avsr/error.hpp"
#include "avsr/ops.hpp"
#include "avsr/optim.hpp"
#include "avsr/parameter.hpp"
#include "avsr/rng.hpp"
#include "oracles.hpp"

namespace avsr {
namespace {

Tensor random_tensor(Shape shape, Rng& rng, bool requires_grad = true) {
  std::vector<double> v(numel(shape));
  for (auto& x : v) x = rng.normal();
  return Tensor::from(std::move(shape), std::move(v), requires_grad);
}

// Compares backward() against central differences for every input entry.
// `f` must build a scalar from the inputs.
double max_op_grad_error(std::vector<Tensor> inputs, const std::function<Tensor(const std::vector<Tensor>&)>& f) {
  for (auto& t : inputs) t.zero_grad();
  backward(f(inputs));
  double worst = 0.0;
  const double h = 1e-5;
  for (auto& t : inputs) {
    const std::vector<double> grad(t.grad().begin(), t.grad().end());
    auto vals = t.mutable_values();
    for (std::size_t i = 0; i < vals.size(); ++i) {
      const double saved = vals[i];
      NoGradGuard guard;
      vals[i] = saved + h;
      const double plus = f(inputs).item();
      vals[i] = saved - h;
      const double minus = f(inputs).item();
      vals[i] = saved;
      worst = std::max(worst, testing::relative_error(grad[i], (plus - minus) / (2 * h)));
    }
  }
  return worst;
}

// Nonlinear scalar readout so every output entry gets a distinct upstream gradient.
Tensor probe(const Tensor& y) {
  const std::size_t d = y.shape().back();
  std::vector<double> m(d * d);
  for (std::size_t i = 0; i < m.size(); ++i) m[i] = std::cos(0.5 + 0.21 * static_cast<double>(i));
  return sum(gelu(linear(y, Tensor::from({d, d}, m), Tensor::zeros({d}))));
}

TEST(Linear, IdentityWeightReturnsInput) {
  const auto x = Tensor::from({1, 2}, {1, 2});
  const auto w = Tensor::from({2, 2}, {1, 0, 0, 1});
  const auto b = Tensor::from({2}, {0, 0});
  const auto y = linear(x, w, b);
  EXPECT_EQ(y.shape(), (Shape{1, 2}));
  EXPECT_EQ(y.at(0, 0), 1.0);
  EXPECT_EQ(y.at(0, 1), 2.0);
}

TEST(Linear, ZeroInputExposesBias) {
  Rng rng(1);
  const auto y = linear(Tensor::from({1, 2}, {0, 0}), random_tensor({2, 2}, rng, false), Tensor::from({2}, {3, 4}));
  EXPECT_EQ(y.at(0, 0), 3.0);
  EXPECT_EQ(y.at(0, 1), 4.0);
}

TEST(Linear, ShapeMismatchNamesBothShapes) {
  try {
    linear(Tensor::zeros({2, 3}), Tensor::zeros({4, 5}), Tensor::zeros({5}));
    FAIL() << "expected ShapeError";
  } catch (const ShapeError& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find("[2, 3]"), std::string::npos) << msg;
    EXPECT_NE(msg.find("[4, 5]"), std::string::npos) << msg;
  }
}

TEST(LayerNorm, ConstantRowCollapsesToBeta) {
  const auto y = layer_norm(Tensor::from({1, 3}, {5, 5, 5}), Tensor::full({3}, 1.0), Tensor::zeros({3}));
  for (const double v : y.values()) EXPECT_EQ(v, 0.0);
}

TEST(LayerNorm, AlreadyStandardizedRow) {
  const auto y = layer_norm(Tensor::from({1, 2}, {1, -1}), Tensor::full({2}, 1.0), Tensor::zeros({2}));
  EXPECT_NEAR(y.at(0, 0), 1.0, 1e-5);
  EXPECT_NEAR(y.at(0, 1), -1.0, 1e-5);
}

TEST(LayerNorm, ZeroWidthIsAnError) {
  EXPECT_THROW(layer_norm(Tensor::zeros({2, 0}), Tensor::zeros({0}), Tensor::zeros({0})), ShapeError);
}

TEST(Attention, ZeroKeysAndValuesGiveBiasPath) {
  Rng rng(5);
  const std::size_t d = 4;
  AttentionWeights w{random_tensor({d, d}, rng, false), random_tensor({d}, rng, false),
                     random_tensor({d, d}, rng, false), random_tensor({d}, rng, false),
                     random_tensor({d, d}, rng, false), random_tensor({d}, rng, false),
                     random_tensor({d, d}, rng, false), random_tensor({d}, rng, false)};
  const auto q = random_tensor({3, d}, rng, false);
  const auto y = multi_head_attention(q, Tensor::zeros({5, d}), w, 2, false);
  // Every value row is b_v, so each head averages identical rows.
  const auto expected = linear(Tensor::from({1, d}, std::vector<double>(w.b_v.values().begin(), w.b_v.values().end())),
                               w.w_o, w.b_o);
  for (std::size_t r = 0; r < 3; ++r) {
    for (std::size_t c = 0; c < d; ++c) EXPECT_NEAR(y.at(r, c), expected.at(0, c), 1e-12);
  }
}

TEST(Attention, HeadsMustDivideWidth) {
  Rng rng(2);
  const auto x = random_tensor({2, 6}, rng, false);
  EXPECT_THROW(attention_heads(x, x, x, 4, false), ShapeError);
}

TEST(Attention, CausalMaskHidesFuture) {
  Rng rng(9);
  const auto q = random_tensor({4, 4}, rng, false);
  const auto k = random_tensor({4, 4}, rng, false);
  auto v = random_tensor({4, 4}, rng, false);
  const auto before = attention_heads(q, k, v, 2, true);
  // Changing the last value row must leave the first three outputs unchanged.
  auto v2 = v.clone();
  for (std::size_t c = 0; c < 4; ++c) v2.mutable_values()[12 + c] += 10.0;
  const auto after = attention_heads(q, k, v2, 2, true);
  for (std::size_t i = 0; i < 12; ++i) EXPECT_EQ(before.values()[i], after.values()[i]);
}

TEST(CrossEntropy, UniformLogitsGiveLogV) {
  const std::vector<TokenId> targets = {1, 2, 3};
  const auto r = softmax_cross_entropy(Tensor::zeros({3, 8}), targets, -1);
  EXPECT_NEAR(r.loss.item(), std::log(8.0), 1e-12);
  EXPECT_EQ(r.counted, 3u);
}

TEST(CrossEntropy, ConfidentCorrectLogitsCountAllCorrect) {
  std::vector<double> v(4 * 5, 0.0);
  const std::vector<TokenId> targets = {0, 3, 2, 4};
  for (std::size_t t = 0; t < 4; ++t) v[t * 5 + targets[t]] = 10.0;
  const auto r = softmax_cross_entropy(Tensor::from({4, 5}, v), targets, -1);
  EXPECT_EQ(r.correct, 4u);
}

TEST(CrossEntropy, AllIgnoredIsAnError) {
  const std::vector<TokenId> targets = {0, 0};
  EXPECT_THROW(softmax_cross_entropy(Tensor::zeros({2, 3}), targets, 0), NumericError);
}

TEST(Backward, SumGivesOnes) {
  auto x = Tensor::from({2, 2}, {1, 2, 3, 4}, true);
  backward(sum(x));
  for (const double g : x.grad()) EXPECT_EQ(g, 1.0);
}

TEST(Backward, NonScalarLossIsAnError) {
  auto x = Tensor::from({2, 2}, {1, 2, 3, 4}, true);
  EXPECT_THROW(backward(x), ShapeError);
}

TEST(Backward, FrozenParameterGetsNoGradient) {
  ParameterStore store;
  auto w = store.add("w", Tensor::from({2, 2}, {1, 0, 0, 1}), false);
  auto b = store.add("b", Tensor::zeros({2}), true);
  backward(sum(linear(Tensor::from({1, 2}, {1, 2}), w, b)));
  EXPECT_FALSE(w.has_grad());
  EXPECT_TRUE(b.has_grad());
}

TEST(Backward, NoGradGuardRecordsNothing) {
  auto x = Tensor::from({2}, {1, 2}, true);
  Tensor y;
  {
    NoGradGuard guard;
    y = mul_scalar(x, 3.0);
  }
  EXPECT_FALSE(y.requires_grad());
  EXPECT_TRUE(grad_enabled());
}

TEST(Numerics, NonFiniteOutputIsRejected) {
  const auto x = Tensor::from({1, 1}, {1e300});
  EXPECT_THROW(mul_scalar(x, 1e300), NumericError);
}

TEST(OpGradients, MatchFiniteDifferences) {
  Rng rng(17);
  const double tol = 1e-6;
  EXPECT_LT(max_op_grad_error({random_tensor({3, 4}, rng), random_tensor({4, 5}, rng), random_tensor({5}, rng)},
                              [](const auto& in) { return probe(linear(in[0], in[1], in[2])); }),
            tol);
  EXPECT_LT(max_op_grad_error({random_tensor({3, 5}, rng), random_tensor({5}, rng), random_tensor({5}, rng)},
                              [](const auto& in) { return probe(layer_norm(in[0], in[1], in[2])); }),
            tol);
  EXPECT_LT(max_op_grad_error({random_tensor({3, 5}, rng)}, [](const auto& in) { return probe(gelu(in[0])); }), tol);
  EXPECT_LT(max_op_grad_error({random_tensor({3, 5}, rng)}, [](const auto& in) { return probe(softmax(in[0])); }),
            tol);
  EXPECT_LT(max_op_grad_error({random_tensor({3, 4}, rng), random_tensor({1}, rng)},
                              [](const auto& in) { return probe(tanh_gate(in[0], in[1])); }),
            tol);
  EXPECT_LT(max_op_grad_error({random_tensor({3, 4}, rng), random_tensor({3, 4}, rng)},
                              [](const auto& in) { return probe(add(in[0], in[1])); }),
            tol);
  for (const bool causal : {false, true}) {
    EXPECT_LT(max_op_grad_error({random_tensor({4, 6}, rng), random_tensor({4, 6}, rng), random_tensor({4, 6}, rng)},
                                [causal](const auto& in) { return probe(attention_heads(in[0], in[1], in[2], 3, causal)); }),
              tol);
  }
  const std::vector<TokenId> ids = {2, 0, 2, 1};
  EXPECT_LT(max_op_grad_error({random_tensor({3, 4}, rng)}, [&](const auto& in) { return probe(embedding(in[0], ids)); }),
            tol);
  const std::vector<TokenId> targets = {1, -1, 4};
  EXPECT_LT(max_op_grad_error({random_tensor({3, 6}, rng)},
                              [&](const auto& in) { return softmax_cross_entropy(in[0], targets, -1).loss; }),
            tol);
}

TEST(AdamW, ZeroGradientZeroDecayLeavesParameter) {
  ParameterStore store;
  auto w = store.add("w", Tensor::from({2}, {1.5, -2.0}));
  store.zero_grad();
  AdamW opt({0.1, 0.9, 0.999, 1e-8, 0.0});
  opt.step(store);
  EXPECT_EQ(w.values()[0], 1.5);
  EXPECT_EQ(w.values()[1], -2.0);
}

TEST(AdamW, DecoupledDecayOnZeroGradient) {
  ParameterStore store;
  auto w = store.add("w", Tensor::from({1}, {2.0}));
  store.zero_grad();
  AdamW opt({0.1, 0.9, 0.999, 1e-8, 0.5});
  opt.step(store);
  EXPECT_DOUBLE_EQ(w.values()[0], 2.0 * (1.0 - 0.1 * 0.5));
}

TEST(AdamW, ConvergesOnQuadratic) {
  ParameterStore store;
  auto w = store.add("w", Tensor::from({1}, {0.0}));
  AdamW opt({0.1, 0.9, 0.999, 1e-8, 0.0});
  for (int i = 0; i < 200; ++i) {
    store.zero_grad();
    w.mutable_grad()[0] = 2.0 * (w.values()[0] - 3.0);
    opt.step(store);
  }
  EXPECT_LT(std::abs(w.values()[0] - 3.0), 0.01);
}

TEST(AdamW, MissingGradientIsAnError) {
  ParameterStore store;
  store.add("w", Tensor::from({1}, {0.0}));
  AdamW opt;
  EXPECT_THROW(opt.step(store), NumericError);
}

TEST(Rng, SameSeedSameSequence) {
  Rng a(42), b(42);
  for (int i = 0; i < 100; ++i) ASSERT_EQ(a.next_u64(), b.next_u64());
}

TEST(Rng, CounterResumesSequence) {
  Rng a(7);
  for (int i = 0; i < 10; ++i) a.next_u64();
  Rng b(7, a.counter());
  EXPECT_EQ(a.next_u64(), b.next_u64());
}

TEST(Rng, SubstreamsDifferAndAreStable) {
  const Rng root(3);
  EXPECT_NE(root.substream("data").next_u64(), root.substream("noise").next_u64());
  EXPECT_EQ(root.substream("data").next_u64(), root.substream("data").next_u64());
  EXPECT_NE(root.substream(0).next_u64(), root.substream(1).next_u64());
}

TEST(Rng, UniformAndBelowRanges) {
  Rng r(11);
  double mean = 0.0;
  for (int i = 0; i < 10000; ++i) {
    const double u = r.uniform();
    ASSERT_GE(u, 0.0);
    ASSERT_LT(u, 1.0);
    mean += u;
    ASSERT_LT(r.below(7), 7u);
  }
  EXPECT_NEAR(mean / 10000.0, 0.5, 0.02);
}

}  // namespace
}  // namespace avsr
