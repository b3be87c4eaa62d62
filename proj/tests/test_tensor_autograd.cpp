// Copyright 2026 The sroute Authors.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.


#include <gtest/gtest.h>

#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "sroute/errors.hpp"
#include "sroute/ops.hpp"
#include "sroute/rng.hpp"
#include "sroute/tensor.hpp"
#include "support/gradcheck.hpp"

namespace {

using namespace sroute;
using sroute::testing::check_gradients;
using sroute::testing::DTape;
using sroute::testing::DTensor;

constexpr int kTrials = 20;

using Fn = std::function<DTensor(const std::vector<DTensor>&)>;

// Runs `fn` on kTrials seeded random draws of the given shapes.
void expect_gradients(const std::string& name, const std::vector<Shape>& shapes, const Fn& fn,
                      const std::function<void(std::vector<DTensor>&)>& adjust = {},
                      const std::vector<bool>& differentiable = {}) {
  for (int trial = 0; trial < kTrials; ++trial) {
    Rng rng(1000 + trial);
    std::vector<DTensor> in;
    for (const auto& s : shapes) in.push_back(rng.normal_tensor<double>(s, 1.0));
    if (adjust) adjust(in);
    const auto rep = check_gradients(fn, in, 77 + trial, differentiable);
    ASSERT_TRUE(rep.ok) << name << " trial " << trial << ": " << rep.detail;
  }
}

TEST(Tensor, ShapeInvariants) {
  Tensor t(Shape{2, 3}, 1.5f);
  EXPECT_EQ(t.numel(), 6u);
  EXPECT_EQ(t.rows(), 2u);
  EXPECT_EQ(t.cols(), 3u);
  EXPECT_FALSE(t.has_grad());
  EXPECT_EQ(t.mutable_grad().size(), t.numel());
  EXPECT_THROW(Tensor(Shape{2, 2}, std::vector<float>{1, 2, 3}), DimensionError);
}

TEST(Tensor, CloneIsDetachedCopy) {
  Tensor a = Tensor::vector({1, 2, 3});
  Tensor b = a.clone();
  b[0] = 9;
  EXPECT_EQ(a[0], 1);
  EXPECT_FALSE(a.same_node(b));
}

TEST(Matmul, IdentityExample) {
  auto a = Tensor::matrix({{1, 0}, {0, 1}});
  auto b = Tensor::matrix({{3}, {4}});
  auto c = matmul(a, b);
  EXPECT_EQ(c.shape(), (Shape{2, 1}));
  EXPECT_EQ(c[0], 3);
  EXPECT_EQ(c[1], 4);
}

TEST(Matmul, HandExample) {
  auto c = matmul(Tensor::matrix({{1, 2}, {3, 4}}), Tensor::matrix({{5}, {6}}));
  // 1*5 + 2*6, 3*5 + 4*6
  EXPECT_EQ(c[0], 1 * 5 + 2 * 6);
  EXPECT_EQ(c[1], 3 * 5 + 4 * 6);
}

TEST(Matmul, ShapeMismatchNamesBothShapes) {
  try {
    matmul(Tensor(Shape{2, 3}), Tensor(Shape{4, 5}));
    FAIL();
  } catch (const DimensionError& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find("[2x3]"), std::string::npos) << msg;
    EXPECT_NE(msg.find("[4x5]"), std::string::npos) << msg;
  }
}

TEST(Matmul, GradientOfSum) {
  for (int trial = 0; trial < kTrials; ++trial) {
    Rng rng(trial);
    std::vector<DTensor> in = {rng.normal_tensor<double>({3, 4}, 1.0), rng.normal_tensor<double>({4, 2}, 1.0)};
    auto rep = check_gradients([](const auto& v) { return sum(matmul(v[0], v[1])); }, in, trial);
    ASSERT_TRUE(rep.ok) << rep.detail;
  }
}

TEST(Softmax, SymmetricRow) {
  auto s = softmax_rows(Tensor::matrix({{0, 0}}));
  EXPECT_FLOAT_EQ(s[0], 0.5f);
  EXPECT_FLOAT_EQ(s[1], 0.5f);
}

TEST(Softmax, MaskSaturation) {
  auto x = Tensor::matrix({{3.7f, 0.0f}});
  auto mask = Tensor::matrix({{0.0f, static_cast<float>(kMaskSentinel)}});
  auto s = softmax_rows(x, mask);
  EXPECT_NEAR(s[0], 1.0f, 1e-6);
  EXPECT_EQ(s[1], 0.0f);  // exactly zero
}

TEST(Softmax, RowsSumToOneOverUnmasked) {
  Rng rng(3);
  auto x = rng.normal_tensor<float>({5, 5}, 2.0);
  Tensor mask(Shape{5, 5}, 0.0f);
  for (std::size_t i = 0; i < 5; ++i)
    for (std::size_t j = i + 1; j < 5; ++j) mask.at(i, j) = static_cast<float>(kMaskSentinel);
  auto s = softmax_rows(x, mask);
  for (std::size_t i = 0; i < 5; ++i) {
    double row = 0;
    for (std::size_t j = 0; j < 5; ++j) {
      row += s.at(i, j);
      if (j > i) {
        EXPECT_EQ(s.at(i, j), 0.0f);
      }
    }
    EXPECT_NEAR(row, 1.0, 1e-6);
  }
}

TEST(Softmax, FullyMaskedRowIsAnError) {
  auto mask = Tensor::matrix({{static_cast<float>(kMaskSentinel), static_cast<float>(kMaskSentinel)}});
  EXPECT_THROW(softmax_rows(Tensor::matrix({{1, 2}}), mask), DomainError);
}

TEST(Softmax, Jacobian) {
  expect_gradients("softmax", {{3, 4}}, [](const auto& v) { return softmax_rows(v[0]); });
  DTensor mask(Shape{3, 3}, 0.0);
  mask.at(0, 1) = mask.at(0, 2) = mask.at(1, 2) = kMaskSentinel;
  expect_gradients("softmax_masked", {{3, 3}}, [mask](const auto& v) { return softmax_rows(v[0], mask); });
}

TEST(RmsNorm, HandExample) {
  auto out = rms_norm(Tensor::matrix({{3, 4}}), Tensor::vector({1, 1}));
  const double rms = std::sqrt((9.0 + 16.0) / 2.0 + kRmsEpsilon);
  EXPECT_NEAR(out[0], 3.0 / rms, 1e-6);
  EXPECT_NEAR(out[1], 4.0 / rms, 1e-6);
}

TEST(RmsNorm, ZerosStayZero) {
  auto out = rms_norm(Tensor(Shape{2, 3}, 0.0f), Tensor(Shape{3}, 1.0f));
  for (float v : out.data()) EXPECT_EQ(v, 0.0f);
}

TEST(RmsNorm, ConstantGainSetsOutputRms) {
  Rng rng(5);
  auto x = rng.normal_tensor<float>({4, 16}, 3.0);
  auto out = rms_norm(x, Tensor(Shape{16}, 2.0f));
  for (std::size_t r = 0; r < 4; ++r) {
    double ms = 0;
    for (std::size_t c = 0; c < 16; ++c) ms += out.at(r, c) * out.at(r, c);
    EXPECT_NEAR(std::sqrt(ms / 16), 2.0, 1e-3);
  }
}

TEST(RmsNorm, ZeroWidthIsAnError) { EXPECT_THROW(rms_norm(Tensor(Shape{2, 0}), Tensor(Shape{0})), DimensionError); }

TEST(RmsNorm, Gradient) {
  expect_gradients("rms_norm", {{3, 5}, {5}}, [](const auto& v) { return rms_norm(v[0], v[1]); });
}

TEST(SwiGlu, ZeroInputGivesZero) {
  Rng rng(1);
  auto out = swiglu_ffn(Tensor(Shape{2, 4}, 0.0f), rng.normal_tensor<float>({4, 6}, 1.0),
                        rng.normal_tensor<float>({4, 6}, 1.0), rng.normal_tensor<float>({6, 4}, 1.0));
  for (float v : out.data()) EXPECT_EQ(v, 0.0f);
}

TEST(SwiGlu, SingleUnitHandComputation) {
  const double x = 0.7, a = 1.3, b = -0.4, o = 2.1;
  const double pre = x * a;
  const double expected = pre / (1.0 + std::exp(-pre)) * (x * b) * o;
  auto out = swiglu_ffn(DTensor::matrix({{x}}), DTensor::matrix({{a}}), DTensor::matrix({{b}}), DTensor::matrix({{o}}));
  EXPECT_NEAR(out[0], expected, 1e-12);
}

TEST(SwiGlu, ShapeMismatch) {
  EXPECT_THROW(swiglu_ffn(Tensor(Shape{1, 4}), Tensor(Shape{4, 6}), Tensor(Shape{4, 5}), Tensor(Shape{6, 4})),
               DimensionError);
}

TEST(SwiGlu, Gradient) {
  expect_gradients("swiglu", {{3, 4}, {4, 5}, {4, 5}, {5, 4}},
                   [](const auto& v) { return swiglu_ffn(v[0], v[1], v[2], v[3]); });
}

TEST(Elementwise, Gradients) {
  expect_gradients("add", {{2, 3}, {2, 3}}, [](const auto& v) { return add(v[0], v[1]); });
  expect_gradients("sub", {{2, 3}, {2, 3}}, [](const auto& v) { return sub(v[0], v[1]); });
  expect_gradients("mul", {{2, 3}, {2, 3}}, [](const auto& v) { return mul(v[0], v[1]); });
  expect_gradients("scale", {{2, 3}}, [](const auto& v) { return scale(v[0], 1.7); });
  expect_gradients("add_scalar", {{2, 3}}, [](const auto& v) { return add_scalar(v[0], -0.3); });
  expect_gradients("scale_by", {{2, 3}, {1}}, [](const auto& v) { return scale_by(v[0], v[1]); });
  expect_gradients("shift_by", {{2, 3}, {1}}, [](const auto& v) { return shift_by(v[0], v[1]); });
  expect_gradients("add_row", {{3, 4}, {4}}, [](const auto& v) { return add_row(v[0], v[1]); });
  expect_gradients("mul_rows", {{3, 4}, {3}}, [](const auto& v) { return mul_rows(v[0], v[1]); });
  expect_gradients("sigmoid", {{2, 3}}, [](const auto& v) { return sigmoid(v[0]); });
  expect_gradients("silu", {{2, 3}}, [](const auto& v) { return silu(v[0]); });
  expect_gradients("softplus", {{2, 3}}, [](const auto& v) { return softplus(v[0]); });
  expect_gradients(
      "log", {{2, 3}}, [](const auto& v) { return log(v[0]); },
      [](auto& in) {
        for (auto& x : in[0].data()) x = 0.5 + std::abs(x);
      });
}

TEST(Reductions, Gradients) {
  expect_gradients("sum", {{3, 4}}, [](const auto& v) { return sum(v[0]); });
  expect_gradients("mean", {{3, 4}}, [](const auto& v) { return mean(v[0]); });
  expect_gradients("mean_square", {{3, 4}}, [](const auto& v) { return mean_square(v[0]); });
  expect_gradients("row_mean_square", {{3, 4}}, [](const auto& v) { return row_mean_square(v[0]); });
  expect_gradients("mse", {{3, 4}, {3, 4}}, [](const auto& v) { return mse(v[0], v[1]); });
}

TEST(Layout, Gradients) {
  const std::vector<std::size_t> idx = {0, 2, 3};
  expect_gradients("concat_cols", {{3, 2}, {3, 4}}, [](const auto& v) { return concat_cols(v[0], v[1]); });
  expect_gradients("shift_rows_down", {{4, 3}}, [](const auto& v) { return shift_rows_down(v[0]); });
  expect_gradients("gather_rows", {{5, 3}}, [idx](const auto& v) { return gather_rows(v[0], std::span(idx)); });
  expect_gradients("scatter_rows", {{5, 3}, {3, 3}},
                   [idx](const auto& v) { return scatter_rows(v[0], std::span(idx), v[1]); });
  expect_gradients("scatter_add_rows", {{5, 3}, {3, 3}},
                   [idx](const auto& v) { return scatter_add_rows(v[0], std::span(idx), v[1]); });
}

TEST(Attention, Gradient) {
  expect_gradients("causal_attention", {{4, 6}, {4, 6}, {4, 6}},
                   [](const auto& v) { return causal_attention(v[0], v[1], v[2], 2); });
  // Decoding form: fewer queries than keys.
  expect_gradients("causal_attention_offset", {{2, 4}, {5, 4}, {5, 4}},
                   [](const auto& v) { return causal_attention(v[0], v[1], v[2], 2); });
}

TEST(Attention, T1AttendsToItself) {
  Rng rng(4);
  auto q = rng.normal_tensor<float>({1, 4}, 1.0), k = rng.normal_tensor<float>({1, 4}, 1.0);
  auto v = rng.normal_tensor<float>({1, 4}, 1.0);
  std::uint64_t pairs = 0;
  auto out = causal_attention(q, k, v, 2, &pairs);
  for (std::size_t i = 0; i < 4; ++i) EXPECT_EQ(out[i], v[i]);
  EXPECT_EQ(pairs, 1u);
}

TEST(Attention, PairCount) {
  std::uint64_t pairs = 0;
  causal_attention(Tensor(Shape{6, 4}), Tensor(Shape{6, 4}), Tensor(Shape{6, 4}), 2, &pairs);
  EXPECT_EQ(pairs, 21u);  // 6 * 7 / 2
  pairs = 0;
  causal_attention(Tensor(Shape{1, 4}), Tensor(Shape{6, 4}), Tensor(Shape{6, 4}), 2, &pairs);
  EXPECT_EQ(pairs, 6u);
}

TEST(Embedding, LookupAndGradient) {
  auto table = Tensor::matrix({{1, 2}, {3, 4}, {5, 6}});
  const int ids[] = {2, 0, 2};
  auto e = embedding(table, std::span<const int>(ids));
  EXPECT_EQ(e.at(0, 1), 6);
  EXPECT_EQ(e.at(1, 0), 1);
  const std::vector<int> dids = {1, 1, 0};
  expect_gradients("embedding", {{3, 4}}, [dids](const auto& v) { return embedding(v[0], std::span<const int>(dids)); });
  const int bad[] = {3};
  EXPECT_THROW(embedding(table, std::span<const int>(bad)), InputError);
}

TEST(CrossEntropy, UniformLogitsGiveLogVocab) {
  const std::vector<int> t = {0, 3};
  auto ce = cross_entropy(Tensor(Shape{2, 8}, 0.0f), std::span<const int>(t));
  EXPECT_NEAR(ce[0], std::log(8.0), 1e-6);
}

TEST(CrossEntropy, Gradient) {
  const std::vector<int> t = {1, 0, 4};
  expect_gradients("cross_entropy", {{3, 5}}, [t](const auto& v) { return cross_entropy(v[0], std::span<const int>(t)); });
  const std::vector<int> bad = {9, 0, 0};
  EXPECT_THROW(cross_entropy(Tensor(Shape{3, 5}), std::span<const int>(bad)), InputError);
}

TEST(BceWithLogits, MatchesClosedFormAndGradient) {
  auto l = DTensor::vector({0.3, -2.0});
  auto y = DTensor::vector({1.0, 0.0});
  const double expect = 0.5 * (std::log1p(std::exp(-0.3)) + std::log1p(std::exp(-2.0)));
  EXPECT_NEAR(bce_with_logits(l, y)[0], expect, 1e-12);
  expect_gradients(
      "bce", {{4}, {4}}, [](const auto& v) { return bce_with_logits(v[0], v[1]); },
      [](auto& in) {
        for (auto& x : in[1].data()) x = x > 0 ? 1.0 : 0.0;
      },
      {true, false});
}

TEST(StopGradient, IdentityForwardZeroBackward) {
  Rng rng(8);
  auto x = rng.normal_tensor<double>({3, 3}, 1.0);
  x.set_requires_grad();
  DTape tape;
  DTensor loss;
  {
    DTape::Scope scope(tape);
    auto y = stop_gradient(x);
    for (std::size_t i = 0; i < x.numel(); ++i) EXPECT_EQ(y[i], x[i]);  // bit-exact
    loss = sum(add(mul(y, y), scale(x, 0.0)));
  }
  tape.backward(loss);
  for (double g : x.grad()) EXPECT_EQ(g, 0.0);
}

TEST(GatherScatter, RoundTripAndUntouchedRows) {
  Rng rng(9);
  auto x = rng.normal_tensor<float>({6, 3}, 1.0);
  auto base = rng.normal_tensor<float>({6, 3}, 1.0);
  const std::vector<std::size_t> s = {1, 4, 5};
  auto out = scatter_rows(base, std::span(s), gather_rows(x, std::span(s)));
  for (std::size_t r = 0; r < 6; ++r) {
    const bool in_s = r == 1 || r == 4 || r == 5;
    for (std::size_t c = 0; c < 3; ++c) EXPECT_EQ(out.at(r, c), in_s ? x.at(r, c) : base.at(r, c));
  }
}

TEST(GatherScatter, BadIndexSets) {
  Tensor x(Shape{4, 2});
  const std::vector<std::size_t> dup = {1, 1}, oob = {0, 4}, unsorted = {2, 1};
  EXPECT_THROW(gather_rows(x, std::span(dup)), IndexError);
  EXPECT_THROW(gather_rows(x, std::span(oob)), IndexError);
  EXPECT_THROW(gather_rows(x, std::span(unsorted)), IndexError);
}

TEST(Tape, FanOutAccumulates) {
  auto x = DTensor::vector({2.0});
  x.set_requires_grad();
  DTape tape;
  DTensor loss;
  {
    DTape::Scope scope(tape);
    loss = sum(add(mul(x, x), scale(x, 3.0)));  // x^2 + 3x
  }
  tape.backward(loss);
  EXPECT_DOUBLE_EQ(x.grad()[0], 2 * 2.0 + 3.0);
}

TEST(Tape, ReverseOrderTraversal) {
  DTape tape;
  std::vector<int> order;
  tape.record([&] { order.push_back(1); });
  tape.record([&] { order.push_back(2); });
  tape.record([&] { order.push_back(3); });
  auto loss = DTensor::scalar(0.0);
  tape.backward(loss);
  EXPECT_EQ(order, (std::vector<int>{3, 2, 1}));
  EXPECT_EQ(tape.size(), 0u);
}

TEST(Tape, PauseStopsRecording) {
  auto x = DTensor::vector({1.0, 2.0});
  x.set_requires_grad();
  DTape tape;
  DTape::Scope scope(tape);
  {
    DTape::Pause pause;
    auto y = mul(x, x);
    EXPECT_FALSE(y.requires_grad());
  }
  EXPECT_EQ(tape.size(), 0u);
  auto z = mul(x, x);
  EXPECT_TRUE(z.requires_grad());
  EXPECT_EQ(tape.size(), 1u);
}

TEST(Ops, FiniteOutputsOnFiniteInputs) {
  Rng rng(10);
  auto x = rng.normal_tensor<float>({8, 8}, 30.0);
  for (const auto& t : {sigmoid(x), softplus(x), silu(x), softmax_rows(x), rms_norm(x, Tensor(Shape{8}, 1.0f))}) {
    for (float v : t.data()) ASSERT_TRUE(std::isfinite(v));
  }
}

TEST(Log, NonPositiveIsDomainError) { EXPECT_THROW(log(Tensor::vector({1.0f, 0.0f})), DomainError); }

}  // namespace
