#include <gtest/gtest.h>

#include <cmath>
#include <numeric>

#include "charadial/numerics/adam.hpp"
#include "charadial/numerics/checkpoint.hpp"
#include "charadial/numerics/ops.hpp"
#include "gradcheck.hpp"

using namespace charadial::numerics;
using charadial::testing::max_gradient_error;
using charadial::testing::random_tensor;

namespace {

using TensorD = Tensor<double>;
using TensorF = Tensor<float>;

std::vector<double> values(const TensorD& t) { return {t.data().begin(), t.data().end()}; }

}  // namespace

TEST(Matmul, IdentityLeavesOperandUnchanged) {
  TensorD eye({2, 2}, {1, 0, 0, 1});
  TensorD b({2, 2}, {3, 4, 5, 6});
  EXPECT_EQ(values(matmul(eye, b)), (std::vector<double>{3, 4, 5, 6}));
}

TEST(Matmul, RowTimesColumn) {
  TensorD a({1, 2}, {1, 2});
  TensorD b({2, 1}, {3, 4});
  auto c = matmul(a, b);
  EXPECT_EQ(c.shape(), (Shape{1, 1}));
  EXPECT_DOUBLE_EQ(c.item(), 11.0);
}

TEST(Matmul, MismatchNamesBothShapes) {
  TensorD a = TensorD::zeros({2, 3});
  TensorD b = TensorD::zeros({2, 3});
  try {
    matmul(a, b);
    FAIL() << "expected ShapeError";
  } catch (const ShapeError& e) {
    std::string msg = e.what();
    EXPECT_NE(msg.find("(2, 3) x (2, 3)"), std::string::npos) << msg;
  }
}

TEST(Softmax, UniformForEqualInputs) {
  auto s = softmax(TensorD({3}, {0, 0, 0}), 0);
  for (double v : s.data()) EXPECT_NEAR(v, 1.0 / 3.0, 1e-15);
}

TEST(Softmax, ClosedFormLogOneLogThree) {
  auto s = softmax(TensorD({2}, {std::log(1.0), std::log(3.0)}), 0);
  EXPECT_NEAR(s[0], 0.25, 1e-15);
  EXPECT_NEAR(s[1], 0.75, 1e-15);
}

TEST(Softmax, StableForLargeInputs) {
  auto s = softmax(TensorF({2}, {1000.f, 1000.f}), 0);
  EXPECT_FLOAT_EQ(s[0], 0.5f);
  EXPECT_FLOAT_EQ(s[1], 0.5f);
}

TEST(Softmax, RejectsNonFinite) {
  EXPECT_THROW(softmax(TensorD({2}, {1.0, NAN}), 0), NumericError);
  EXPECT_THROW(softmax(TensorD({2}, {1.0, INFINITY}), 0), NumericError);
}

TEST(Softmax, RowsArePositiveAndNormalisedAlongEitherAxis) {
  std::mt19937_64 rng(7);
  for (int trial = 0; trial < 50; ++trial) {
    auto x = random_tensor<double>({3, 5}, rng, -30.0, 30.0, false);
    for (std::size_t axis : {0u, 1u}) {
      auto s = softmax(x, axis);
      const std::size_t outer = axis == 0 ? 5 : 3;
      const std::size_t n = axis == 0 ? 3 : 5;
      for (std::size_t o = 0; o < outer; ++o) {
        double total = 0;
        for (std::size_t j = 0; j < n; ++j) {
          double v = axis == 0 ? s[j * 5 + o] : s[o * 5 + j];
          EXPECT_GT(v, 0.0);
          total += v;
        }
        EXPECT_NEAR(total, 1.0, 1e-6);
      }
    }
  }
}

TEST(Silu, KnownValues) {
  auto y = silu(TensorD({3}, {0.0, 1.0, 50.0}));
  EXPECT_DOUBLE_EQ(y[0], 0.0);
  EXPECT_NEAR(y[1], 1.0 / (1.0 + std::exp(-1.0)), 1e-15);
  EXPECT_NEAR(y[1], 0.7311, 1e-4);
  EXPECT_NEAR(y[2], 50.0, 1e-12);
}

TEST(LayerNorm, ConstantVectorMapsToBias) {
  TensorD x({1, 4}, {3, 3, 3, 3});
  TensorD gain({4}, {2, 2, 2, 2});
  TensorD bias({4}, {0.5, -1, 0, 7});
  EXPECT_EQ(values(layer_norm(x, gain, bias)), values(bias));
}

TEST(LayerNorm, AlreadyNormalisedPair) {
  auto y = layer_norm(TensorD({1, 2}, {1, -1}), TensorD({2}, {1, 1}), TensorD({2}, {0, 0}));
  EXPECT_NEAR(y[0], 1.0, 1e-5);
  EXPECT_NEAR(y[1], -1.0, 1e-5);
}

TEST(LayerNorm, ZeroGainGivesBias) {
  std::mt19937_64 rng(3);
  auto x = random_tensor<double>({2, 3}, rng);
  auto y = layer_norm(x, TensorD::zeros({3}), TensorD({3}, {1, 2, 3}));
  EXPECT_EQ(values(y), (std::vector<double>{1, 2, 3, 1, 2, 3}));
}

TEST(LayerNorm, PreAffineOutputIsStandardised) {
  std::mt19937_64 rng(11);
  for (int trial = 0; trial < 50; ++trial) {
    auto x = random_tensor<double>({4, 16}, rng, -5.0, 5.0, false);
    auto y = layer_norm(x, TensorD::full({16}, 1.0), TensorD::zeros({16}));
    for (std::size_t r = 0; r < 4; ++r) {
      double mean = 0, var = 0;
      for (std::size_t c = 0; c < 16; ++c) mean += y[r * 16 + c];
      mean /= 16;
      for (std::size_t c = 0; c < 16; ++c) var += (y[r * 16 + c] - mean) * (y[r * 16 + c] - mean);
      var /= 16;
      EXPECT_LE(std::abs(mean), 1e-6);
      EXPECT_NEAR(var, 1.0, 1e-4);
    }
  }
}

TEST(CrossEntropy, UniformLogitsGiveLogV) {
  auto loss = cross_entropy(TensorD::zeros({1, 7}), 3);
  EXPECT_NEAR(loss.item(), std::log(7.0), 1e-14);
}

TEST(CrossEntropy, ConfidentCorrectIsNearZero) {
  auto loss = cross_entropy(TensorD({1, 3}, {50, 0, 0}), 0);
  EXPECT_LT(loss.item(), 1e-20);
}

TEST(CrossEntropy, ClosedFormLogFour) {
  auto loss = cross_entropy(TensorD({2}, {std::log(1.0), std::log(3.0)}), 0);
  EXPECT_NEAR(loss.item(), std::log(4.0), 1e-14);
}

TEST(CrossEntropy, OutOfRangeTarget) {
  EXPECT_THROW(cross_entropy(TensorD::zeros({1, 3}), 3), std::out_of_range);
}

TEST(Backward, SumGivesOnes) {
  TensorD w({3}, {0.5, -2, 4}, true);
  backward(sum(w));
  EXPECT_EQ(std::vector<double>(w.grad().begin(), w.grad().end()), (std::vector<double>{1, 1, 1}));
}

TEST(Backward, DotWithSelfGivesTwiceInput) {
  TensorD w({2}, {1, 2}, true);
  backward(dot(w, w));
  EXPECT_EQ(std::vector<double>(w.grad().begin(), w.grad().end()), (std::vector<double>{2, 4}));
}

TEST(Backward, RejectsNonScalarLoss) {
  TensorD w({2}, {1, 2}, true);
  EXPECT_THROW(backward(scale(w, 2.0)), ShapeError);
}

TEST(Backward, ReleasesTapeAfterSweep) {
  TensorD w({2}, {1, 2}, true);
  auto loss = sum(mul(w, w));
  backward(loss);
  EXPECT_TRUE(loss.node()->parents.empty());
  EXPECT_FALSE(static_cast<bool>(loss.node()->backward));
}

TEST(Backward, NoGradGuardSkipsRecording) {
  TensorD w({2}, {1, 2}, true);
  NoGradGuard guard;
  auto y = mul(w, w);
  EXPECT_FALSE(y.requires_grad());
}

// Finite-difference oracle per op, randomized inputs, 64-bit.
class OpGradient : public ::testing::TestWithParam<int> {};

TEST_P(OpGradient, MatchesCentralDifferencesIn64Bit) {
  std::mt19937_64 rng(1000 + GetParam());
  auto a = random_tensor<double>({3, 4}, rng);
  auto b = random_tensor<double>({4, 5}, rng);
  auto c = random_tensor<double>({5, 4}, rng);
  auto sq = random_tensor<double>({4, 4}, rng);
  auto kv = random_tensor<double>({5, 4}, rng);
  auto kv2 = random_tensor<double>({5, 4}, rng);
  auto w = random_tensor<double>({3, 4}, rng);
  auto gain = random_tensor<double>({4}, rng, 0.5, 1.5);
  auto bias = random_tensor<double>({4}, rng);
  std::vector<std::size_t> idx = {2, 0, 2};
  std::vector<std::size_t> targets = {1, 3, 0};

  struct Case {
    const char* name;
    std::function<TensorD()> fn;
    std::vector<TensorD> inputs;
  };
  std::vector<Case> cases = {
      {"matmul", [&] { return sum(mul(matmul(a, b), matmul(a, b))); }, {a, b}},
      {"matmul_nt", [&] { return sum(mul(matmul_nt(a, c), matmul_nt(a, c))); }, {a, c}},
      {"transpose", [&] { return dot(transpose(a), transpose(w)); }, {a, w}},
      {"add_sub_mul", [&] { return sum(mul(add(a, w), sub(a, w))); }, {a, w}},
      {"add_row", [&] { return dot(add_row(a, bias), w); }, {a, bias}},
      {"silu", [&] { return dot(silu(a), w); }, {a}},
      {"gelu", [&] { return dot(gelu(a), w); }, {a}},
      {"sigmoid", [&] { return dot(sigmoid(a), w); }, {a}},
      {"softmax_axis1", [&] { return dot(softmax(a, 1), w); }, {a}},
      {"softmax_axis0", [&] { return dot(softmax(a, 0), w); }, {a}},
      {"causal_softmax", [&] { return dot(causal_softmax(sq), sq); }, {sq}},
      {"attention_cross", [&] { return dot(multi_head_attention(a, kv, kv2, 2, false), w); },
       {a, kv, kv2}},
      {"attention_causal", [&] { return dot(multi_head_attention(sq, sq, sq, 2, true), sq); }, {sq}},
      {"layer_norm", [&] { return dot(layer_norm(a, gain, bias), w); }, {a, gain, bias}},
      {"gather_rows", [&] { return sum(mul(gather_rows(a, idx), gather_rows(w, idx))); }, {a, w}},
      {"concat_slice",
       [&] { return dot(slice_cols(concat_cols<double>({a, w}), 2, 4), w); }, {a, w}},
      {"concat_rows", [&] { return dot(concat_rows<double>({a, w}), concat_rows<double>({w, a})); },
       {a, w}},
      {"mean_rows", [&] { return dot(mean_rows(a), mean_rows(w)); }, {a, w}},
      {"max_rows", [&] { return dot(max_rows(a), mean_rows(w)); }, {a, w}},
      {"cross_entropy_rows", [&] { return cross_entropy_rows(a, targets); }, {a}},
      {"bce", [&] { return add(bce_with_logits(sum(a), 1.0), bce_with_logits(sum(w), 0.0)); }, {a, w}},
      {"scale_reshape", [&] { return dot(reshape(scale(a, 1.7), {12}), reshape(w, {12})); }, {a, w}},
  };
  for (auto& c : cases) {
    const double err = max_gradient_error<double>(c.fn, c.inputs, 1e-4);
    EXPECT_LE(err, 1e-6) << c.name;
  }
}

TEST(Attention, MatchesComposedReference) {
  std::mt19937_64 rng(3);
  auto q = random_tensor<double>({4, 6}, rng);
  auto k = random_tensor<double>({4, 6}, rng);
  auto v = random_tensor<double>({4, 6}, rng);
  for (bool causal : {false, true}) {
    auto fused = multi_head_attention(q, k, v, 3, causal);
    std::vector<TensorD> heads;
    for (std::size_t h = 0; h < 3; ++h) {
      auto s = scale(matmul_nt(slice_cols(q, 2 * h, 2), slice_cols(k, 2 * h, 2)), 1.0 / std::sqrt(2.0));
      auto p = causal ? causal_softmax(s) : softmax(s, 1);
      heads.push_back(matmul(p, slice_cols(v, 2 * h, 2)));
    }
    auto ref = concat_cols(heads);
    for (std::size_t i = 0; i < ref.size(); ++i) EXPECT_NEAR(fused[i], ref[i], 1e-12);
  }
  EXPECT_THROW(multi_head_attention(q, k, v, 4, false), ShapeError);
}

INSTANTIATE_TEST_SUITE_P(Randomized, OpGradient, ::testing::Range(0, 5));

TEST(OpGradient32, MatchesCentralDifferencesWithinLooseTolerance) {
  std::mt19937_64 rng(99);
  auto a = random_tensor<float>({3, 4}, rng);
  auto b = random_tensor<float>({4, 3}, rng);
  auto gain = random_tensor<float>({3}, rng, 0.5, 1.5);
  auto bias = random_tensor<float>({3}, rng);
  auto fn = [&] {
    return cross_entropy_rows(layer_norm(silu(matmul(a, b)), gain, bias),
                              std::vector<std::size_t>{0, 2, 1});
  };
  EXPECT_LE(max_gradient_error<float>(fn, {a, b, gain, bias}, 1e-2), 1e-3);
}

TEST(Adam, ZeroGradientLeavesParamsButCountsStep) {
  std::vector<TensorD> params = {TensorD({2}, {1.0, -3.0}, true)};
  std::vector<std::vector<double>> grads = {{0.0, 0.0}};
  AdamState<double> state;
  adam_step<double>(params, grads, state);
  EXPECT_EQ(values(params[0]), (std::vector<double>{1.0, -3.0}));
  EXPECT_EQ(state.step, 1u);
}

TEST(Adam, FirstStepMovesByLearningRateTimesSign) {
  std::vector<TensorD> params = {TensorD({3}, {0.0, 0.0, 0.0}, true)};
  std::vector<std::vector<double>> grads = {{0.3, -5.0, 2e-3}};
  AdamState<double> state;
  state.learning_rate = 0.01;
  adam_step<double>(params, grads, state);
  // bias-corrected m/sqrt(v) == g/|g| at t = 1
  for (std::size_t i = 0; i < 3; ++i) {
    const double g = grads[0][i];
    const double expected = -0.01 * g / (std::abs(g) + 1e-8);
    EXPECT_NEAR(params[0][i], expected, 1e-12);
  }
}

TEST(Adam, SecondMomentGrowsOverIdenticalSteps) {
  std::vector<TensorD> params = {TensorD({2}, {1.0, 2.0}, true)};
  std::vector<std::vector<double>> grads = {{0.5, -1.5}};
  AdamState<double> state;
  adam_step<double>(params, grads, state);
  auto first = state.second_moment[0];
  adam_step<double>(params, grads, state);
  for (std::size_t i = 0; i < 2; ++i) EXPECT_GT(state.second_moment[0][i], first[i]);
  EXPECT_EQ(state.step, 2u);
}

TEST(Adam, ShapeMismatch) {
  std::vector<TensorD> params = {TensorD({2}, {1.0, 2.0}, true)};
  std::vector<std::vector<double>> grads = {{0.5}};
  AdamState<double> state;
  EXPECT_THROW(adam_step<double>(params, grads, state), ShapeError);
}

TEST(Determinism, IdenticalSeedGivesBitwiseIdenticalOutputs) {
  auto run = [] {
    std::mt19937_64 rng(5);
    auto a = random_tensor<float>({8, 8}, rng);
    auto b = random_tensor<float>({8, 8}, rng);
    auto y = layer_norm(gelu(matmul(a, b)), TensorF::full({8}, 1.f), TensorF::zeros({8}));
    y = dropout(y, 0.25f, rng);
    return std::vector<float>(y.data().begin(), y.data().end());
  };
  EXPECT_EQ(run(), run());
}

TEST(Checkpoint, RoundTripIsByteStable) {
  ParameterStore<float> store;
  store.add("w", TensorF({2, 3}, {1, 2, 3, 4, 5, 6}));
  store.add("b", TensorF({3}, {0.5f, -0.5f, 0.25f}));
  AdamState<float> state;
  store.get("w").mutable_grad()[0] = 1.0f;
  adam_step(store, state);
  charadial::Json header = {{"kind", "test"}, {"dims", {2, 3}}};

  const auto bytes = serialize_checkpoint(header, store, &state);
  auto loaded = deserialize_checkpoint<float>(bytes);
  EXPECT_EQ(loaded.header, header);
  ASSERT_EQ(loaded.params.size(), 2u);
  EXPECT_EQ(loaded.params.get("w").shape(), (Shape{2, 3}));
  ASSERT_TRUE(loaded.optimizer.has_value());
  EXPECT_EQ(loaded.optimizer->step, 1u);
  EXPECT_EQ(serialize_checkpoint(loaded.header, loaded.params, &*loaded.optimizer), bytes);
}

TEST(Checkpoint, ConvertsPrecisionOnLoad) {
  ParameterStore<float> store;
  store.add("w", TensorF({2}, {1.5f, -2.25f}));
  auto loaded = deserialize_checkpoint<double>(serialize_checkpoint<float>({}, store, nullptr));
  EXPECT_DOUBLE_EQ(loaded.params.get("w")[1], -2.25);
  EXPECT_FALSE(loaded.optimizer.has_value());
}

TEST(Checkpoint, RejectsGarbage) {
  EXPECT_THROW(deserialize_checkpoint<float>("not a checkpoint"), charadial::DataError);
}
