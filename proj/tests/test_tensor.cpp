#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <string>

#include "mseg/gradcheck.hpp"
#include "mseg/ops.hpp"
#include "mseg/rng.hpp"
#include "oracles.hpp"

using namespace mseg;
using i64 = std::int64_t;

namespace {

TensorF rand_f(Shape s, SplitMix64& rng) { return uniform_tensor<float>(std::move(s), -1.0, 1.0, rng); }

std::vector<float> values(const TensorF& t) { return t.vec(); }

bool bitwise_equal(const TensorF& a, const TensorF& b) {
  return a.shape() == b.shape() && a.vec() == b.vec();
}

}  // namespace

TEST_CASE("tensor construction validates shape and data length") {
  CHECK_THROWS_AS(TensorF(Shape{2, 0}), DimensionError);
  CHECK_THROWS_AS(TensorF(Shape{}), DimensionError);
  CHECK_THROWS_AS(TensorF(Shape{2, 2}, std::vector<float>{1, 2, 3}), DimensionError);
  TensorF t({2, 3}, 1.5f);
  CHECK(t.numel() == 6);
  CHECK(t.dim(1) == 3);
  CHECK_THROWS_AS(t.dim(2), DimensionError);
  CHECK_THROWS_AS(TensorF().shape(), StateError);
}

TEST_CASE("grad buffer matches data shape") {
  TensorF t({2, 2}, 1.0f);
  CHECK_FALSE(t.has_grad());
  CHECK(t.grad_buffer().size() == 4);
  CHECK(t.has_grad());
  t.zero_grad();
  CHECK_FALSE(t.has_grad());
}

TEST_CASE("conv2d identity and zero cases") {
  SplitMix64 rng(1);
  const auto x = rand_f({1, 4, 5}, rng);
  const auto y = conv2d(x, TensorF({1, 1, 1, 1}, 1.0f), TensorF({1}, 0.0f), 0, 1);
  CHECK(bitwise_equal(x, y));
  const auto z = conv2d(x, TensorF({3, 1, 3, 3}, 0.0f), TensorF({3}, 0.0f), 1, 1);
  CHECK(z.shape() == Shape{3, 4, 5});
  for (float v : values(z)) CHECK(v == 0.0f);
}

TEST_CASE("conv2d ramp with ones kernel") {
  std::vector<float> ramp(9);
  for (int i = 0; i < 9; ++i) ramp[static_cast<std::size_t>(i)] = static_cast<float>(i);
  const TensorF x({1, 3, 3}, ramp);
  const TensorF w({1, 1, 3, 3}, 1.0f);
  const TensorF b({1}, 0.0f);
  const auto y = conv2d(x, w, b, 1, 1);
  CHECK(y.vec()[4] == doctest::Approx(36.0));
  const auto ref = oracle::conv(oracle::to_map(x), oracle::raw(w), oracle::raw(b), 1, 3, 1, 1);
  for (std::size_t i = 0; i < ref.v.size(); ++i) CHECK(y.vec()[i] == doctest::Approx(ref.v[i]));
}

TEST_CASE("conv2d matches nested-loop oracle on random 5x5 instances") {
  SplitMix64 rng(7);
  for (int trial = 0; trial < 20; ++trial) {
    const i64 ci = 1 + static_cast<i64>(rng.below(3)), co = 1 + static_cast<i64>(rng.below(3));
    const int k = trial % 2 ? 3 : 1;
    const int stride = 1 + static_cast<int>(rng.below(2));
    const int pad = static_cast<int>(rng.below(2));
    const auto x = rand_f({ci, 5, 5}, rng);
    const auto w = rand_f({co, ci, k, k}, rng);
    const auto b = rand_f({co}, rng);
    const auto y = conv2d(x, w, b, pad, stride);
    const auto ref = oracle::conv(oracle::to_map(x), oracle::raw(w), oracle::raw(b), co, k, pad, stride);
    REQUIRE(y.dim(1) == ref.h);
    REQUIRE(y.dim(2) == ref.w);
    for (std::size_t i = 0; i < ref.v.size(); ++i) CHECK(std::abs(y.vec()[i] - ref.v[i]) < 1e-6);
  }
}

TEST_CASE("conv2d rejects mismatched shapes") {
  const TensorF x({2, 4, 4}, 1.0f);
  CHECK_THROWS_AS(conv2d(x, TensorF({1, 3, 3, 3}, 1.0f), TensorF({1}, 0.0f), 1, 1), DimensionError);
  CHECK_THROWS_AS(conv2d(x, TensorF({1, 2, 3, 3}, 1.0f), TensorF({2}, 0.0f), 1, 1), DimensionError);
}

TEST_CASE("channel pooling") {
  SplitMix64 rng(2);
  const auto one = rand_f({1, 3, 3}, rng);
  CHECK(bitwise_equal(channel_pool(one, PoolMode::Max).clone(), one));
  CHECK(bitwise_equal(channel_pool(one, PoolMode::Avg).clone(), one));

  const TensorF x({2, 1, 1}, std::vector<float>{1, 3});
  CHECK(channel_pool(x, PoolMode::Max).item() == 3.0f);
  CHECK(channel_pool(x, PoolMode::Avg).item() == 2.0f);

  const TensorF c({4, 2, 2}, 0.75f);
  for (auto mode : {PoolMode::Max, PoolMode::Avg})
    for (float v : values(channel_pool(c, mode))) CHECK(v == 0.75f);
}

TEST_CASE("spatial pooling") {
  const TensorF x({1, 2, 2}, std::vector<float>{0, 1, 2, 3});
  CHECK(spatial_pool(x, PoolMode::Max).item() == 3.0f);
  CHECK(spatial_pool(x, PoolMode::Avg).item() == 1.5f);

  SplitMix64 rng(3);
  const auto px = rand_f({3, 1, 1}, rng);
  CHECK(bitwise_equal(spatial_pool(px, PoolMode::Avg).clone(), px));

  const auto r = rand_f({2, 3, 3}, rng);
  const auto neg = scale(r, -1.0f);
  const auto mx = spatial_pool(neg, PoolMode::Max);
  for (i64 c = 0; c < 2; ++c) {
    float mn = 1e9f;
    for (i64 i = 0; i < 9; ++i) mn = std::min(mn, r.vec()[static_cast<std::size_t>(c * 9 + i)]);
    CHECK(mx.vec()[static_cast<std::size_t>(c)] == -mn);
  }
}

TEST_CASE("activations") {
  const TensorF x({3}, std::vector<float>{-2, 0, 2});
  const auto s = activation(x, Activation::Sigmoid);
  CHECK(s.vec()[1] == 0.5f);
  const auto r = activation(x, Activation::Relu);
  CHECK(r.vec()[0] == 0.0f);
  CHECK(r.vec()[2] == 2.0f);
  const auto sp = activation(x, Activation::Softplus);
  CHECK(sp.vec()[1] == doctest::Approx(0.69314718).epsilon(1e-6));

  // Stable branches: no overflow at large magnitude in 32-bit.
  const TensorF big({2}, std::vector<float>{-100, 100});
  const auto sb = activation(big, Activation::Sigmoid);
  CHECK(sb.vec()[0] >= 0.0f);
  CHECK(sb.vec()[1] == 1.0f);
  const auto spb = activation(big, Activation::Softplus);
  CHECK(spb.vec()[1] == 100.0f);
  CHECK(spb.vec()[0] >= 0.0f);
  CHECK_THROWS_AS(activation(TensorF({1}, 100.0f), Activation::Exp), NumericError);

  SplitMix64 rng(4);
  const auto u = uniform_tensor<float>({50}, -10, 10, rng);
  for (float v : values(activation(u, Activation::Sigmoid))) {
    CHECK(v > 0.0f);
    CHECK(v < 1.0f);
  }
  for (float v : values(activation(u, Activation::Relu))) CHECK(v >= 0.0f);
}

TEST_CASE("elementwise ops and broadcasting") {
  SplitMix64 rng(5);
  const auto a = rand_f({2, 3, 3}, rng);
  CHECK(bitwise_equal(mul(a, TensorF({2, 3, 3}, 1.0f)), a));
  CHECK(bitwise_equal(add(a, TensorF({2, 3, 3}, 0.0f)), a));
  CHECK(bitwise_equal(mul(a, TensorF({2, 1, 1}, 1.0f)), a));

  const auto b = rand_f({2, 2, 2}, rng);
  const auto y = mul(b, TensorF({2, 1, 1}, std::vector<float>{2, 3}));
  for (i64 i = 0; i < 4; ++i) {
    CHECK(y.vec()[static_cast<std::size_t>(i)] == 2.0f * b.vec()[static_cast<std::size_t>(i)]);
    CHECK(y.vec()[static_cast<std::size_t>(4 + i)] == 3.0f * b.vec()[static_cast<std::size_t>(4 + i)]);
  }
  const auto px = rand_f({1, 2, 2}, rng);
  const auto z = mul(b, px);
  for (i64 c = 0; c < 2; ++c)
    for (i64 i = 0; i < 4; ++i)
      CHECK(z.vec()[static_cast<std::size_t>(c * 4 + i)] ==
            b.vec()[static_cast<std::size_t>(c * 4 + i)] * px.vec()[static_cast<std::size_t>(i)]);
  CHECK_THROWS_AS(add(b, TensorF({2, 2, 1}, 1.0f)), DimensionError);
  CHECK_THROWS_AS(add(b, TensorF({3, 1, 1}, 1.0f)), DimensionError);
}

TEST_CASE("concat, split, interleave and reverse") {
  SplitMix64 rng(6);
  const auto a = rand_f({3, 2, 2}, rng), b = rand_f({3, 2, 2}, rng);
  const auto ab = concat<float>({a, b});
  CHECK(ab.shape() == Shape{6, 2, 2});
  const auto parts = split(ab, {3, 3});
  CHECK(bitwise_equal(parts[0], a));
  CHECK(bitwise_equal(parts[1], b));

  const TensorF c1({1, 1, 1}, 7.0f), c2({1, 1, 1}, 9.0f);
  CHECK(concat<float>({c1, c2}).vec() == std::vector<float>{7, 9});

  const TensorF i({2, 1, 1}, std::vector<float>{1, 2});  // A, B
  const TensorF e({2, 1, 1}, std::vector<float>{3, 4});  // X, Y
  CHECK(interleave(i, e).vec() == std::vector<float>{1, 3, 2, 4});
  const auto [ri, re] = deinterleave(interleave(a, b));
  CHECK(bitwise_equal(ri, a));
  CHECK(bitwise_equal(re, b));
  CHECK(interleave(c1, c2).vec() == std::vector<float>{7, 9});

  const TensorF r({3}, std::vector<float>{1, 2, 3});
  CHECK(reverse(r, 0).vec() == std::vector<float>{3, 2, 1});
  CHECK(bitwise_equal(reverse(TensorF({1, 2}, 5.0f), 0), TensorF({1, 2}, 5.0f)));
  for (std::size_t axis = 0; axis < 3; ++axis) CHECK(bitwise_equal(reverse(reverse(a, axis), axis), a));
  CHECK_THROWS_AS(split(ab, {3, 2}), DimensionError);
}

TEST_CASE("layernorm") {
  const TensorF c({3, 2, 2}, 4.0f);
  for (float v : values(layernorm(c, TensorF({3}, 1.0f), TensorF({3}, 0.0f)))) CHECK(v == 0.0f);

  const TensorF x({2, 1, 1}, std::vector<float>{1, 3});
  const auto y = layernorm(x, TensorF({2}, 1.0f), TensorF({2}, 0.0f));
  const double expect = 1.0 / std::sqrt(1.0 + 1e-5);
  CHECK(y.vec()[0] == doctest::Approx(-expect).epsilon(1e-6));
  CHECK(y.vec()[1] == doctest::Approx(expect).epsilon(1e-6));

  SplitMix64 rng(8);
  const auto r = rand_f({4, 2, 3}, rng);
  const auto g = rand_f({4}, rng);
  const auto base = layernorm(r, g, TensorF({4}, 0.0f));
  const auto shifted = layernorm(r, g, TensorF({4}, 0.25f));
  for (std::size_t k = 0; k < base.vec().size(); ++k)
    CHECK(shifted.vec()[k] == doctest::Approx(base.vec()[k] + 0.25f));
}

TEST_CASE("bilinear resize") {
  SplitMix64 rng(9);
  const auto x = rand_f({2, 3, 4}, rng);
  CHECK(bitwise_equal(resize_bilinear(x, 3, 4), x));
  // 1x2 -> 1x4 with half-pixel centres: [a, 0.75a+0.25b, 0.25a+0.75b, b].
  const TensorF row({1, 1, 2}, std::vector<float>{0, 4});
  CHECK(resize_bilinear(row, 1, 4).vec() == std::vector<float>{0, 1, 3, 4});
}

TEST_CASE("backward analytic cases") {
  SplitMix64 rng(10);
  auto x = rand_f({2, 3}, rng);
  x.set_requires_grad(true);
  GradTape<float> tape;
  {
    TapeScope<float> scope(tape);
    tape.backward(sum(x));
  }
  for (float g : x.grad()) CHECK(g == 1.0f);

  x.zero_grad();
  GradTape<float> tape2;
  {
    TapeScope<float> scope(tape2);
    tape2.backward(sum(mul(x, x)));
  }
  for (std::size_t i = 0; i < 6; ++i) CHECK(x.grad()[i] == doctest::Approx(2.0f * x.vec()[i]));
}

TEST_CASE("tape replays in reverse order and refuses a second backward") {
  auto x = TensorF({2}, 1.0f);
  x.set_requires_grad(true);
  GradTape<float> tape;
  TensorF loss;
  {
    TapeScope<float> scope(tape);
    loss = sum(activation(scale(x, 2.0f), Activation::Sigmoid));
  }
  REQUIRE(tape.size() == 3);
  CHECK(tape.entries()[0].op == "scale");
  CHECK(tape.entries()[2].op == "sum");
  tape.backward(loss);
  CHECK_THROWS_AS(tape.backward(loss), StateError);
  tape.reset();
  CHECK(tape.size() == 0);
  CHECK_FALSE(tape.consumed());
}

TEST_CASE("no recording without an active tape or tracked input") {
  auto x = TensorF({2}, 1.0f);
  GradTape<float> tape;
  {
    TapeScope<float> scope(tape);
    (void)scale(x, 2.0f);
  }
  CHECK(tape.size() == 0);
  x.set_requires_grad(true);
  (void)scale(x, 2.0f);
  CHECK(GradTape<float>::active() == nullptr);
}

TEST_CASE("non-finite values are rejected") {
  const TensorF x({2}, std::vector<float>{1.0f, NAN});
  CHECK_THROWS_AS(check_finite(x, "test"), NumericError);
  CHECK_THROWS_AS(add(x, TensorF({2}, 1.0f)), NumericError);
}

TEST_CASE("finite-difference suite passes for every tensor op") {
  for (std::uint64_t seed : {0u, 1u, 2u}) {
    const auto results = run_gradcheck_suite("tensor", seed);
    CHECK(results.size() == 16);
    for (const auto& r : results) {
      INFO(r.op << " seed " << seed << " err " << r.max_rel_err);
      CHECK(r.passed());
    }
  }
}

TEST_CASE("gradcheck flags a wrong gradient") {
  // A hand-built op whose backward is deliberately off by a factor of two.
  auto x = TensorD({3}, std::vector<double>{0.1, 0.2, 0.3});
  auto broken = [x]() {
    TensorD out({3}, x.vec());
    if (auto* tape = tracking_tape<double>({&x}))
      tape->record("broken", 0, {x}, {out}, [x, out] {
        for (std::size_t i = 0; i < 3; ++i) x.grad_buffer()[i] += 2.0 * out.grad()[i];
      });
    return out;
  };
  const auto r = gradcheck("broken", broken, {x}, 1);
  CHECK_FALSE(r.passed());
}
