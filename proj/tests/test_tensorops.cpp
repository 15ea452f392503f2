#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include "bevmem/fusion.hpp"
#include "bevmem/tape.hpp"
#include "oracles.hpp"

using namespace bevmem;

namespace {

Tensor random_fmap(Rng& rng, int c, int h, int w, double lo = -1.0, double hi = 1.0) {
  Tensor t = Tensor::fmap(c, h, w);
  for (real& v : t.v) v = static_cast<real>(rng.uniform(lo, hi));
  return t;
}

}  // namespace

// --- warp ----------------------------------------------------------------

TEST_CASE("warp identity is bit-exact") {
  Rng rng(31);
  const GridSpec spec{6, 9, 1.0};
  const Tensor f = random_fmap(rng, 3, 6, 9);
  const Tensor out = warp(f, Pose2{}, spec);
  for (std::size_t i = 0; i < f.v.size(); ++i) CHECK(out.v[i] == f.v[i]);
}

TEST_CASE("warp by integer-cell translation matches the index-shift oracle") {
  Rng rng(32);
  const GridSpec spec{8, 12, 1.0};
  const Tensor f = random_fmap(rng, 2, 8, 12);
  // ego moves forward 3 cells and left 2 cells
  const Pose2 rel = relative_transform({0, 0, 0}, {3, 2, 0});
  const Tensor out = warp(f, rel, spec);
  const Tensor want = oracle::shift_fill_zero(f, -2, -3);
  for (std::size_t i = 0; i < f.v.size(); ++i) CHECK(out.v[i] == want.v[i]);
}

TEST_CASE("warp of ones under a half-cell shift gives the hand-computed band") {
  const GridSpec spec{4, 6, 1.0};
  const Tensor ones = Tensor::full({1, 4, 6}, real(1));
  const Pose2 rel = relative_transform({0, 0, 0}, {0.5, 0, 0});
  const Tensor out = warp(ones, rel, spec);
  // interior samples average two ones -> 1; the last column samples one
  // in-bounds tap with weight 0.5; nothing is fully vacated at half a cell
  for (int i = 0; i < 4; ++i) {
    for (int j = 0; j < 5; ++j) CHECK(out.at(0, i, j) == real(1));
    CHECK(out.at(0, i, 5) == real(0.5));
  }
  // a 1.5-cell shift vacates the outermost column entirely
  const Tensor out2 = warp(ones, relative_transform({0, 0, 0}, {1.5, 0, 0}), spec);
  for (int i = 0; i < 4; ++i) {
    CHECK(out2.at(0, i, 5) == real(0));
    CHECK(out2.at(0, i, 4) == real(0.5));
    CHECK(out2.at(0, i, 3) == real(1));
  }
}

TEST_CASE("warp shape mismatch is rejected") {
  const GridSpec spec{6, 9, 1.0};
  const Tensor bad = Tensor::fmap(1, 5, 9);
  CHECK_THROWS_AS(warp(bad, Pose2{}, spec), ShapeError);
}

TEST_CASE("warp linearity is bit-exact on dyadic weights and integer values") {
  // half-cell translations give bilinear weights in {0, 1/4, 1/2, 1}; with
  // small integer features and power-of-two coefficients every product and
  // partial sum is exact, so linearity must hold bit for bit
  Rng rng(33);
  const GridSpec spec{6, 10, 1.0};
  Tensor f = Tensor::fmap(2, 6, 10), g = Tensor::fmap(2, 6, 10);
  for (real& v : f.v) v = static_cast<real>(rng.uniform_int(-64, 64));
  for (real& v : g.v) v = static_cast<real>(rng.uniform_int(-64, 64));
  const Pose2 rel = relative_transform({0, 0, 0}, {1.5, -0.5, 0});
  const real alpha = real(0.5), beta = real(2.0);

  Tensor mix = Tensor::fmap(2, 6, 10);
  for (std::size_t i = 0; i < mix.v.size(); ++i) mix.v[i] = alpha * f.v[i] + beta * g.v[i];
  const Tensor lhs = warp(mix, rel, spec);
  const Tensor wf = warp(f, rel, spec), wg = warp(g, rel, spec);
  for (std::size_t i = 0; i < lhs.v.size(); ++i)
    CHECK(lhs.v[i] == alpha * wf.v[i] + beta * wg.v[i]);
}

TEST_CASE("warp linearity holds within float tolerance for general transforms") {
  Rng rng(34);
  const GridSpec spec{6, 10, 1.0};
  const Tensor f = random_fmap(rng, 2, 6, 10), g = random_fmap(rng, 2, 6, 10);
  const Pose2 rel{0.73, -0.21, 0.37};
  Tensor mix = Tensor::fmap(2, 6, 10);
  for (std::size_t i = 0; i < mix.v.size(); ++i)
    mix.v[i] = real(0.3) * f.v[i] + real(1.7) * g.v[i];
  const Tensor lhs = warp(mix, rel, spec);
  const Tensor wf = warp(f, rel, spec), wg = warp(g, rel, spec);
  for (std::size_t i = 0; i < lhs.v.size(); ++i)
    CHECK(lhs.v[i] ==
          doctest::Approx(real(0.3) * wf.v[i] + real(1.7) * wg.v[i]).epsilon(1e-5));
}

TEST_CASE("warp never creates mass under translations") {
  Rng rng(35);
  const GridSpec spec{8, 12, 1.0};
  for (int trial = 0; trial < 50; ++trial) {
    const Tensor f = random_fmap(rng, 1, 8, 12, 0.0, 2.0);
    const Pose2 rel{rng.uniform(-3, 3), rng.uniform(-3, 3), 0.0};
    const Tensor out = warp(f, rel, spec);
    double sum_in = 0, sum_out = 0;
    for (real v : f.v) sum_in += v;
    for (real v : out.v) sum_out += v;
    CHECK(sum_out <= sum_in + 1e-4);
  }
}

// --- conv2d ---------------------------------------------------------------

TEST_CASE("conv2d 1x1 identity channel selector") {
  Rng rng(41);
  const Tensor x = random_fmap(rng, 3, 5, 7);
  Tensor w({2, 3, 1, 1});
  w.v[0 * 3 + 1] = real(1);  // out0 selects channel 1
  w.v[1 * 3 + 2] = real(1);  // out1 selects channel 2
  const Tensor b({2});
  const Tensor out = conv2d_forward(x, w, b, 1, 1);
  for (int i = 0; i < 5; ++i)
    for (int j = 0; j < 7; ++j) {
      CHECK(out.at(0, i, j) == x.at(1, i, j));
      CHECK(out.at(1, i, j) == x.at(2, i, j));
    }
}

TEST_CASE("conv2d delta impulse through one dilated 3x3 layer") {
  Tensor x = Tensor::fmap(1, 11, 11);
  x.at(0, 5, 5) = real(1);
  Tensor w({1, 1, 3, 3});
  for (int i = 0; i < 9; ++i) w.v[static_cast<std::size_t>(i)] = static_cast<real>(i + 1);
  const Tensor b({1});
  const Tensor out = conv2d_forward(x, w, b, 2, 2);
  // impulse response occupies a 5x5 footprint with taps spaced 2 apart
  int nonzero = 0;
  for (int i = 0; i < 11; ++i)
    for (int j = 0; j < 11; ++j)
      if (out.at(0, i, j) != real(0)) {
        ++nonzero;
        CHECK(std::abs(i - 5) <= 2);
        CHECK(std::abs(j - 5) <= 2);
        CHECK((i - 5) % 2 == 0);
        CHECK((j - 5) % 2 == 0);
      }
  CHECK(nonzero == 9);
  // flipped kernel appears around the impulse
  CHECK(out.at(0, 3, 3) == real(9));
  CHECK(out.at(0, 5, 5) == real(5));
  CHECK(out.at(0, 7, 7) == real(1));
}

TEST_CASE("three stacked dilated layers give an exact 13x13 interior footprint") {
  const int N = 19;
  Tensor x = Tensor::fmap(1, N, N);
  x.at(0, 9, 9) = real(1);
  Rng rng(42);
  Tensor cur = x;
  for (int layer = 0; layer < 3; ++layer) {
    Tensor w({1, 1, 3, 3});
    for (real& v : w.v) v = static_cast<real>(rng.uniform(0.2, 1.0));
    const Tensor b({1});
    cur = conv2d_forward(cur, w, b, 2, 2);
  }
  int min_i = N, max_i = -1, min_j = N, max_j = -1;
  for (int i = 0; i < N; ++i)
    for (int j = 0; j < N; ++j)
      if (cur.at(0, i, j) != real(0)) {
        min_i = std::min(min_i, i);
        max_i = std::max(max_i, i);
        min_j = std::min(min_j, j);
        max_j = std::max(max_j, j);
      }
  CHECK(max_i - min_i + 1 == 13);
  CHECK(max_j - min_j + 1 == 13);
}

TEST_CASE("conv2d equals the quintuple-loop reference on random cases") {
  Rng rng(43);
  for (int trial = 0; trial < 10; ++trial) {
    const int in_ch = static_cast<int>(rng.uniform_int(1, 5));
    const int out_ch = static_cast<int>(rng.uniform_int(1, 6));
    const int h = static_cast<int>(rng.uniform_int(3, 8));
    const int w = static_cast<int>(rng.uniform_int(3, 9));
    const int k = rng.uniform() < 0.4 ? 1 : 3;
    const int dil = static_cast<int>(rng.uniform_int(1, 3));
    const Tensor x = random_fmap(rng, in_ch, h, w);
    Tensor wt({out_ch, in_ch, k, k});
    for (real& v : wt.v) v = static_cast<real>(rng.uniform(-1, 1));
    Tensor b({out_ch});
    for (real& v : b.v) v = static_cast<real>(rng.uniform(-1, 1));
    const Tensor got = conv2d_forward(x, wt, b, dil, dil);
    const Tensor want = oracle::conv2d_naive(x, wt, b, dil, dil);
    for (std::size_t i = 0; i < got.v.size(); ++i)
      CHECK(got.v[i] == doctest::Approx(want.v[i]).epsilon(1e-5));
  }
}

TEST_CASE("conv2d channel mismatch is a shape error") {
  const Tensor x = Tensor::fmap(3, 4, 4);
  const Tensor w({2, 4, 3, 3});
  const Tensor b({2});
  CHECK_THROWS_AS(conv2d_forward(x, w, b, 1, 1), ShapeError);
}

// --- activations -----------------------------------------------------------

TEST_CASE("relu and sigmoid point values") {
  Tensor x = Tensor::fmap(1, 1, 3);
  x.v = {real(-1), real(0), real(2)};
  const Tensor r = relu_forward(x);
  CHECK(r.v[0] == real(0));
  CHECK(r.v[1] == real(0));
  CHECK(r.v[2] == real(2));
  const Tensor s = sigmoid_forward(x);
  CHECK(s.v[1] == doctest::Approx(0.5));
  for (real v : s.v) {
    CHECK(v > real(0));
    CHECK(v < real(1));
  }
}

TEST_CASE("sigmoid gradient at zero is a quarter") {
  Tape tape;
  Tensor x = Tensor::fmap(1, 1, 1);
  Param px("x", x);
  const auto out = tape.sum(tape.sigmoid(tape.param(px)));
  tape.backward(out);
  CHECK(px.grad.v[0] == doctest::Approx(0.25));
}

// --- layer norm -------------------------------------------------------------

TEST_CASE("layer_norm on constant channels gives zeros") {
  const Tensor x = Tensor::full({4, 3, 3}, real(2.5));
  const Tensor gain = Tensor::full({4}, real(1));
  const Tensor bias({4});
  const Tensor out = layer_norm_forward(x, gain, bias, real(1e-5), nullptr);
  for (real v : out.v) CHECK(std::abs(static_cast<double>(v)) < 1e-4);
}

TEST_CASE("layer_norm hand computation for channels (1, 3)") {
  Tensor x = Tensor::fmap(2, 1, 1);
  x.v = {real(1), real(3)};
  const Tensor gain = Tensor::full({2}, real(1));
  const Tensor bias({2});
  const Tensor out = layer_norm_forward(x, gain, bias, real(1e-5), nullptr);
  // mean 2, var 1 -> normalized to (-1, 1) within the eps effect
  CHECK(out.v[0] == doctest::Approx(-1.0).epsilon(1e-4));
  CHECK(out.v[1] == doctest::Approx(1.0).epsilon(1e-4));
}

TEST_CASE("layer_norm with zero gain returns the bias everywhere") {
  Rng rng(44);
  const Tensor x = random_fmap(rng, 3, 4, 5);
  const Tensor gain({3});
  Tensor bias({3});
  bias.v = {real(0.5), real(-1), real(2)};
  const Tensor out = layer_norm_forward(x, gain, bias, real(1e-5), nullptr);
  for (int c = 0; c < 3; ++c)
    for (int p = 0; p < 20; ++p)
      CHECK(out.v[static_cast<std::size_t>(c) * 20 + p] == bias.v[static_cast<std::size_t>(c)]);
}

TEST_CASE("layer_norm pre-affine statistics are standardized") {
  Rng rng(45);
  const Tensor x = random_fmap(rng, 16, 5, 6, -3.0, 3.0);
  const Tensor gain = Tensor::full({16}, real(1));
  const Tensor bias({16});
  const Tensor out = layer_norm_forward(x, gain, bias, real(1e-5), nullptr);
  for (int p = 0; p < 30; ++p) {
    double mean = 0, var = 0;
    for (int c = 0; c < 16; ++c) mean += out.v[static_cast<std::size_t>(c) * 30 + p];
    mean /= 16;
    for (int c = 0; c < 16; ++c) {
      const double d = out.v[static_cast<std::size_t>(c) * 30 + p] - mean;
      var += d * d;
    }
    var /= 16;
    CHECK(std::abs(mean) < 1e-5);
    CHECK(std::abs(var - 1.0) < 1e-3);
  }
}

// --- concat -----------------------------------------------------------------

TEST_CASE("concat of one part is the part") {
  Rng rng(46);
  const Tensor a = random_fmap(rng, 3, 4, 5);
  const Tensor out = concat_channels({&a});
  CHECK(out.shape == a.shape);
  for (std::size_t i = 0; i < a.v.size(); ++i) CHECK(out.v[i] == a.v[i]);
}

TEST_CASE("concat channel arithmetic matches the paper stack") {
  const Tensor mem = Tensor::fmap(4 * 256, 2, 3);
  const Tensor hf = Tensor::fmap(32, 2, 3);
  const Tensor cur = Tensor::fmap(256, 2, 3);
  const Tensor out = concat_channels({&mem, &hf, &cur});
  CHECK(out.c() == 1312);
}

TEST_CASE("concat index round trip maps channels to source parts") {
  Rng rng(47);
  const Tensor a = random_fmap(rng, 2, 3, 4), b = random_fmap(rng, 3, 3, 4),
               c = random_fmap(rng, 1, 3, 4);
  const Tensor out = concat_channels({&a, &b, &c});
  const std::vector<const Tensor*> parts = {&a, &b, &c};
  for (int ch = 0; ch < out.c(); ++ch) {
    int part = 0, local = ch;
    while (local >= parts[static_cast<std::size_t>(part)]->c()) {
      local -= parts[static_cast<std::size_t>(part)]->c();
      ++part;
    }
    for (int i = 0; i < 3; ++i)
      for (int j = 0; j < 4; ++j)
        CHECK(out.at(ch, i, j) == parts[static_cast<std::size_t>(part)]->at(local, i, j));
  }
}

TEST_CASE("concat spatial mismatch is a shape error") {
  const Tensor a = Tensor::fmap(1, 3, 4), b = Tensor::fmap(1, 3, 5);
  CHECK_THROWS_AS(concat_channels({&a, &b}), ShapeError);
}

// --- tape backward semantics -------------------------------------------------

TEST_CASE("backward of sum(w * x) with fixed x gives grad w = x") {
  Rng rng(48);
  const Tensor xval = random_fmap(rng, 2, 3, 4);
  Param w("w", random_fmap(rng, 2, 3, 4));
  Tape tape;
  const auto out = tape.sum(tape.mul(tape.param(w), tape.leaf(xval)));
  tape.backward(out);
  for (std::size_t i = 0; i < xval.v.size(); ++i)
    CHECK(w.grad.v[i] == doctest::Approx(xval.v[i]));
}

TEST_CASE("backward on a non-scalar is rejected") {
  Tape tape;
  const auto x = tape.leaf(Tensor::fmap(1, 2, 2));
  CHECK_THROWS_AS(tape.backward(x), std::invalid_argument);
}

TEST_CASE("repeated backward accumulates; zero_grad resets") {
  Rng rng(49);
  const Tensor xval = random_fmap(rng, 1, 2, 2);
  Param w("w", random_fmap(rng, 1, 2, 2));
  Tape tape;
  const auto out = tape.sum(tape.mul(tape.param(w), tape.leaf(xval)));
  tape.backward(out);
  tape.backward(out);
  for (std::size_t i = 0; i < xval.v.size(); ++i)
    CHECK(w.grad.v[i] == doctest::Approx(2.0 * xval.v[i]));
  zero_grad({&w});
  for (real v : w.grad.v) CHECK(v == real(0));
}

TEST_CASE("detached values contribute no gradient") {
  Rng rng(50);
  Param w("w", random_fmap(rng, 1, 2, 2));
  Tape tape;
  // a leaf built from w's values is just data: no path back to w
  const auto detached = tape.leaf(w.value);
  const auto out = tape.sum(tape.mul(detached, tape.leaf(random_fmap(rng, 1, 2, 2))));
  tape.backward(out);
  for (real v : w.grad.v) CHECK(v == real(0));
}

// --- optimizer ----------------------------------------------------------------

TEST_CASE("adamw: zero gradient and zero decay leave params unchanged") {
  Param p("p", Tensor::full({4}, real(1.5)));
  AdamW::Options opt;
  opt.weight_decay = 0.0;
  AdamW adam({&p}, opt);
  adam.step();
  adam.step();
  for (real v : p.value.v) CHECK(v == real(1.5));
  CHECK(adam.step_count() == 2);
}

TEST_CASE("adamw matches a scalar hand iteration for 10 steps") {
  Param p("p", Tensor::full({1}, real(0.8)));
  AdamW::Options opt;
  opt.lr = 5e-4;
  opt.weight_decay = 1e-2;
  AdamW adam({&p}, opt);

  // independent double-precision replay of the update rule
  double w = 0.8, m = 0, v = 0;
  const double g = 0.37;
  for (int t = 1; t <= 10; ++t) {
    p.grad.v[0] = static_cast<real>(g);
    adam.step();
    m = opt.beta1 * m + (1 - opt.beta1) * g;
    v = opt.beta2 * v + (1 - opt.beta2) * g * g;
    const double mh = m / (1 - std::pow(opt.beta1, t));
    const double vh = v / (1 - std::pow(opt.beta2, t));
    w -= opt.lr * (mh / (std::sqrt(vh) + opt.eps) + opt.weight_decay * w);
    CHECK(static_cast<double>(p.value.v[0]) == doctest::Approx(w).epsilon(1e-5));
  }
  // with a constant gradient the step size approaches lr (sign-like update)
  CHECK(std::abs(0.8 - w) > 9 * opt.lr * 0.9);
}

TEST_CASE("adamw decoupled decay shrinks params by (1 - lr * wd) per step") {
  Param p("p", Tensor::full({3}, real(2.0)));
  AdamW::Options opt;
  opt.lr = 1e-2;
  opt.weight_decay = 0.5;
  AdamW adam({&p}, opt);
  double expect = 2.0;
  for (int t = 0; t < 5; ++t) {
    adam.step();
    expect *= 1.0 - opt.lr * opt.weight_decay;
    for (real v : p.value.v) CHECK(static_cast<double>(v) == doctest::Approx(expect).epsilon(1e-6));
  }
}

TEST_CASE("no NaN or Inf after ops on finite inputs") {
  Rng rng(51);
  Tape tape;
  tape.set_check_finite(true);
  const Tensor x = random_fmap(rng, 4, 6, 8, -50.0, 50.0);
  Rng wrng(52);
  ConvLayer conv = init_conv_layer(wrng, "c", 4, 4, 3, 2, 2);
  Param gain("g", Tensor::full({4}, real(1))), bias("b", Tensor({4}));
  auto id = tape.conv2d(tape.leaf(x), tape.param(conv.w), tape.param(conv.b), 2, 2);
  id = tape.relu(id);
  id = tape.layer_norm(id, tape.param(gain), tape.param(bias));
  id = tape.sigmoid(id);
  CHECK(tape.val(id).all_finite());
}
