// Finite-difference verification of every differentiable op plus the reduced
// end-to-end fusion stack. Compiled once per library precision; the entry
// point name carries the precision so one binary can run both.

#include "bevmem/gradcheck_result.hpp"

#include <chrono>

#include "bevmem/model.hpp"

namespace {

using namespace bevmem;
using bevmem_gradcheck::OpResult;
using bevmem_gradcheck::SuiteResult;

#ifdef BEVMEM_REAL64
constexpr double kFdStep = 1e-5;
constexpr double kDeepFdStep = 1e-5;
constexpr double kThreshold = 1e-6;
#else
constexpr double kFdStep = 1e-3;
// The ten-op fusion stack accumulates ~1e-5 of 32-bit rounding in the loss;
// central differences need a larger step there to stay above that floor.
constexpr double kDeepFdStep = 1e-2;
constexpr double kThreshold = 1e-3;
#endif

void fill_uniform(Tensor& t, Rng& rng, double lo, double hi) {
  for (real& v : t.v) v = static_cast<real>(rng.uniform(lo, hi));
}

// keeps relu inputs away from the kink so central differences stay valid
void fill_away_from_zero(Tensor& t, Rng& rng) {
  for (real& v : t.v) {
    double x = rng.uniform(-1.0, 1.0);
    if (std::abs(x) < 0.05) x += x >= 0 ? 0.05 : -0.05;
    v = static_cast<real>(x);
  }
}

// Scenario under test: params + inputs feed a scalar loss. The checker
// perturbs every entry of every listed tensor.
struct Case {
  std::vector<Param*> params;
  std::vector<Tensor*> inputs;
  double fd_step = kFdStep;
  std::function<double(bool record, bool corrupt)> loss;  // rebuilds the graph
  std::function<std::vector<const Tensor*>()> grads;      // analytic grads, same order
};

double run_case(Case& c, bool corrupt, double& max_rel) {
  // analytic pass
  for (Param* p : c.params) p->zero_grad();
  c.loss(true, corrupt);

  std::vector<Tensor> analytic;
  for (const Tensor* g : c.grads()) analytic.push_back(*g);

  std::vector<Tensor*> targets;
  for (Param* p : c.params) targets.push_back(&p->value);
  for (Tensor* t : c.inputs) targets.push_back(t);

  max_rel = 0.0;
  for (std::size_t ti = 0; ti < targets.size(); ++ti) {
    Tensor& t = *targets[ti];
    for (std::size_t i = 0; i < t.v.size(); ++i) {
      const real keep = t.v[i];
      t.v[i] = keep + static_cast<real>(c.fd_step);
      const double up = c.loss(false, false);
      t.v[i] = keep - static_cast<real>(c.fd_step);
      const double down = c.loss(false, false);
      t.v[i] = keep;
      const double fd = (up - down) / (2.0 * c.fd_step);
      const double ad = static_cast<double>(analytic[ti].v[i]);
      const double rel = std::abs(ad - fd) / std::max({std::abs(ad), std::abs(fd), 1.0});
      max_rel = std::max(max_rel, rel);
    }
  }
  return max_rel;
}

// loss = sum(op_output * fixed_random) gives dense, non-uniform upstream
// gradients for every op under test.
struct Harness {
  Rng rng;
  explicit Harness(std::uint64_t seed) : rng(seed) {}

  OpResult check(const std::string& name, Case& c, bool corrupt) {
    OpResult r;
    r.op = name;
    r.threshold = kThreshold;
    run_case(c, corrupt, r.max_rel_err);
    r.pass = r.max_rel_err < r.threshold;
    return r;
  }
};

}  // namespace

static SuiteResult run_suite(std::uint64_t seed, bool corrupt_adjoint) {
  const auto t_start = std::chrono::steady_clock::now();
  SuiteResult suite;
  Harness h(mix_seed(seed, 0x67726164ULL));

  GridSpec spec{4, 6, 1.0};

  // relu
  {
    Tensor x = Tensor::fmap(3, 4, 6);
    fill_away_from_zero(x, h.rng);
    Tensor r = Tensor::fmap(3, 4, 6);
    fill_uniform(r, h.rng, -1.0, 1.0);
    Param px("x", x);
    Case c;
    c.params = {&px};
    c.loss = [&](bool record, bool corrupt) {
      Tape tape(record);
      tape.set_corrupt_relu_adjoint(corrupt);
      auto out = tape.sum(tape.mul(tape.relu(tape.param(px)), tape.leaf(r)));
      const double v = static_cast<double>(tape.val(out).v[0]);
      if (record) tape.backward(out);
      return v;
    };
    c.grads = [&]() { return std::vector<const Tensor*>{&px.grad}; };
    suite.ops.push_back(h.check("relu", c, corrupt_adjoint));
  }

  // sigmoid
  {
    Tensor x = Tensor::fmap(3, 4, 6);
    fill_uniform(x, h.rng, -2.0, 2.0);
    Tensor r = Tensor::fmap(3, 4, 6);
    fill_uniform(r, h.rng, -1.0, 1.0);
    Param px("x", x);
    Case c;
    c.params = {&px};
    c.loss = [&](bool record, bool) {
      Tape tape(record);
      auto out = tape.sum(tape.mul(tape.sigmoid(tape.param(px)), tape.leaf(r)));
      const double v = static_cast<double>(tape.val(out).v[0]);
      if (record) tape.backward(out);
      return v;
    };
    c.grads = [&]() { return std::vector<const Tensor*>{&px.grad}; };
    suite.ops.push_back(h.check("sigmoid", c, false));
  }

  // mul + sum
  {
    Tensor a = Tensor::fmap(2, 3, 4);
    Tensor b = Tensor::fmap(2, 3, 4);
    fill_uniform(a, h.rng, -1.0, 1.0);
    fill_uniform(b, h.rng, -1.0, 1.0);
    Param pa("a", a), pb("b", b);
    Case c;
    c.params = {&pa, &pb};
    c.loss = [&](bool record, bool) {
      Tape tape(record);
      auto out = tape.sum(tape.mul(tape.param(pa), tape.param(pb)));
      const double v = static_cast<double>(tape.val(out).v[0]);
      if (record) tape.backward(out);
      return v;
    };
    c.grads = [&]() { return std::vector<const Tensor*>{&pa.grad, &pb.grad}; };
    suite.ops.push_back(h.check("mul_sum", c, false));
  }

  // conv2d variants: 1x1, 3x3 dilation 1, 3x3 dilation 2
  const auto conv_case = [&](const std::string& name, int k, int dil) {
    Tensor x = Tensor::fmap(3, 4, 6);
    fill_uniform(x, h.rng, -1.0, 1.0);
    Param px("x", x);
    Rng wrng(mix_seed(1234, static_cast<std::uint64_t>(k * 10 + dil)));
    ConvLayer layer = init_conv_layer(wrng, "w", 4, 3, k, dil, dil);
    fill_uniform(layer.b.value, h.rng, -0.5, 0.5);
    Tensor r = Tensor::fmap(4, 4, 6);
    fill_uniform(r, h.rng, -1.0, 1.0);
    Case c;
    c.params = {&px, &layer.w, &layer.b};
    c.loss = [&](bool record, bool) {
      Tape tape(record);
      auto out = tape.sum(tape.mul(
          tape.conv2d(tape.param(px), tape.param(layer.w), tape.param(layer.b), layer.dil_h,
                      layer.dil_w),
          tape.leaf(r)));
      const double v = static_cast<double>(tape.val(out).v[0]);
      if (record) tape.backward(out);
      return v;
    };
    c.grads = [&]() {
      return std::vector<const Tensor*>{&px.grad, &layer.w.grad, &layer.b.grad};
    };
    suite.ops.push_back(h.check(name, c, false));
  };
  conv_case("conv2d_k1", 1, 1);
  conv_case("conv2d_k3_d1", 3, 1);
  conv_case("conv2d_k3_d2", 3, 2);

  // warp under a fractional SE(2) transform (linear in the features)
  {
    Tensor x = Tensor::fmap(2, 4, 6);
    fill_uniform(x, h.rng, -1.0, 1.0);
    Tensor r = Tensor::fmap(2, 4, 6);
    fill_uniform(r, h.rng, -1.0, 1.0);
    Param px("x", x);
    const Pose2 rel{0.7, -0.4, 0.3};
    Case c;
    c.params = {&px};
    c.loss = [&](bool record, bool) {
      Tape tape(record);
      auto out = tape.sum(tape.mul(tape.warp(tape.param(px), rel, spec), tape.leaf(r)));
      const double v = static_cast<double>(tape.val(out).v[0]);
      if (record) tape.backward(out);
      return v;
    };
    c.grads = [&]() { return std::vector<const Tensor*>{&px.grad}; };
    suite.ops.push_back(h.check("warp", c, false));
  }

  // layer_norm
  {
    Tensor x = Tensor::fmap(4, 4, 6);
    fill_uniform(x, h.rng, -1.5, 1.5);
    Tensor r = Tensor::fmap(4, 4, 6);
    fill_uniform(r, h.rng, -1.0, 1.0);
    Param px("x", x);
    Param pg("g", Tensor::full({4}, real(1)));
    fill_uniform(pg.value, h.rng, 0.5, 1.5);
    Param pb("b", Tensor({4}));
    fill_uniform(pb.value, h.rng, -0.5, 0.5);
    Case c;
    c.params = {&px, &pg, &pb};
    c.loss = [&](bool record, bool) {
      Tape tape(record);
      auto out = tape.sum(
          tape.mul(tape.layer_norm(tape.param(px), tape.param(pg), tape.param(pb)), tape.leaf(r)));
      const double v = static_cast<double>(tape.val(out).v[0]);
      if (record) tape.backward(out);
      return v;
    };
    c.grads = [&]() { return std::vector<const Tensor*>{&px.grad, &pg.grad, &pb.grad}; };
    suite.ops.push_back(h.check("layer_norm", c, false));
  }

  // concat (adjoint split)
  {
    Tensor a = Tensor::fmap(2, 4, 6), b = Tensor::fmap(3, 4, 6);
    fill_uniform(a, h.rng, -1.0, 1.0);
    fill_uniform(b, h.rng, -1.0, 1.0);
    Tensor r = Tensor::fmap(5, 4, 6);
    fill_uniform(r, h.rng, -1.0, 1.0);
    Param pa("a", a), pb("b", b);
    Case c;
    c.params = {&pa, &pb};
    c.loss = [&](bool record, bool) {
      Tape tape(record);
      auto out =
          tape.sum(tape.mul(tape.concat({tape.param(pa), tape.param(pb)}), tape.leaf(r)));
      const double v = static_cast<double>(tape.val(out).v[0]);
      if (record) tape.backward(out);
      return v;
    };
    c.grads = [&]() { return std::vector<const Tensor*>{&pa.grad, &pb.grad}; };
    suite.ops.push_back(h.check("concat", c, false));
  }

  // focal loss (fused logits -> scalar)
  {
    Tensor z = Tensor::fmap(4, 4, 6);
    fill_uniform(z, h.rng, -1.5, 1.5);
    Param pz("z", z);
    std::vector<std::uint8_t> labels(24);
    for (auto& l : labels) l = static_cast<std::uint8_t>(h.rng.uniform_int(0, 3));
    Case c;
    c.params = {&pz};
    c.loss = [&](bool record, bool) {
      Tape tape(record);
      auto out = tape.focal_loss(tape.param(pz), labels, real(2.0), real(0.25), real(5.0));
      const double v = static_cast<double>(tape.val(out).v[0]);
      if (record) tape.backward(out);
      return v;
    };
    c.grads = [&]() { return std::vector<const Tensor*>{&pz.grad}; };
    suite.ops.push_back(h.check("focal_loss", c, false));
  }

  // reduced end-to-end fusion: heatmap branch + memory fusion + layer norm
  // (C=8, T_WM=2, C_H=4 on a 6x10 grid). Central differences require a
  // smooth region, so weights are scaled down and biases shifted positive:
  // every relu input stays clearly on one side of its kink (the kink itself
  // is covered by the dedicated relu case).
  {
    GridSpec g6{6, 10, 1.0};
    FusionConfig fcfg{8, 2, 4, 2, 2, true};
    FusionParams fp = init_fusion_params(7, fcfg);
    for (ConvLayer* l : {&fp.conv_h[0], &fp.conv_h[1], &fp.conv_h[2], &fp.conv_mem[0],
                         &fp.conv_mem[1], &fp.conv_mem[2]}) {
      for (real& v : l->w.value.v) v *= real(0.35);
      for (std::size_t oc = 0; oc < l->b.value.v.size(); ++oc)
        l->b.value.v[oc] = static_cast<real>(0.9 + 0.08 * static_cast<double>(oc));
    }
    OverlapHeatmap hm = OverlapHeatmap::init(g6);
    hm.map = warp(hm.map, Pose2{1.3, 0.4, 0.1}, g6);
    for (real& v : hm.map.v) v += real(1);
    Tensor wm_stacked = Tensor::fmap(16, 6, 10);
    fill_uniform(wm_stacked, h.rng, -1.0, 1.0);
    Tensor fbev = Tensor::fmap(8, 6, 10);
    fill_uniform(fbev, h.rng, -1.0, 1.0);
    // small probe multiplier keeps the finite-difference noise floor well
    // under the tolerance for low-magnitude gradient entries
    Tensor r = Tensor::fmap(8, 6, 10);
    fill_uniform(r, h.rng, -0.15, 0.15);
    Param pf("fbev", fbev);

    Case c;
    c.fd_step = kDeepFdStep;
    c.params = {&pf};
    for (ConvLayer& l : fp.conv_h) {
      c.params.push_back(&l.w);
      c.params.push_back(&l.b);
    }
    for (ConvLayer& l : fp.conv_mem) {
      c.params.push_back(&l.w);
      c.params.push_back(&l.b);
    }
    c.params.push_back(&fp.ln_gain);
    c.params.push_back(&fp.ln_bias);
    c.loss = [&](bool record, bool) {
      Tape tape(record);
      auto hf = heatmap_features(tape, hm, fp);
      auto fused = fuse(tape, wm_stacked, hf, tape.param(pf), fp);
      auto out = tape.sum(tape.mul(fused, tape.leaf(r)));
      const double v = static_cast<double>(tape.val(out).v[0]);
      if (record) tape.backward(out);
      return v;
    };
    c.grads = [&]() {
      std::vector<const Tensor*> g;
      for (Param* p : c.params) g.push_back(&p->grad);
      return g;
    };
    suite.ops.push_back(h.check("fusion_end_to_end", c, false));
  }

  for (const OpResult& r : suite.ops) suite.all_pass = suite.all_pass && r.pass;
  suite.wall_s = std::chrono::duration<double>(std::chrono::steady_clock::now() - t_start).count();
  return suite;
}

#ifdef BEVMEM_REAL64
SuiteResult bevmem_run_gradcheck_f64(std::uint64_t seed, bool corrupt_adjoint) {
  return run_suite(seed, corrupt_adjoint);
}
#else
SuiteResult bevmem_run_gradcheck_f32(std::uint64_t seed, bool corrupt_adjoint) {
  return run_suite(seed, corrupt_adjoint);
}
#endif
