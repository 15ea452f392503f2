#include "bevmem/tape.hpp"

#include <algorithm>

BEVMEM_NS_BEGIN

Tape::Id Tape::push(Tensor value) {
  nodes_.push_back(Node{std::move(value), Tensor{}, false, nullptr});
  return static_cast<Id>(nodes_.size() - 1);
}

Tape::Id Tape::leaf(Tensor value) { return push(std::move(value)); }

Tape::Id Tape::param(Param& p) {
  const Id id = push(p.value);
  if (recording_ && p.requires_grad) nodes_[static_cast<std::size_t>(id)].bound = &p;
  return id;
}

Tensor& Tape::grad(Id id) {
  Node& n = nodes_[static_cast<std::size_t>(id)];
  if (!n.grad_live) {
    n.grad = Tensor(n.val.shape);
    n.grad_live = true;
  }
  return n.grad;
}

void Tape::add_grad(Id id, Tensor g) {
  Node& n = nodes_[static_cast<std::size_t>(id)];
  if (!n.grad_live) {
    n.grad = std::move(g);
    n.grad_live = true;
    return;
  }
  real* dst = n.grad.v.data();
  const real* src = g.v.data();
  const std::size_t cnt = g.v.size();
  for (std::size_t i = 0; i < cnt; ++i) dst[i] += src[i];
}

void Tape::finish_op(Id out, std::function<void(Tape&)> adjoint) {
  if (check_finite_ && !val(out).all_finite())
    throw std::runtime_error("tape: non-finite values produced by op");
  if (recording_) steps_.push_back(std::move(adjoint));
}

Tape::Id Tape::conv2d(Id x, Id w, Id b, int dil_h, int dil_w) {
  Tensor padded;
  const Id out = push(conv2d_forward(val(x), val(w), val(b), dil_h, dil_w, &padded));
  if (!recording_) {
    finish_op(out, {});
    return out;
  }
  auto saved = std::make_shared<Tensor>(std::move(padded));
  const int in_ch = val(x).c(), k = val(w).shape[2];
  finish_op(out, [=](Tape& t) {
    const Tensor& g = t.grad(out);
    t.add_grad(x, conv2d_backward_input(t.val(w), g, dil_h, dil_w));
    Tensor dw, db;
    conv2d_backward_params(*saved, in_ch, g, k, dil_h, dil_w, dw, db);
    t.add_grad(w, std::move(dw));
    t.add_grad(b, std::move(db));
  });
  return out;
}

Tape::Id Tape::warp(Id x, const FlowField& flow) {
  const Id out = push(warp_forward(val(x), flow));
  if (!recording_) {
    finish_op(out, {});
    return out;
  }
  auto saved = std::make_shared<FlowField>(flow);
  finish_op(out, [=](Tape& t) { t.add_grad(x, warp_backward(*saved, t.grad(out))); });
  return out;
}

Tape::Id Tape::warp(Id x, const Pose2& rel, const GridSpec& spec) {
  if (val(x).h() != spec.h_cells || val(x).w() != spec.w_cells)
    throw ShapeError("warp: feature map " + shape_str(val(x).shape) + " does not match grid spec");
  return warp(x, backward_flow(spec, rel));
}

Tape::Id Tape::relu(Id x) {
  const Id out = push(relu_forward(val(x)));
  finish_op(out, [=](Tape& t) {
    Tensor dx = relu_backward(t.val(x), t.grad(out));
    if (t.corrupt_relu_)
      for (real& v : dx.v) v *= real(1.01);
    t.add_grad(x, std::move(dx));
  });
  return out;
}

Tape::Id Tape::sigmoid(Id x) {
  const Id out = push(sigmoid_forward(val(x)));
  finish_op(out, [=](Tape& t) { t.add_grad(x, sigmoid_backward(t.val(out), t.grad(out))); });
  return out;
}

Tape::Id Tape::layer_norm(Id x, Id gain, Id bias, real eps) {
  auto saved = std::make_shared<LayerNormSaved>();
  const Id out =
      push(layer_norm_forward(val(x), val(gain), val(bias), eps, recording_ ? saved.get() : nullptr));
  finish_op(out, [=](Tape& t) {
    Tensor dx, dg, db;
    layer_norm_backward(*saved, t.val(gain), t.grad(out), dx, dg, db);
    t.add_grad(x, std::move(dx));
    t.add_grad(gain, std::move(dg));
    t.add_grad(bias, std::move(db));
  });
  return out;
}

Tape::Id Tape::concat(const std::vector<Id>& parts) {
  std::vector<const Tensor*> ptrs;
  ptrs.reserve(parts.size());
  for (Id p : parts) ptrs.push_back(&val(p));
  const Id out = push(concat_channels(ptrs));
  std::vector<int> chans;
  for (Id p : parts) chans.push_back(val(p).c());
  finish_op(out, [=](Tape& t) {
    const Tensor& g = t.grad(out);
    const int H = g.h(), W = g.w();
    std::size_t off = 0;
    for (std::size_t i = 0; i < parts.size(); ++i) {
      Tensor part({chans[i], H, W});
      std::copy(g.v.begin() + static_cast<std::ptrdiff_t>(off),
                g.v.begin() + static_cast<std::ptrdiff_t>(off + part.v.size()), part.v.begin());
      off += part.v.size();
      t.add_grad(parts[i], std::move(part));
    }
  });
  return out;
}

Tape::Id Tape::mul(Id a, Id b) {
  if (!val(a).same_shape(val(b))) throw ShapeError("mul: shape mismatch");
  Tensor out(val(a).shape);
  for (std::size_t i = 0; i < out.v.size(); ++i) out.v[i] = val(a).v[i] * val(b).v[i];
  const Id id = push(std::move(out));
  finish_op(id, [=](Tape& t) {
    const Tensor& g = t.grad(id);
    Tensor da(g.shape), db(g.shape);
    for (std::size_t i = 0; i < g.v.size(); ++i) {
      da.v[i] = g.v[i] * t.val(b).v[i];
      db.v[i] = g.v[i] * t.val(a).v[i];
    }
    t.add_grad(a, std::move(da));
    t.add_grad(b, std::move(db));
  });
  return id;
}

Tape::Id Tape::sum(Id x) {
  double s = 0.0;
  for (real v : val(x).v) s += static_cast<double>(v);
  Tensor out({1});
  out.v[0] = static_cast<real>(s);
  const Id id = push(std::move(out));
  finish_op(id, [=](Tape& t) {
    const real g = t.grad(id).v[0];
    Tensor dx(t.val(x).shape);
    std::fill(dx.v.begin(), dx.v.end(), g);
    t.add_grad(x, std::move(dx));
  });
  return id;
}

Tape::Id Tape::focal_loss(Id logits, const std::vector<std::uint8_t>& labels, real gamma,
                          real alpha, real lambda1) {
  const Tensor& z = val(logits);
  const int K = z.c(), HW = z.h() * z.w();
  if (static_cast<int>(labels.size()) != HW)
    throw ShapeError("focal_loss: labels size does not match spatial size");

  auto probs = std::make_shared<Tensor>(Tensor({K, z.h(), z.w()}));
  double total = 0.0;
  for (int p = 0; p < HW; ++p) {
    double zmax = -1e300;
    for (int c = 0; c < K; ++c) zmax = std::max(zmax, static_cast<double>(z.v[static_cast<std::size_t>(c) * HW + p]));
    double lse = 0.0;
    for (int c = 0; c < K; ++c) lse += std::exp(static_cast<double>(z.v[static_cast<std::size_t>(c) * HW + p]) - zmax);
    lse = zmax + std::log(lse);
    const int t = labels[static_cast<std::size_t>(p)];
    double pt = 0.0;
    for (int c = 0; c < K; ++c) {
      const double pc = std::exp(static_cast<double>(z.v[static_cast<std::size_t>(c) * HW + p]) - lse);
      probs->v[static_cast<std::size_t>(c) * HW + p] = static_cast<real>(pc);
      if (c == t) pt = pc;
    }
    const double log_pt = static_cast<double>(z.v[static_cast<std::size_t>(t) * HW + p]) - lse;
    total += -static_cast<double>(alpha) * std::pow(1.0 - pt, static_cast<double>(gamma)) * log_pt;
  }
  Tensor out({1});
  out.v[0] = static_cast<real>(static_cast<double>(lambda1) * total / HW);
  const Id id = push(std::move(out));

  auto labels_saved = std::make_shared<std::vector<std::uint8_t>>(labels);
  finish_op(id, [=](Tape& t) {
    const double scale =
        static_cast<double>(t.grad(id).v[0]) * static_cast<double>(lambda1) / HW;
    Tensor dz(t.val(logits).shape);
    const double g = static_cast<double>(gamma), a = static_cast<double>(alpha);
    for (int p = 0; p < HW; ++p) {
      const int tgt = (*labels_saved)[static_cast<std::size_t>(p)];
      const double pt = static_cast<double>(probs->v[static_cast<std::size_t>(tgt) * HW + p]);
      const double one_m = 1.0 - pt;
      // d/dz_k of -a*(1-pt)^g*log(pt) = a*(delta-k_p)*(g*pt*(1-pt)^(g-1)*log(pt) - (1-pt)^g)
      double factor = -std::pow(one_m, g);
      if (g != 0.0 && one_m > 0.0)
        factor += g * pt * std::pow(one_m, g - 1.0) * std::log(std::max(pt, 1e-300));
      for (int c = 0; c < K; ++c) {
        const double pc = static_cast<double>(probs->v[static_cast<std::size_t>(c) * HW + p]);
        const double delta = (c == tgt) ? 1.0 : 0.0;
        dz.v[static_cast<std::size_t>(c) * HW + p] =
            static_cast<real>(scale * a * (delta - pc) * factor);
      }
    }
    t.add_grad(logits, std::move(dz));
  });
  return id;
}

void Tape::backward(Id loss) {
  if (!recording_) throw std::logic_error("tape: backward on a non-recording tape");
  if (val(loss).numel() != 1)
    throw std::invalid_argument("tape: backward requires a scalar loss, got " +
                                shape_str(val(loss).shape));
  for (Node& n : nodes_) n.grad_live = false;
  Tensor seed({1});
  seed.v[0] = real(1);
  add_grad(loss, std::move(seed));
  for (auto it = steps_.rbegin(); it != steps_.rend(); ++it)
    if (*it) (*it)(*this);
  for (std::size_t i = 0; i < nodes_.size(); ++i) {
    Node& n = nodes_[i];
    if (n.bound && n.grad_live) {
      real* dst = n.bound->grad.v.data();
      const real* src = n.grad.v.data();
      for (std::size_t j = 0; j < n.grad.v.size(); ++j) dst[j] += src[j];
    }
  }
}

void zero_grad(const std::vector<Param*>& params) {
  for (Param* p : params) p->zero_grad();
}

AdamW::AdamW(std::vector<Param*> params, Options opt) : params_(std::move(params)), opt_(opt) {
  m_.reserve(params_.size());
  v_.reserve(params_.size());
  for (Param* p : params_) {
    m_.emplace_back(p->value.shape);
    v_.emplace_back(p->value.shape);
  }
}

void AdamW::step() {
  ++t_;
  const double bc1 = 1.0 - std::pow(opt_.beta1, static_cast<double>(t_));
  const double bc2 = 1.0 - std::pow(opt_.beta2, static_cast<double>(t_));
  for (std::size_t i = 0; i < params_.size(); ++i) {
    Param& p = *params_[i];
    if (!p.requires_grad) continue;
    real* w = p.value.v.data();
    const real* g = p.grad.v.data();
    real* m = m_[i].v.data();
    real* v = v_[i].v.data();
    const std::size_t n = p.value.v.size();
    for (std::size_t j = 0; j < n; ++j) {
      const double gj = static_cast<double>(g[j]);
      const double mj = opt_.beta1 * static_cast<double>(m[j]) + (1.0 - opt_.beta1) * gj;
      const double vj = opt_.beta2 * static_cast<double>(v[j]) + (1.0 - opt_.beta2) * gj * gj;
      m[j] = static_cast<real>(mj);
      v[j] = static_cast<real>(vj);
      const double m_hat = mj / bc1;
      const double v_hat = vj / bc2;
      const double upd = m_hat / (std::sqrt(v_hat) + opt_.eps) + opt_.weight_decay * static_cast<double>(w[j]);
      w[j] = static_cast<real>(static_cast<double>(w[j]) - opt_.lr * upd);
    }
  }
}

BEVMEM_NS_END
