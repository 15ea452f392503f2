#pragma once

#include <deque>
#include <memory>
#include <vector>

#include "bevmem/kernels.hpp"

BEVMEM_NS_BEGIN

// Reverse-mode differentiation record. Ops append their adjoint closures in
// execution order; backward() replays them in reverse and finally adds the
// gradients of bound leaves into their Param accumulators. A tape is
// single-owner: one frame's forward pass and backward pass, then dropped.
//
// With recording disabled the same op surface computes values only, which is
// what evaluation and all detached paths use.
class Tape {
 public:
  using Id = std::int32_t;
  static constexpr Id kNone = -1;

  explicit Tape(bool recording = true) : recording_(recording) {}
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Id leaf(Tensor value);
  Id param(Param& p);

  const Tensor& val(Id id) const { return nodes_[static_cast<std::size_t>(id)].val; }
  // Gradient of the last backward() for this node (test hook).
  const Tensor& grad_of(Id id) const { return nodes_[static_cast<std::size_t>(id)].grad; }

  Id conv2d(Id x, Id w, Id b, int dil_h, int dil_w);
  Id warp(Id x, const FlowField& flow);
  Id warp(Id x, const Pose2& rel, const GridSpec& spec);
  Id relu(Id x);
  Id sigmoid(Id x);
  Id layer_norm(Id x, Id gain, Id bias, real eps = real(1e-5));
  Id concat(const std::vector<Id>& parts);
  Id mul(Id a, Id b);  // elementwise
  Id sum(Id x);        // scalar {1}
  // Mean focal loss over cells, scaled by lambda1. labels in [0, classes).
  Id focal_loss(Id logits, const std::vector<std::uint8_t>& labels, real gamma, real alpha,
                real lambda1);

  // Accumulates dLoss/dParam into every reachable bound Param. Repeated
  // calls without Param::zero_grad keep accumulating. Throws on non-scalar.
  void backward(Id loss);

  bool recording() const { return recording_; }
  void set_check_finite(bool on) { check_finite_ = on; }
  // Gradcheck negative control: perturbs the relu adjoint when set.
  void set_corrupt_relu_adjoint(bool on) { corrupt_relu_ = on; }

 private:
  struct Node {
    Tensor val;
    Tensor grad;
    bool grad_live = false;
    Param* bound = nullptr;
  };

  Id push(Tensor value);
  Tensor& grad(Id id);
  void add_grad(Id id, Tensor g);
  void finish_op(Id out, std::function<void(Tape&)> adjoint);

  std::deque<Node> nodes_;
  std::vector<std::function<void(Tape&)>> steps_;
  bool recording_;
  bool check_finite_ =
#ifdef NDEBUG
      false;
#else
      true;
#endif
  bool corrupt_relu_ = false;
};

void zero_grad(const std::vector<Param*>& params);

// Adaptive moment estimation with decoupled weight decay. State slots are
// bound to the param list given at construction; step order is the list
// order, so updates are deterministic.
class AdamW {
 public:
  struct Options {
    double lr = 5e-4;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double weight_decay = 1e-2;
  };

  AdamW(std::vector<Param*> params, Options opt);
  void step();
  std::int64_t step_count() const { return t_; }

 private:
  std::vector<Param*> params_;
  Options opt_;
  std::vector<Tensor> m_, v_;
  std::int64_t t_ = 0;
};

BEVMEM_NS_END
