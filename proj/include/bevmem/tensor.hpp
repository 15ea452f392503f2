#pragma once

#include <algorithm>
#include <cassert>
#include <cstdint>
#include <string>
#include <vector>

#include "bevmem/common.hpp"

BEVMEM_NS_BEGIN

// Dense value tensor. Feature maps are rank-3 in channel-major layout
// (index = (c*H + y)*W + x); conv weights are rank-4 out x in x k x k.
struct Tensor {
  std::vector<int> shape;
  std::vector<real> v;

  Tensor() = default;
  explicit Tensor(std::vector<int> s) : shape(std::move(s)) {
    v.assign(static_cast<std::size_t>(numel_of(shape)), real(0));
  }

  static std::int64_t numel_of(const std::vector<int>& s) {
    std::int64_t n = 1;
    for (int d : s) n *= d;
    return n;
  }
  std::int64_t numel() const { return static_cast<std::int64_t>(v.size()); }

  static Tensor zeros(std::vector<int> s) { return Tensor(std::move(s)); }
  static Tensor full(std::vector<int> s, real value) {
    Tensor t(std::move(s));
    std::fill(t.v.begin(), t.v.end(), value);
    return t;
  }
  static Tensor fmap(int c, int h, int w) { return Tensor({c, h, w}); }

  int rank() const { return static_cast<int>(shape.size()); }
  // rank-3 accessors
  int c() const {
    assert(rank() == 3);
    return shape[0];
  }
  int h() const {
    assert(rank() == 3);
    return shape[1];
  }
  int w() const {
    assert(rank() == 3);
    return shape[2];
  }
  real& at(int ch, int y, int x) { return v[(static_cast<std::size_t>(ch) * h() + y) * w() + x]; }
  real at(int ch, int y, int x) const {
    return v[(static_cast<std::size_t>(ch) * h() + y) * w() + x];
  }

  bool same_shape(const Tensor& o) const { return shape == o.shape; }
  bool all_finite() const {
    for (real x : v)
      if (!std::isfinite(static_cast<double>(x))) return false;
    return true;
  }
};

using FeatureMap = Tensor;

// Trainable tensor with a gradient accumulator.
struct Param {
  std::string name;
  Tensor value;
  Tensor grad;
  bool requires_grad = true;

  Param() = default;
  Param(std::string n, Tensor val) : name(std::move(n)), value(std::move(val)) {
    grad = Tensor(value.shape);
  }
  void zero_grad() { std::fill(grad.v.begin(), grad.v.end(), real(0)); }
};

inline std::string shape_str(const std::vector<int>& s) {
  std::string out = "[";
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (i) out += "x";
    out += std::to_string(s[i]);
  }
  return out + "]";
}

BEVMEM_NS_END
