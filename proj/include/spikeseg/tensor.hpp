#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "spikeseg/common.hpp"

namespace spikeseg {

struct Shape4 {
  int n = 0, c = 0, h = 0, w = 0;
  int64_t numel() const {
    return static_cast<int64_t>(n) * c * h * w;
  }
  bool operator==(const Shape4&) const = default;
  std::string str() const;
};

// Dense rank-4 float tensor, row-major (n, c, h, w). The universal value
// carrier: feature maps, spike frames, membrane potentials, weights.
class Tensor4 {
 public:
  Tensor4() = default;
  Tensor4(int n, int c, int h, int w);
  explicit Tensor4(Shape4 s) : Tensor4(s.n, s.c, s.h, s.w) {}

  static Tensor4 full(int n, int c, int h, int w, float value);

  int n() const { return shape_.n; }
  int c() const { return shape_.c; }
  int h() const { return shape_.h; }
  int w() const { return shape_.w; }
  Shape4 shape() const { return shape_; }
  int64_t size() const { return static_cast<int64_t>(data_.size()); }
  bool empty() const { return data_.empty(); }

  float* data() { return data_.data(); }
  const float* data() const { return data_.data(); }
  std::span<float> flat() { return {data_.data(), data_.size()}; }
  std::span<const float> flat() const { return {data_.data(), data_.size()}; }

  // per-batch-item contiguous block
  int64_t item_size() const { return static_cast<int64_t>(shape_.c) * shape_.h * shape_.w; }
  float* item(int i) { return data_.data() + i * item_size(); }
  const float* item(int i) const { return data_.data() + i * item_size(); }

  float& at(int n, int c, int y, int x) {
    return data_[((static_cast<int64_t>(n) * shape_.c + c) * shape_.h + y) * shape_.w + x];
  }
  float at(int n, int c, int y, int x) const {
    return data_[((static_cast<int64_t>(n) * shape_.c + c) * shape_.h + y) * shape_.w + x];
  }

  void fill(float v);
  void zero() { fill(0.0f); }

 private:
  Shape4 shape_;
  std::vector<float> data_;
};

Tensor4 zeros_like(const Tensor4& t);

// throws dimension_error naming `what` when shapes differ
void require_same_shape(const Tensor4& a, const Tensor4& b, const char* what);

// throws validation_error naming `what` on NaN/Inf entries
void require_finite(const Tensor4& t, const std::string& what);

bool all_finite(const Tensor4& t);

// Dense class-index map (n, h, w); entries in [0, num_classes) or ignore.
struct LabelMap {
  int n = 0, h = 0, w = 0;
  std::vector<int32_t> data;

  LabelMap() = default;
  LabelMap(int n_, int h_, int w_) : n(n_), h(h_), w(w_), data(static_cast<size_t>(n_) * h_ * w_, 0) {}
  int64_t size() const { return static_cast<int64_t>(n) * h * w; }
  int32_t& at(int i, int y, int x) { return data[(static_cast<int64_t>(i) * h + y) * w + x]; }
  int32_t at(int i, int y, int x) const { return data[(static_cast<int64_t>(i) * h + y) * w + x]; }
};

// Geometry of a (possibly dilated / strided) 2-d convolution.
struct ConvSpec {
  int kernel = 3;
  int in_channels = 0;
  int out_channels = 0;
  int stride = 1;
  int padding = 0;
  int dilation = 1;

  // floor((in + 2p - r*(k-1) - 1)/s) + 1; throws dimension_error if < 1
  int out_size(int in) const;
  // weights must be (out_channels, in_channels, kernel, kernel)
  void check_weights(const Tensor4& weights) const;
  void validate() const;  // structural checks (k >= 1 odd, s/r >= 1, p >= 0)
};

}  // namespace spikeseg
