#include "spikeseg/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

namespace spikeseg {

std::string Shape4::str() const {
  std::ostringstream os;
  os << "(" << n << ", " << c << ", " << h << ", " << w << ")";
  return os.str();
}

Tensor4::Tensor4(int n, int c, int h, int w) : shape_{n, c, h, w} {
  if (n < 1 || c < 1 || h < 1 || w < 1)
    throw dimension_error("Tensor4: all dimensions must be >= 1, got " + shape_.str());
  data_.assign(static_cast<size_t>(shape_.numel()), 0.0f);
}

Tensor4 Tensor4::full(int n, int c, int h, int w, float value) {
  Tensor4 t(n, c, h, w);
  t.fill(value);
  return t;
}

void Tensor4::fill(float v) { std::fill(data_.begin(), data_.end(), v); }

Tensor4 zeros_like(const Tensor4& t) { return Tensor4(t.shape()); }

void require_same_shape(const Tensor4& a, const Tensor4& b, const char* what) {
  if (a.shape() == b.shape()) return;
  const char* axis = "batch";
  if (a.n() == b.n()) axis = "channel";
  if (a.n() == b.n() && a.c() == b.c()) axis = "height";
  if (a.n() == b.n() && a.c() == b.c() && a.h() == b.h()) axis = "width";
  throw dimension_error(std::string(what) + ": shape mismatch on " + axis +
                        " axis, " + a.shape().str() + " vs " + b.shape().str());
}

bool all_finite(const Tensor4& t) {
  for (float v : t.flat())
    if (!std::isfinite(v)) return false;
  return true;
}

void require_finite(const Tensor4& t, const std::string& what) {
  if (!all_finite(t)) throw validation_error(what + ": non-finite values");
}

int ConvSpec::out_size(int in) const {
  const int span = dilation * (kernel - 1) + 1;
  const int o = (in + 2 * padding - span) / stride + 1;
  if (in + 2 * padding < span || o < 1)
    throw dimension_error("conv: output size < 1 for input extent " +
                          std::to_string(in) + " (k=" + std::to_string(kernel) +
                          ", p=" + std::to_string(padding) +
                          ", r=" + std::to_string(dilation) +
                          ", s=" + std::to_string(stride) + ")");
  return o;
}

void ConvSpec::validate() const {
  if (kernel < 1 || kernel % 2 == 0)
    throw config_error("conv: kernel must be odd and >= 1, got " + std::to_string(kernel));
  if (stride < 1) throw config_error("conv: stride must be >= 1");
  if (dilation < 1) throw config_error("conv: dilation must be >= 1");
  if (padding < 0) throw config_error("conv: padding must be >= 0");
  if (in_channels < 1 || out_channels < 1)
    throw config_error("conv: channel counts must be >= 1");
}

void ConvSpec::check_weights(const Tensor4& weights) const {
  if (weights.n() != out_channels)
    throw dimension_error("conv: weights out-channel axis is " + std::to_string(weights.n()) +
                          ", spec says " + std::to_string(out_channels));
  if (weights.c() != in_channels)
    throw dimension_error("conv: weights in-channel axis is " + std::to_string(weights.c()) +
                          ", spec says " + std::to_string(in_channels));
  if (weights.h() != kernel || weights.w() != kernel)
    throw dimension_error("conv: weights kernel axes are (" + std::to_string(weights.h()) +
                          ", " + std::to_string(weights.w()) + "), spec says " +
                          std::to_string(kernel));
}

}  // namespace spikeseg
