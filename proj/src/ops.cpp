#include "spikeseg/ops.hpp"

#include <cblas.h>

#include <algorithm>
#include <cstring>
#include <vector>

#include "spikeseg/thread_pool.hpp"

extern "C" void openblas_set_num_threads(int);

namespace spikeseg {

namespace {

// BLAS stays single-threaded; parallelism lives at the batch-item level where
// work items are independent and reductions have a fixed order.
struct BlasInit {
  BlasInit() { openblas_set_num_threads(1); }
} blas_init;

thread_local std::vector<float> tl_scratch;

float* scratch(int64_t size) {
  if (static_cast<int64_t>(tl_scratch.size()) < size) tl_scratch.resize(size);
  return tl_scratch.data();
}

bool is_pointwise(const ConvSpec& s) {
  return s.kernel == 1 && s.stride == 1 && s.padding == 0 && s.dilation == 1;
}

// col is (C*k*k) x (OH*OW), row-major
void im2col(const float* in, int C, int H, int W, const ConvSpec& s, int OH, int OW, float* col) {
  const int k = s.kernel;
  const int64_t o2 = static_cast<int64_t>(OH) * OW;
  for (int ci = 0; ci < C; ci++) {
    const float* plane = in + static_cast<int64_t>(ci) * H * W;
    for (int ky = 0; ky < k; ky++) {
      for (int kx = 0; kx < k; kx++) {
        float* row = col + ((static_cast<int64_t>(ci) * k + ky) * k + kx) * o2;
        for (int oy = 0; oy < OH; oy++) {
          const int y = oy * s.stride - s.padding + ky * s.dilation;
          float* dst = row + static_cast<int64_t>(oy) * OW;
          if (y < 0 || y >= H) {
            std::memset(dst, 0, sizeof(float) * OW);
            continue;
          }
          const float* src = plane + static_cast<int64_t>(y) * W;
          for (int ox = 0; ox < OW; ox++) {
            const int x = ox * s.stride - s.padding + kx * s.dilation;
            dst[ox] = (x < 0 || x >= W) ? 0.0f : src[x];
          }
        }
      }
    }
  }
}

// scatter-add transpose of im2col
void col2im(const float* col, int C, int H, int W, const ConvSpec& s, int OH, int OW, float* out) {
  const int k = s.kernel;
  const int64_t o2 = static_cast<int64_t>(OH) * OW;
  for (int ci = 0; ci < C; ci++) {
    float* plane = out + static_cast<int64_t>(ci) * H * W;
    for (int ky = 0; ky < k; ky++) {
      for (int kx = 0; kx < k; kx++) {
        const float* row = col + ((static_cast<int64_t>(ci) * k + ky) * k + kx) * o2;
        for (int oy = 0; oy < OH; oy++) {
          const int y = oy * s.stride - s.padding + ky * s.dilation;
          if (y < 0 || y >= H) continue;
          float* dst = plane + static_cast<int64_t>(y) * W;
          const float* src = row + static_cast<int64_t>(oy) * OW;
          for (int ox = 0; ox < OW; ox++) {
            const int x = ox * s.stride - s.padding + kx * s.dilation;
            if (x >= 0 && x < W) dst[x] += src[ox];
          }
        }
      }
    }
  }
}

void check_conv_args(const Tensor4& input, const Tensor4& weights, const ConvSpec& spec) {
  spec.validate();
  spec.check_weights(weights);
  if (input.c() != spec.in_channels)
    throw dimension_error("conv: input channel axis is " + std::to_string(input.c()) +
                          ", spec says " + std::to_string(spec.in_channels));
}

}  // namespace

Tensor4 conv2d_forward(const Tensor4& input, const Tensor4& weights, const ConvSpec& spec) {
  check_conv_args(input, weights, spec);
  const int oh = spec.out_size(input.h());
  const int ow = spec.out_size(input.w());
  Tensor4 out(input.n(), spec.out_channels, oh, ow);
  const int64_t o2 = static_cast<int64_t>(oh) * ow;
  const int64_t kdim = static_cast<int64_t>(spec.in_channels) * spec.kernel * spec.kernel;
  const bool pointwise = is_pointwise(spec);
  parallel_for(input.n(), [&](int64_t i) {
    const float* col;
    if (pointwise) {
      col = input.item(static_cast<int>(i));
    } else {
      float* buf = scratch(kdim * o2);
      im2col(input.item(static_cast<int>(i)), input.c(), input.h(), input.w(), spec, oh, ow, buf);
      col = buf;
    }
    cblas_sgemm(CblasRowMajor, CblasNoTrans, CblasNoTrans, spec.out_channels,
                static_cast<int>(o2), static_cast<int>(kdim), 1.0f, weights.data(),
                static_cast<int>(kdim), col, static_cast<int>(o2), 0.0f,
                out.item(static_cast<int>(i)), static_cast<int>(o2));
  });
  return out;
}

Tensor4 conv2d_backward_input(const Tensor4& weights, const Tensor4& grad_out,
                              const ConvSpec& spec, int in_h, int in_w) {
  spec.validate();
  spec.check_weights(weights);
  const int oh = spec.out_size(in_h);
  const int ow = spec.out_size(in_w);
  if (grad_out.c() != spec.out_channels || grad_out.h() != oh || grad_out.w() != ow)
    throw dimension_error("conv backward: grad_out shape " + grad_out.shape().str() +
                          " does not match forward output (channels " +
                          std::to_string(spec.out_channels) + ", " + std::to_string(oh) +
                          "x" + std::to_string(ow) + ")");
  Tensor4 grad_in(grad_out.n(), spec.in_channels, in_h, in_w);
  const int64_t o2 = static_cast<int64_t>(oh) * ow;
  const int64_t kdim = static_cast<int64_t>(spec.in_channels) * spec.kernel * spec.kernel;
  const bool pointwise = is_pointwise(spec);
  parallel_for(grad_out.n(), [&](int64_t i) {
    float* dst = grad_in.item(static_cast<int>(i));
    if (pointwise) {
      cblas_sgemm(CblasRowMajor, CblasTrans, CblasNoTrans, spec.in_channels,
                  static_cast<int>(o2), spec.out_channels, 1.0f, weights.data(),
                  static_cast<int>(kdim), grad_out.item(static_cast<int>(i)),
                  static_cast<int>(o2), 0.0f, dst, static_cast<int>(o2));
      return;
    }
    float* col = scratch(kdim * o2);
    cblas_sgemm(CblasRowMajor, CblasTrans, CblasNoTrans, static_cast<int>(kdim),
                static_cast<int>(o2), spec.out_channels, 1.0f, weights.data(),
                static_cast<int>(kdim), grad_out.item(static_cast<int>(i)),
                static_cast<int>(o2), 0.0f, col, static_cast<int>(o2));
    col2im(col, spec.in_channels, in_h, in_w, spec, oh, ow, dst);
  });
  return grad_in;
}

void conv2d_backward_weights_accum(const Tensor4& input, const Tensor4& grad_out,
                                   const ConvSpec& spec, Tensor4& grad_weights) {
  check_conv_args(input, grad_weights, spec);
  const int oh = spec.out_size(input.h());
  const int ow = spec.out_size(input.w());
  if (grad_out.c() != spec.out_channels || grad_out.h() != oh || grad_out.w() != ow ||
      grad_out.n() != input.n())
    throw dimension_error("conv backward: grad_out shape " + grad_out.shape().str() +
                          " does not match forward output");
  const int64_t o2 = static_cast<int64_t>(oh) * ow;
  const int64_t kdim = static_cast<int64_t>(spec.in_channels) * spec.kernel * spec.kernel;
  const int n = input.n();
  const bool pointwise = is_pointwise(spec);

  // Materialize all column buffers, then split output-channel rows across
  // workers; each row block sums items in ascending order (deterministic).
  std::vector<float> cols;
  if (!pointwise) {
    cols.resize(static_cast<size_t>(n) * kdim * o2);
    parallel_for(n, [&](int64_t i) {
      im2col(input.item(static_cast<int>(i)), input.c(), input.h(), input.w(), spec, oh, ow,
             cols.data() + i * kdim * o2);
    });
  }
  const int workers = ThreadPool::instance().worker_count();
  const int blocks = std::min(workers, spec.out_channels);
  parallel_for(blocks, [&](int64_t b) {
    const int r0 = static_cast<int>(b * spec.out_channels / blocks);
    const int r1 = static_cast<int>((b + 1) * spec.out_channels / blocks);
    if (r1 == r0) return;
    for (int i = 0; i < n; i++) {
      const float* col = pointwise ? input.item(i) : cols.data() + static_cast<int64_t>(i) * kdim * o2;
      cblas_sgemm(CblasRowMajor, CblasNoTrans, CblasTrans, r1 - r0, static_cast<int>(kdim),
                  static_cast<int>(o2), 1.0f,
                  grad_out.item(i) + static_cast<int64_t>(r0) * o2, static_cast<int>(o2),
                  col, static_cast<int>(o2), 1.0f,
                  grad_weights.data() + static_cast<int64_t>(r0) * kdim, static_cast<int>(kdim));
    }
  });
}

ConvGrads conv2d_backward(const Tensor4& input, const Tensor4& weights,
                          const Tensor4& grad_out, const ConvSpec& spec) {
  ConvGrads g;
  g.input = conv2d_backward_input(weights, grad_out, spec, input.h(), input.w());
  g.weights = zeros_like(weights);
  conv2d_backward_weights_accum(input, grad_out, spec, g.weights);
  return g;
}

// --- transposed convolution -------------------------------------------------
//
// Implemented through the equivalent forward convolution E running in the
// opposite direction (big -> small). With stride 2 and k = 2p + 2 the output
// extent is exactly twice the input extent.

void check_transpose_spec(const ConvSpec& spec) {
  if (spec.stride != 2 || spec.kernel != 2 * spec.padding + 2)
    throw config_error("transpose conv: configuration must double spatial dims "
                       "(stride 2, kernel = 2*padding + 2), got k=" +
                       std::to_string(spec.kernel) + " s=" + std::to_string(spec.stride) +
                       " p=" + std::to_string(spec.padding));
  if (spec.dilation != 1) throw config_error("transpose conv: dilation unsupported");
  if (spec.in_channels < 1 || spec.out_channels < 1)
    throw config_error("transpose conv: channel counts must be >= 1");
}

namespace {

ConvSpec equivalent_conv(const ConvSpec& t) {
  ConvSpec e;
  e.kernel = t.kernel;
  e.stride = t.stride;
  e.padding = t.padding;
  e.dilation = 1;
  e.in_channels = t.out_channels;   // E consumes the tconv output side
  e.out_channels = t.in_channels;
  return e;
}

void check_tconv_weights(const Tensor4& w, const ConvSpec& t) {
  if (w.n() != t.in_channels || w.c() != t.out_channels || w.h() != t.kernel || w.w() != t.kernel)
    throw dimension_error("transpose conv: weights shape " + w.shape().str() +
                          " does not match (in=" + std::to_string(t.in_channels) +
                          ", out=" + std::to_string(t.out_channels) +
                          ", k=" + std::to_string(t.kernel) + ")");
}

}  // namespace

Tensor4 transpose_conv_forward(const Tensor4& input, const Tensor4& weights, const ConvSpec& spec) {
  check_transpose_spec(spec);
  check_tconv_weights(weights, spec);
  if (input.c() != spec.in_channels)
    throw dimension_error("transpose conv: input channel axis is " + std::to_string(input.c()) +
                          ", spec says " + std::to_string(spec.in_channels));
  const ConvSpec e = equivalent_conv(spec);
  const int out_h = 2 * input.h();
  const int out_w = 2 * input.w();
  Tensor4 out(input.n(), spec.out_channels, out_h, out_w);
  const int64_t o2 = static_cast<int64_t>(input.h()) * input.w();
  const int64_t kdim = static_cast<int64_t>(e.in_channels) * e.kernel * e.kernel;
  parallel_for(input.n(), [&](int64_t i) {
    float* col = scratch(kdim * o2);
    // input plays E's grad_out role: spread it through E's kernel taps
    cblas_sgemm(CblasRowMajor, CblasTrans, CblasNoTrans, static_cast<int>(kdim),
                static_cast<int>(o2), e.out_channels, 1.0f, weights.data(),
                static_cast<int>(kdim), input.item(static_cast<int>(i)),
                static_cast<int>(o2), 0.0f, col, static_cast<int>(o2));
    col2im(col, e.in_channels, out_h, out_w, e, input.h(), input.w(),
           out.item(static_cast<int>(i)));
  });
  return out;
}

Tensor4 transpose_conv_backward_input(const Tensor4& weights, const Tensor4& grad_out,
                                      const ConvSpec& spec) {
  check_transpose_spec(spec);
  check_tconv_weights(weights, spec);
  if (grad_out.c() != spec.out_channels || grad_out.h() % 2 != 0 || grad_out.w() % 2 != 0)
    throw dimension_error("transpose conv backward: grad_out shape " + grad_out.shape().str() +
                          " invalid for out_channels " + std::to_string(spec.out_channels));
  const ConvSpec e = equivalent_conv(spec);
  const int in_h = grad_out.h() / 2;
  const int in_w = grad_out.w() / 2;
  Tensor4 grad_in(grad_out.n(), spec.in_channels, in_h, in_w);
  const int64_t o2 = static_cast<int64_t>(in_h) * in_w;
  const int64_t kdim = static_cast<int64_t>(e.in_channels) * e.kernel * e.kernel;
  parallel_for(grad_out.n(), [&](int64_t i) {
    float* col = scratch(kdim * o2);
    im2col(grad_out.item(static_cast<int>(i)), grad_out.c(), grad_out.h(), grad_out.w(), e,
           in_h, in_w, col);
    cblas_sgemm(CblasRowMajor, CblasNoTrans, CblasNoTrans, e.out_channels,
                static_cast<int>(o2), static_cast<int>(kdim), 1.0f, weights.data(),
                static_cast<int>(kdim), col, static_cast<int>(o2), 0.0f,
                grad_in.item(static_cast<int>(i)), static_cast<int>(o2));
  });
  return grad_in;
}

void transpose_conv_backward_weights_accum(const Tensor4& input, const Tensor4& grad_out,
                                           const ConvSpec& spec, Tensor4& grad_weights) {
  check_transpose_spec(spec);
  check_tconv_weights(grad_weights, spec);
  if (grad_out.n() != input.n() || grad_out.c() != spec.out_channels ||
      grad_out.h() != 2 * input.h() || grad_out.w() != 2 * input.w())
    throw dimension_error("transpose conv backward: grad_out shape " + grad_out.shape().str() +
                          " does not match forward output");
  const ConvSpec e = equivalent_conv(spec);
  const int n = input.n();
  const int64_t o2 = static_cast<int64_t>(input.h()) * input.w();
  const int64_t kdim = static_cast<int64_t>(e.in_channels) * e.kernel * e.kernel;
  std::vector<float> cols(static_cast<size_t>(n) * kdim * o2);
  parallel_for(n, [&](int64_t i) {
    im2col(grad_out.item(static_cast<int>(i)), grad_out.c(), grad_out.h(), grad_out.w(), e,
           input.h(), input.w(), cols.data() + i * kdim * o2);
  });
  const int workers = ThreadPool::instance().worker_count();
  const int blocks = std::min(workers, e.out_channels);
  parallel_for(blocks, [&](int64_t b) {
    const int r0 = static_cast<int>(b * e.out_channels / blocks);
    const int r1 = static_cast<int>((b + 1) * e.out_channels / blocks);
    if (r1 == r0) return;
    for (int i = 0; i < n; i++) {
      cblas_sgemm(CblasRowMajor, CblasNoTrans, CblasTrans, r1 - r0, static_cast<int>(kdim),
                  static_cast<int>(o2), 1.0f,
                  input.item(i) + static_cast<int64_t>(r0) * o2, static_cast<int>(o2),
                  cols.data() + static_cast<int64_t>(i) * kdim * o2, static_cast<int>(o2),
                  1.0f, grad_weights.data() + static_cast<int64_t>(r0) * kdim,
                  static_cast<int>(kdim));
    }
  });
}

ConvGrads transpose_conv_backward(const Tensor4& input, const Tensor4& weights,
                                  const Tensor4& grad_out, const ConvSpec& spec) {
  ConvGrads g;
  g.input = transpose_conv_backward_input(weights, grad_out, spec);
  g.weights = zeros_like(weights);
  transpose_conv_backward_weights_accum(input, grad_out, spec, g.weights);
  return g;
}

// --- pooling / interpolation -------------------------------------------------

Tensor4 avg_pool2_forward(const Tensor4& input) {
  if (input.h() % 2 != 0 || input.w() % 2 != 0)
    throw dimension_error("avg_pool2: spatial axes must be even, got " + input.shape().str());
  Tensor4 out(input.n(), input.c(), input.h() / 2, input.w() / 2);
  const int64_t planes = static_cast<int64_t>(input.n()) * input.c();
  const int H = input.h(), W = input.w();
  parallel_for(planes, [&](int64_t p) {
    const float* src = input.data() + p * H * W;
    float* dst = out.data() + p * (H / 2) * (W / 2);
    for (int y = 0; y < H / 2; y++)
      for (int x = 0; x < W / 2; x++)
        dst[y * (W / 2) + x] = 0.25f * (src[(2 * y) * W + 2 * x] + src[(2 * y) * W + 2 * x + 1] +
                                        src[(2 * y + 1) * W + 2 * x] + src[(2 * y + 1) * W + 2 * x + 1]);
  });
  return out;
}

Tensor4 avg_pool2_backward(const Tensor4& grad_out) {
  Tensor4 grad_in(grad_out.n(), grad_out.c(), grad_out.h() * 2, grad_out.w() * 2);
  const int64_t planes = static_cast<int64_t>(grad_out.n()) * grad_out.c();
  const int OH = grad_out.h(), OW = grad_out.w();
  parallel_for(planes, [&](int64_t p) {
    const float* src = grad_out.data() + p * OH * OW;
    float* dst = grad_in.data() + p * (OH * 2) * (OW * 2);
    for (int y = 0; y < OH; y++)
      for (int x = 0; x < OW; x++) {
        const float g = 0.25f * src[y * OW + x];
        dst[(2 * y) * (OW * 2) + 2 * x] = g;
        dst[(2 * y) * (OW * 2) + 2 * x + 1] = g;
        dst[(2 * y + 1) * (OW * 2) + 2 * x] = g;
        dst[(2 * y + 1) * (OW * 2) + 2 * x + 1] = g;
      }
  });
  return grad_in;
}

namespace {

struct Lerp {
  int lo, hi;
  float w_hi;  // weight of hi sample; lo gets 1 - w_hi
};

// align-corners sample positions
std::vector<Lerp> lerp_axis(int in, int out) {
  std::vector<Lerp> v(out);
  const double scale = out > 1 ? static_cast<double>(in - 1) / (out - 1) : 0.0;
  for (int o = 0; o < out; o++) {
    const double pos = o * scale;
    int lo = static_cast<int>(pos);
    if (lo > in - 1) lo = in - 1;
    const int hi = std::min(lo + 1, in - 1);
    v[o] = {lo, hi, static_cast<float>(pos - lo)};
  }
  return v;
}

}  // namespace

Tensor4 bilinear_upsample(const Tensor4& input, int out_h, int out_w) {
  if (out_h < input.h() || out_w < input.w())
    throw config_error("bilinear_upsample: shrinking request " + std::to_string(out_h) + "x" +
                       std::to_string(out_w) + " from " + input.shape().str());
  if (out_h == input.h() && out_w == input.w()) return input;
  Tensor4 out(input.n(), input.c(), out_h, out_w);
  const auto ys = lerp_axis(input.h(), out_h);
  const auto xs = lerp_axis(input.w(), out_w);
  const int64_t planes = static_cast<int64_t>(input.n()) * input.c();
  const int H = input.h(), W = input.w();
  parallel_for(planes, [&](int64_t p) {
    const float* src = input.data() + p * H * W;
    float* dst = out.data() + p * static_cast<int64_t>(out_h) * out_w;
    for (int oy = 0; oy < out_h; oy++) {
      const auto& ly = ys[oy];
      for (int ox = 0; ox < out_w; ox++) {
        const auto& lx = xs[ox];
        const float top = src[ly.lo * W + lx.lo] * (1.0f - lx.w_hi) + src[ly.lo * W + lx.hi] * lx.w_hi;
        const float bot = src[ly.hi * W + lx.lo] * (1.0f - lx.w_hi) + src[ly.hi * W + lx.hi] * lx.w_hi;
        dst[static_cast<int64_t>(oy) * out_w + ox] = top * (1.0f - ly.w_hi) + bot * ly.w_hi;
      }
    }
  });
  return out;
}

Tensor4 bilinear_upsample_backward(const Tensor4& grad_out, int in_h, int in_w) {
  if (grad_out.h() < in_h || grad_out.w() < in_w)
    throw config_error("bilinear_upsample_backward: grad_out smaller than input dims");
  if (grad_out.h() == in_h && grad_out.w() == in_w) return grad_out;
  Tensor4 grad_in(grad_out.n(), grad_out.c(), in_h, in_w);
  const auto ys = lerp_axis(in_h, grad_out.h());
  const auto xs = lerp_axis(in_w, grad_out.w());
  const int64_t planes = static_cast<int64_t>(grad_out.n()) * grad_out.c();
  const int OH = grad_out.h(), OW = grad_out.w();
  parallel_for(planes, [&](int64_t p) {
    const float* src = grad_out.data() + p * static_cast<int64_t>(OH) * OW;
    float* dst = grad_in.data() + p * static_cast<int64_t>(in_h) * in_w;
    for (int oy = 0; oy < OH; oy++) {
      const auto& ly = ys[oy];
      for (int ox = 0; ox < OW; ox++) {
        const auto& lx = xs[ox];
        const float g = src[static_cast<int64_t>(oy) * OW + ox];
        dst[ly.lo * in_w + lx.lo] += g * (1.0f - ly.w_hi) * (1.0f - lx.w_hi);
        dst[ly.lo * in_w + lx.hi] += g * (1.0f - ly.w_hi) * lx.w_hi;
        dst[ly.hi * in_w + lx.lo] += g * ly.w_hi * (1.0f - lx.w_hi);
        dst[ly.hi * in_w + lx.hi] += g * ly.w_hi * lx.w_hi;
      }
    }
  });
  return grad_in;
}

void add_channel_bias(Tensor4& t, std::span<const float> bias) {
  if (static_cast<int>(bias.size()) != t.c())
    throw dimension_error("add_channel_bias: bias length " + std::to_string(bias.size()) +
                          " vs channel axis " + std::to_string(t.c()));
  const int64_t hw = static_cast<int64_t>(t.h()) * t.w();
  for (int i = 0; i < t.n(); i++)
    for (int ci = 0; ci < t.c(); ci++) {
      float* p = t.item(i) + ci * hw;
      const float b = bias[ci];
      for (int64_t j = 0; j < hw; j++) p[j] += b;
    }
}

}  // namespace spikeseg
