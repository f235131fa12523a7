#pragma once

// Test-side reference implementations, independent of the library's compute
// paths: plain scalar loops in double precision. Used to freeze expected
// values and as the target of finite-difference gradient checks.

#include <string>
#include <vector>

#include "spikeseg/network.hpp"
#include "spikeseg/tensor.hpp"
#include "spikeseg/training.hpp"

namespace oracle {

using spikeseg::ConvSpec;
using spikeseg::LabelMap;
using spikeseg::ModelParams;
using spikeseg::NetworkSpec;
using spikeseg::Tensor4;

// dense rank-4 double buffer
struct DT {
  int n = 0, c = 0, h = 0, w = 0;
  std::vector<double> v;

  DT() = default;
  DT(int n_, int c_, int h_, int w_)
      : n(n_), c(c_), h(h_), w(w_), v(static_cast<size_t>(n_) * c_ * h_ * w_, 0.0) {}
  double& at(int i, int ci, int y, int x) {
    return v[((static_cast<size_t>(i) * c + ci) * h + y) * w + x];
  }
  double at(int i, int ci, int y, int x) const {
    return v[((static_cast<size_t>(i) * c + ci) * h + y) * w + x];
  }
};

DT from_tensor(const Tensor4& t);
Tensor4 to_tensor(const DT& d);

DT conv2d(const DT& in, const DT& w, const ConvSpec& spec);
// direct scatter definition; weights (C_in, C_out, k, k)
DT transpose_conv(const DT& in, const DT& w, const ConvSpec& spec);
DT avg_pool2(const DT& in);
DT bilinear(const DT& in, int oh, int ow);

// Relaxed-mode forward loss (double), mirroring the engine semantics:
// batch-statistic BNTT, quadratic-spline neuron with smooth reset gate,
// non-leaky accumulator, optional bilinear head, mean softmax cross-entropy.
double relaxed_loss(const NetworkSpec& spec, const ModelParams& params,
                    const std::vector<Tensor4>& frames, const LabelMap& labels,
                    int ignore_index);

// ANN forward loss (double): batch-statistic BN with gamma/beta, ReLU.
double ann_loss(const NetworkSpec& spec, const ModelParams& params, const Tensor4& image,
                const LabelMap& labels, int ignore_index);

// Flat views of every learnable parameter, aligned between params and grads.
struct ParamView {
  std::string name;
  float* value = nullptr;
  const float* grad = nullptr;
};
std::vector<ParamView> param_views(const NetworkSpec& spec, ModelParams& params,
                                   const spikeseg::GradientMap& grads);

struct GradCheckReport {
  double max_rel_err = 0.0;
  std::string worst_param;
  int params_checked = 0;
};

// Central finite differences of the double-precision oracle loss against the
// library's analytic BPTT gradients. Relative error is per parameter tensor:
// max|analytic - fd| / max(max|fd|, 1e-6).
GradCheckReport gradcheck_relaxed(const NetworkSpec& spec, spikeseg::ModelParams& params,
                                  const std::vector<Tensor4>& frames, const LabelMap& labels,
                                  int ignore_index, double eps);

GradCheckReport gradcheck_ann(const NetworkSpec& spec, spikeseg::ModelParams& params,
                              const Tensor4& image, const LabelMap& labels, int ignore_index,
                              double eps);

}  // namespace oracle
