#include "spikeseg/neuron.hpp"

#include <cmath>

namespace spikeseg {

namespace {

void check_step_args(const LifLayerState& state, const Tensor4& input) {
  require_same_shape(state.membrane, input, "lif_step");
  if (!state.channel_thresholds.empty() &&
      static_cast<int>(state.channel_thresholds.size()) != input.c())
    throw dimension_error("lif_step: per-channel thresholds length " +
                          std::to_string(state.channel_thresholds.size()) +
                          " vs channel axis " + std::to_string(input.c()));
}

}  // namespace

Tensor4 lif_step(LifLayerState& state, const Tensor4& input_current, Tensor4* prefire) {
  check_step_args(state, input_current);
  Tensor4 spikes(input_current.shape());
  if (prefire && prefire->shape() != input_current.shape()) *prefire = Tensor4(input_current.shape());
  const int64_t hw = static_cast<int64_t>(input_current.h()) * input_current.w();
  const float leak = state.leak;
  for (int i = 0; i < input_current.n(); i++) {
    for (int ci = 0; ci < input_current.c(); ci++) {
      const float theta = state.theta(ci);
      const int64_t off = (static_cast<int64_t>(i) * input_current.c() + ci) * hw;
      float* u = state.membrane.data() + off;
      const float* in = input_current.data() + off;
      float* o = spikes.data() + off;
      float* v_out = prefire ? prefire->data() + off : nullptr;
      for (int64_t j = 0; j < hw; j++) {
        const float v = leak * u[j] + in[j];
        const float s = v > theta ? 1.0f : 0.0f;
        o[j] = s;
        u[j] = v - theta * s;
        if (v_out) v_out[j] = v;
      }
    }
  }
  return spikes;
}

float surrogate_grad(float u, float theta) {
  const float t = 1.0f - std::fabs((u - theta) / theta);
  return t > 0.0f ? t : 0.0f;
}

Tensor4 surrogate_grad(const Tensor4& u, float theta) {
  if (theta <= 0.0f) throw validation_error("surrogate_grad: theta must be > 0");
  Tensor4 g(u.shape());
  const float* src = u.data();
  float* dst = g.data();
  for (int64_t j = 0; j < u.size(); j++) dst[j] = surrogate_grad(src[j], theta);
  return g;
}

float relaxed_activation(float u, float theta) {
  if (u <= 0.0f) return 0.0f;
  if (u >= 2.0f * theta) return theta;
  if (u <= theta) return u * u / (2.0f * theta);
  const float d = 2.0f * theta - u;
  return theta - d * d / (2.0f * theta);
}

Tensor4 relaxed_step(LifLayerState& state, const Tensor4& input_current, Tensor4* prefire) {
  check_step_args(state, input_current);
  Tensor4 act(input_current.shape());
  if (prefire && prefire->shape() != input_current.shape()) *prefire = Tensor4(input_current.shape());
  const int64_t hw = static_cast<int64_t>(input_current.h()) * input_current.w();
  const float leak = state.leak;
  for (int i = 0; i < input_current.n(); i++) {
    for (int ci = 0; ci < input_current.c(); ci++) {
      const float theta = state.theta(ci);
      const int64_t off = (static_cast<int64_t>(i) * input_current.c() + ci) * hw;
      float* u = state.membrane.data() + off;
      const float* in = input_current.data() + off;
      float* o = act.data() + off;
      float* v_out = prefire ? prefire->data() + off : nullptr;
      for (int64_t j = 0; j < hw; j++) {
        const float v = leak * u[j] + in[j];
        const float a = relaxed_activation(v, theta);
        o[j] = a;
        u[j] = v - theta * a;
        if (v_out) v_out[j] = v;
      }
    }
  }
  return act;
}

}  // namespace spikeseg
