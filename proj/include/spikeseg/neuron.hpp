#pragma once

#include <vector>

#include "spikeseg/tensor.hpp"

namespace spikeseg {

// Per-layer membrane state. `membrane` holds the post-reset potential carried
// between steps (initialized to zero at the start of every sequence).
// `channel_thresholds`, when non-empty, overrides `threshold` per channel
// (used by converted models with balanced thresholds).
struct LifLayerState {
  Tensor4 membrane;
  float leak = 0.99f;
  float threshold = 1.0f;
  std::vector<float> channel_thresholds;

  float theta(int channel) const {
    return channel_thresholds.empty() ? threshold : channel_thresholds[channel];
  }
};

// One leaky integrate-and-fire step with soft reset:
//   v = leak * membrane + input;  spike = (v > theta);  membrane = v - theta * spike.
// Firing uses strict inequality; ties at exactly theta do not fire.
// Returns binary spikes; optionally exposes the pre-fire potential v.
Tensor4 lif_step(LifLayerState& state, const Tensor4& input_current,
                 Tensor4* prefire = nullptr);

// Piecewise-linear surrogate derivative max{0, 1 - |(u - theta)/theta|}:
// a unit bump supported on (0, 2*theta), peaking at u = theta.
float surrogate_grad(float u, float theta);
Tensor4 surrogate_grad(const Tensor4& u, float theta);

// Continuous ramp whose derivative is exactly the surrogate: a clamped
// quadratic spline rising from 0 at u <= 0 to theta at u >= 2*theta.
float relaxed_activation(float u, float theta);

// Differentiable stand-in for lif_step used only for gradient verification.
// Same membrane update, but the output is relaxed_activation(v) and the reset
// subtracts theta * activation (a smooth gate instead of the binary spike).
Tensor4 relaxed_step(LifLayerState& state, const Tensor4& input_current,
                     Tensor4* prefire = nullptr);

}  // namespace spikeseg
