#pragma once

#include <string>
#include <vector>

#include "spikeseg/metrics.hpp"
#include "spikeseg/network.hpp"

namespace spikeseg {

enum class BalanceMode { layerwise, channelwise };

std::string to_string(BalanceMode m);
BalanceMode balance_mode_from_string(const std::string& s);

// Threshold-balancing profile from post-ReLU activation percentiles with
// sequential layer-to-layer normalization: each recorded scale is relative to
// the already-normalized input of its layer, so installing it as the firing
// threshold maps activations onto firing rates.
struct BalanceProfile {
  BalanceMode mode = BalanceMode::layerwise;
  float percentile = 99.7f;
  int64_t sample_count = 0;              // calibration images seen
  std::vector<std::vector<float>> scales;  // per layer: empty, size 1, or C_out
  std::vector<float> input_scale;          // per layer: divisor for folded biases
  std::vector<std::string> warnings;       // dead-layer notices
};

// Runs the trained ANN over calibration data (eval mode) and records the
// requested percentile of post-ReLU activations per layer or per channel.
// Chain architectures only (no skip or transposed-conv layers).
BalanceProfile calibrate(const NetworkSpec& spec, ModelParams& ann, const Dataset& calib,
                         BalanceMode mode, float percentile, int batch = 8);

// Folds eval-mode batch norm into kernels and per-channel biases.
ModelParams fold_batchnorm(const NetworkSpec& spec, const ModelParams& ann);

// Copies (folded) kernels bit-exactly, installs profile scales as firing
// thresholds, scales biases by the propagated input compensation, and returns
// an IF model (leak 1, soft reset) runnable under forward_spiking.
ModelParams convert(const NetworkSpec& spec, const ModelParams& ann,
                    const BalanceProfile& profile);

struct SweepPoint {
  int timesteps = 0;
  double miou = 0.0;
};

// Evaluates a converted model at each T with rate-coded inputs.
std::vector<SweepPoint> sweep_timesteps(const NetworkSpec& spec, ModelParams& converted,
                                        const Dataset& eval_data,
                                        const std::vector<int>& steps_list,
                                        const EvalOptions& base_options);

std::string sweep_csv(const std::vector<SweepPoint>& curve);

}  // namespace spikeseg
