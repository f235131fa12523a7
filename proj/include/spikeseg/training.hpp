#pragma once

#include <functional>
#include <string>
#include <vector>

#include "spikeseg/dataset.hpp"
#include "spikeseg/network.hpp"

namespace spikeseg {

struct LossValue {
  double loss = 0.0;        // mean over non-ignored pixels
  Tensor4 per_pixel;        // (n, 1, h, w); zero at ignored pixels
  int64_t normalization = 0;  // count of non-ignored pixels
};

// Softmax over the channel axis per pixel; negative log-likelihood averaged
// over non-ignored pixels. Labels >= num_classes raise validation_error.
LossValue spatial_cross_entropy(const Tensor4& logits, const LabelMap& labels,
                                int ignore_index = 255);
Tensor4 spatial_cross_entropy_backward(const Tensor4& logits, const LabelMap& labels,
                                       int ignore_index = 255);

// One gradient tensor per parameter, aligned with NetworkSpec::layers.
struct GradientMap {
  std::vector<Tensor4> weights;
  std::vector<std::vector<float>> bntt_gamma;  // [layer][t*C]
  std::vector<std::vector<float>> bn_gamma;    // [layer][C]
  std::vector<std::vector<float>> bn_beta;     // [layer][C]
};

// Surrogate-gradient backpropagation through time over a cached stepped
// forward (spiking or relaxed). Hidden layers accumulate, per step, the
// spatial path (through the surrogate spike derivative) and the temporal path
// (through the soft-reset membrane carry); the output layer receives the
// exact softmax-CE gradient through the accumulated membrane.
GradientMap bptt_backward(const NetworkSpec& spec, const ModelParams& params,
                          const ForwardCache& cache, const LabelMap& labels,
                          int ignore_index = 255, LossValue* loss_out = nullptr);

// Standard single-pass backprop for ANN mode (ReLU + batch norm).
GradientMap ann_backward(const NetworkSpec& spec, const ModelParams& params,
                         const ForwardCache& cache, const LabelMap& labels,
                         int ignore_index = 255, LossValue* loss_out = nullptr);

struct AdamConfig {
  float lr = 3e-3f;
  float beta1 = 0.9f;
  float beta2 = 0.999f;
  float eps = 1e-8f;
  float decay_factor = 10.0f;       // lr divides by this at the milestone
  float milestone_fraction = 0.5f;  // of the total epoch budget
};

// base lr for epochs 1..milestone, decayed after (milestone = floor(total*fraction))
float scheduled_lr(const AdamConfig& cfg, int epoch, int total_epochs);

struct OptimState {
  AdamConfig cfg;
  int64_t step = 0;
  bool initialized = false;
  std::vector<Tensor4> m_w, v_w;
  std::vector<std::vector<float>> m_bntt, v_bntt;
  std::vector<std::vector<float>> m_bn_g, v_bn_g, m_bn_b, v_bn_b;
};

// Bias-corrected Adam update. Non-finite gradients abort with a
// validation_error naming the layer.
void adam_step(const NetworkSpec& spec, ModelParams& params, const GradientMap& grads,
               OptimState& state, float lr);

// Scales all gradients so their global l2 norm is at most max_norm (no-op if
// max_norm <= 0 or the norm is already smaller).
void clip_grad_norm(GradientMap& grads, float max_norm);

enum class EncoderKind { poisson, dvs_frames };

struct TrainConfig {
  int epochs = 60;
  int batch = 16;
  int timesteps = 20;
  uint64_t seed = 1;
  EncoderKind encoder = EncoderKind::poisson;
  int ignore_index = 255;
  float grad_clip = 0.0f;
  AdamConfig adam;
  float stop_miou = 0.0f;  // > 0: stop once the eval split reaches it
};

struct EpochRow {
  int epoch = 0;
  std::string split;
  double loss = 0.0;
  double miou = 0.0;
  double lr = 0.0;
  long wall_ms = -1;  // < 0: not recorded
};

struct TrainResult {
  std::vector<EpochRow> log;
  double best_miou = 0.0;
  int best_epoch = 0;
  int epochs_run = 0;
};

using RowSink = std::function<void(const EpochRow&)>;
using BestSink = std::function<void(int epoch, double miou, const ModelParams&)>;

// Epoch loop: per batch encode -> run T steps -> loss on the accumulated
// membrane -> backprop -> Adam update; per epoch evaluates the eval split.
// Fully deterministic given (seed, config, data).
TrainResult train(const NetworkSpec& spec, ModelParams& params, const Dataset& train_set,
                  const Dataset& eval_set, const TrainConfig& config,
                  const RowSink& row_sink = {}, const BestSink& best_sink = {},
                  bool record_wall = false);

// Assembles the step-t input frame batch for event-based samples: sample
// frames feed steps in order, repeating the last frame when the sequence is
// shorter than T.
SpikeTrain stack_event_frames(const Dataset& set, const std::vector<int>& indices, int steps);

}  // namespace spikeseg
