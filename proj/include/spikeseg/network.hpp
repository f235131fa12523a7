#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "spikeseg/encoding.hpp"
#include "spikeseg/neuron.hpp"
#include "spikeseg/tensor.hpp"

namespace spikeseg {

enum class LayerKind {
  conv,
  dilated_conv,
  avg_pool,
  transpose_conv,
  skip_conv,       // 1x1-projects an earlier layer's output and adds it to the
                   // incoming current before the neuron
  bilinear_head,   // applied once to the accumulated membrane, not per step
  classifier       // conv with a non-firing accumulator neuron
};

enum class NeuronKind { lif, accumulator, none };
enum class Mode { spiking, ann, relaxed };

std::string to_string(LayerKind k);
std::string to_string(NeuronKind k);
std::string to_string(Mode m);
Mode mode_from_string(const std::string& s);

struct LayerSpec {
  LayerKind kind = LayerKind::conv;
  std::string name;
  ConvSpec conv;            // conv-like layers; transpose_conv uses its own view
  int skip_source = -1;     // skip_conv only: index of the producing layer
  NeuronKind neuron = NeuronKind::none;
  bool normalized = false;  // BNTT (spiking/relaxed) or BN (ann) on the current
  int out_h = 0, out_w = 0; // bilinear_head target dims

  bool has_weights() const {
    return kind != LayerKind::avg_pool && kind != LayerKind::bilinear_head;
  }
};

struct LayerShape {
  int c = 0, h = 0, w = 0;
  int64_t numel() const { return static_cast<int64_t>(c) * h * w; }
};

// Ordered layer graph: a chain with optional skip edges into skip_conv
// merge points. Serializable to a one-layer-per-line text description.
struct NetworkSpec {
  int in_channels = 0, in_h = 0, in_w = 0;
  int num_classes = 0;
  int feature_end = -1;  // last feature-extractor layer; ANN multi-frame
                         // inputs average activations at this boundary
  std::vector<LayerSpec> layers;

  std::vector<LayerShape> trace_shapes() const;  // per-layer output shapes
  void validate() const;
  int accumulator_index() const;
  int bilinear_index() const;
  std::vector<bool> skip_source_mask() const;

  std::string serialize() const;
  static NetworkSpec parse(const std::string& text);
};

// Per-time-step batch normalization state: T independent sets of per-channel
// statistics plus a learnable per-channel scale gamma_t. No additive shift.
struct BnttParams {
  int steps = 0, channels = 0;
  std::vector<float> gamma, running_mean, running_var;  // steps * channels
  float momentum = 0.1f;
  float eps = 1e-5f;

  int64_t idx(int t, int c) const { return static_cast<int64_t>(t) * channels + c; }
  static BnttParams init(int steps, int channels);
};

// Standard batch norm (ANN mode): per-channel gamma/beta + running stats.
struct BnParams {
  int channels = 0;
  std::vector<float> gamma, beta, running_mean, running_var;
  float momentum = 0.1f;
  float eps = 1e-5f;

  static BnParams init(int channels);
};

struct LayerParams {
  Tensor4 weights;                // empty for weightless layers
  std::vector<float> bias;        // per-out-channel constant current (converted models)
  std::optional<BnttParams> bntt; // spiking/relaxed modes
  std::optional<BnParams> bn;     // ann mode
  std::vector<float> thresholds;  // converted models: size 1 or C_out; empty = global
};

struct ModelParams {
  Mode mode = Mode::spiking;
  int timesteps = 20;
  float leak = 0.99f;
  float threshold = 1.0f;
  std::vector<LayerParams> layers;  // aligned with NetworkSpec::layers
};

struct BuildOptions {
  Mode mode = Mode::spiking;
  int timesteps = 20;
  float leak = 0.99f;
  float threshold = 1.0f;
  uint64_t seed = 1;
  int dilation1 = 2, dilation2 = 2;  // rates of the two dilated layers
};

struct BuiltModel {
  NetworkSpec spec;
  ModelParams params;
};

// VGG9-style backbone (64,64 / pool / 128,128 / pool / 256, dilated 256,
// dilated 256) + 3-layer head (1024 conv3x3, 1024 conv1x1, num_classes 1x1
// accumulator) + bilinear head back to the input resolution.
// Input dims must be divisible by 4.
BuiltModel build_spiking_deeplab(int num_classes, int in_channels, int in_h, int in_w,
                                 const BuildOptions& opt = {});

// Encoder with three pools (/8), 1024-channel intermediates, then three
// transpose-conv x2 upsamplings each summed with a 1x1-projected pre-pool
// encoder feature; the final merge accumulates without firing.
// Input dims must be divisible by 8.
BuiltModel build_spiking_fcn(int num_classes, int in_channels, int in_h, int in_w,
                             const BuildOptions& opt = {});

// Fan-in-scaled uniform weight init (bound = sqrt(1/fan_in)) + fresh norm
// state for any valid spec.
ModelParams init_params(const NetworkSpec& spec, const BuildOptions& opt);

// Normalizes by batch statistics at step t (training) or running statistics
// (eval), then scales by gamma_t. Training mode updates the running stats.
Tensor4 bntt_normalize(const Tensor4& current, BnttParams& params, int t, bool training);

struct SpikeTraceEntry {
  std::string layer;
  int64_t spikes = 0;
  int64_t neurons = 0;  // per-image neuron count x images traced
};

struct SpikeTrace {
  int steps = 0;
  std::vector<SpikeTraceEntry> layers;  // one entry per LIF layer, network order
  void merge(const SpikeTrace& other);
};

// Per-step per-layer values retained for backpropagation through time.
struct StepLayerCache {
  Tensor4 out;                 // what downstream consumed at this step
  Tensor4 prefire;             // LIF: pre-fire membrane; ANN: pre-ReLU current
  Tensor4 xhat;                // normalized layers: (x - mean) * inv_std
  std::vector<float> inv_std;  // per channel (training batch stats)
};

struct ForwardCache {
  bool valid = false;
  bool training = false;
  Mode mode = Mode::spiking;
  std::vector<Tensor4> frames;
  std::vector<std::vector<StepLayerCache>> step;  // [t][layer]
  Tensor4 accum;   // classifier membrane after the last step (pre-bilinear)
  Tensor4 logits;
};

// Runs T steps: hidden layers fire via lif_step with BNTT on input currents;
// the classifier integrates currents with no leak and no firing; logits are
// its membrane after the last step (bilinear-upsampled when the spec has a
// head). `trace` collects per-layer spike counts for the profiler.
Tensor4 forward_spiking(const NetworkSpec& spec, ModelParams& params, const SpikeTrain& train,
                        SpikeTrace* trace = nullptr, ForwardCache* cache = nullptr,
                        bool training = false);

// Same unrolled graph built from relaxed_step; used only to verify gradients.
Tensor4 forward_relaxed(const NetworkSpec& spec, ModelParams& params, const SpikeTrain& train,
                        ForwardCache* cache = nullptr, bool training = false);

// Same graph with ReLU activations and standard batch norm. For multi-frame
// inputs the activations at the feature-extractor boundary (and skip sources)
// are averaged over frames before the head runs once.
Tensor4 forward_ann(const NetworkSpec& spec, ModelParams& params,
                    const std::vector<Tensor4>& frames, ForwardCache* cache = nullptr,
                    bool training = false);

}  // namespace spikeseg
