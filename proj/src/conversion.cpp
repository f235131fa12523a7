#include "spikeseg/conversion.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

namespace spikeseg {

std::string to_string(BalanceMode m) {
  return m == BalanceMode::layerwise ? "layerwise" : "channelwise";
}

BalanceMode balance_mode_from_string(const std::string& s) {
  if (s == "layerwise") return BalanceMode::layerwise;
  if (s == "channelwise") return BalanceMode::channelwise;
  throw config_error("unknown balance mode: " + s);
}

namespace {

void require_chain(const NetworkSpec& spec) {
  for (const auto& ls : spec.layers)
    if (ls.kind == LayerKind::skip_conv || ls.kind == LayerKind::transpose_conv)
      throw config_error("conversion supports chain architectures only (layer " + ls.name + ")");
}

float percentile_value(std::vector<float>& values, float pct) {
  if (values.empty()) return 0.0f;
  const int64_t n = static_cast<int64_t>(values.size());
  int64_t k = static_cast<int64_t>(std::ceil(static_cast<double>(pct) / 100.0 * n)) - 1;
  k = std::clamp<int64_t>(k, 0, n - 1);
  std::nth_element(values.begin(), values.begin() + k, values.end());
  return values[k];
}

}  // namespace

BalanceProfile calibrate(const NetworkSpec& spec, ModelParams& ann, const Dataset& calib,
                         BalanceMode mode, float percentile, int batch) {
  if (ann.mode != Mode::ann) throw mode_error("calibrate: model must be ANN-mode");
  if (!(percentile > 0.0f && percentile <= 100.0f))
    throw validation_error("calibrate: percentile must be in (0, 100]");
  if (calib.samples.empty()) throw config_error("calibrate: empty calibration set");
  if (calib.event_based) throw config_error("calibrate: conversion needs static images");
  spec.validate();
  require_chain(spec);

  const int L = static_cast<int>(spec.layers.size());
  // activation samples per firing layer (and per channel when channel-wise)
  std::vector<std::vector<std::vector<float>>> acts(L);
  const auto shapes = spec.trace_shapes();
  for (int l = 0; l < L; l++)
    if (spec.layers[l].neuron == NeuronKind::lif)
      acts[l].resize(mode == BalanceMode::channelwise ? shapes[l].c : 1);

  BalanceProfile profile;
  profile.mode = mode;
  profile.percentile = percentile;

  for (int start = 0; start < calib.size(); start += batch) {
    const int end = std::min(calib.size(), start + batch);
    Tensor4 images(end - start, calib.channels(), calib.height(), calib.width());
    for (int i = start; i < end; i++) {
      const Tensor4& img = calib.samples[i].image;
      std::copy(img.item(0), img.item(0) + img.item_size(), images.item(i - start));
    }
    ForwardCache cache;
    forward_ann(spec, ann, {images}, &cache, /*training=*/false);
    for (int l = 0; l < L; l++) {
      if (spec.layers[l].neuron != NeuronKind::lif) continue;
      const Tensor4& out = cache.step[0][l].out;  // post-ReLU
      const int64_t hw = static_cast<int64_t>(out.h()) * out.w();
      if (mode == BalanceMode::channelwise) {
        for (int i = 0; i < out.n(); i++)
          for (int c = 0; c < out.c(); c++) {
            const float* p = out.item(i) + c * hw;
            acts[l][c].insert(acts[l][c].end(), p, p + hw);
          }
      } else {
        acts[l][0].insert(acts[l][0].end(), out.flat().begin(), out.flat().end());
      }
    }
    profile.sample_count += end - start;
  }

  profile.scales.resize(L);
  profile.input_scale.assign(L, 1.0f);
  float prev = 1.0f;  // layer-wise percentile of the previous firing layer
  for (int l = 0; l < L; l++) {
    const LayerSpec& ls = spec.layers[l];
    if (!ls.has_weights()) continue;
    profile.input_scale[l] = prev;
    if (ls.neuron != NeuronKind::lif) continue;  // accumulator: bias scaling only
    if (mode == BalanceMode::channelwise) {
      // layer-wise percentile (over all channels) drives the sequential chain
      std::vector<float> all;
      for (auto& ch : acts[l]) all.insert(all.end(), ch.begin(), ch.end());
      float layer_p = percentile_value(all, percentile);
      if (layer_p <= 0.0f) {
        profile.warnings.push_back("layer " + ls.name + ": all-zero activations, scale 1");
        layer_p = prev;  // keeps the chain ratio at 1
      }
      auto& sc = profile.scales[l];
      sc.resize(acts[l].size());
      for (size_t c = 0; c < acts[l].size(); c++) {
        float pc = percentile_value(acts[l][c], percentile);
        sc[c] = pc > 0.0f ? pc / prev : 1.0f;
      }
      prev = layer_p;
    } else {
      float p = percentile_value(acts[l][0], percentile);
      if (p <= 0.0f) {
        profile.warnings.push_back("layer " + ls.name + ": all-zero activations, scale 1");
        profile.scales[l] = {1.0f};
      } else {
        profile.scales[l] = {p / prev};
        prev = p;
      }
    }
  }
  return profile;
}

ModelParams fold_batchnorm(const NetworkSpec& spec, const ModelParams& ann) {
  if (ann.mode != Mode::ann) throw mode_error("fold_batchnorm: model must be ANN-mode");
  ModelParams folded = ann;
  for (size_t l = 0; l < spec.layers.size(); l++) {
    LayerParams& lp = folded.layers[l];
    if (!lp.bn) continue;
    const BnParams& bn = *lp.bn;
    const int cout = lp.weights.n();
    const int64_t per_row = lp.weights.item_size();
    if (lp.bias.empty()) lp.bias.assign(cout, 0.0f);
    for (int co = 0; co < cout; co++) {
      const float sd = std::sqrt(bn.running_var[co] + bn.eps);
      const float scale = bn.gamma[co] / sd;
      float* row = lp.weights.data() + static_cast<int64_t>(co) * per_row;
      for (int64_t j = 0; j < per_row; j++) row[j] *= scale;
      lp.bias[co] = bn.beta[co] + scale * (lp.bias[co] - bn.running_mean[co]);
    }
    lp.bn.reset();
  }
  return folded;
}

ModelParams convert(const NetworkSpec& spec, const ModelParams& ann,
                    const BalanceProfile& profile) {
  if (ann.mode != Mode::ann) throw mode_error("convert: model must be ANN-mode");
  if (profile.scales.size() != spec.layers.size() ||
      profile.input_scale.size() != spec.layers.size())
    throw config_error("convert: profile does not match the architecture");
  spec.validate();
  require_chain(spec);

  ModelParams snn = fold_batchnorm(spec, ann);
  snn.mode = Mode::spiking;
  snn.leak = 1.0f;  // converted baselines use integrate-and-fire dynamics
  snn.threshold = 1.0f;
  for (size_t l = 0; l < spec.layers.size(); l++) {
    const LayerSpec& ls = spec.layers[l];
    LayerParams& lp = snn.layers[l];
    if (!ls.has_weights()) continue;
    if (ls.neuron == NeuronKind::lif) {
      lp.thresholds = profile.scales[l];
      if (lp.thresholds.empty())
        throw config_error("convert: profile has no scale for firing layer " + ls.name);
      for (float t : lp.thresholds)
        if (!(t > 0.0f) || !std::isfinite(t))
          throw validation_error("convert: non-positive threshold for layer " + ls.name);
    }
    if (!lp.bias.empty() && profile.input_scale[l] != 1.0f) {
      const float inv = 1.0f / profile.input_scale[l];
      for (float& b : lp.bias) b *= inv;
    }
    lp.bntt.reset();
    lp.bn.reset();
  }
  return snn;
}

std::vector<SweepPoint> sweep_timesteps(const NetworkSpec& spec, ModelParams& converted,
                                        const Dataset& eval_data,
                                        const std::vector<int>& steps_list,
                                        const EvalOptions& base_options) {
  if (steps_list.empty()) throw validation_error("sweep: empty steps list");
  for (size_t i = 0; i < steps_list.size(); i++) {
    if (steps_list[i] < 1)
      throw validation_error("sweep: time-steps must be >= 1, got " +
                             std::to_string(steps_list[i]));
    if (i > 0 && steps_list[i] <= steps_list[i - 1])
      throw validation_error("sweep: steps list must be ascending");
  }
  std::vector<SweepPoint> curve;
  for (int T : steps_list) {
    EvalOptions opt = base_options;
    opt.timesteps = T;
    curve.push_back({T, evaluate(spec, converted, eval_data, opt).miou});
  }
  return curve;
}

std::string sweep_csv(const std::vector<SweepPoint>& curve) {
  std::ostringstream os;
  os << "timesteps,miou\n";
  for (const auto& p : curve) os << p.timesteps << "," << p.miou << "\n";
  return os.str();
}

}  // namespace spikeseg
