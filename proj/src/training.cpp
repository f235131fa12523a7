#include "spikeseg/training.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <numeric>

#include "spikeseg/metrics.hpp"
#include "spikeseg/ops.hpp"

namespace spikeseg {

// --- loss -----------------------------------------------------------------------

namespace {

void check_loss_args(const Tensor4& logits, const LabelMap& labels) {
  if (labels.n != logits.n() || labels.h != logits.h() || labels.w != logits.w())
    throw dimension_error("cross_entropy: labels (" + std::to_string(labels.n) + ", " +
                          std::to_string(labels.h) + ", " + std::to_string(labels.w) +
                          ") vs logits " + logits.shape().str());
}

}  // namespace

LossValue spatial_cross_entropy(const Tensor4& logits, const LabelMap& labels, int ignore_index) {
  check_loss_args(logits, labels);
  const int C = logits.c();
  const int64_t hw = static_cast<int64_t>(logits.h()) * logits.w();
  LossValue out;
  out.per_pixel = Tensor4(logits.n(), 1, logits.h(), logits.w());
  double total = 0.0;
  int64_t count = 0;
  for (int i = 0; i < logits.n(); i++) {
    const float* base = logits.item(i);
    float* px_loss = out.per_pixel.item(i);
    for (int64_t j = 0; j < hw; j++) {
      const int32_t k = labels.data[i * hw + j];
      if (k == ignore_index) continue;
      if (k < 0 || k >= C)
        throw validation_error("cross_entropy: label " + std::to_string(k) +
                               " outside [0, " + std::to_string(C) + ")");
      float m = base[j];
      for (int c = 1; c < C; c++) m = std::max(m, base[c * hw + j]);
      double lse = 0.0;
      for (int c = 0; c < C; c++) lse += std::exp(static_cast<double>(base[c * hw + j]) - m);
      const double l = std::log(lse) - (static_cast<double>(base[k * hw + j]) - m);
      px_loss[j] = static_cast<float>(l);
      total += l;
      count++;
    }
  }
  out.normalization = count;
  out.loss = count > 0 ? total / static_cast<double>(count) : 0.0;
  return out;
}

Tensor4 spatial_cross_entropy_backward(const Tensor4& logits, const LabelMap& labels,
                                       int ignore_index) {
  check_loss_args(logits, labels);
  const int C = logits.c();
  const int64_t hw = static_cast<int64_t>(logits.h()) * logits.w();
  int64_t count = 0;
  for (int64_t j = 0; j < labels.size(); j++) {
    const int32_t k = labels.data[j];
    if (k == ignore_index) continue;
    if (k < 0 || k >= C)
      throw validation_error("cross_entropy: label " + std::to_string(k) + " outside [0, " +
                             std::to_string(C) + ")");
    count++;
  }
  Tensor4 grad(logits.shape());
  if (count == 0) return grad;
  const float inv_n = 1.0f / static_cast<float>(count);
  for (int i = 0; i < logits.n(); i++) {
    const float* base = logits.item(i);
    float* g = grad.item(i);
    for (int64_t j = 0; j < hw; j++) {
      const int32_t k = labels.data[i * hw + j];
      if (k == ignore_index) continue;
      float m = base[j];
      for (int c = 1; c < C; c++) m = std::max(m, base[c * hw + j]);
      double lse = 0.0;
      for (int c = 0; c < C; c++) lse += std::exp(static_cast<double>(base[c * hw + j]) - m);
      for (int c = 0; c < C; c++) {
        const double p = std::exp(static_cast<double>(base[c * hw + j]) - m) / lse;
        g[c * hw + j] = (static_cast<float>(p) - (c == k ? 1.0f : 0.0f)) * inv_n;
      }
    }
  }
  return grad;
}

// --- backward -----------------------------------------------------------------

namespace {

void addto(Tensor4& dst, Tensor4&& src) {
  if (dst.empty()) {
    dst = std::move(src);
    return;
  }
  require_same_shape(dst, src, "grad accumulation");
  float* d = dst.data();
  const float* s = src.data();
  for (int64_t j = 0; j < dst.size(); j++) d[j] += s[j];
}

// Batch-norm backward through training-mode batch statistics.
// g_gamma[c] += sum(g_out * xhat); optional g_beta[c] += sum(g_out);
// g_x = inv_std * (g_xhat - mean(g_xhat) - xhat * mean(g_xhat * xhat)).
Tensor4 norm_backward(const Tensor4& g_out, const Tensor4& xhat,
                      const std::vector<float>& inv_std, const float* gamma,
                      float* g_gamma, float* g_beta) {
  const int C = g_out.c();
  const int64_t hw = static_cast<int64_t>(g_out.h()) * g_out.w();
  const int64_t N = static_cast<int64_t>(g_out.n()) * hw;
  Tensor4 g_x(g_out.shape());
  for (int c = 0; c < C; c++) {
    double sb = 0.0, sg = 0.0;  // sum(g_out), sum(g_out * xhat)
    for (int i = 0; i < g_out.n(); i++) {
      const float* go = g_out.item(i) + c * hw;
      const float* xh = xhat.item(i) + c * hw;
      for (int64_t j = 0; j < hw; j++) {
        sb += go[j];
        sg += static_cast<double>(go[j]) * xh[j];
      }
    }
    g_gamma[c] += static_cast<float>(sg);
    if (g_beta) g_beta[c] += static_cast<float>(sb);
    const float m1 = static_cast<float>(sb / static_cast<double>(N));
    const float m2 = static_cast<float>(sg / static_cast<double>(N));
    const float scale = inv_std[c] * gamma[c];
    for (int i = 0; i < g_out.n(); i++) {
      const float* go = g_out.item(i) + c * hw;
      const float* xh = xhat.item(i) + c * hw;
      float* gx = g_x.item(i) + c * hw;
      for (int64_t j = 0; j < hw; j++) gx[j] = scale * (go[j] - m1 - xh[j] * m2);
    }
  }
  return g_x;
}

GradientMap make_grads(const NetworkSpec& spec, const ModelParams& params) {
  GradientMap g;
  const size_t L = spec.layers.size();
  g.weights.resize(L);
  g.bntt_gamma.resize(L);
  g.bn_gamma.resize(L);
  g.bn_beta.resize(L);
  for (size_t l = 0; l < L; l++) {
    const LayerParams& lp = params.layers[l];
    if (!lp.weights.empty()) g.weights[l] = zeros_like(lp.weights);
    if (lp.bntt) g.bntt_gamma[l].assign(lp.bntt->gamma.size(), 0.0f);
    if (lp.bn) {
      g.bn_gamma[l].assign(lp.bn->gamma.size(), 0.0f);
      g.bn_beta[l].assign(lp.bn->beta.size(), 0.0f);
    }
  }
  return g;
}

}  // namespace

GradientMap bptt_backward(const NetworkSpec& spec, const ModelParams& params,
                          const ForwardCache& cache, const LabelMap& labels,
                          int ignore_index, LossValue* loss_out) {
  if (!cache.valid) throw state_error("bptt_backward: no cached forward pass");
  if (cache.mode == Mode::ann) throw mode_error("bptt_backward: cache is ANN-mode");
  if (!cache.training)
    throw state_error("bptt_backward: forward must run with training=true");
  spec.validate();
  const int T = static_cast<int>(cache.step.size());
  const int L = static_cast<int>(spec.layers.size());

  LossValue loss = spatial_cross_entropy(cache.logits, labels, ignore_index);
  if (loss_out) *loss_out = loss;
  Tensor4 dlogits = spatial_cross_entropy_backward(cache.logits, labels, ignore_index);

  const int bil = spec.bilinear_index();
  Tensor4 d_accum = bil >= 0
                        ? bilinear_upsample_backward(dlogits, cache.accum.h(), cache.accum.w())
                        : std::move(dlogits);

  GradientMap grads = make_grads(spec, params);
  std::vector<Tensor4> carry(L);  // dL/dv at step t+1 per LIF layer

  for (int t = T - 1; t >= 0; t--) {
    std::vector<Tensor4> gfeat(L);  // dL/d(layer output) at step t
    for (int l = L - 1; l >= 0; l--) {
      const LayerSpec& ls = spec.layers[l];
      const LayerParams& lp = params.layers[l];
      const StepLayerCache& sc = cache.step[t][l];
      if (ls.kind == LayerKind::bilinear_head) continue;
      if (ls.kind == LayerKind::avg_pool) {
        if (gfeat[l].empty()) continue;
        addto(gfeat[l - 1], avg_pool2_backward(gfeat[l]));
        continue;
      }

      // gradient with respect to the layer's (post-norm) current
      Tensor4 g_cur;
      if (ls.neuron == NeuronKind::accumulator) {
        g_cur = d_accum;  // the accumulated membrane is a plain sum over steps
      } else if (ls.neuron == NeuronKind::lif) {
        if (gfeat[l].empty() && carry[l].empty()) continue;
        const Tensor4& v = sc.prefire;
        g_cur = Tensor4(v.shape());
        const int64_t hw = static_cast<int64_t>(v.h()) * v.w();
        const float leak = params.leak;
        const float theta_global =
            lp.thresholds.size() == 1 ? lp.thresholds[0] : params.threshold;
        for (int i = 0; i < v.n(); i++) {
          for (int c = 0; c < v.c(); c++) {
            const float theta =
                lp.thresholds.size() > 1 ? lp.thresholds[c] : theta_global;
            const int64_t off = (static_cast<int64_t>(i) * v.c() + c) * hw;
            const float* vp = v.data() + off;
            const float* go = gfeat[l].empty() ? nullptr : gfeat[l].data() + off;
            const float* ca = carry[l].empty() ? nullptr : carry[l].data() + off;
            float* gv = g_cur.data() + off;
            for (int64_t j = 0; j < hw; j++) {
              const float sp = surrogate_grad(vp[j], theta);
              // spatial path through the spike + temporal path through the
              // soft-reset carry: dv'/dv = leak * (1 - theta * sp)
              float val = go ? go[j] * sp : 0.0f;
              if (ca) val += leak * ca[j] * (1.0f - theta * sp);
              gv[j] = val;
            }
          }
        }
        carry[l] = g_cur;
      } else {  // raw current (transpose conv feeding a merge)
        if (gfeat[l].empty()) continue;
        g_cur = std::move(gfeat[l]);
      }

      Tensor4 g_in = ls.normalized
                         ? norm_backward(g_cur, sc.xhat, sc.inv_std,
                                         lp.bntt->gamma.data() + lp.bntt->idx(t, 0),
                                         grads.bntt_gamma[l].data() + lp.bntt->idx(t, 0),
                                         nullptr)
                         : std::move(g_cur);

      const Tensor4& in_feat = l == 0 ? cache.frames[t] : cache.step[t][l - 1].out;
      switch (ls.kind) {
        case LayerKind::transpose_conv:
          transpose_conv_backward_weights_accum(in_feat, g_in, ls.conv, grads.weights[l]);
          addto(gfeat[l - 1], transpose_conv_backward_input(lp.weights, g_in, ls.conv));
          break;
        case LayerKind::skip_conv: {
          const Tensor4& src_feat = cache.step[t][ls.skip_source].out;
          conv2d_backward_weights_accum(src_feat, g_in, ls.conv, grads.weights[l]);
          addto(gfeat[ls.skip_source],
                conv2d_backward_input(lp.weights, g_in, ls.conv, src_feat.h(), src_feat.w()));
          addto(gfeat[l - 1], std::move(g_in));  // pass-through to the incoming current
          break;
        }
        default:
          conv2d_backward_weights_accum(in_feat, g_in, ls.conv, grads.weights[l]);
          if (l > 0)
            addto(gfeat[l - 1],
                  conv2d_backward_input(lp.weights, g_in, ls.conv, in_feat.h(), in_feat.w()));
          break;
      }
    }
  }
  return grads;
}

GradientMap ann_backward(const NetworkSpec& spec, const ModelParams& params,
                         const ForwardCache& cache, const LabelMap& labels,
                         int ignore_index, LossValue* loss_out) {
  if (!cache.valid) throw state_error("ann_backward: no cached forward pass");
  if (cache.mode != Mode::ann) throw mode_error("ann_backward: cache is not ANN-mode");
  if (!cache.training) throw state_error("ann_backward: forward must run with training=true");
  spec.validate();
  const int L = static_cast<int>(spec.layers.size());

  LossValue loss = spatial_cross_entropy(cache.logits, labels, ignore_index);
  if (loss_out) *loss_out = loss;
  Tensor4 dlogits = spatial_cross_entropy_backward(cache.logits, labels, ignore_index);

  const int bil = spec.bilinear_index();
  Tensor4 d_out = bil >= 0
                      ? bilinear_upsample_backward(dlogits, cache.accum.h(), cache.accum.w())
                      : std::move(dlogits);

  GradientMap grads = make_grads(spec, params);
  std::vector<Tensor4> gfeat(L);
  const int acc = spec.accumulator_index();
  gfeat[acc] = std::move(d_out);

  for (int l = L - 1; l >= 0; l--) {
    const LayerSpec& ls = spec.layers[l];
    const LayerParams& lp = params.layers[l];
    const StepLayerCache& sc = cache.step[0][l];
    if (ls.kind == LayerKind::bilinear_head) continue;
    if (gfeat[l].empty()) continue;
    if (ls.kind == LayerKind::avg_pool) {
      addto(gfeat[l - 1], avg_pool2_backward(gfeat[l]));
      continue;
    }

    Tensor4 g_cur = std::move(gfeat[l]);
    if (ls.neuron == NeuronKind::lif) {  // ReLU mask on the pre-activation
      const float* pre = sc.prefire.data();
      float* g = g_cur.data();
      for (int64_t j = 0; j < g_cur.size(); j++)
        if (pre[j] <= 0.0f) g[j] = 0.0f;
    }
    Tensor4 g_in = ls.normalized
                       ? norm_backward(g_cur, sc.xhat, sc.inv_std, lp.bn->gamma.data(),
                                       grads.bn_gamma[l].data(), grads.bn_beta[l].data())
                       : std::move(g_cur);

    const Tensor4& in_feat = l == 0 ? cache.frames[0] : cache.step[0][l - 1].out;
    switch (ls.kind) {
      case LayerKind::transpose_conv:
        transpose_conv_backward_weights_accum(in_feat, g_in, ls.conv, grads.weights[l]);
        addto(gfeat[l - 1], transpose_conv_backward_input(lp.weights, g_in, ls.conv));
        break;
      case LayerKind::skip_conv: {
        const Tensor4& src_feat = cache.step[0][ls.skip_source].out;
        conv2d_backward_weights_accum(src_feat, g_in, ls.conv, grads.weights[l]);
        addto(gfeat[ls.skip_source],
              conv2d_backward_input(lp.weights, g_in, ls.conv, src_feat.h(), src_feat.w()));
        addto(gfeat[l - 1], std::move(g_in));
        break;
      }
      default:
        conv2d_backward_weights_accum(in_feat, g_in, ls.conv, grads.weights[l]);
        if (l > 0)
          addto(gfeat[l - 1],
                conv2d_backward_input(lp.weights, g_in, ls.conv, in_feat.h(), in_feat.w()));
        break;
    }
  }
  return grads;
}

// --- optimizer -----------------------------------------------------------------

float scheduled_lr(const AdamConfig& cfg, int epoch, int total_epochs) {
  const int milestone = static_cast<int>(total_epochs * cfg.milestone_fraction);
  return epoch > milestone ? cfg.lr / cfg.decay_factor : cfg.lr;
}

namespace {

void adam_update(std::span<float> p, std::span<const float> g, std::span<float> m,
                 std::span<float> v, const AdamConfig& cfg, float lr, double bc1, double bc2,
                 const std::string& layer_name) {
  for (size_t j = 0; j < p.size(); j++) {
    if (!std::isfinite(g[j]))
      throw validation_error("adam: non-finite gradient in layer " + layer_name);
    m[j] = cfg.beta1 * m[j] + (1.0f - cfg.beta1) * g[j];
    v[j] = cfg.beta2 * v[j] + (1.0f - cfg.beta2) * g[j] * g[j];
    const float mhat = m[j] / static_cast<float>(bc1);
    const float vhat = v[j] / static_cast<float>(bc2);
    p[j] -= lr * mhat / (std::sqrt(vhat) + cfg.eps);
  }
}

}  // namespace

void adam_step(const NetworkSpec& spec, ModelParams& params, const GradientMap& grads,
               OptimState& state, float lr) {
  const size_t L = spec.layers.size();
  if (!state.initialized) {
    state.m_w.resize(L);
    state.v_w.resize(L);
    state.m_bntt.resize(L);
    state.v_bntt.resize(L);
    state.m_bn_g.resize(L);
    state.v_bn_g.resize(L);
    state.m_bn_b.resize(L);
    state.v_bn_b.resize(L);
    for (size_t l = 0; l < L; l++) {
      const LayerParams& lp = params.layers[l];
      if (!lp.weights.empty()) {
        state.m_w[l] = zeros_like(lp.weights);
        state.v_w[l] = zeros_like(lp.weights);
      }
      if (lp.bntt) {
        state.m_bntt[l].assign(lp.bntt->gamma.size(), 0.0f);
        state.v_bntt[l].assign(lp.bntt->gamma.size(), 0.0f);
      }
      if (lp.bn) {
        state.m_bn_g[l].assign(lp.bn->gamma.size(), 0.0f);
        state.v_bn_g[l].assign(lp.bn->gamma.size(), 0.0f);
        state.m_bn_b[l].assign(lp.bn->beta.size(), 0.0f);
        state.v_bn_b[l].assign(lp.bn->beta.size(), 0.0f);
      }
    }
    state.initialized = true;
  }
  state.step++;
  const double bc1 = 1.0 - std::pow(static_cast<double>(state.cfg.beta1), state.step);
  const double bc2 = 1.0 - std::pow(static_cast<double>(state.cfg.beta2), state.step);
  for (size_t l = 0; l < L; l++) {
    LayerParams& lp = params.layers[l];
    const std::string& name = spec.layers[l].name;
    if (!lp.weights.empty() && !grads.weights[l].empty())
      adam_update(lp.weights.flat(), grads.weights[l].flat(), state.m_w[l].flat(),
                  state.v_w[l].flat(), state.cfg, lr, bc1, bc2, name);
    if (lp.bntt && !grads.bntt_gamma[l].empty())
      adam_update(lp.bntt->gamma, grads.bntt_gamma[l], state.m_bntt[l], state.v_bntt[l],
                  state.cfg, lr, bc1, bc2, name);
    if (lp.bn && !grads.bn_gamma[l].empty()) {
      adam_update(lp.bn->gamma, grads.bn_gamma[l], state.m_bn_g[l], state.v_bn_g[l], state.cfg,
                  lr, bc1, bc2, name);
      adam_update(lp.bn->beta, grads.bn_beta[l], state.m_bn_b[l], state.v_bn_b[l], state.cfg,
                  lr, bc1, bc2, name);
    }
  }
}

void clip_grad_norm(GradientMap& grads, float max_norm) {
  if (max_norm <= 0.0f) return;
  double sq = 0.0;
  auto accum = [&sq](std::span<const float> g) {
    for (float v : g) sq += static_cast<double>(v) * v;
  };
  for (const auto& w : grads.weights)
    if (!w.empty()) accum(w.flat());
  for (const auto& g : grads.bntt_gamma) accum(g);
  for (const auto& g : grads.bn_gamma) accum(g);
  for (const auto& g : grads.bn_beta) accum(g);
  const double norm = std::sqrt(sq);
  if (norm <= max_norm) return;
  const float scale = static_cast<float>(max_norm / norm);
  auto rescale = [scale](std::span<float> g) {
    for (float& v : g) v *= scale;
  };
  for (auto& w : grads.weights)
    if (!w.empty()) rescale(w.flat());
  for (auto& g : grads.bntt_gamma) rescale(g);
  for (auto& g : grads.bn_gamma) rescale(g);
  for (auto& g : grads.bn_beta) rescale(g);
}

// --- training loop ----------------------------------------------------------------

SpikeTrain stack_event_frames(const Dataset& set, const std::vector<int>& indices, int steps) {
  if (indices.empty()) throw validation_error("stack_event_frames: empty batch");
  const Sample& first = set.samples[indices[0]];
  if (first.frames.empty()) throw validation_error("stack_event_frames: sample has no frames");
  const Shape4 fs = first.frames[0].shape();
  SpikeTrain train;
  train.frames.assign(steps, Tensor4(static_cast<int>(indices.size()), fs.c, fs.h, fs.w));
  for (size_t b = 0; b < indices.size(); b++) {
    const Sample& s = set.samples[indices[b]];
    if (s.frames.empty()) throw validation_error("stack_event_frames: sample has no frames");
    for (int t = 0; t < steps; t++) {
      const Tensor4& src = s.frames[std::min<size_t>(t, s.frames.size() - 1)];
      std::copy(src.item(0), src.item(0) + src.item_size(), train.frames[t].item(static_cast<int>(b)));
    }
  }
  return train;
}

namespace {

Tensor4 stack_images(const Dataset& set, const std::vector<int>& indices) {
  const Tensor4& first = set.samples[indices[0]].image;
  Tensor4 out(static_cast<int>(indices.size()), first.c(), first.h(), first.w());
  for (size_t b = 0; b < indices.size(); b++) {
    const Tensor4& img = set.samples[indices[b]].image;
    std::copy(img.item(0), img.item(0) + img.item_size(), out.item(static_cast<int>(b)));
  }
  return out;
}

LabelMap stack_labels(const Dataset& set, const std::vector<int>& indices) {
  const LabelMap& first = set.samples[indices[0]].label;
  LabelMap out(static_cast<int>(indices.size()), first.h, first.w);
  for (size_t b = 0; b < indices.size(); b++) {
    const LabelMap& l = set.samples[indices[b]].label;
    std::copy(l.data.begin(), l.data.end(), out.data.begin() + b * l.size());
  }
  return out;
}

}  // namespace

TrainResult train(const NetworkSpec& spec, ModelParams& params, const Dataset& train_set,
                  const Dataset& eval_set, const TrainConfig& config, const RowSink& row_sink,
                  const BestSink& best_sink, bool record_wall) {
  if (train_set.samples.empty()) throw config_error("train: empty dataset");
  if (config.batch < 1) throw config_error("train: batch must be >= 1");
  if (config.epochs < 1) throw config_error("train: epochs must be >= 1");
  if (params.mode == Mode::ann && config.encoder == EncoderKind::dvs_frames)
    throw config_error("train: ANN training supports static inputs only");
  const bool event_input = config.encoder == EncoderKind::dvs_frames;
  if (event_input && !train_set.event_based)
    throw config_error("train: dvs encoder requires an event dataset");
  if (!event_input && train_set.event_based)
    throw config_error("train: poisson encoder requires a static dataset");

  TrainResult result;
  OptimState opt;
  opt.cfg = config.adam;

  std::vector<int> order(train_set.samples.size());
  std::iota(order.begin(), order.end(), 0);

  for (int epoch = 1; epoch <= config.epochs; epoch++) {
    const auto t0 = std::chrono::steady_clock::now();
    const float lr = scheduled_lr(config.adam, epoch, config.epochs);

    // deterministic shuffle
    Rng shuffle_rng(mix_seed(config.seed, 0xE0C4ull, static_cast<uint64_t>(epoch)));
    for (size_t i = order.size(); i > 1; i--)
      std::swap(order[i - 1], order[shuffle_rng.next_u32() % i]);

    double loss_sum = 0.0;
    int64_t loss_n = 0;
    ConfusionAccumulator train_conf(train_set.num_classes, config.ignore_index);

    for (size_t start = 0, batch_idx = 0; start < order.size();
         start += config.batch, batch_idx++) {
      const size_t end = std::min(order.size(), start + config.batch);
      std::vector<int> idx(order.begin() + start, order.begin() + end);
      LabelMap labels = stack_labels(train_set, idx);

      ForwardCache cache;
      Tensor4 logits;
      if (params.mode == Mode::ann) {
        logits = forward_ann(spec, params, {stack_images(train_set, idx)}, &cache, true);
      } else {
        SpikeTrain st;
        if (event_input) {
          st = stack_event_frames(train_set, idx, config.timesteps);
        } else {
          st = poisson_encode(stack_images(train_set, idx), config.timesteps,
                              mix_seed(config.seed, static_cast<uint64_t>(epoch),
                                       static_cast<uint64_t>(batch_idx)));
        }
        logits = params.mode == Mode::relaxed ? forward_relaxed(spec, params, st, &cache, true)
                                              : forward_spiking(spec, params, st, nullptr,
                                                                &cache, true);
      }

      LossValue loss;
      GradientMap grads = params.mode == Mode::ann
                              ? ann_backward(spec, params, cache, labels, config.ignore_index, &loss)
                              : bptt_backward(spec, params, cache, labels, config.ignore_index, &loss);
      clip_grad_norm(grads, config.grad_clip);
      adam_step(spec, params, grads, opt, lr);

      loss_sum += loss.loss * static_cast<double>(loss.normalization);
      loss_n += loss.normalization;
      train_conf.add(argmax_channels(logits), labels);
    }

    EpochRow train_row;
    train_row.epoch = epoch;
    train_row.split = "train";
    train_row.loss = loss_n > 0 ? loss_sum / static_cast<double>(loss_n) : 0.0;
    train_row.miou = train_conf.result().mean;
    train_row.lr = lr;

    EvalOptions ev;
    ev.batch = config.batch;
    ev.timesteps = config.timesteps;
    ev.seed = mix_seed(config.seed, 0xE7A1ull);
    ev.ignore_index = config.ignore_index;
    EvalResult er = evaluate(spec, params, eval_set, ev);

    EpochRow val_row;
    val_row.epoch = epoch;
    val_row.split = "val";
    val_row.loss = er.loss;
    val_row.miou = er.miou;
    val_row.lr = lr;

    if (record_wall) {
      const auto t1 = std::chrono::steady_clock::now();
      train_row.wall_ms =
          static_cast<long>(std::chrono::duration_cast<std::chrono::milliseconds>(t1 - t0).count());
      val_row.wall_ms = train_row.wall_ms;
    }

    result.log.push_back(train_row);
    result.log.push_back(val_row);
    if (row_sink) {
      row_sink(train_row);
      row_sink(val_row);
    }
    if (er.miou > result.best_miou || result.best_epoch == 0) {
      result.best_miou = er.miou;
      result.best_epoch = epoch;
      if (best_sink) best_sink(epoch, er.miou, params);
    }
    result.epochs_run = epoch;
    if (config.stop_miou > 0.0 && er.miou >= config.stop_miou) break;
  }
  return result;
}

}  // namespace spikeseg
