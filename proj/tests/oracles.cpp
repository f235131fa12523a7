#include "oracles.hpp"

#include <algorithm>
#include <cmath>

using namespace spikeseg;

namespace oracle {

DT from_tensor(const Tensor4& t) {
  DT d(t.n(), t.c(), t.h(), t.w());
  for (int64_t j = 0; j < t.size(); j++) d.v[j] = t.data()[j];
  return d;
}

Tensor4 to_tensor(const DT& d) {
  Tensor4 t(d.n, d.c, d.h, d.w);
  for (size_t j = 0; j < d.v.size(); j++) t.data()[j] = static_cast<float>(d.v[j]);
  return t;
}

DT conv2d(const DT& in, const DT& w, const ConvSpec& spec) {
  const int oh = spec.out_size(in.h);
  const int ow = spec.out_size(in.w);
  DT out(in.n, spec.out_channels, oh, ow);
  for (int i = 0; i < in.n; i++)
    for (int co = 0; co < spec.out_channels; co++)
      for (int oy = 0; oy < oh; oy++)
        for (int ox = 0; ox < ow; ox++) {
          double acc = 0.0;
          for (int ci = 0; ci < spec.in_channels; ci++)
            for (int ky = 0; ky < spec.kernel; ky++)
              for (int kx = 0; kx < spec.kernel; kx++) {
                const int y = oy * spec.stride - spec.padding + ky * spec.dilation;
                const int x = ox * spec.stride - spec.padding + kx * spec.dilation;
                if (y < 0 || y >= in.h || x < 0 || x >= in.w) continue;
                acc += in.at(i, ci, y, x) * w.at(co, ci, ky, kx);
              }
          out.at(i, co, oy, ox) = acc;
        }
  return out;
}

DT transpose_conv(const DT& in, const DT& w, const ConvSpec& spec) {
  DT out(in.n, spec.out_channels, in.h * 2, in.w * 2);
  for (int i = 0; i < in.n; i++)
    for (int ci = 0; ci < spec.in_channels; ci++)
      for (int iy = 0; iy < in.h; iy++)
        for (int ix = 0; ix < in.w; ix++) {
          const double s = in.at(i, ci, iy, ix);
          for (int co = 0; co < spec.out_channels; co++)
            for (int ky = 0; ky < spec.kernel; ky++)
              for (int kx = 0; kx < spec.kernel; kx++) {
                const int oy = iy * spec.stride - spec.padding + ky;
                const int ox = ix * spec.stride - spec.padding + kx;
                if (oy < 0 || oy >= out.h || ox < 0 || ox >= out.w) continue;
                out.at(i, co, oy, ox) += s * w.at(ci, co, ky, kx);
              }
        }
  return out;
}

DT avg_pool2(const DT& in) {
  DT out(in.n, in.c, in.h / 2, in.w / 2);
  for (int i = 0; i < in.n; i++)
    for (int c = 0; c < in.c; c++)
      for (int y = 0; y < out.h; y++)
        for (int x = 0; x < out.w; x++)
          out.at(i, c, y, x) = 0.25 * (in.at(i, c, 2 * y, 2 * x) + in.at(i, c, 2 * y, 2 * x + 1) +
                                       in.at(i, c, 2 * y + 1, 2 * x) +
                                       in.at(i, c, 2 * y + 1, 2 * x + 1));
  return out;
}

DT bilinear(const DT& in, int oh, int ow) {
  DT out(in.n, in.c, oh, ow);
  const double sy = oh > 1 ? static_cast<double>(in.h - 1) / (oh - 1) : 0.0;
  const double sx = ow > 1 ? static_cast<double>(in.w - 1) / (ow - 1) : 0.0;
  for (int i = 0; i < in.n; i++)
    for (int c = 0; c < in.c; c++)
      for (int y = 0; y < oh; y++)
        for (int x = 0; x < ow; x++) {
          const double py = y * sy, px = x * sx;
          const int y0 = std::min(static_cast<int>(py), in.h - 1);
          const int x0 = std::min(static_cast<int>(px), in.w - 1);
          const int y1 = std::min(y0 + 1, in.h - 1);
          const int x1 = std::min(x0 + 1, in.w - 1);
          const double fy = py - y0, fx = px - x0;
          out.at(i, c, y, x) = in.at(i, c, y0, x0) * (1 - fy) * (1 - fx) +
                               in.at(i, c, y0, x1) * (1 - fy) * fx +
                               in.at(i, c, y1, x0) * fy * (1 - fx) +
                               in.at(i, c, y1, x1) * fy * fx;
        }
  return out;
}

namespace {

double relaxed_phi(double v, double theta) {
  if (v <= 0.0) return 0.0;
  if (v >= 2.0 * theta) return theta;
  if (v <= theta) return v * v / (2.0 * theta);
  const double d = 2.0 * theta - v;
  return theta - d * d / (2.0 * theta);
}

// training-mode normalization: batch statistics, gamma scale, optional beta
DT normalize(const DT& x, const float* gamma, const float* beta, double eps) {
  DT out(x.n, x.c, x.h, x.w);
  const int64_t hw = static_cast<int64_t>(x.h) * x.w;
  const int64_t N = static_cast<int64_t>(x.n) * hw;
  for (int c = 0; c < x.c; c++) {
    double s = 0.0, s2 = 0.0;
    for (int i = 0; i < x.n; i++)
      for (int64_t j = 0; j < hw; j++) {
        const double v = x.v[(static_cast<size_t>(i) * x.c + c) * hw + j];
        s += v;
        s2 += v * v;
      }
    const double mean = s / N;
    double var = s2 / N - mean * mean;
    if (var < 0.0) var = 0.0;
    const double inv = 1.0 / std::sqrt(var + eps);
    for (int i = 0; i < x.n; i++)
      for (int64_t j = 0; j < hw; j++) {
        const size_t k = (static_cast<size_t>(i) * x.c + c) * hw + j;
        out.v[k] = gamma[c] * (x.v[k] - mean) * inv + (beta ? beta[c] : 0.0);
      }
  }
  return out;
}

double ce_loss(const DT& logits, const LabelMap& labels, int ignore_index) {
  const int64_t hw = static_cast<int64_t>(logits.h) * logits.w;
  double total = 0.0;
  int64_t count = 0;
  for (int i = 0; i < logits.n; i++)
    for (int64_t j = 0; j < hw; j++) {
      const int32_t k = labels.data[i * hw + j];
      if (k == ignore_index) continue;
      double m = logits.v[static_cast<size_t>(i) * logits.c * hw + j];
      for (int c = 1; c < logits.c; c++)
        m = std::max(m, logits.v[(static_cast<size_t>(i) * logits.c + c) * hw + j]);
      double lse = 0.0;
      for (int c = 0; c < logits.c; c++)
        lse += std::exp(logits.v[(static_cast<size_t>(i) * logits.c + c) * hw + j] - m);
      total += std::log(lse) -
               (logits.v[(static_cast<size_t>(i) * logits.c + k) * hw + j] - m);
      count++;
    }
  return count > 0 ? total / count : 0.0;
}

void add_bias(DT& x, const std::vector<float>& bias) {
  if (bias.empty()) return;
  const int64_t hw = static_cast<int64_t>(x.h) * x.w;
  for (int i = 0; i < x.n; i++)
    for (int c = 0; c < x.c; c++)
      for (int64_t j = 0; j < hw; j++)
        x.v[(static_cast<size_t>(i) * x.c + c) * hw + j] += bias[c];
}

}  // namespace

double relaxed_loss(const NetworkSpec& spec, const ModelParams& params,
                    const std::vector<Tensor4>& frames, const LabelMap& labels,
                    int ignore_index) {
  const int L = static_cast<int>(spec.layers.size());
  const int T = static_cast<int>(frames.size());
  const auto shapes = spec.trace_shapes();
  const int n = frames[0].n();

  std::vector<DT> membrane(L), outs(L);
  DT accum;
  for (int l = 0; l < L; l++) {
    if (spec.layers[l].neuron == NeuronKind::lif)
      membrane[l] = DT(n, shapes[l].c, shapes[l].h, shapes[l].w);
    if (spec.layers[l].neuron == NeuronKind::accumulator)
      accum = DT(n, shapes[l].c, shapes[l].h, shapes[l].w);
  }

  for (int t = 0; t < T; t++) {
    DT feat = from_tensor(frames[t]);
    for (int l = 0; l < L; l++) {
      const LayerSpec& ls = spec.layers[l];
      const LayerParams& lp = params.layers[l];
      if (ls.kind == LayerKind::avg_pool) {
        feat = avg_pool2(feat);
        outs[l] = feat;
        continue;
      }
      if (ls.kind == LayerKind::bilinear_head) continue;
      DT cur;
      if (ls.kind == LayerKind::transpose_conv) {
        cur = transpose_conv(feat, from_tensor(lp.weights), ls.conv);
      } else if (ls.kind == LayerKind::skip_conv) {
        cur = conv2d(outs[ls.skip_source], from_tensor(lp.weights), ls.conv);
        for (size_t j = 0; j < cur.v.size(); j++) cur.v[j] += feat.v[j];
      } else {
        cur = conv2d(feat, from_tensor(lp.weights), ls.conv);
      }
      add_bias(cur, lp.bias);
      if (ls.normalized)
        cur = normalize(cur, lp.bntt->gamma.data() + lp.bntt->idx(t, 0), nullptr,
                        lp.bntt->eps);
      if (ls.neuron == NeuronKind::lif) {
        const double theta = params.threshold;
        DT o(cur.n, cur.c, cur.h, cur.w);
        for (size_t j = 0; j < cur.v.size(); j++) {
          const double v = params.leak * membrane[l].v[j] + cur.v[j];
          const double a = relaxed_phi(v, theta);
          o.v[j] = a;
          membrane[l].v[j] = v - theta * a;
        }
        feat = std::move(o);
      } else if (ls.neuron == NeuronKind::accumulator) {
        for (size_t j = 0; j < cur.v.size(); j++) accum.v[j] += cur.v[j];
        feat = DT();
      } else {
        feat = std::move(cur);
      }
      outs[l] = feat;
    }
  }

  DT logits = accum;
  const int bil = spec.bilinear_index();
  if (bil >= 0)
    logits = bilinear(accum, spec.layers[bil].out_h, spec.layers[bil].out_w);
  return ce_loss(logits, labels, ignore_index);
}

double ann_loss(const NetworkSpec& spec, const ModelParams& params, const Tensor4& image,
                const LabelMap& labels, int ignore_index) {
  const int L = static_cast<int>(spec.layers.size());
  std::vector<DT> outs(L);
  DT feat = from_tensor(image);
  DT logits;
  for (int l = 0; l < L; l++) {
    const LayerSpec& ls = spec.layers[l];
    const LayerParams& lp = params.layers[l];
    if (ls.kind == LayerKind::avg_pool) {
      feat = avg_pool2(feat);
      outs[l] = feat;
      continue;
    }
    if (ls.kind == LayerKind::bilinear_head) {
      logits = bilinear(logits, ls.out_h, ls.out_w);
      continue;
    }
    DT cur;
    if (ls.kind == LayerKind::transpose_conv) {
      cur = transpose_conv(feat, from_tensor(lp.weights), ls.conv);
    } else if (ls.kind == LayerKind::skip_conv) {
      cur = conv2d(outs[ls.skip_source], from_tensor(lp.weights), ls.conv);
      for (size_t j = 0; j < cur.v.size(); j++) cur.v[j] += feat.v[j];
    } else {
      cur = conv2d(feat, from_tensor(lp.weights), ls.conv);
    }
    add_bias(cur, lp.bias);
    if (ls.normalized)
      cur = normalize(cur, lp.bn->gamma.data(), lp.bn->beta.data(), lp.bn->eps);
    if (ls.neuron == NeuronKind::lif) {
      for (double& v : cur.v)
        if (v < 0.0) v = 0.0;
      feat = std::move(cur);
    } else if (ls.neuron == NeuronKind::accumulator) {
      logits = cur;
      feat = std::move(cur);
    } else {
      feat = std::move(cur);
    }
    outs[l] = feat;
  }
  return ce_loss(logits, labels, ignore_index);
}

std::vector<ParamView> param_views(const NetworkSpec& spec, ModelParams& params,
                                   const GradientMap& grads) {
  std::vector<ParamView> views;
  for (size_t l = 0; l < spec.layers.size(); l++) {
    LayerParams& lp = params.layers[l];
    const std::string& name = spec.layers[l].name;
    if (!lp.weights.empty())
      for (int64_t j = 0; j < lp.weights.size(); j++)
        views.push_back({name + ".w[" + std::to_string(j) + "]", lp.weights.data() + j,
                         grads.weights[l].data() + j});
    if (lp.bntt)
      for (size_t j = 0; j < lp.bntt->gamma.size(); j++)
        views.push_back({name + ".g[" + std::to_string(j) + "]", lp.bntt->gamma.data() + j,
                         grads.bntt_gamma[l].data() + j});
    if (lp.bn) {
      for (size_t j = 0; j < lp.bn->gamma.size(); j++)
        views.push_back({name + ".bng[" + std::to_string(j) + "]", lp.bn->gamma.data() + j,
                         grads.bn_gamma[l].data() + j});
      for (size_t j = 0; j < lp.bn->beta.size(); j++)
        views.push_back({name + ".bnb[" + std::to_string(j) + "]", lp.bn->beta.data() + j,
                         grads.bn_beta[l].data() + j});
    }
  }
  return views;
}

namespace {

// groups parameter views back into tensors by name prefix and reports the
// per-tensor relative error max|a - f| / max(max|f|, 1e-6)
GradCheckReport compare(const std::vector<ParamView>& views, const std::vector<double>& fd) {
  GradCheckReport rep;
  size_t i = 0;
  while (i < views.size()) {
    const std::string prefix = views[i].name.substr(0, views[i].name.find('['));
    double max_abs_diff = 0.0, max_fd = 0.0;
    size_t j = i;
    for (; j < views.size() &&
           views[j].name.substr(0, views[j].name.find('[')) == prefix;
         j++) {
      max_abs_diff = std::max(max_abs_diff, std::fabs(views[j].grad[0] - fd[j]));
      max_fd = std::max(max_fd, std::fabs(fd[j]));
    }
    const double rel = max_abs_diff / std::max(max_fd, 1e-6);
    if (rel > rep.max_rel_err) {
      rep.max_rel_err = rel;
      rep.worst_param = prefix;
    }
    rep.params_checked += static_cast<int>(j - i);
    i = j;
  }
  return rep;
}

}  // namespace

GradCheckReport gradcheck_relaxed(const NetworkSpec& spec, ModelParams& params,
                                  const std::vector<Tensor4>& frames, const LabelMap& labels,
                                  int ignore_index, double eps) {
  SpikeTrain train;
  train.frames = frames;
  ForwardCache cache;
  forward_relaxed(spec, params, train, &cache, /*training=*/true);
  GradientMap grads = bptt_backward(spec, params, cache, labels, ignore_index);
  auto views = param_views(spec, params, grads);

  std::vector<double> fd(views.size());
  for (size_t j = 0; j < views.size(); j++) {
    float* p = views[j].value;
    const float saved = *p;
    *p = saved + static_cast<float>(eps);
    const double hi = *p;
    const double lp = relaxed_loss(spec, params, frames, labels, ignore_index);
    *p = saved - static_cast<float>(eps);
    const double lo = *p;
    const double lm = relaxed_loss(spec, params, frames, labels, ignore_index);
    *p = saved;
    fd[j] = (lp - lm) / (hi - lo);
  }
  return compare(views, fd);
}

GradCheckReport gradcheck_ann(const NetworkSpec& spec, ModelParams& params,
                              const Tensor4& image, const LabelMap& labels, int ignore_index,
                              double eps) {
  ForwardCache cache;
  forward_ann(spec, params, {image}, &cache, /*training=*/true);
  GradientMap grads = ann_backward(spec, params, cache, labels, ignore_index);
  auto views = param_views(spec, params, grads);

  std::vector<double> fd(views.size());
  for (size_t j = 0; j < views.size(); j++) {
    float* p = views[j].value;
    const float saved = *p;
    *p = saved + static_cast<float>(eps);
    const double hi = *p;
    const double lp = ann_loss(spec, params, image, labels, ignore_index);
    *p = saved - static_cast<float>(eps);
    const double lo = *p;
    const double lm = ann_loss(spec, params, image, labels, ignore_index);
    *p = saved;
    fd[j] = (lp - lm) / (hi - lo);
  }
  return compare(views, fd);
}

}  // namespace oracle
