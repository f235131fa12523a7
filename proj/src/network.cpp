#include "spikeseg/network.hpp"

#include <cmath>
#include <cstring>
#include <map>
#include <sstream>

#include "spikeseg/common.hpp"
#include "spikeseg/ops.hpp"

namespace spikeseg {

std::string to_string(LayerKind k) {
  switch (k) {
    case LayerKind::conv: return "conv";
    case LayerKind::dilated_conv: return "dilated_conv";
    case LayerKind::avg_pool: return "avgpool";
    case LayerKind::transpose_conv: return "tconv";
    case LayerKind::skip_conv: return "skipconv";
    case LayerKind::bilinear_head: return "bilinear";
    case LayerKind::classifier: return "classifier";
  }
  return "?";
}

std::string to_string(NeuronKind k) {
  switch (k) {
    case NeuronKind::lif: return "lif";
    case NeuronKind::accumulator: return "acc";
    case NeuronKind::none: return "none";
  }
  return "?";
}

std::string to_string(Mode m) {
  switch (m) {
    case Mode::spiking: return "spiking";
    case Mode::ann: return "ann";
    case Mode::relaxed: return "relaxed";
  }
  return "?";
}

Mode mode_from_string(const std::string& s) {
  if (s == "spiking") return Mode::spiking;
  if (s == "ann") return Mode::ann;
  if (s == "relaxed") return Mode::relaxed;
  throw config_error("unknown mode: " + s);
}

namespace {

LayerKind kind_from_string(const std::string& s) {
  if (s == "conv") return LayerKind::conv;
  if (s == "dilated_conv") return LayerKind::dilated_conv;
  if (s == "avgpool") return LayerKind::avg_pool;
  if (s == "tconv") return LayerKind::transpose_conv;
  if (s == "skipconv") return LayerKind::skip_conv;
  if (s == "bilinear") return LayerKind::bilinear_head;
  if (s == "classifier") return LayerKind::classifier;
  throw config_error("unknown layer kind: " + s);
}

NeuronKind neuron_from_string(const std::string& s) {
  if (s == "lif") return NeuronKind::lif;
  if (s == "acc") return NeuronKind::accumulator;
  if (s == "none") return NeuronKind::none;
  throw config_error("unknown neuron kind: " + s);
}

}  // namespace

std::vector<LayerShape> NetworkSpec::trace_shapes() const {
  std::vector<LayerShape> shapes(layers.size());
  LayerShape cur{in_channels, in_h, in_w};
  for (size_t l = 0; l < layers.size(); l++) {
    const LayerSpec& ls = layers[l];
    switch (ls.kind) {
      case LayerKind::conv:
      case LayerKind::dilated_conv:
      case LayerKind::classifier: {
        if (ls.conv.in_channels != cur.c)
          throw config_error("layer " + ls.name + ": expects " +
                             std::to_string(ls.conv.in_channels) + " channels, gets " +
                             std::to_string(cur.c));
        cur = {ls.conv.out_channels, ls.conv.out_size(cur.h), ls.conv.out_size(cur.w)};
        break;
      }
      case LayerKind::avg_pool: {
        if (cur.h % 2 != 0 || cur.w % 2 != 0)
          throw dimension_error("layer " + ls.name + ": pooling odd extent " +
                                std::to_string(cur.h) + "x" + std::to_string(cur.w));
        cur = {cur.c, cur.h / 2, cur.w / 2};
        break;
      }
      case LayerKind::transpose_conv: {
        check_transpose_spec(ls.conv);
        if (ls.conv.in_channels != cur.c)
          throw config_error("layer " + ls.name + ": expects " +
                             std::to_string(ls.conv.in_channels) + " channels, gets " +
                             std::to_string(cur.c));
        cur = {ls.conv.out_channels, cur.h * 2, cur.w * 2};
        break;
      }
      case LayerKind::skip_conv: {
        if (ls.skip_source < 0 || ls.skip_source >= static_cast<int>(l))
          throw config_error("layer " + ls.name + ": skip source index " +
                             std::to_string(ls.skip_source) + " out of range");
        const LayerShape& src = shapes[ls.skip_source];
        if (ls.conv.in_channels != src.c)
          throw config_error("layer " + ls.name + ": skip source has " +
                             std::to_string(src.c) + " channels, projection expects " +
                             std::to_string(ls.conv.in_channels));
        if (src.h != cur.h || src.w != cur.w)
          throw config_error("layer " + ls.name + ": skip source extent " +
                             std::to_string(src.h) + "x" + std::to_string(src.w) +
                             " vs incoming " + std::to_string(cur.h) + "x" +
                             std::to_string(cur.w));
        if (ls.conv.out_channels != cur.c)
          throw config_error("layer " + ls.name + ": projection emits " +
                             std::to_string(ls.conv.out_channels) +
                             " channels, incoming current has " + std::to_string(cur.c));
        break;  // shape unchanged: projection added onto incoming current
      }
      case LayerKind::bilinear_head: {
        if (ls.out_h < cur.h || ls.out_w < cur.w)
          throw config_error("layer " + ls.name + ": bilinear head must not shrink");
        cur = {cur.c, ls.out_h, ls.out_w};
        break;
      }
    }
    shapes[l] = cur;
  }
  return shapes;
}

int NetworkSpec::accumulator_index() const {
  for (size_t l = 0; l < layers.size(); l++)
    if (layers[l].neuron == NeuronKind::accumulator) return static_cast<int>(l);
  return -1;
}

int NetworkSpec::bilinear_index() const {
  for (size_t l = 0; l < layers.size(); l++)
    if (layers[l].kind == LayerKind::bilinear_head) return static_cast<int>(l);
  return -1;
}

std::vector<bool> NetworkSpec::skip_source_mask() const {
  std::vector<bool> mask(layers.size(), false);
  for (const auto& ls : layers)
    if (ls.kind == LayerKind::skip_conv && ls.skip_source >= 0) mask[ls.skip_source] = true;
  return mask;
}

void NetworkSpec::validate() const {
  if (in_channels < 1 || in_h < 1 || in_w < 1)
    throw config_error("network: input dims must be >= 1");
  if (num_classes < 2) throw config_error("network: num_classes must be >= 2");
  if (layers.empty()) throw config_error("network: no layers");
  int accums = 0;
  for (size_t l = 0; l < layers.size(); l++) {
    const LayerSpec& ls = layers[l];
    if (ls.neuron == NeuronKind::accumulator) {
      accums++;
      if (ls.normalized)
        throw config_error("layer " + ls.name + ": accumulator layers are not normalized");
    }
    if (ls.kind == LayerKind::bilinear_head && l + 1 != layers.size())
      throw config_error("bilinear head must be the last layer");
  }
  if (accums != 1) throw config_error("network: exactly one accumulator layer required");
  const int acc = accumulator_index();
  for (size_t l = acc + 1; l < layers.size(); l++)
    if (layers[l].kind != LayerKind::bilinear_head)
      throw config_error("network: only a bilinear head may follow the accumulator");
  trace_shapes();  // throws on inconsistent chaining
}

std::string NetworkSpec::serialize() const {
  std::ostringstream os;
  os << "input " << in_channels << " " << in_h << " " << in_w << "\n";
  os << "classes " << num_classes << "\n";
  os << "feature_end " << feature_end << "\n";
  for (const auto& ls : layers) {
    os << "layer " << to_string(ls.kind) << " name=" << ls.name;
    if (ls.has_weights()) {
      os << " in=" << ls.conv.in_channels << " out=" << ls.conv.out_channels
         << " k=" << ls.conv.kernel << " s=" << ls.conv.stride << " p=" << ls.conv.padding
         << " r=" << ls.conv.dilation;
      if (ls.kind == LayerKind::skip_conv) os << " src=" << ls.skip_source;
      os << " neuron=" << to_string(ls.neuron) << " norm=" << (ls.normalized ? 1 : 0);
    } else if (ls.kind == LayerKind::bilinear_head) {
      os << " out_h=" << ls.out_h << " out_w=" << ls.out_w;
    }
    os << "\n";
  }
  return os.str();
}

NetworkSpec NetworkSpec::parse(const std::string& text) {
  NetworkSpec spec;
  std::istringstream is(text);
  std::string line;
  while (std::getline(is, line)) {
    if (line.empty() || line[0] == '#') continue;
    std::istringstream ls(line);
    std::string head;
    ls >> head;
    if (head == "input") {
      if (!(ls >> spec.in_channels >> spec.in_h >> spec.in_w))
        throw io_error("architecture: bad input line");
    } else if (head == "classes") {
      ls >> spec.num_classes;
    } else if (head == "feature_end") {
      ls >> spec.feature_end;
    } else if (head == "layer") {
      std::string kind_s;
      ls >> kind_s;
      LayerSpec lspec;
      lspec.kind = kind_from_string(kind_s);
      std::string tok;
      std::map<std::string, std::string> kv;
      while (ls >> tok) {
        const auto eq = tok.find('=');
        if (eq == std::string::npos) throw io_error("architecture: bad token " + tok);
        kv[tok.substr(0, eq)] = tok.substr(eq + 1);
      }
      auto geti = [&](const std::string& k, int dflt) {
        auto it = kv.find(k);
        return it == kv.end() ? dflt : std::stoi(it->second);
      };
      if (kv.count("name")) lspec.name = kv["name"];
      lspec.conv.in_channels = geti("in", 0);
      lspec.conv.out_channels = geti("out", 0);
      lspec.conv.kernel = geti("k", 3);
      lspec.conv.stride = geti("s", 1);
      lspec.conv.padding = geti("p", 0);
      lspec.conv.dilation = geti("r", 1);
      lspec.skip_source = geti("src", -1);
      lspec.out_h = geti("out_h", 0);
      lspec.out_w = geti("out_w", 0);
      if (kv.count("neuron")) lspec.neuron = neuron_from_string(kv["neuron"]);
      lspec.normalized = geti("norm", 0) != 0;
      spec.layers.push_back(std::move(lspec));
    } else {
      throw io_error("architecture: unknown line head " + head);
    }
  }
  spec.validate();
  return spec;
}

// --- parameter construction ---------------------------------------------------

BnttParams BnttParams::init(int steps, int channels) {
  BnttParams p;
  p.steps = steps;
  p.channels = channels;
  const size_t count = static_cast<size_t>(steps) * channels;
  p.gamma.assign(count, 1.0f);
  p.running_mean.assign(count, 0.0f);
  p.running_var.assign(count, 1.0f);
  return p;
}

BnParams BnParams::init(int channels) {
  BnParams p;
  p.channels = channels;
  p.gamma.assign(channels, 1.0f);
  p.beta.assign(channels, 0.0f);
  p.running_mean.assign(channels, 0.0f);
  p.running_var.assign(channels, 1.0f);
  return p;
}

ModelParams init_params(const NetworkSpec& spec, const BuildOptions& opt) {
  spec.validate();
  ModelParams params;
  params.mode = opt.mode;
  params.timesteps = opt.timesteps;
  params.leak = opt.leak;
  params.threshold = opt.threshold;
  params.layers.resize(spec.layers.size());
  for (size_t l = 0; l < spec.layers.size(); l++) {
    const LayerSpec& ls = spec.layers[l];
    if (!ls.has_weights()) continue;
    LayerParams& lp = params.layers[l];
    const ConvSpec& c = ls.conv;
    const bool tconv = ls.kind == LayerKind::transpose_conv;
    lp.weights = tconv ? Tensor4(c.in_channels, c.out_channels, c.kernel, c.kernel)
                       : Tensor4(c.out_channels, c.in_channels, c.kernel, c.kernel);
    const float bound = std::sqrt(1.0f / (static_cast<float>(c.in_channels) * c.kernel * c.kernel));
    Rng rng(mix_seed(opt.seed, 0x5eedull + l));
    for (float& w : lp.weights.flat()) w = rng.uniform(-bound, bound);
    if (ls.normalized) {
      if (opt.mode == Mode::ann)
        lp.bn = BnParams::init(c.out_channels);
      else
        lp.bntt = BnttParams::init(opt.timesteps, c.out_channels);
    }
  }
  return params;
}

// --- builders -----------------------------------------------------------------

namespace {

LayerSpec conv_layer(const std::string& name, int cin, int cout, int k, int pad, int dil,
                     NeuronKind neuron, bool norm, LayerKind kind = LayerKind::conv) {
  LayerSpec ls;
  ls.kind = kind;
  ls.name = name;
  ls.conv.in_channels = cin;
  ls.conv.out_channels = cout;
  ls.conv.kernel = k;
  ls.conv.stride = 1;
  ls.conv.padding = pad;
  ls.conv.dilation = dil;
  ls.neuron = neuron;
  ls.normalized = norm;
  return ls;
}

LayerSpec pool_layer(const std::string& name) {
  LayerSpec ls;
  ls.kind = LayerKind::avg_pool;
  ls.name = name;
  return ls;
}

}  // namespace

BuiltModel build_spiking_deeplab(int num_classes, int in_channels, int in_h, int in_w,
                                 const BuildOptions& opt) {
  if (num_classes < 2) throw config_error("deeplab: num_classes must be >= 2");
  if (in_h % 4 != 0 || in_w % 4 != 0)
    throw config_error("deeplab: input dims must be divisible by 4, got " +
                       std::to_string(in_h) + "x" + std::to_string(in_w));
  const int r1 = opt.dilation1, r2 = opt.dilation2;
  if (r1 < 1 || r2 < 1) throw config_error("deeplab: dilation rates must be >= 1");
  NetworkSpec spec;
  spec.in_channels = in_channels;
  spec.in_h = in_h;
  spec.in_w = in_w;
  spec.num_classes = num_classes;
  auto& L = spec.layers;
  L.push_back(conv_layer("conv1_1", in_channels, 64, 3, 1, 1, NeuronKind::lif, true));
  L.push_back(conv_layer("conv1_2", 64, 64, 3, 1, 1, NeuronKind::lif, true));
  L.push_back(pool_layer("pool1"));
  L.push_back(conv_layer("conv2_1", 64, 128, 3, 1, 1, NeuronKind::lif, true));
  L.push_back(conv_layer("conv2_2", 128, 128, 3, 1, 1, NeuronKind::lif, true));
  L.push_back(pool_layer("pool2"));
  L.push_back(conv_layer("conv3_1", 128, 256, 3, 1, 1, NeuronKind::lif, true));
  // padding r*(k-1)/2 keeps the extent; block 3 has no pooling
  L.push_back(conv_layer("conv3_2", 256, 256, 3, r1, r1, NeuronKind::lif, true,
                         LayerKind::dilated_conv));
  L.push_back(conv_layer("conv3_3", 256, 256, 3, r2, r2, NeuronKind::lif, true,
                         LayerKind::dilated_conv));
  L.push_back(conv_layer("fc6", 256, 1024, 3, 1, 1, NeuronKind::lif, true));
  L.push_back(conv_layer("fc7", 1024, 1024, 1, 0, 1, NeuronKind::lif, true));
  L.push_back(conv_layer("score", 1024, num_classes, 1, 0, 1, NeuronKind::accumulator, false,
                         LayerKind::classifier));
  LayerSpec head;
  head.kind = LayerKind::bilinear_head;
  head.name = "up";
  head.out_h = in_h;
  head.out_w = in_w;
  L.push_back(head);
  spec.feature_end = 8;  // conv3_3
  spec.validate();
  return {spec, init_params(spec, opt)};
}

BuiltModel build_spiking_fcn(int num_classes, int in_channels, int in_h, int in_w,
                             const BuildOptions& opt) {
  if (num_classes < 2) throw config_error("fcn: num_classes must be >= 2");
  if (in_h % 8 != 0 || in_w % 8 != 0)
    throw config_error("fcn: input dims must be divisible by 8, got " +
                       std::to_string(in_h) + "x" + std::to_string(in_w));
  NetworkSpec spec;
  spec.in_channels = in_channels;
  spec.in_h = in_h;
  spec.in_w = in_w;
  spec.num_classes = num_classes;
  auto& L = spec.layers;
  const int nc = num_classes;
  L.push_back(conv_layer("conv1_1", in_channels, 64, 3, 1, 1, NeuronKind::lif, true));  // 0
  L.push_back(conv_layer("conv1_2", 64, 64, 3, 1, 1, NeuronKind::lif, true));           // 1 skip A
  L.push_back(pool_layer("pool1"));                                                     // 2
  L.push_back(conv_layer("conv2_1", 64, 128, 3, 1, 1, NeuronKind::lif, true));          // 3
  L.push_back(conv_layer("conv2_2", 128, 128, 3, 1, 1, NeuronKind::lif, true));         // 4 skip B
  L.push_back(pool_layer("pool2"));                                                     // 5
  L.push_back(conv_layer("conv3_1", 128, 256, 3, 1, 1, NeuronKind::lif, true));         // 6
  L.push_back(conv_layer("conv3_2", 256, 256, 3, 1, 1, NeuronKind::lif, true));         // 7
  L.push_back(conv_layer("conv3_3", 256, 256, 3, 1, 1, NeuronKind::lif, true));         // 8 skip C
  L.push_back(pool_layer("pool3"));                                                     // 9
  L.push_back(conv_layer("fc6", 256, 1024, 3, 1, 1, NeuronKind::lif, true));            // 10
  L.push_back(conv_layer("fc7", 1024, 1024, 1, 0, 1, NeuronKind::lif, true));           // 11
  L.push_back(conv_layer("score", 1024, nc, 1, 0, 1, NeuronKind::lif, true));           // 12

  auto tconv_layer = [&](const std::string& name) {
    LayerSpec ls;
    ls.kind = LayerKind::transpose_conv;
    ls.name = name;
    ls.conv.in_channels = nc;
    ls.conv.out_channels = nc;
    ls.conv.kernel = 4;
    ls.conv.stride = 2;
    ls.conv.padding = 1;
    ls.neuron = NeuronKind::none;  // current merges with the skip projection
    return ls;
  };
  auto skip_layer = [&](const std::string& name, int src, int src_c, NeuronKind neuron,
                        bool norm) {
    LayerSpec ls = conv_layer(name, src_c, nc, 1, 0, 1, neuron, norm, LayerKind::skip_conv);
    ls.skip_source = src;
    return ls;
  };
  L.push_back(tconv_layer("up1"));                                   // 13
  L.push_back(skip_layer("skip3", 8, 256, NeuronKind::lif, true));   // 14
  L.push_back(tconv_layer("up2"));                                   // 15
  L.push_back(skip_layer("skip2", 4, 128, NeuronKind::lif, true));   // 16
  L.push_back(tconv_layer("up3"));                                   // 17
  // final merge accumulates at full resolution without firing
  L.push_back(skip_layer("skip1", 1, 64, NeuronKind::accumulator, false));  // 18
  spec.feature_end = 9;  // pool3
  spec.validate();
  return {spec, init_params(spec, opt)};
}

// --- normalization -------------------------------------------------------------

namespace {

// Shared by the public op and the engines; optionally captures what backward
// needs (xhat and batch inv_std).
Tensor4 bntt_apply(const Tensor4& x, BnttParams& p, int t, bool training, StepLayerCache* cache) {
  if (t < 0 || t >= p.steps)
    throw validation_error("bntt: step " + std::to_string(t) + " outside T=" +
                           std::to_string(p.steps));
  if (x.c() != p.channels)
    throw dimension_error("bntt: channel axis " + std::to_string(x.c()) + " vs params " +
                          std::to_string(p.channels));
  const int C = p.channels;
  const int64_t hw = static_cast<int64_t>(x.h()) * x.w();
  const int64_t N = static_cast<int64_t>(x.n()) * hw;
  std::vector<float> mean(C), inv_std(C);
  if (training) {
    for (int c = 0; c < C; c++) {
      double s = 0.0, s2 = 0.0;
      for (int i = 0; i < x.n(); i++) {
        const float* px = x.item(i) + c * hw;
        for (int64_t j = 0; j < hw; j++) {
          s += px[j];
          s2 += static_cast<double>(px[j]) * px[j];
        }
      }
      const double m = s / static_cast<double>(N);
      double var = s2 / static_cast<double>(N) - m * m;
      if (var < 0.0) var = 0.0;
      mean[c] = static_cast<float>(m);
      inv_std[c] = static_cast<float>(1.0 / std::sqrt(var + p.eps));
      const int64_t k = p.idx(t, c);
      p.running_mean[k] = (1.0f - p.momentum) * p.running_mean[k] + p.momentum * static_cast<float>(m);
      p.running_var[k] = (1.0f - p.momentum) * p.running_var[k] + p.momentum * static_cast<float>(var);
    }
  } else {
    for (int c = 0; c < C; c++) {
      const int64_t k = p.idx(t, c);
      mean[c] = p.running_mean[k];
      inv_std[c] = 1.0f / std::sqrt(p.running_var[k] + p.eps);
    }
  }
  Tensor4 out(x.shape());
  Tensor4* xhat_store = nullptr;
  if (cache) {
    cache->xhat = Tensor4(x.shape());
    cache->inv_std = inv_std;
    xhat_store = &cache->xhat;
  }
  for (int i = 0; i < x.n(); i++) {
    for (int c = 0; c < C; c++) {
      const float* px = x.item(i) + c * hw;
      float* po = out.item(i) + c * hw;
      float* ph = xhat_store ? xhat_store->item(i) + c * hw : nullptr;
      const float m = mean[c], is = inv_std[c], g = p.gamma[p.idx(t, c)];
      for (int64_t j = 0; j < hw; j++) {
        const float xh = (px[j] - m) * is;
        if (ph) ph[j] = xh;
        po[j] = g * xh;
      }
    }
  }
  return out;
}

Tensor4 bn_apply(const Tensor4& x, BnParams& p, bool training, StepLayerCache* cache) {
  BnttParams view;  // reuse the per-step machinery with T=1
  view.steps = 1;
  view.channels = p.channels;
  view.gamma = p.gamma;
  view.running_mean = p.running_mean;
  view.running_var = p.running_var;
  view.momentum = p.momentum;
  view.eps = p.eps;
  Tensor4 out = bntt_apply(x, view, 0, training, cache);
  if (training) {
    p.running_mean = view.running_mean;
    p.running_var = view.running_var;
  }
  // additive shift (BNTT has none, standard BN does)
  const int64_t hw = static_cast<int64_t>(x.h()) * x.w();
  for (int i = 0; i < out.n(); i++)
    for (int c = 0; c < p.channels; c++) {
      float* po = out.item(i) + c * hw;
      const float b = p.beta[c];
      for (int64_t j = 0; j < hw; j++) po[j] += b;
    }
  return out;
}

void elementwise_add(Tensor4& dst, const Tensor4& src, const char* what) {
  require_same_shape(dst, src, what);
  float* d = dst.data();
  const float* s = src.data();
  for (int64_t j = 0; j < dst.size(); j++) d[j] += s[j];
}

}  // namespace

Tensor4 bntt_normalize(const Tensor4& current, BnttParams& params, int t, bool training) {
  return bntt_apply(current, params, t, training, nullptr);
}

void SpikeTrace::merge(const SpikeTrace& other) {
  if (layers.empty()) {
    *this = other;
    return;
  }
  if (other.layers.size() != layers.size())
    throw validation_error("spike trace merge: layer count mismatch");
  for (size_t i = 0; i < layers.size(); i++) {
    if (layers[i].layer != other.layers[i].layer)
      throw validation_error("spike trace merge: layer name mismatch");
    layers[i].spikes += other.layers[i].spikes;
    layers[i].neurons += other.layers[i].neurons;
  }
  steps = std::max(steps, other.steps);
}

// --- stepped (spiking / relaxed) engine ----------------------------------------

namespace {

Tensor4 run_stepped(const NetworkSpec& spec, ModelParams& params, const SpikeTrain& train,
                    bool relaxed, SpikeTrace* trace, ForwardCache* cache, bool training) {
  spec.validate();
  if (params.layers.size() != spec.layers.size())
    throw state_error("forward: params not aligned with spec");
  if (train.steps() < 1) throw validation_error("forward: empty spike train");
  const Tensor4& f0 = train.frames[0];
  if (f0.c() != spec.in_channels || f0.h() != spec.in_h || f0.w() != spec.in_w)
    throw dimension_error("forward: frame shape " + f0.shape().str() + " vs network input (" +
                          std::to_string(spec.in_channels) + ", " + std::to_string(spec.in_h) +
                          ", " + std::to_string(spec.in_w) + ")");
  const int T = train.steps();
  const int L = static_cast<int>(spec.layers.size());
  const int n = f0.n();
  const auto shapes = spec.trace_shapes();
  const int acc_idx = spec.accumulator_index();
  const int bil_idx = spec.bilinear_index();

  std::vector<LifLayerState> states(L);
  Tensor4 accum;
  for (int l = 0; l < L; l++) {
    const LayerSpec& ls = spec.layers[l];
    if (ls.neuron == NeuronKind::lif) {
      states[l].membrane = Tensor4(n, shapes[l].c, shapes[l].h, shapes[l].w);
      states[l].leak = params.leak;
      states[l].threshold = params.threshold;
      const auto& th = params.layers[l].thresholds;
      if (th.size() == 1) states[l].threshold = th[0];
      else if (th.size() > 1) states[l].channel_thresholds = th;
    } else if (ls.neuron == NeuronKind::accumulator) {
      accum = Tensor4(n, shapes[l].c, shapes[l].h, shapes[l].w);
    }
  }

  if (cache) {
    *cache = ForwardCache{};
    cache->training = training;
    cache->mode = params.mode;
    cache->frames = train.frames;
    cache->step.resize(T);
    for (auto& row : cache->step) row.resize(L);
  }

  std::vector<Tensor4> local(L);  // current-step outputs when not caching
  std::vector<const Tensor4*> live(L, nullptr);
  std::vector<int64_t> spike_counts(L, 0);

  for (int t = 0; t < T; t++) {
    if (train.frames[t].shape() != f0.shape())
      throw dimension_error("forward: frame " + std::to_string(t) + " shape differs");
    const Tensor4* feat = &train.frames[t];
    for (int l = 0; l < L; l++) {
      const LayerSpec& ls = spec.layers[l];
      LayerParams& lp = params.layers[l];
      StepLayerCache* sc = cache ? &cache->step[t][l] : nullptr;
      Tensor4 out;
      switch (ls.kind) {
        case LayerKind::avg_pool:
          out = avg_pool2_forward(*feat);
          break;
        case LayerKind::bilinear_head:
          live[l] = nullptr;
          continue;  // applied once after the loop
        default: {
          Tensor4 cur;
          if (ls.kind == LayerKind::transpose_conv) {
            cur = transpose_conv_forward(*feat, lp.weights, ls.conv);
          } else if (ls.kind == LayerKind::skip_conv) {
            cur = conv2d_forward(*live[ls.skip_source], lp.weights, ls.conv);
            elementwise_add(cur, *feat, "skip merge");
          } else {
            cur = conv2d_forward(*feat, lp.weights, ls.conv);
          }
          if (!lp.bias.empty()) add_channel_bias(cur, lp.bias);
          if (ls.normalized) {
            if (!lp.bntt) throw state_error("layer " + ls.name + ": missing BNTT params");
            cur = bntt_apply(cur, *lp.bntt, t, training, sc);
          }
          if (ls.neuron == NeuronKind::lif) {
            Tensor4* pre = sc ? &sc->prefire : nullptr;
            out = relaxed ? relaxed_step(states[l], cur, pre) : lif_step(states[l], cur, pre);
            if (!relaxed && trace) {
              int64_t count = 0;
              for (float v : out.flat()) count += v > 0.5f ? 1 : 0;
              spike_counts[l] += count;
            }
          } else if (ls.neuron == NeuronKind::accumulator) {
            elementwise_add(accum, cur, "accumulator");
            out = Tensor4();
          } else {
            out = std::move(cur);
          }
        }
      }
      if (sc) {
        sc->out = std::move(out);
        live[l] = &sc->out;
      } else {
        local[l] = std::move(out);
        live[l] = &local[l];
      }
      feat = live[l];
    }
  }

  Tensor4 logits = accum;
  if (bil_idx >= 0)
    logits = bilinear_upsample(accum, spec.layers[bil_idx].out_h, spec.layers[bil_idx].out_w);

  if (trace) {
    trace->steps = T;
    trace->layers.clear();
    for (int l = 0; l < L; l++)
      if (spec.layers[l].neuron == NeuronKind::lif)
        trace->layers.push_back({spec.layers[l].name, spike_counts[l],
                                 shapes[l].numel() * static_cast<int64_t>(n)});
  }
  if (cache) {
    cache->accum = std::move(accum);
    cache->logits = logits;
    cache->valid = true;
  }
  (void)acc_idx;
  return logits;
}

}  // namespace

Tensor4 forward_spiking(const NetworkSpec& spec, ModelParams& params, const SpikeTrain& train,
                        SpikeTrace* trace, ForwardCache* cache, bool training) {
  if (params.mode != Mode::spiking)
    throw mode_error("forward_spiking: model mode is " + to_string(params.mode));
  return run_stepped(spec, params, train, /*relaxed=*/false, trace, cache, training);
}

Tensor4 forward_relaxed(const NetworkSpec& spec, ModelParams& params, const SpikeTrain& train,
                        ForwardCache* cache, bool training) {
  if (params.mode != Mode::relaxed)
    throw mode_error("forward_relaxed: model mode is " + to_string(params.mode));
  return run_stepped(spec, params, train, /*relaxed=*/true, nullptr, cache, training);
}

// --- ANN engine -----------------------------------------------------------------

namespace {

Tensor4 relu(Tensor4 x) {
  for (float& v : x.flat())
    if (v < 0.0f) v = 0.0f;
  return x;
}

}  // namespace

Tensor4 forward_ann(const NetworkSpec& spec, ModelParams& params,
                    const std::vector<Tensor4>& frames, ForwardCache* cache, bool training) {
  if (params.mode != Mode::ann)
    throw mode_error("forward_ann: model mode is " + to_string(params.mode));
  spec.validate();
  if (frames.empty()) throw validation_error("forward_ann: no input frames");
  const Tensor4& f0 = frames[0];
  if (f0.c() != spec.in_channels || f0.h() != spec.in_h || f0.w() != spec.in_w)
    throw dimension_error("forward_ann: frame shape " + f0.shape().str() +
                          " vs network input");
  const int F = static_cast<int>(frames.size());
  const int L = static_cast<int>(spec.layers.size());
  if (F > 1 && (training || cache))
    throw state_error("forward_ann: multi-frame inputs support evaluation only");
  if (F > 1 && (spec.feature_end < 0 || spec.feature_end >= L - 1))
    throw config_error("forward_ann: multi-frame input needs a feature-extractor boundary");

  if (cache) {
    *cache = ForwardCache{};
    cache->training = training;
    cache->mode = Mode::ann;
    cache->frames = frames;
    cache->step.resize(1);
    cache->step[0].resize(L);
  }

  const auto shapes = spec.trace_shapes();
  const int bil_idx = spec.bilinear_index();
  std::vector<Tensor4> local(L);
  std::vector<const Tensor4*> live(L, nullptr);

  auto run_layer = [&](int l, const Tensor4& in) -> Tensor4 {
    const LayerSpec& ls = spec.layers[l];
    LayerParams& lp = params.layers[l];
    StepLayerCache* sc = cache ? &cache->step[0][l] : nullptr;
    switch (ls.kind) {
      case LayerKind::avg_pool:
        return avg_pool2_forward(in);
      case LayerKind::bilinear_head:
        return bilinear_upsample(in, ls.out_h, ls.out_w);
      default: {
        Tensor4 cur;
        if (ls.kind == LayerKind::transpose_conv) {
          cur = transpose_conv_forward(in, lp.weights, ls.conv);
        } else if (ls.kind == LayerKind::skip_conv) {
          cur = conv2d_forward(*live[ls.skip_source], lp.weights, ls.conv);
          elementwise_add(cur, in, "skip merge");
        } else {
          cur = conv2d_forward(in, lp.weights, ls.conv);
        }
        if (!lp.bias.empty()) add_channel_bias(cur, lp.bias);
        if (ls.normalized) {
          if (!lp.bn) throw state_error("layer " + ls.name + ": missing BN params");
          cur = bn_apply(cur, *lp.bn, training, sc);
        }
        if (sc) sc->prefire = cur;
        if (ls.neuron == NeuronKind::lif) return relu(std::move(cur));
        return cur;  // accumulator (logits) or raw current
      }
    }
  };

  auto run_range = [&](int from, int to, Tensor4 feat) -> Tensor4 {
    for (int l = from; l < to; l++) {
      Tensor4 out = run_layer(l, feat);
      if (cache) {
        cache->step[0][l].out = std::move(out);
        live[l] = &cache->step[0][l].out;
      } else {
        local[l] = std::move(out);
        live[l] = &local[l];
      }
      feat = *live[l];
    }
    return feat;
  };

  Tensor4 logits;
  if (F == 1) {
    logits = run_range(0, L, frames[0]);
  } else {
    // average the feature-extractor outputs (and skip sources) over frames
    const int boundary = spec.feature_end;
    const auto skip_mask = spec.skip_source_mask();
    Tensor4 avg_feat;
    std::vector<Tensor4> avg_src(L);
    for (int f = 0; f < F; f++) {
      if (frames[f].shape() != f0.shape())
        throw dimension_error("forward_ann: frame " + std::to_string(f) + " shape differs");
      Tensor4 feat = run_range(0, boundary + 1, frames[f]);
      if (f == 0) avg_feat = feat;
      else elementwise_add(avg_feat, feat, "frame average");
      for (int l = 0; l <= boundary; l++)
        if (skip_mask[l]) {
          if (f == 0) avg_src[l] = *live[l];
          else elementwise_add(avg_src[l], *live[l], "frame average");
        }
    }
    const float inv = 1.0f / static_cast<float>(F);
    for (float& v : avg_feat.flat()) v *= inv;
    for (int l = 0; l <= boundary; l++)
      if (skip_mask[l]) {
        for (float& v : avg_src[l].flat()) v *= inv;
        local[l] = std::move(avg_src[l]);
        live[l] = &local[l];
      }
    logits = run_range(boundary + 1, L, std::move(avg_feat));
  }

  if (cache) {
    const int acc = spec.accumulator_index();
    cache->accum = cache->step[0][acc].out;
    cache->logits = logits;
    cache->valid = true;
  }
  (void)shapes;
  (void)bil_idx;
  return logits;
}

}  // namespace spikeseg
