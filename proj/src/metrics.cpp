#include "spikeseg/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "spikeseg/training.hpp"

namespace spikeseg {

LabelMap argmax_channels(const Tensor4& logits) {
  LabelMap out(logits.n(), logits.h(), logits.w());
  const int C = logits.c();
  const int64_t hw = static_cast<int64_t>(logits.h()) * logits.w();
  for (int i = 0; i < logits.n(); i++) {
    const float* base = logits.item(i);
    for (int64_t j = 0; j < hw; j++) {
      int best = 0;
      float bv = base[j];
      for (int c = 1; c < C; c++) {
        const float v = base[c * hw + j];
        if (v > bv) {
          bv = v;
          best = c;
        }
      }
      out.data[i * hw + j] = best;
    }
  }
  return out;
}

ConfusionAccumulator::ConfusionAccumulator(int num_classes, int ignore_index)
    : classes_(num_classes), ignore_(ignore_index) {
  if (num_classes < 2) throw validation_error("miou: num_classes must be >= 2");
  counts_.assign(static_cast<size_t>(num_classes) * num_classes, 0);
}

void ConfusionAccumulator::add(const LabelMap& predictions, const LabelMap& labels) {
  if (predictions.n != labels.n || predictions.h != labels.h || predictions.w != labels.w)
    throw dimension_error("miou: prediction and label maps differ in shape");
  for (int64_t j = 0; j < labels.size(); j++) {
    const int32_t y = labels.data[j];
    if (y == ignore_) continue;
    const int32_t p = predictions.data[j];
    if (y < 0 || y >= classes_ || p < 0 || p >= classes_)
      throw validation_error("miou: class index outside [0, " + std::to_string(classes_) + ")");
    counts_[static_cast<size_t>(y) * classes_ + p]++;
  }
}

IoUReport ConfusionAccumulator::result() const {
  IoUReport r;
  r.per_class.assign(classes_, 0.0);
  r.present.assign(classes_, false);
  double sum = 0.0;
  int present = 0;
  for (int c = 0; c < classes_; c++) {
    int64_t tp = counts_[static_cast<size_t>(c) * classes_ + c];
    int64_t fn = 0, fp = 0;
    for (int k = 0; k < classes_; k++) {
      if (k == c) continue;
      fn += counts_[static_cast<size_t>(c) * classes_ + k];
      fp += counts_[static_cast<size_t>(k) * classes_ + c];
    }
    const int64_t unions = tp + fp + fn;
    if (unions == 0) continue;  // absent from both maps: excluded from the mean
    r.present[c] = true;
    r.per_class[c] = static_cast<double>(tp) / static_cast<double>(unions);
    sum += r.per_class[c];
    present++;
  }
  r.mean = present > 0 ? sum / present : 0.0;
  return r;
}

IoUReport miou(const LabelMap& predictions, const LabelMap& labels, int num_classes,
               int ignore_index) {
  ConfusionAccumulator acc(num_classes, ignore_index);
  acc.add(predictions, labels);
  return acc.result();
}

std::vector<double> spike_rate(const SpikeTrace& trace) {
  std::vector<double> rates;
  rates.reserve(trace.layers.size());
  for (const auto& e : trace.layers) {
    if (e.neurons <= 0) throw validation_error("spike_rate: neuron count must be > 0");
    rates.push_back(static_cast<double>(e.spikes) / static_cast<double>(e.neurons));
  }
  return rates;
}

int64_t linear_flops(int c_in, int c_out) {
  return static_cast<int64_t>(c_in) * c_out;
}

std::vector<LayerFlops> flops(const NetworkSpec& spec) {
  spec.validate();
  const auto shapes = spec.trace_shapes();
  std::vector<LayerFlops> out;
  for (size_t l = 0; l < spec.layers.size(); l++) {
    const LayerSpec& ls = spec.layers[l];
    if (!ls.has_weights()) continue;
    const int64_t k2 = static_cast<int64_t>(ls.conv.kernel) * ls.conv.kernel;
    const int64_t o2 = static_cast<int64_t>(shapes[l].h) * shapes[l].w;
    out.push_back({ls.name, k2 * o2 * ls.conv.in_channels * ls.conv.out_channels});
  }
  return out;
}

EnergyReport energy(const NetworkSpec& spec, const SpikeTrace& trace) {
  EnergyReport report;
  const auto layer_flops = flops(spec);
  // rate lookup by LIF layer name
  std::vector<std::pair<std::string, double>> rates;
  for (const auto& e : trace.layers) {
    if (e.neurons <= 0) throw validation_error("energy: trace neuron count must be > 0");
    rates.emplace_back(e.layer, static_cast<double>(e.spikes) / static_cast<double>(e.neurons));
  }
  auto rate_of = [&](const std::string& name) -> double {
    for (const auto& [n, r] : rates)
      if (n == name) return r;
    throw validation_error("energy: trace misses layer " + name);
  };
  // A weight layer is charged at the rate of the neuron population it drives:
  // its own LIF for firing layers, the following merge's LIF for transposed
  // convs, zero for the non-firing accumulator.
  size_t fi = 0;
  for (size_t l = 0; l < spec.layers.size(); l++) {
    const LayerSpec& ls = spec.layers[l];
    if (!ls.has_weights()) continue;
    EnergyRow row;
    row.layer = ls.name;
    row.flops_ann = layer_flops[fi++].flops;
    if (ls.neuron == NeuronKind::lif) {
      row.rate = rate_of(ls.name);
    } else if (ls.neuron == NeuronKind::none && l + 1 < spec.layers.size() &&
               spec.layers[l + 1].kind == LayerKind::skip_conv &&
               spec.layers[l + 1].neuron == NeuronKind::lif) {
      row.rate = rate_of(spec.layers[l + 1].name);
    } else {
      row.rate = 0.0;
    }
    row.flops_snn = static_cast<double>(row.flops_ann) * row.rate;
    report.rows.push_back(row);
  }
  for (const auto& row : report.rows) {
    report.e_ann_pj += static_cast<double>(row.flops_ann) * report.constants.e_mac;
    report.e_snn_pj += row.flops_snn * report.constants.e_ac;
  }
  report.ratio = report.e_snn_pj > 0.0 ? report.e_ann_pj / report.e_snn_pj : 0.0;
  return report;
}

std::string EnergyReport::to_csv() const {
  std::ostringstream os;
  os << "layer,flops_ann,spike_rate,flops_snn\n";
  for (const auto& r : rows)
    os << r.layer << "," << r.flops_ann << "," << r.rate << "," << r.flops_snn << "\n";
  os << "total_e_ann_pj," << e_ann_pj << ",total_e_snn_pj," << e_snn_pj << "\n";
  os << "ratio_e_ann_over_e_snn," << ratio << ",,\n";
  return os.str();
}

// --- evaluation -------------------------------------------------------------------

namespace {

Tensor4 noisy_image(const Tensor4& image, double sigma, uint64_t seed) {
  if (sigma <= 0.0) return image;
  Tensor4 out = image;
  Rng rng(seed);
  for (float& v : out.flat()) {
    v += static_cast<float>(sigma) * rng.normal();
    v = std::clamp(v, 0.0f, 1.0f);  // keep the rate coder's domain
  }
  return out;
}

void add_frame_noise(SpikeTrain& train, double sigma, uint64_t seed) {
  if (sigma <= 0.0) return;
  Rng rng(seed);
  for (auto& f : train.frames)
    for (float& v : f.flat()) v += static_cast<float>(sigma) * rng.normal();
}

}  // namespace

EvalResult evaluate(const NetworkSpec& spec, ModelParams& params, const Dataset& data,
                    const EvalOptions& opt, bool with_trace) {
  if (data.samples.empty()) throw config_error("evaluate: empty dataset");
  EvalResult res;
  ConfusionAccumulator conf(data.num_classes, opt.ignore_index);
  double loss_sum = 0.0;
  int64_t loss_n = 0;
  const int batch = std::max(1, opt.batch);
  for (int start = 0, bi = 0; start < data.size(); start += batch, bi++) {
    const int end = std::min(data.size(), start + batch);
    std::vector<int> idx(end - start);
    for (int i = start; i < end; i++) idx[i - start] = i;

    LabelMap labels(static_cast<int>(idx.size()), data.samples[idx[0]].label.h,
                    data.samples[idx[0]].label.w);
    for (size_t b = 0; b < idx.size(); b++) {
      const LabelMap& l = data.samples[idx[b]].label;
      std::copy(l.data.begin(), l.data.end(), labels.data.begin() + b * l.size());
    }

    Tensor4 logits;
    if (params.mode == Mode::ann) {
      if (data.event_based) {
        // per-sample multi-frame forward (embeddings averaged over frames)
        for (size_t b = 0; b < idx.size(); b++) {
          const Sample& s = data.samples[idx[b]];
          std::vector<Tensor4> frames = s.frames;
          if (opt.noise_sigma > 0.0) {
            SpikeTrain tmp;
            tmp.frames = frames;
            add_frame_noise(tmp, opt.noise_sigma, mix_seed(opt.seed, 0xD5ull, idx[b]));
            frames = tmp.frames;
          }
          Tensor4 one = forward_ann(spec, params, frames);
          if (logits.empty()) logits = Tensor4(static_cast<int>(idx.size()), one.c(), one.h(), one.w());
          std::copy(one.item(0), one.item(0) + one.item_size(), logits.item(static_cast<int>(b)));
        }
      } else {
        Tensor4 images(static_cast<int>(idx.size()), data.channels(), data.height(), data.width());
        for (size_t b = 0; b < idx.size(); b++) {
          Tensor4 img = noisy_image(data.samples[idx[b]].image, opt.noise_sigma,
                                    mix_seed(opt.seed, 0xA0ull, idx[b]));
          std::copy(img.item(0), img.item(0) + img.item_size(), images.item(static_cast<int>(b)));
        }
        logits = forward_ann(spec, params, {images});
      }
    } else if (params.mode == Mode::spiking) {
      SpikeTrain st;
      if (data.event_based) {
        st = stack_event_frames(data, idx, opt.timesteps);
        add_frame_noise(st, opt.noise_sigma, mix_seed(opt.seed, 0xD5ull, bi));
      } else {
        Tensor4 images(static_cast<int>(idx.size()), data.channels(), data.height(), data.width());
        for (size_t b = 0; b < idx.size(); b++) {
          Tensor4 img = noisy_image(data.samples[idx[b]].image, opt.noise_sigma,
                                    mix_seed(opt.seed, 0xA0ull, idx[b]));
          std::copy(img.item(0), img.item(0) + img.item_size(), images.item(static_cast<int>(b)));
        }
        st = poisson_encode(images, opt.timesteps, mix_seed(opt.seed, 0x9Eull, bi));
      }
      SpikeTrace trace;
      logits = forward_spiking(spec, params, st, with_trace ? &trace : nullptr);
      if (with_trace) res.trace.merge(trace);
    } else {
      throw mode_error("evaluate: relaxed mode is a verification path, not an inference path");
    }

    const LossValue lv = spatial_cross_entropy(logits, labels, opt.ignore_index);
    loss_sum += lv.loss * static_cast<double>(lv.normalization);
    loss_n += lv.normalization;
    conf.add(argmax_channels(logits), labels);
  }
  res.report = conf.result();
  res.miou = res.report.mean;
  res.loss = loss_n > 0 ? loss_sum / static_cast<double>(loss_n) : 0.0;
  return res;
}

// --- robustness ------------------------------------------------------------------

std::vector<RobustnessRow> robustness_sweep(const std::vector<RobustnessModel>& models,
                                            const Dataset& data,
                                            const std::vector<double>& sigmas,
                                            const EvalOptions& base_options) {
  if (models.empty()) throw config_error("robustness: no models");
  bool has_anchor = false;
  for (double s : sigmas) {
    if (s < 0.0) throw validation_error("robustness: sigma must be nonnegative");
    if (s == 0.0) has_anchor = true;
  }
  if (!has_anchor) throw validation_error("robustness: sigma list must include 0");

  std::vector<RobustnessRow> rows;
  std::vector<double> clean(models.size(), 0.0);
  for (size_t m = 0; m < models.size(); m++) {
    EvalOptions opt = base_options;
    opt.noise_sigma = 0.0;
    clean[m] = evaluate(*models[m].spec, *models[m].params, data, opt).miou;
  }
  for (size_t si = 0; si < sigmas.size(); si++) {
    for (size_t m = 0; m < models.size(); m++) {
      EvalOptions opt = base_options;
      opt.noise_sigma = sigmas[si];
      opt.seed = mix_seed(base_options.seed, 0xF00Dull, si);
      RobustnessRow row;
      row.sigma = sigmas[si];
      row.model = models[m].name;
      row.clean_miou = clean[m];
      row.noise_miou =
          sigmas[si] == 0.0 ? clean[m]
                            : evaluate(*models[m].spec, *models[m].params, data, opt).miou;
      if (row.clean_miou > 0.0) {
        row.drop_pct = (row.clean_miou - row.noise_miou) / row.clean_miou * 100.0;
        row.drop_defined = true;
      } else {
        row.drop_pct = 0.0;
        row.drop_defined = false;
      }
      rows.push_back(row);
    }
  }
  return rows;
}

std::string robustness_csv(const std::vector<RobustnessRow>& rows) {
  std::ostringstream os;
  os << "sigma,model,clean_miou,noise_miou,drop_pct\n";
  for (const auto& r : rows) {
    os << r.sigma << "," << r.model << "," << r.clean_miou << "," << r.noise_miou << ",";
    if (r.drop_defined) os << r.drop_pct;
    os << "\n";
  }
  return os.str();
}

}  // namespace spikeseg
