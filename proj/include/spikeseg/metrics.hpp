#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "spikeseg/dataset.hpp"
#include "spikeseg/network.hpp"

namespace spikeseg {

// argmax over the channel axis; ties resolve to the lowest class index
LabelMap argmax_channels(const Tensor4& logits);

struct IoUReport {
  std::vector<double> per_class;  // defined where present[c]
  std::vector<bool> present;      // class appears in prediction or label
  double mean = 0.0;              // over present classes
};

IoUReport miou(const LabelMap& predictions, const LabelMap& labels, int num_classes,
               int ignore_index = 255);

// streaming confusion counts over batches
class ConfusionAccumulator {
 public:
  explicit ConfusionAccumulator(int num_classes, int ignore_index = 255);
  void add(const LabelMap& predictions, const LabelMap& labels);
  IoUReport result() const;

 private:
  int classes_;
  int ignore_;
  std::vector<int64_t> counts_;  // classes x classes, label-major
};

// R_s(l) = spikes over all steps / neurons; ranges up to T, not 1
std::vector<double> spike_rate(const SpikeTrace& trace);

struct LayerFlops {
  std::string layer;
  int64_t flops = 0;
};

// MAC-site counting per weight layer: conv k^2*O^2*C_in*C_out (transposed
// conv over its upsampled output extent); pooling, interpolation, BNTT and
// threshold comparisons are excluded.
std::vector<LayerFlops> flops(const NetworkSpec& spec);
int64_t linear_flops(int c_in, int c_out);

// 45nm CMOS per-operation energies (picojoules)
struct EnergyConstants {
  double e_mult = 3.7;
  double e_add = 0.9;
  double e_mac = 4.6;  // e_mult + e_add
  double e_ac = 0.9;
};

struct EnergyRow {
  std::string layer;
  int64_t flops_ann = 0;
  double rate = 0.0;       // R_s of the neuron population this layer drives
  double flops_snn = 0.0;  // flops_ann * rate
};

struct EnergyReport {
  std::vector<EnergyRow> rows;
  double e_ann_pj = 0.0;  // sum flops_ann * E_MAC
  double e_snn_pj = 0.0;  // sum flops_snn * E_AC
  double ratio = 0.0;     // e_ann / e_snn (0 when e_snn == 0)
  EnergyConstants constants;

  std::string to_csv() const;  // layer,flops_ann,spike_rate,flops_snn + totals footer
};

EnergyReport energy(const NetworkSpec& spec, const SpikeTrace& trace);

// --- evaluation -------------------------------------------------------------------

struct EvalOptions {
  int batch = 16;
  int timesteps = 20;     // encoding steps for spiking models on static data
  uint64_t seed = 77;     // encoder seed base
  double noise_sigma = 0; // Gaussian input noise (0 = clean)
  int ignore_index = 255;
};

struct EvalResult {
  double miou = 0.0;
  double loss = 0.0;
  IoUReport report;
  SpikeTrace trace;  // spiking models only
};

EvalResult evaluate(const NetworkSpec& spec, ModelParams& params, const Dataset& data,
                    const EvalOptions& opt, bool with_trace = false);

// --- robustness protocol -------------------------------------------------------------

struct RobustnessModel {
  std::string name;
  const NetworkSpec* spec = nullptr;
  ModelParams* params = nullptr;
};

struct RobustnessRow {
  double sigma = 0.0;
  std::string model;
  double clean_miou = 0.0;
  double noise_miou = 0.0;
  double drop_pct = 0.0;   // (clean - noise) / clean * 100
  bool drop_defined = true;  // false when clean mIoU is 0
};

// Relative mIoU drop across noise levels; sigmas must be nonnegative and
// include 0 as the clean anchor.
std::vector<RobustnessRow> robustness_sweep(const std::vector<RobustnessModel>& models,
                                            const Dataset& data,
                                            const std::vector<double>& sigmas,
                                            const EvalOptions& base_options);

std::string robustness_csv(const std::vector<RobustnessRow>& rows);

}  // namespace spikeseg
