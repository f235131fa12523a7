#include <CLI11.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>

#include "spikeseg/checkpoint.hpp"
#include "spikeseg/config.hpp"
#include "spikeseg/conversion.hpp"
#include "spikeseg/dataset.hpp"
#include "spikeseg/metrics.hpp"
#include "spikeseg/network.hpp"
#include "spikeseg/training.hpp"

namespace fs = std::filesystem;
using namespace spikeseg;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitRuntime = 1;
constexpr int kExitUsage = 2;

std::string fmt(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.9g", v);
  return buf;
}

void atomic_write_text(const std::string& path, const std::string& text) {
  const std::string tmp = path + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary);
    if (!out) throw io_error("cannot write " + tmp);
    out << text;
    if (!out) throw io_error("write failed: " + tmp);
  }
  std::error_code ec;
  fs::rename(tmp, path, ec);
  if (ec) throw io_error("rename failed: " + path);
}

void require_file(const std::string& path, const char* what) {
  if (path.empty()) throw config_error(std::string(what) + " path required");
  if (!fs::exists(path)) throw config_error(std::string("missing ") + what + ": " + path);
}

ExperimentConfig resolve_config(const std::string& config_path,
                                const std::vector<std::string>& overrides) {
  ExperimentConfig cfg;
  if (!config_path.empty()) {
    require_file(config_path, "config file");
    cfg.load_file(config_path);
  }
  cfg.apply_overrides(overrides);
  return cfg;
}

BuiltModel build_from_config(const ExperimentConfig& cfg) {
  BuildOptions opt;
  opt.mode = cfg.get("mode") == "ann" ? Mode::ann : Mode::spiking;
  opt.timesteps = cfg.get_int("timesteps");
  opt.leak = cfg.get_float("leak");
  opt.threshold = cfg.get_float("threshold");
  opt.seed = cfg.get_u64("seed");
  const auto dil = cfg.get_int_list("dilation");
  opt.dilation1 = dil[0];
  opt.dilation2 = dil.size() > 1 ? dil[1] : dil[0];
  const int size = cfg.get_int("input_size");
  const int ch = cfg.get_int("input_channels");
  const int classes = cfg.get_int("num_classes");
  if (cfg.get("model") == "fcn") return build_spiking_fcn(classes, ch, size, size, opt);
  return build_spiking_deeplab(classes, ch, size, size, opt);
}

SyntheticSpec synth_from_config(const ExperimentConfig& cfg) {
  SyntheticSpec s;
  s.size = cfg.get_int("synth.size");
  s.classes = cfg.get_int("synth.classes");
  s.train_count = cfg.get_int("synth.train");
  s.val_count = cfg.get_int("synth.val");
  s.shapes_min = cfg.get_int("synth.shapes_min");
  s.shapes_max = cfg.get_int("synth.shapes_max");
  s.seed = cfg.get_u64("synth.seed");
  s.contrast = cfg.get_float("synth.contrast");
  s.noise = cfg.get_float("synth.noise");
  s.rgb = cfg.get_bool("synth.rgb");
  s.events = cfg.get_bool("synth.events");
  s.frames = cfg.get_int("synth.frames");
  s.window_us = cfg.get_i64("window_us");
  return s;
}

int cmd_train(const std::string& config_path, const std::vector<std::string>& overrides) {
  ExperimentConfig cfg = resolve_config(config_path, overrides);
  const std::string dataset_dir = cfg.get("dataset");
  require_file(dataset_dir, "dataset");
  const std::string out_dir = cfg.get("out_dir");
  std::error_code ec;
  fs::create_directories(out_dir, ec);
  if (!fs::exists(out_dir)) throw io_error("cannot create out_dir: " + out_dir);

  const std::string resolved = cfg.render();
  std::cout << "# resolved config\n" << resolved;
  atomic_write_text((fs::path(out_dir) / "config.txt").string(), resolved);

  const int64_t window = cfg.get_i64("window_us");
  Dataset train_set = load_dataset(dataset_dir, "train", window);
  Dataset eval_set = load_dataset(dataset_dir, cfg.get("eval_split"), window);
  if (train_set.num_classes != cfg.get_int("num_classes"))
    throw config_error("dataset has " + std::to_string(train_set.num_classes) +
                       " classes, config says " + cfg.get("num_classes"));
  if (!train_set.event_based &&
      (train_set.height() != cfg.get_int("input_size") ||
       train_set.channels() != cfg.get_int("input_channels")))
    throw config_error("dataset geometry does not match input_size/input_channels");

  BuiltModel model = build_from_config(cfg);

  TrainConfig tc;
  tc.epochs = cfg.get_int("epochs");
  tc.batch = cfg.get_int("batch");
  tc.timesteps = cfg.get_int("timesteps");
  tc.seed = cfg.get_u64("seed");
  tc.encoder = cfg.get("encoder") == "dvs" ? EncoderKind::dvs_frames : EncoderKind::poisson;
  tc.ignore_index = cfg.get_int("ignore_index");
  tc.grad_clip = cfg.get_float("grad_clip");
  tc.adam.lr = cfg.get_float("lr");
  tc.stop_miou = cfg.get_float("stop_miou");
  const bool log_wall = cfg.get_bool("log_wall");

  const std::string log_path = (fs::path(out_dir) / "log.csv").string();
  std::ofstream log(log_path, std::ios::binary);
  if (!log) throw io_error("cannot write " + log_path);
  log << "epoch,split,loss,miou,lr,wall_ms\n";

  auto row_sink = [&](const EpochRow& row) {
    log << row.epoch << "," << row.split << "," << fmt(row.loss) << "," << fmt(row.miou) << ","
        << fmt(row.lr) << ",";
    if (log_wall && row.wall_ms >= 0) log << row.wall_ms;
    log << "\n";
    log.flush();
    std::cout << "epoch " << row.epoch << " [" << row.split << "] loss " << fmt(row.loss)
              << " miou " << fmt(row.miou) << " lr " << fmt(row.lr) << "\n";
  };
  auto best_sink = [&](int epoch, double miou, const ModelParams& params) {
    Checkpoint ck;
    ck.spec = model.spec;
    ck.params = params;
    ck.meta["config"] = resolved;
    ck.meta["best_epoch"] = std::to_string(epoch);
    ck.meta["best_miou"] = fmt(miou);
    save_checkpoint((fs::path(out_dir) / "best.ckpt").string(), ck);
  };

  TrainResult result = train(model.spec, model.params, train_set, eval_set, tc, row_sink,
                             best_sink, log_wall);

  Checkpoint final_ck;
  final_ck.spec = model.spec;
  final_ck.params = model.params;
  final_ck.meta["config"] = resolved;
  save_checkpoint((fs::path(out_dir) / "final.ckpt").string(), final_ck);
  std::cout << "best val miou " << fmt(result.best_miou) << " at epoch " << result.best_epoch
            << " (" << result.epochs_run << " epochs run)\n";
  return kExitOk;
}

int cmd_eval(const std::string& ckpt_path, const std::string& dataset_dir,
             const std::string& split, const std::string& overlays_dir, int batch,
             int timesteps, uint64_t seed) {
  require_file(ckpt_path, "checkpoint");
  require_file(dataset_dir, "dataset");
  Checkpoint ck = load_checkpoint(ckpt_path);
  Dataset data = load_dataset(dataset_dir, split);
  if (data.num_classes != ck.spec.num_classes)
    throw validation_error("checkpoint has " + std::to_string(ck.spec.num_classes) +
                           " classes, dataset has " + std::to_string(data.num_classes));
  EvalOptions opt;
  opt.batch = batch;
  opt.timesteps = timesteps > 0 ? timesteps : ck.params.timesteps;
  opt.seed = seed;
  EvalResult res = evaluate(ck.spec, ck.params, data, opt);
  std::cout << "class,iou\n";
  for (int c = 0; c < data.num_classes; c++) {
    std::cout << c << ",";
    if (res.report.present[c]) std::cout << fmt(res.report.per_class[c]);
    else std::cout << "absent";
    std::cout << "\n";
  }
  std::cout << "mean," << fmt(res.miou) << "\n";

  if (!overlays_dir.empty()) {
    fs::create_directories(overlays_dir);
    char name[32];
    for (int i = 0; i < data.size(); i++) {
      const Sample& s = data.samples[i];
      Tensor4 logits;
      if (ck.params.mode == Mode::ann) {
        logits = s.event_based() ? forward_ann(ck.spec, ck.params, s.frames)
                                 : forward_ann(ck.spec, ck.params, {s.image});
      } else {
        SpikeTrain st;
        if (s.event_based()) {
          std::vector<int> idx = {i};
          st = stack_event_frames(data, idx, opt.timesteps);
        } else {
          st = poisson_encode(s.image, opt.timesteps, mix_seed(seed, 0x0Bull, i));
        }
        logits = forward_spiking(ck.spec, ck.params, st);
      }
      const LabelMap pred = argmax_channels(logits);
      // image | prediction | ground truth panels
      const int h = pred.h, w = pred.w;
      Tensor4 panel(1, 3, h, 3 * w + 2);
      for (int y = 0; y < h; y++) {
        for (int x = 0; x < w; x++) {
          for (int c = 0; c < 3; c++) {
            float v = 0.5f;
            if (!s.event_based())
              v = s.image.at(0, std::min(c, s.image.c() - 1), y, x);
            else if (!s.frames.empty())
              v = std::min(1.0f, s.frames[0].at(0, 0, y, x) * 0.5f);
            panel.at(0, c, y, x) = v;
          }
        }
      }
      auto paint_classmap = [&](const LabelMap& m, int x0) {
        static const int pal[12][3] = {{0, 0, 0},     {230, 25, 75},  {60, 180, 75},
                                       {255, 225, 25}, {0, 130, 200}, {245, 130, 48},
                                       {145, 30, 180}, {70, 240, 240}, {240, 50, 230},
                                       {210, 245, 60}, {0, 128, 128}, {220, 190, 255}};
        for (int y = 0; y < h; y++)
          for (int x = 0; x < w; x++) {
            const int32_t v = m.at(0, y, x);
            for (int c = 0; c < 3; c++)
              panel.at(0, c, y, x0 + x) =
                  v >= 0 && v < data.num_classes ? pal[v % 12][c] / 255.0f : 1.0f;
          }
      };
      paint_classmap(pred, w + 1);
      paint_classmap(s.label, 2 * w + 2);
      std::snprintf(name, sizeof(name), "%04d.ppm", i);
      write_image_pnm((fs::path(overlays_dir) / name).string(), panel);
    }
    std::cout << "wrote " << data.size() << " overlays to " << overlays_dir << "\n";
  }
  return kExitOk;
}

int cmd_profile(const std::string& ckpt_path, const std::string& dataset_dir,
                const std::string& split, const std::string& out_csv, int batch, int timesteps,
                uint64_t seed) {
  require_file(ckpt_path, "checkpoint");
  require_file(dataset_dir, "dataset");
  Checkpoint ck = load_checkpoint(ckpt_path);
  Dataset data = load_dataset(dataset_dir, split);
  if (ck.params.mode == Mode::ann) {
    std::cout << "notice: ANN-mode checkpoint, reporting E_ANN only\n";
    const auto lf = flops(ck.spec);
    std::ostringstream os;
    os << "layer,flops_ann,spike_rate,flops_snn\n";
    double e_ann = 0.0;
    EnergyConstants k;
    for (const auto& r : lf) {
      os << r.layer << "," << r.flops << ",,\n";
      e_ann += static_cast<double>(r.flops) * k.e_mac;
    }
    os << "total_e_ann_pj," << fmt(e_ann) << ",total_e_snn_pj,\n";
    atomic_write_text(out_csv, os.str());
    std::cout << "E_ANN " << fmt(e_ann) << " pJ\n";
    return kExitOk;
  }
  EvalOptions opt;
  opt.batch = batch;
  opt.timesteps = timesteps > 0 ? timesteps : ck.params.timesteps;
  opt.seed = seed;
  EvalResult res = evaluate(ck.spec, ck.params, data, opt, /*with_trace=*/true);
  EnergyReport report = energy(ck.spec, res.trace);
  atomic_write_text(out_csv, report.to_csv());
  std::cout << "layer,spike_rate\n";
  for (const auto& row : report.rows) std::cout << row.layer << "," << fmt(row.rate) << "\n";
  std::cout << "E_ANN " << fmt(report.e_ann_pj) << " pJ, E_SNN " << fmt(report.e_snn_pj)
            << " pJ, ratio " << fmt(report.ratio) << "x (miou " << fmt(res.miou) << ")\n";
  return kExitOk;
}

int cmd_convert(const std::string& ckpt_path, const std::string& dataset_dir,
                const std::string& split, const std::string& mode_s, float percentile,
                const std::string& out_path, int max_samples) {
  require_file(ckpt_path, "checkpoint");
  require_file(dataset_dir, "dataset");
  Checkpoint ck = load_checkpoint(ckpt_path);
  if (ck.params.mode != Mode::ann)
    throw mode_error("convert expects an ANN checkpoint, got mode " + to_string(ck.params.mode));
  Dataset calib = load_dataset(dataset_dir, split);
  if (max_samples > 0 && calib.size() > max_samples)
    calib.samples.resize(static_cast<size_t>(max_samples));
  const BalanceMode mode = balance_mode_from_string(mode_s);
  BalanceProfile profile = calibrate(ck.spec, ck.params, calib, mode, percentile);
  for (const auto& w : profile.warnings) std::cout << "warning: " << w << "\n";
  Checkpoint out;
  out.spec = ck.spec;
  out.params = convert(ck.spec, ck.params, profile);
  out.meta["converted_from"] = ckpt_path;
  out.meta["balance_mode"] = to_string(mode);
  out.meta["percentile"] = fmt(percentile);
  save_checkpoint(out_path, out);
  std::cout << "wrote converted checkpoint " << out_path << " (" << to_string(mode)
            << ", percentile " << fmt(percentile) << ", " << profile.sample_count
            << " calibration images)\n";
  return kExitOk;
}

int cmd_sweep(const std::string& ckpt_path, const std::string& dataset_dir,
              const std::string& split, const std::string& steps_s, const std::string& out_csv,
              int batch, uint64_t seed) {
  require_file(ckpt_path, "checkpoint");
  require_file(dataset_dir, "dataset");
  std::vector<int> steps;
  {
    std::istringstream ss(steps_s);
    std::string tok;
    while (std::getline(ss, tok, ',')) steps.push_back(std::stoi(tok));
  }
  for (size_t i = 0; i < steps.size(); i++) {
    if (steps[i] < 1) throw config_error("sweep: time-steps must be >= 1");
    if (i > 0 && steps[i] <= steps[i - 1]) throw config_error("sweep: steps must ascend");
  }
  Checkpoint ck = load_checkpoint(ckpt_path);
  if (ck.params.mode != Mode::spiking)
    throw mode_error("sweep expects a spiking checkpoint");
  Dataset data = load_dataset(dataset_dir, split);
  EvalOptions opt;
  opt.batch = batch;
  opt.seed = seed;
  const auto curve = sweep_timesteps(ck.spec, ck.params, data, steps, opt);
  atomic_write_text(out_csv, sweep_csv(curve));
  for (const auto& p : curve)
    std::cout << "T=" << p.timesteps << " miou " << fmt(p.miou) << "\n";
  return kExitOk;
}

int cmd_robustness(const std::vector<std::string>& ckpt_args, const std::string& dataset_dir,
                   const std::string& split, const std::string& sigmas_s,
                   const std::string& out_csv, int batch, int timesteps, uint64_t seed) {
  require_file(dataset_dir, "dataset");
  std::vector<double> sigmas;
  {
    std::istringstream ss(sigmas_s);
    std::string tok;
    while (std::getline(ss, tok, ',')) sigmas.push_back(std::stod(tok));
  }
  std::vector<Checkpoint> cks;
  std::vector<std::string> names;
  for (const auto& arg : ckpt_args) {
    const auto eq = arg.find('=');
    std::string name = eq == std::string::npos ? fs::path(arg).stem().string()
                                               : arg.substr(0, eq);
    std::string path = eq == std::string::npos ? arg : arg.substr(eq + 1);
    require_file(path, "checkpoint");
    cks.push_back(load_checkpoint(path));
    names.push_back(name);
  }
  Dataset data = load_dataset(dataset_dir, split);
  std::vector<RobustnessModel> models;
  for (size_t i = 0; i < cks.size(); i++)
    models.push_back({names[i], &cks[i].spec, &cks[i].params});
  EvalOptions opt;
  opt.batch = batch;
  opt.timesteps = timesteps;
  opt.seed = seed;
  const auto rows = robustness_sweep(models, data, sigmas, opt);
  atomic_write_text(out_csv, robustness_csv(rows));
  for (const auto& r : rows) {
    std::cout << "sigma " << fmt(r.sigma) << " " << r.model << " miou " << fmt(r.noise_miou)
              << " drop ";
    std::cout << (r.drop_defined ? fmt(r.drop_pct) + "%" : std::string("undefined")) << "\n";
  }
  return kExitOk;
}

int cmd_synth(const std::string& config_path, const std::vector<std::string>& overrides,
              const std::string& out_dir) {
  ExperimentConfig cfg = resolve_config(config_path, overrides);
  if (out_dir.empty()) throw config_error("synth: --out directory required");
  write_synthetic_dataset(synth_from_config(cfg), out_dir);
  std::cout << "wrote synthetic dataset to " << out_dir << "\n";
  return kExitOk;
}

int cmd_encode(const std::string& image_path, const std::string& events_path, int steps,
               uint64_t seed, int64_t window_us, const std::string& out_dir) {
  if (out_dir.empty()) throw config_error("encode: --out directory required");
  fs::create_directories(out_dir);
  char name[64];
  if (!image_path.empty()) {
    require_file(image_path, "image");
    const Tensor4 img = read_image_pnm(image_path);
    const SpikeTrain train = poisson_encode(img, steps, seed);
    for (int t = 0; t < train.steps(); t++) {
      std::snprintf(name, sizeof(name), "poisson_%03d.pgm", t);
      Tensor4 frame(1, 1, img.h(), img.w());
      for (int y = 0; y < img.h(); y++)
        for (int x = 0; x < img.w(); x++) frame.at(0, 0, y, x) = train.frames[t].at(0, 0, y, x);
      write_image_pnm((fs::path(out_dir) / name).string(), frame);
    }
    std::cout << "wrote " << train.steps() << " poisson frames\n";
    return kExitOk;
  }
  if (events_path.empty()) throw config_error("encode: need --image or --events");
  require_file(events_path, "event file");
  const EventStream stream = read_event_stream(events_path);
  std::string warning;
  const SpikeTrain train = dvs_accumulate(stream, window_us, &warning);
  if (!warning.empty()) std::cout << "warning: " << warning << "\n";
  float peak = 1.0f;
  for (const auto& f : train.frames)
    for (float v : f.flat()) peak = std::max(peak, v);
  for (int t = 0; t < train.steps(); t++) {
    for (int ch = 0; ch < 2; ch++) {
      std::snprintf(name, sizeof(name), "dvs_%03d_%s.pgm", t, ch == 0 ? "pos" : "neg");
      Tensor4 frame(1, 1, stream.height, stream.width);
      for (int y = 0; y < stream.height; y++)
        for (int x = 0; x < stream.width; x++)
          frame.at(0, 0, y, x) = train.frames[t].at(0, ch, y, x) / peak;
      write_image_pnm((fs::path(out_dir) / name).string(), frame);
    }
  }
  std::cout << "wrote " << train.steps() << " accumulated frames\n";
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"spiking semantic segmentation toolkit"};
  app.require_subcommand(1);

  std::string config_path, dataset_dir, ckpt_path, out_path, split = "val";
  std::string overlays_dir, steps_s = "8,32,128,512", sigmas_s = "0,0.1,0.2,0.3,0.4";
  std::string balance_mode = "layerwise", image_path, events_path;
  std::vector<std::string> ckpt_args;
  float percentile = 99.7f;
  int batch = 16, timesteps = 0, steps = 20, max_samples = 0;
  uint64_t seed = 77;
  int64_t window_us = 50000;

  auto* train_cmd = app.add_subcommand("train", "train a model (config + --key value overrides)");
  train_cmd->add_option("--config", config_path, "config file");
  train_cmd->allow_extras();

  auto* eval_cmd = app.add_subcommand("eval", "evaluate a checkpoint, print per-class IoU");
  eval_cmd->add_option("checkpoint", ckpt_path)->required();
  eval_cmd->add_option("--dataset", dataset_dir)->required();
  eval_cmd->add_option("--split", split);
  eval_cmd->add_option("--dump-overlays", overlays_dir);
  eval_cmd->add_option("--batch", batch);
  eval_cmd->add_option("--timesteps", timesteps);
  eval_cmd->add_option("--seed", seed);

  auto* profile_cmd = app.add_subcommand("profile", "spike-rate and energy report");
  profile_cmd->add_option("checkpoint", ckpt_path)->required();
  profile_cmd->add_option("--dataset", dataset_dir)->required();
  profile_cmd->add_option("--split", split);
  profile_cmd->add_option("--out", out_path)->required();
  profile_cmd->add_option("--batch", batch);
  profile_cmd->add_option("--timesteps", timesteps);
  profile_cmd->add_option("--seed", seed);

  auto* convert_cmd = app.add_subcommand("convert", "ANN to SNN threshold balancing");
  convert_cmd->add_option("checkpoint", ckpt_path)->required();
  convert_cmd->add_option("--dataset", dataset_dir)->required();
  convert_cmd->add_option("--split", split);
  convert_cmd->add_option("--balance", balance_mode, "layerwise|channelwise");
  convert_cmd->add_option("--percentile", percentile);
  convert_cmd->add_option("--max-samples", max_samples);
  convert_cmd->add_option("--out", out_path)->required();

  auto* sweep_cmd = app.add_subcommand("sweep", "mIoU versus time-steps for a converted model");
  sweep_cmd->add_option("checkpoint", ckpt_path)->required();
  sweep_cmd->add_option("--dataset", dataset_dir)->required();
  sweep_cmd->add_option("--split", split);
  sweep_cmd->add_option("--steps", steps_s);
  sweep_cmd->add_option("--out", out_path)->required();
  sweep_cmd->add_option("--batch", batch);
  sweep_cmd->add_option("--seed", seed);

  auto* rob_cmd = app.add_subcommand("robustness", "relative mIoU drop under Gaussian noise");
  rob_cmd->add_option("--checkpoint", ckpt_args, "name=path (repeatable)")->required();
  rob_cmd->add_option("--dataset", dataset_dir)->required();
  rob_cmd->add_option("--split", split);
  rob_cmd->add_option("--sigmas", sigmas_s);
  rob_cmd->add_option("--out", out_path)->required();
  rob_cmd->add_option("--batch", batch);
  rob_cmd->add_option("--timesteps", timesteps);
  rob_cmd->add_option("--seed", seed);

  auto* synth_cmd = app.add_subcommand("synth", "write a synthetic dataset directory");
  synth_cmd->add_option("--config", config_path);
  synth_cmd->add_option("--out", out_path)->required();
  synth_cmd->allow_extras();

  auto* encode_cmd = app.add_subcommand("encode", "dump encoder frames (debug)");
  encode_cmd->add_option("--image", image_path);
  encode_cmd->add_option("--events", events_path);
  encode_cmd->add_option("--steps", steps);
  encode_cmd->add_option("--seed", seed);
  encode_cmd->add_option("--window", window_us);
  encode_cmd->add_option("--out", out_path)->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? kExitOk : kExitUsage;
  }

  try {
    if (train_cmd->parsed()) return cmd_train(config_path, train_cmd->remaining());
    if (eval_cmd->parsed())
      return cmd_eval(ckpt_path, dataset_dir, split, overlays_dir, batch, timesteps, seed);
    if (profile_cmd->parsed())
      return cmd_profile(ckpt_path, dataset_dir, split, out_path, batch, timesteps, seed);
    if (convert_cmd->parsed())
      return cmd_convert(ckpt_path, dataset_dir, split, balance_mode, percentile, out_path,
                         max_samples);
    if (sweep_cmd->parsed())
      return cmd_sweep(ckpt_path, dataset_dir, split, steps_s, out_path, batch, seed);
    if (rob_cmd->parsed())
      return cmd_robustness(ckpt_args, dataset_dir, split, sigmas_s, out_path, batch, timesteps,
                            seed);
    if (synth_cmd->parsed()) return cmd_synth(config_path, synth_cmd->remaining(), out_path);
    if (encode_cmd->parsed())
      return cmd_encode(image_path, events_path, steps, seed, window_us, out_path);
  } catch (const config_error& e) {
    std::cerr << "usage error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitRuntime;
  }
  return kExitUsage;
}
