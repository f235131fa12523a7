#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "spikeseg/encoding.hpp"
#include "spikeseg/tensor.hpp"

namespace spikeseg {

struct Sample {
  Tensor4 image;                // (1, c, h, w) in [0,1]; empty for event samples
  std::vector<Tensor4> frames;  // event samples: (1, 2, h, w) count frames
  LabelMap label;               // (1, h, w); 255 = ignore
  bool event_based() const { return !frames.empty(); }
};

struct Dataset {
  std::vector<Sample> samples;
  int num_classes = 0;
  bool event_based = false;

  int size() const { return static_cast<int>(samples.size()); }
  int channels() const;
  int height() const;
  int width() const;
};

// --- portable pixmap I/O (the only required image codec) -----------------------

// P5 -> (1,1,h,w), P6 -> (1,3,h,w); 8-bit, scaled to [0,1]
Tensor4 read_image_pnm(const std::string& path);
// P5 with raw class indices as pixel values
LabelMap read_label_pgm(const std::string& path);
// 1-channel -> P5, 3-channel -> P6; values clamped to [0,1]. Atomic write.
void write_image_pnm(const std::string& path, const Tensor4& image, int item = 0);
void write_label_pgm(const std::string& path, const LabelMap& label, int item = 0);
// color composite for prediction overlays (fixed palette per class)
void write_class_ppm(const std::string& path, const LabelMap& map, int item, int num_classes);

// --- dataset directory layout ---------------------------------------------------
//
//   images/NNNN.pgm (or .ppm), labels/NNNN.pgm, optional events/NNNN.txt,
//   manifest.txt:  "classes K" header then one "split image label" row per
//   sample (event datasets reference events/*.txt in the image column).
Dataset load_dataset(const std::string& dir, const std::string& split,
                     int64_t window_us = 50000);

// --- synthetic generator ----------------------------------------------------------

// Desk-scale segmentation data: background plus K-1 shape classes
// (rectangle / disk / triangle, cycling) with class-banded intensities.
// `contrast` scales the separation between class intensity bands; `noise` is
// per-pixel jitter. Every non-background class is guaranteed to appear in the
// train split. Deterministic per seed.
struct SyntheticSpec {
  int size = 32;
  int classes = 3;
  int shapes_min = 1, shapes_max = 3;
  int train_count = 400, val_count = 100;
  uint64_t seed = 1;
  bool rgb = false;
  float contrast = 1.0f;
  float noise = 0.03f;
  bool events = false;      // additionally synthesize event streams
  int frames = 6;           // event frames per sample
  int64_t window_us = 50000;
};

Dataset generate_synthetic(const SyntheticSpec& spec, const std::string& split);
void write_synthetic_dataset(const SyntheticSpec& spec, const std::string& dir);

// synthetic event stream for one intensity image (rate-proportional events)
EventStream synthesize_events(const Tensor4& image, int item, int frames, int64_t window_us,
                              uint64_t seed);

}  // namespace spikeseg
