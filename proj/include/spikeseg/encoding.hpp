#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "spikeseg/tensor.hpp"

namespace spikeseg {

// Binary (Poisson) or count-valued (DVS) input frames over discrete steps.
struct SpikeTrain {
  std::vector<Tensor4> frames;
  int steps() const { return static_cast<int>(frames.size()); }
};

struct Event {
  int64_t t_us = 0;
  int x = 0, y = 0;
  int polarity = 1;  // +1 or -1
};

struct EventStream {
  int height = 0, width = 0;
  std::vector<Event> events;  // timestamps nondecreasing
};

// Rate coding: at each step every pixel spikes iff a fresh uniform draw in
// [i_min, i_max) is strictly below the pixel value, so the expected rate is
// the normalized intensity. Batch items use derived seeds (seed ^ item index)
// and may encode in parallel; results are bit-reproducible per seed.
SpikeTrain poisson_encode(const Tensor4& image, int steps, uint64_t seed,
                          float i_min = 0.0f, float i_max = 1.0f);

// Bins events into two-channel count frames (channel 0: +1, channel 1: -1)
// over half-open windows [f*window, (f+1)*window). Frame count is the number
// of windows started by the last event; an empty stream yields zero frames
// and sets *warning instead of failing.
SpikeTrain dvs_accumulate(const EventStream& stream, int64_t window_us,
                          std::string* warning = nullptr);

// Plain-text event interchange: header "H W", then one event per line
// "timestamp_us x y polarity" with polarity in {1, -1}.
EventStream read_event_stream(const std::string& path);
void write_event_stream(const std::string& path, const EventStream& stream);

}  // namespace spikeseg
