#include "spikeseg/encoding.hpp"

#include <fstream>
#include <sstream>

#include "spikeseg/common.hpp"
#include "spikeseg/thread_pool.hpp"

namespace spikeseg {

SpikeTrain poisson_encode(const Tensor4& image, int steps, uint64_t seed,
                          float i_min, float i_max) {
  if (steps < 1) throw validation_error("poisson_encode: steps must be >= 1");
  if (!(i_max > i_min)) throw validation_error("poisson_encode: empty intensity range");
  for (float v : image.flat())
    if (!(v >= i_min && v <= i_max))
      throw validation_error("poisson_encode: pixel value " + std::to_string(v) +
                             " outside [" + std::to_string(i_min) + ", " +
                             std::to_string(i_max) + "]");
  SpikeTrain train;
  train.frames.assign(steps, Tensor4(image.shape()));
  const int64_t item = image.item_size();
  parallel_for(image.n(), [&](int64_t i) {
    Rng rng(seed ^ static_cast<uint64_t>(i));
    const float* px = image.item(static_cast<int>(i));
    for (int t = 0; t < steps; t++) {
      float* out = train.frames[t].item(static_cast<int>(i));
      for (int64_t j = 0; j < item; j++)
        out[j] = rng.uniform(i_min, i_max) < px[j] ? 1.0f : 0.0f;
    }
  });
  return train;
}

SpikeTrain dvs_accumulate(const EventStream& stream, int64_t window_us, std::string* warning) {
  if (window_us <= 0) throw validation_error("dvs_accumulate: window must be > 0");
  SpikeTrain train;
  if (stream.events.empty()) {
    if (warning) *warning = "empty event stream: emitting zero frames";
    return train;
  }
  if (stream.height < 1 || stream.width < 1)
    throw validation_error("dvs_accumulate: sensor dims must be >= 1");
  int64_t last_t = 0;
  for (const auto& e : stream.events) {
    if (e.t_us < last_t) throw validation_error("dvs_accumulate: timestamps not nondecreasing");
    last_t = e.t_us;
    if (e.x < 0 || e.x >= stream.width || e.y < 0 || e.y >= stream.height)
      throw validation_error("dvs_accumulate: event at (" + std::to_string(e.x) + ", " +
                             std::to_string(e.y) + ") outside sensor dims");
    if (e.polarity != 1 && e.polarity != -1)
      throw validation_error("dvs_accumulate: polarity must be +1 or -1");
  }
  const int frames = static_cast<int>(last_t / window_us) + 1;
  train.frames.assign(frames, Tensor4(1, 2, stream.height, stream.width));
  for (const auto& e : stream.events) {
    const int f = static_cast<int>(e.t_us / window_us);
    const int ch = e.polarity == 1 ? 0 : 1;
    train.frames[f].at(0, ch, e.y, e.x) += 1.0f;
  }
  return train;
}

EventStream read_event_stream(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw io_error("cannot open event file: " + path);
  EventStream s;
  std::string line;
  if (!std::getline(in, line)) throw io_error("event file missing header: " + path);
  {
    std::istringstream hs(line);
    if (!(hs >> s.height >> s.width)) throw io_error("bad event header in " + path);
  }
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::istringstream ls(line);
    Event e;
    if (!(ls >> e.t_us >> e.x >> e.y >> e.polarity))
      throw io_error("bad event line in " + path + ": " + line);
    s.events.push_back(e);
  }
  return s;
}

void write_event_stream(const std::string& path, const EventStream& stream) {
  std::ofstream out(path);
  if (!out) throw io_error("cannot write event file: " + path);
  out << stream.height << " " << stream.width << "\n";
  for (const auto& e : stream.events)
    out << e.t_us << " " << e.x << " " << e.y << " " << e.polarity << "\n";
  if (!out) throw io_error("write failed: " + path);
}

}  // namespace spikeseg
