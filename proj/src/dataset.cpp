#include "spikeseg/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>

#include "spikeseg/common.hpp"

namespace fs = std::filesystem;

namespace spikeseg {

int Dataset::channels() const {
  if (samples.empty()) throw state_error("dataset: empty");
  const Sample& s = samples.front();
  return s.event_based() ? s.frames[0].c() : s.image.c();
}

int Dataset::height() const {
  if (samples.empty()) throw state_error("dataset: empty");
  const Sample& s = samples.front();
  return s.event_based() ? s.frames[0].h() : s.image.h();
}

int Dataset::width() const {
  if (samples.empty()) throw state_error("dataset: empty");
  const Sample& s = samples.front();
  return s.event_based() ? s.frames[0].w() : s.image.w();
}

// --- pixmap I/O -----------------------------------------------------------------

namespace {

int read_pnm_token(std::istream& in) {
  // skips whitespace and '#' comments
  for (;;) {
    int c = in.peek();
    if (c == '#') {
      std::string line;
      std::getline(in, line);
    } else if (std::isspace(c)) {
      in.get();
    } else {
      break;
    }
  }
  int value = 0;
  if (!(in >> value)) throw io_error("pnm: truncated header");
  return value;
}

struct PnmHeader {
  std::string magic;
  int w = 0, h = 0, maxval = 0;
};

PnmHeader read_pnm_header(std::istream& in, const std::string& path) {
  PnmHeader hd;
  char m0 = 0, m1 = 0;
  in.get(m0);
  in.get(m1);
  hd.magic = std::string() + m0 + m1;
  if (hd.magic != "P5" && hd.magic != "P6")
    throw io_error("pnm: unsupported magic '" + hd.magic + "' in " + path);
  hd.w = read_pnm_token(in);
  hd.h = read_pnm_token(in);
  hd.maxval = read_pnm_token(in);
  if (hd.maxval < 1 || hd.maxval > 255)
    throw io_error("pnm: only 8-bit files supported: " + path);
  in.get();  // single whitespace before payload
  return hd;
}

void atomic_write(const std::string& path, const std::string& bytes) {
  const std::string tmp = path + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary);
    if (!out) throw io_error("cannot write " + tmp);
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw io_error("write failed: " + tmp);
  }
  std::error_code ec;
  fs::rename(tmp, path, ec);
  if (ec) throw io_error("rename failed: " + path + " (" + ec.message() + ")");
}

}  // namespace

Tensor4 read_image_pnm(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw io_error("cannot open image: " + path);
  const PnmHeader hd = read_pnm_header(in, path);
  const int channels = hd.magic == "P6" ? 3 : 1;
  std::vector<unsigned char> raw(static_cast<size_t>(hd.w) * hd.h * channels);
  in.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(raw.size()));
  if (in.gcount() != static_cast<std::streamsize>(raw.size()))
    throw io_error("pnm: truncated payload in " + path);
  Tensor4 img(1, channels, hd.h, hd.w);
  const float scale = 1.0f / static_cast<float>(hd.maxval);
  for (int y = 0; y < hd.h; y++)
    for (int x = 0; x < hd.w; x++)
      for (int c = 0; c < channels; c++)
        img.at(0, c, y, x) = scale * raw[(static_cast<size_t>(y) * hd.w + x) * channels + c];
  return img;
}

LabelMap read_label_pgm(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw io_error("cannot open label map: " + path);
  const PnmHeader hd = read_pnm_header(in, path);
  if (hd.magic != "P5") throw io_error("label maps must be P5 grayscale: " + path);
  std::vector<unsigned char> raw(static_cast<size_t>(hd.w) * hd.h);
  in.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(raw.size()));
  if (in.gcount() != static_cast<std::streamsize>(raw.size()))
    throw io_error("pnm: truncated payload in " + path);
  LabelMap map(1, hd.h, hd.w);
  for (size_t j = 0; j < raw.size(); j++) map.data[j] = raw[j];
  return map;
}

void write_image_pnm(const std::string& path, const Tensor4& image, int item) {
  const int channels = image.c();
  if (channels != 1 && channels != 3)
    throw validation_error("write_image_pnm: needs 1 or 3 channels");
  std::ostringstream os;
  os << (channels == 3 ? "P6" : "P5") << "\n" << image.w() << " " << image.h() << "\n255\n";
  std::string bytes = os.str();
  bytes.reserve(bytes.size() + static_cast<size_t>(image.h()) * image.w() * channels);
  for (int y = 0; y < image.h(); y++)
    for (int x = 0; x < image.w(); x++)
      for (int c = 0; c < channels; c++) {
        const float v = std::clamp(image.at(item, c, y, x), 0.0f, 1.0f);
        bytes.push_back(static_cast<char>(static_cast<int>(std::lround(v * 255.0f))));
      }
  atomic_write(path, bytes);
}

void write_label_pgm(const std::string& path, const LabelMap& label, int item) {
  std::ostringstream os;
  os << "P5\n" << label.w << " " << label.h << "\n255\n";
  std::string bytes = os.str();
  for (int y = 0; y < label.h; y++)
    for (int x = 0; x < label.w; x++) {
      const int32_t v = label.at(item, y, x);
      if (v < 0 || v > 255)
        throw validation_error("write_label_pgm: class index outside [0,255]");
      bytes.push_back(static_cast<char>(v));
    }
  atomic_write(path, bytes);
}

namespace {

// fixed palette; index 0 (background) is black, ignore renders white
const unsigned char kPalette[][3] = {
    {0, 0, 0},     {230, 25, 75},  {60, 180, 75},  {255, 225, 25}, {0, 130, 200},
    {245, 130, 48}, {145, 30, 180}, {70, 240, 240}, {240, 50, 230}, {210, 245, 60},
    {0, 128, 128},  {220, 190, 255}};
constexpr int kPaletteSize = 12;

}  // namespace

void write_class_ppm(const std::string& path, const LabelMap& map, int item, int num_classes) {
  std::ostringstream os;
  os << "P6\n" << map.w << " " << map.h << "\n255\n";
  std::string bytes = os.str();
  for (int y = 0; y < map.h; y++)
    for (int x = 0; x < map.w; x++) {
      const int32_t v = map.at(item, y, x);
      unsigned char rgb[3] = {255, 255, 255};
      if (v >= 0 && v < num_classes) {
        const auto& p = kPalette[v % kPaletteSize];
        rgb[0] = p[0];
        rgb[1] = p[1];
        rgb[2] = p[2];
      }
      bytes.push_back(static_cast<char>(rgb[0]));
      bytes.push_back(static_cast<char>(rgb[1]));
      bytes.push_back(static_cast<char>(rgb[2]));
    }
  atomic_write(path, bytes);
}

// --- dataset loading ---------------------------------------------------------------

Dataset load_dataset(const std::string& dir, const std::string& split, int64_t window_us) {
  const std::string manifest_path = (fs::path(dir) / "manifest.txt").string();
  std::ifstream in(manifest_path);
  if (!in) throw io_error("cannot open manifest: " + manifest_path);
  Dataset ds;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty() || line[0] == '#') continue;
    std::istringstream ls(line);
    std::string head;
    ls >> head;
    if (head == "classes") {
      ls >> ds.num_classes;
      continue;
    }
    const std::string row_split = head;
    std::string img_rel, label_rel;
    if (!(ls >> img_rel >> label_rel))
      throw io_error("manifest: bad row '" + line + "'");
    if (row_split != split) continue;
    Sample s;
    const std::string img_path = (fs::path(dir) / img_rel).string();
    if (img_rel.size() > 4 && img_rel.substr(img_rel.size() - 4) == ".txt") {
      const EventStream stream = read_event_stream(img_path);
      std::string warning;
      SpikeTrain train = dvs_accumulate(stream, window_us, &warning);
      s.frames = std::move(train.frames);
      if (s.frames.empty())
        throw io_error("manifest: event stream " + img_rel + " has no frames");
    } else {
      s.image = read_image_pnm(img_path);
    }
    s.label = read_label_pgm((fs::path(dir) / label_rel).string());
    ds.samples.push_back(std::move(s));
  }
  if (ds.num_classes < 2) throw io_error("manifest: missing or invalid classes header");
  if (!ds.samples.empty()) {
    const bool ev = ds.samples.front().event_based();
    for (const auto& s : ds.samples)
      if (s.event_based() != ev) throw io_error("manifest: mixed static and event samples");
    ds.event_based = ev;
  }
  for (const auto& s : ds.samples)
    for (int32_t v : s.label.data)
      if (v != 255 && (v < 0 || v >= ds.num_classes))
        throw validation_error("dataset: label value " + std::to_string(v) +
                               " outside class range");
  return ds;
}

// --- synthetic generator --------------------------------------------------------------

namespace {

float class_center(int cls, int num_classes, float contrast) {
  // foreground bands spread over [0.35, 0.90], pulled together by low contrast
  const int fg = num_classes - 1;
  const float base =
      fg == 1 ? 0.65f : 0.35f + 0.55f * static_cast<float>(cls - 1) / static_cast<float>(fg - 1);
  return 0.625f + (base - 0.625f) * contrast;
}

struct Tri {
  float x0, y0, x1, y1, x2, y2;
  float edge(float ax, float ay, float bx, float by, float px, float py) const {
    return (bx - ax) * (py - ay) - (by - ay) * (px - ax);
  }
  bool inside(float px, float py) const {
    const float d0 = edge(x0, y0, x1, y1, px, py);
    const float d1 = edge(x1, y1, x2, y2, px, py);
    const float d2 = edge(x2, y2, x0, y0, px, py);
    const bool neg = d0 < 0 || d1 < 0 || d2 < 0;
    const bool pos = d0 > 0 || d1 > 0 || d2 > 0;
    return !(neg && pos);
  }
};

Sample make_sample(const SyntheticSpec& spec, uint64_t seed, int forced_class) {
  Rng rng(seed);
  const int size = spec.size;
  const int channels = spec.rgb ? 3 : 1;
  Sample s;
  s.image = Tensor4(1, channels, size, size);
  s.label = LabelMap(1, size, size);

  const float bg = rng.uniform(0.03f, 0.10f);
  for (int c = 0; c < channels; c++) {
    const float tint = spec.rgb ? rng.uniform(-0.02f, 0.02f) : 0.0f;
    for (int y = 0; y < size; y++)
      for (int x = 0; x < size; x++)
        s.image.at(0, c, y, x) =
            std::clamp(bg + tint + rng.uniform(-spec.noise, spec.noise), 0.0f, 1.0f);
  }

  const int count = rng.uniform_int(spec.shapes_min, spec.shapes_max);
  for (int sh = 0; sh < count; sh++) {
    const int cls = (sh == 0 && forced_class > 0) ? forced_class
                                                  : rng.uniform_int(1, spec.classes - 1);
    const int kind = (cls - 1) % 3;  // 0 rectangle, 1 disk, 2 triangle
    const float base = class_center(cls, spec.classes, spec.contrast) + rng.uniform(-0.05f, 0.05f);
    std::vector<float> tint(channels, 0.0f);
    if (spec.rgb)
      for (int c = 0; c < channels; c++) tint[c] = rng.uniform(-0.06f, 0.06f);

    for (int attempt = 0; attempt < 8; attempt++) {
      int painted = 0;
      auto paint = [&](int x, int y) {
        s.label.at(0, y, x) = cls;
        for (int c = 0; c < channels; c++)
          s.image.at(0, c, y, x) =
              std::clamp(base + tint[c] + rng.uniform(-spec.noise, spec.noise), 0.0f, 1.0f);
        painted++;
      };
      if (kind == 0) {
        const int hw = rng.uniform_int(std::max(2, size / 7), std::max(3, size / 3));
        const int hh = rng.uniform_int(std::max(2, size / 7), std::max(3, size / 3));
        const int cx = rng.uniform_int(2, size - 3), cy = rng.uniform_int(2, size - 3);
        for (int y = std::max(0, cy - hh); y <= std::min(size - 1, cy + hh); y++)
          for (int x = std::max(0, cx - hw); x <= std::min(size - 1, cx + hw); x++) paint(x, y);
      } else if (kind == 1) {
        const int r = rng.uniform_int(std::max(2, size / 8), std::max(3, size / 4));
        const int cx = rng.uniform_int(2, size - 3), cy = rng.uniform_int(2, size - 3);
        for (int y = std::max(0, cy - r); y <= std::min(size - 1, cy + r); y++)
          for (int x = std::max(0, cx - r); x <= std::min(size - 1, cx + r); x++)
            if ((x - cx) * (x - cx) + (y - cy) * (y - cy) <= r * r) paint(x, y);
      } else {
        const float cx = rng.uniform(3.0f, static_cast<float>(size - 4));
        const float cy = rng.uniform(3.0f, static_cast<float>(size - 4));
        const float rad = rng.uniform(static_cast<float>(size) / 5.0f,
                                      static_cast<float>(size) / 2.8f);
        const float a0 = rng.uniform(0.0f, 6.2831853f);
        Tri tri;
        tri.x0 = cx + rad * std::cos(a0);
        tri.y0 = cy + rad * std::sin(a0);
        tri.x1 = cx + rad * std::cos(a0 + 2.094f + rng.uniform(-0.3f, 0.3f));
        tri.y1 = cy + rad * std::sin(a0 + 2.094f + rng.uniform(-0.3f, 0.3f));
        tri.x2 = cx + rad * std::cos(a0 + 4.189f + rng.uniform(-0.3f, 0.3f));
        tri.y2 = cy + rad * std::sin(a0 + 4.189f + rng.uniform(-0.3f, 0.3f));
        for (int y = 0; y < size; y++)
          for (int x = 0; x < size; x++)
            if (tri.inside(static_cast<float>(x), static_cast<float>(y))) paint(x, y);
      }
      if (painted >= std::max(9, size * size / 80)) break;
      // too small or fully clipped: resample geometry
    }
  }
  return s;
}

uint64_t split_salt(const std::string& split) {
  uint64_t h = 0x5917ull;
  for (char c : split) h = mix64(h ^ static_cast<uint64_t>(c));
  return h;
}

}  // namespace

EventStream synthesize_events(const Tensor4& image, int item, int frames, int64_t window_us,
                              uint64_t seed) {
  Rng rng(seed);
  EventStream es;
  es.height = image.h();
  es.width = image.w();
  for (int f = 0; f < frames; f++) {
    const int64_t t0 = static_cast<int64_t>(f) * window_us;
    for (int y = 0; y < image.h(); y++)
      for (int x = 0; x < image.w(); x++) {
        const float p = image.at(item, 0, y, x);
        if (rng.uniform() < p)
          es.events.push_back({t0 + static_cast<int64_t>(rng.uniform() * (window_us - 1)), x, y, 1});
        if (rng.uniform() < 0.15f * (1.0f - p))
          es.events.push_back({t0 + static_cast<int64_t>(rng.uniform() * (window_us - 1)), x, y, -1});
      }
  }
  std::stable_sort(es.events.begin(), es.events.end(),
                   [](const Event& a, const Event& b) { return a.t_us < b.t_us; });
  return es;
}

Dataset generate_synthetic(const SyntheticSpec& spec, const std::string& split) {
  if (spec.classes < 2) throw config_error("synthetic: classes must be >= 2");
  if (spec.size < 8) throw config_error("synthetic: size must be >= 8");
  if (spec.shapes_min < 1 || spec.shapes_max < spec.shapes_min)
    throw config_error("synthetic: bad shapes range");
  const int count = split == "train" ? spec.train_count : spec.val_count;
  if (count < 1) throw config_error("synthetic: sample count must be >= 1 for split " + split);

  const uint64_t salt = split_salt(split);
  Dataset ds;
  ds.num_classes = spec.classes;
  for (int i = 0; i < count; i++)
    ds.samples.push_back(make_sample(spec, mix_seed(spec.seed, salt, static_cast<uint64_t>(i)), -1));

  if (split == "train") {
    // guarantee every foreground class appears somewhere in the split
    std::set<int32_t> present;
    for (const auto& s : ds.samples)
      for (int32_t v : s.label.data) present.insert(v);
    int repair = 0;
    for (int cls = 1; cls < spec.classes; cls++)
      if (!present.count(cls)) {
        const int at = repair++ % count;
        ds.samples[at] = make_sample(
            spec, mix_seed(spec.seed, salt ^ 0xF1ull, static_cast<uint64_t>(cls)), cls);
      }
  }

  if (spec.events) {
    for (size_t i = 0; i < ds.samples.size(); i++) {
      Sample& s = ds.samples[i];
      const EventStream es = synthesize_events(
          s.image, 0, spec.frames, spec.window_us, mix_seed(spec.seed, salt ^ 0xEEull, i));
      std::string warning;
      SpikeTrain train = dvs_accumulate(es, spec.window_us, &warning);
      s.frames = std::move(train.frames);
      while (static_cast<int>(s.frames.size()) < spec.frames)
        s.frames.push_back(Tensor4(1, 2, spec.size, spec.size));
      s.image = Tensor4();  // event datasets carry frames only
    }
    ds.event_based = true;
  }
  return ds;
}

void write_synthetic_dataset(const SyntheticSpec& spec, const std::string& dir) {
  std::error_code ec;
  fs::create_directories(fs::path(dir) / "images", ec);
  fs::create_directories(fs::path(dir) / "labels", ec);
  if (spec.events) fs::create_directories(fs::path(dir) / "events", ec);
  if (!fs::exists(fs::path(dir) / "images"))
    throw io_error("cannot create dataset directory: " + dir);

  std::ostringstream manifest;
  manifest << "classes " << spec.classes << "\n";
  int index = 0;
  char name[32];
  for (const std::string split : {"train", "val"}) {
    SyntheticSpec s2 = spec;
    s2.events = false;  // keep images for reference; event streams written below
    Dataset ds = generate_synthetic(s2, split);
    const uint64_t salt = split_salt(split);
    for (int i = 0; i < ds.size(); i++, index++) {
      std::snprintf(name, sizeof(name), "%04d", index);
      const std::string img_rel =
          std::string("images/") + name + (spec.rgb ? ".ppm" : ".pgm");
      const std::string lab_rel = std::string("labels/") + name + ".pgm";
      write_image_pnm((fs::path(dir) / img_rel).string(), ds.samples[i].image);
      write_label_pgm((fs::path(dir) / lab_rel).string(), ds.samples[i].label);
      if (spec.events) {
        const std::string ev_rel = std::string("events/") + name + ".txt";
        const EventStream es =
            synthesize_events(ds.samples[i].image, 0, spec.frames, spec.window_us,
                              mix_seed(spec.seed, salt ^ 0xEEull, static_cast<uint64_t>(i)));
        write_event_stream((fs::path(dir) / ev_rel).string(), es);
        manifest << split << " " << ev_rel << " " << lab_rel << "\n";
      } else {
        manifest << split << " " << img_rel << " " << lab_rel << "\n";
      }
    }
  }
  atomic_write((fs::path(dir) / "manifest.txt").string(), manifest.str());
}

}  // namespace spikeseg
