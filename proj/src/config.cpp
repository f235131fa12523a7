#include "spikeseg/config.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <sstream>

namespace spikeseg {

namespace {

enum class ValueKind { integer, unsigned64, floating, boolean, text, choice, int_list };

struct KeySpec {
  ValueKind kind;
  const char* dflt;
  const char* choices;  // comma-separated, for ValueKind::choice
};

// Paper-default hyperparameters: T=20, leak 0.99, threshold 1.0, Adam lr
// 3e-3, batch 16, 60 epochs with a 10x decay at 50%.
const std::map<std::string, KeySpec>& key_table() {
  static const std::map<std::string, KeySpec> table = {
      {"model", {ValueKind::choice, "deeplab", "deeplab,fcn"}},
      {"mode", {ValueKind::choice, "spiking", "spiking,ann"}},
      {"num_classes", {ValueKind::integer, "3", nullptr}},
      {"input_size", {ValueKind::integer, "32", nullptr}},
      {"input_channels", {ValueKind::integer, "1", nullptr}},
      {"timesteps", {ValueKind::integer, "20", nullptr}},
      {"leak", {ValueKind::floating, "0.99", nullptr}},
      {"threshold", {ValueKind::floating, "1", nullptr}},
      {"lr", {ValueKind::floating, "0.003", nullptr}},
      {"batch", {ValueKind::integer, "16", nullptr}},
      {"epochs", {ValueKind::integer, "60", nullptr}},
      {"seed", {ValueKind::unsigned64, "1", nullptr}},
      {"dataset", {ValueKind::text, "", nullptr}},
      {"out_dir", {ValueKind::text, "runs/exp", nullptr}},
      {"encoder", {ValueKind::choice, "poisson", "poisson,dvs"}},
      {"dilation", {ValueKind::int_list, "2,2", nullptr}},
      {"ignore_index", {ValueKind::integer, "255", nullptr}},
      {"stop_miou", {ValueKind::floating, "0", nullptr}},
      {"grad_clip", {ValueKind::floating, "0", nullptr}},
      {"window_us", {ValueKind::unsigned64, "50000", nullptr}},
      {"log_wall", {ValueKind::boolean, "false", nullptr}},
      {"eval_split", {ValueKind::text, "val", nullptr}},
      {"synth.size", {ValueKind::integer, "32", nullptr}},
      {"synth.classes", {ValueKind::integer, "3", nullptr}},
      {"synth.train", {ValueKind::integer, "400", nullptr}},
      {"synth.val", {ValueKind::integer, "100", nullptr}},
      {"synth.shapes_min", {ValueKind::integer, "1", nullptr}},
      {"synth.shapes_max", {ValueKind::integer, "3", nullptr}},
      {"synth.seed", {ValueKind::unsigned64, "1", nullptr}},
      {"synth.contrast", {ValueKind::floating, "1", nullptr}},
      {"synth.noise", {ValueKind::floating, "0.03", nullptr}},
      {"synth.rgb", {ValueKind::boolean, "false", nullptr}},
      {"synth.events", {ValueKind::boolean, "false", nullptr}},
      {"synth.frames", {ValueKind::integer, "6", nullptr}},
  };
  return table;
}

std::string trim(const std::string& s) {
  size_t a = s.find_first_not_of(" \t\r\n");
  if (a == std::string::npos) return "";
  size_t b = s.find_last_not_of(" \t\r\n");
  return s.substr(a, b - a + 1);
}

std::string canonical_float(const std::string& key, const std::string& value) {
  size_t used = 0;
  double v = 0.0;
  try {
    v = std::stod(value, &used);
  } catch (const std::exception&) {
    throw config_error("config: bad number for " + key + ": '" + value + "'");
  }
  if (used != value.size()) throw config_error("config: bad number for " + key + ": '" + value + "'");
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.9g", v);
  return buf;
}

std::string canonicalize(const std::string& key, const KeySpec& ks, const std::string& raw) {
  const std::string value = trim(raw);
  switch (ks.kind) {
    case ValueKind::integer: {
      size_t used = 0;
      long long v = 0;
      try {
        v = std::stoll(value, &used);
      } catch (const std::exception&) {
        throw config_error("config: bad integer for " + key + ": '" + value + "'");
      }
      if (used != value.size())
        throw config_error("config: bad integer for " + key + ": '" + value + "'");
      return std::to_string(v);
    }
    case ValueKind::unsigned64: {
      size_t used = 0;
      unsigned long long v = 0;
      try {
        v = std::stoull(value, &used);
      } catch (const std::exception&) {
        throw config_error("config: bad unsigned for " + key + ": '" + value + "'");
      }
      if (used != value.size())
        throw config_error("config: bad unsigned for " + key + ": '" + value + "'");
      return std::to_string(v);
    }
    case ValueKind::floating:
      return canonical_float(key, value);
    case ValueKind::boolean: {
      if (value == "true" || value == "1" || value == "yes" || value == "on") return "true";
      if (value == "false" || value == "0" || value == "no" || value == "off") return "false";
      throw config_error("config: bad boolean for " + key + ": '" + value + "'");
    }
    case ValueKind::text:
      return value;
    case ValueKind::choice: {
      std::istringstream cs(ks.choices);
      std::string opt;
      while (std::getline(cs, opt, ','))
        if (opt == value) return value;
      throw config_error("config: " + key + " must be one of {" + ks.choices + "}, got '" +
                         value + "'");
    }
    case ValueKind::int_list: {
      std::istringstream vs(value);
      std::string tok;
      std::string out;
      while (std::getline(vs, tok, ',')) {
        tok = trim(tok);
        size_t used = 0;
        long long v = 0;
        try {
          v = std::stoll(tok, &used);
        } catch (const std::exception&) {
          throw config_error("config: bad list entry for " + key + ": '" + tok + "'");
        }
        if (used != tok.size())
          throw config_error("config: bad list entry for " + key + ": '" + tok + "'");
        if (!out.empty()) out.push_back(',');
        out += std::to_string(v);
      }
      if (out.empty()) throw config_error("config: empty list for " + key);
      return out;
    }
  }
  throw config_error("config: unhandled kind");
}

}  // namespace

ExperimentConfig::ExperimentConfig() {
  for (const auto& [key, ks] : key_table()) values_[key] = ks.dflt;
}

void ExperimentConfig::set(const std::string& key, const std::string& value) {
  const auto it = key_table().find(key);
  if (it == key_table().end()) throw config_error("config: unknown key '" + key + "'");
  values_[key] = canonicalize(key, it->second, value);
}

const std::string& ExperimentConfig::get(const std::string& key) const {
  const auto it = values_.find(key);
  if (it == values_.end()) throw config_error("config: unknown key '" + key + "'");
  return it->second;
}

int ExperimentConfig::get_int(const std::string& key) const {
  return static_cast<int>(std::stoll(get(key)));
}
int64_t ExperimentConfig::get_i64(const std::string& key) const { return std::stoll(get(key)); }
uint64_t ExperimentConfig::get_u64(const std::string& key) const { return std::stoull(get(key)); }
float ExperimentConfig::get_float(const std::string& key) const { return std::stof(get(key)); }
bool ExperimentConfig::get_bool(const std::string& key) const { return get(key) == "true"; }

std::vector<int> ExperimentConfig::get_int_list(const std::string& key) const {
  std::vector<int> out;
  std::istringstream vs(get(key));
  std::string tok;
  while (std::getline(vs, tok, ',')) out.push_back(std::stoi(tok));
  return out;
}

void ExperimentConfig::apply_text(const std::string& text) {
  std::istringstream is(text);
  std::string line;
  int lineno = 0;
  while (std::getline(is, line)) {
    lineno++;
    const std::string t = trim(line);
    if (t.empty() || t[0] == '#') continue;
    const auto eq = t.find('=');
    if (eq == std::string::npos)
      throw config_error("config: line " + std::to_string(lineno) + " is not 'key = value'");
    set(trim(t.substr(0, eq)), trim(t.substr(eq + 1)));
  }
}

void ExperimentConfig::load_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw io_error("cannot open config file: " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  apply_text(ss.str());
}

void ExperimentConfig::apply_overrides(const std::vector<std::string>& args) {
  for (size_t i = 0; i < args.size(); i += 2) {
    const std::string& key_arg = args[i];
    if (key_arg.rfind("--", 0) != 0)
      throw config_error("config: expected --key, got '" + key_arg + "'");
    if (i + 1 >= args.size())
      throw config_error("config: missing value for " + key_arg);
    set(key_arg.substr(2), args[i + 1]);
  }
}

std::string ExperimentConfig::render() const {
  std::ostringstream os;
  for (const auto& [k, v] : values_) os << k << " = " << v << "\n";
  return os.str();
}

ExperimentConfig ExperimentConfig::parse(const std::string& text) {
  ExperimentConfig cfg;
  cfg.apply_text(text);
  return cfg;
}

}  // namespace spikeseg
