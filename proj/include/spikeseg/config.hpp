#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "spikeseg/common.hpp"

namespace spikeseg {

// Dotted-key text configuration with a closed key set: unknown keys are
// rejected, values are canonicalized on set, and the resolved config renders
// to sorted "key = value" lines that parse back identically.
class ExperimentConfig {
 public:
  ExperimentConfig();  // defaults mirror the reference hyperparameters

  void set(const std::string& key, const std::string& value);
  const std::string& get(const std::string& key) const;

  int get_int(const std::string& key) const;
  int64_t get_i64(const std::string& key) const;
  uint64_t get_u64(const std::string& key) const;
  float get_float(const std::string& key) const;
  bool get_bool(const std::string& key) const;
  std::vector<int> get_int_list(const std::string& key) const;

  void load_file(const std::string& path);
  void apply_text(const std::string& text);
  // pairwise "--key value" arguments
  void apply_overrides(const std::vector<std::string>& args);

  std::string render() const;
  static ExperimentConfig parse(const std::string& text);

  const std::map<std::string, std::string>& values() const { return values_; }

 private:
  std::map<std::string, std::string> values_;
};

}  // namespace spikeseg
