#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <variant>
#include <vector>

#include "mqc/augment.hpp"
#include "mqc/dataset.hpp"
#include "mqc/kspace.hpp"
#include "mqc/labels.hpp"
#include "mqc/probe.hpp"

namespace mqc {

/// Minimal TOML reader covering the config schema: [tables], key = value
/// with strings, integers, floats, booleans, and flat arrays. Keys are
/// reported as "table.key".
class TomlDoc {
 public:
  using Value = std::variant<std::string, std::int64_t, double, bool,
                             std::vector<double>, std::vector<std::string>>;

  static TomlDoc parse_file(const std::string& path);
  static TomlDoc parse(const std::string& text);

  bool has(const std::string& key) const { return values_.count(key) > 0; }
  std::string get_string(const std::string& key) const;
  std::int64_t get_int(const std::string& key) const;
  double get_double(const std::string& key) const;  // accepts ints too
  bool get_bool(const std::string& key) const;
  std::vector<double> get_double_array(const std::string& key) const;
  std::vector<std::string> get_string_array(const std::string& key) const;

  const std::map<std::string, Value>& values() const { return values_; }

 private:
  std::map<std::string, Value> values_;
};

/// Everything one run needs, loaded from a single TOML document.
struct RunConfig {
  int schema_version = 1;
  AugmentConfig augment;
  MotionParams motion;
  RmsConfig rms;
  BinSpec bins;
  TrainConfig pretrain_cfg;
  TrainConfig transfer_cfg;
  TrainConfig scratch_cfg;
  double transfer_dropout = 0.7;
  double scratch_dropout = 0.68;
  int head_hidden = 16;
  std::vector<int> trunk_hidden = {64, 32};
  int passes = 300;
  std::uint64_t master_seed = 0;
  int workers = 1;
  std::string out_dir;

  /// Rejects unknown keys and schema version mismatches.
  static RunConfig load(const std::string& path);
  static RunConfig from_toml(const TomlDoc& doc);
};

}  // namespace mqc
