#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include "sapnet/derain_net.hpp"
#include "sapnet/feature_extractor.hpp"
#include "sapnet/losses.hpp"
#include "sapnet/segmenter.hpp"
#include "sapnet/trainer.hpp"

namespace sapnet {

/// Complete configuration of a run, read from flat `section.key=value` text.
struct RunConfig {
  ModelConfig model;
  SegConfig seg;
  std::uint64_t seg_seed = 7;
  ExtractorConfig extractor;
  std::uint64_t extractor_seed = 11;
  LossWeights loss;
  TrainConfig train;
  std::string data_root;
  int crop = 100;
  std::string out_dir = "runs/latest";

  void validate() const;
  friend bool operator==(const RunConfig&, const RunConfig&) = default;
};

struct ConfigKeyInfo {
  std::string key;
  std::string default_value;
  std::string description;
};

/// Every accepted key with its default, in the order resolved configs are written.
std::vector<ConfigKeyInfo> config_schema();

/// Applies `key=value` lines onto the defaults. Blank lines and `#` comments are ignored. Unknown keys
/// and malformed values throw ConfigError naming the key; the result is validated.
RunConfig parse_run_config(const std::string& text);
RunConfig load_run_config(const std::filesystem::path& path);
/// Applies a single assignment onto an existing config (no validation).
void set_config_value(RunConfig& cfg, const std::string& key, const std::string& value);

/// All keys, one per line, schema order.
std::string resolved_config_text(const RunConfig& cfg);
/// FNV-1a 64-bit hash of the resolved text, as 16 hex digits.
std::string config_hash(const RunConfig& cfg);

/// Ablation rows: M1 (CRA only) through M5 and "ours", each adding one component.
std::vector<std::string> ablation_presets();
/// Sets the use_* toggles (and CRA attention) for a preset name; throws ConfigError for unknown names.
void apply_ablation_preset(RunConfig& cfg, const std::string& preset);

// Value helpers shared by the flat formats.
namespace kv {
std::vector<std::pair<std::string, std::string>> parse_lines(const std::string& text);
int parse_int(const std::string& key, const std::string& v);
std::uint64_t parse_u64(const std::string& key, const std::string& v);
double parse_double(const std::string& key, const std::string& v);
bool parse_bool(const std::string& key, const std::string& v);
std::vector<int> parse_int_list(const std::string& key, const std::string& v);
std::vector<double> parse_double_list(const std::string& key, const std::string& v);
std::string format_double(double v);
std::string format_int_list(const std::vector<int>& v);
std::string format_double_list(const std::vector<double>& v);
}  // namespace kv

}  // namespace sapnet
