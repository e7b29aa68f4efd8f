#pragma once

#include <cstdint>
#include <filesystem>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "cine/model.hpp"

namespace cine {

/// Raised for malformed or out-of-range configuration; key() is the dotted
/// path of the offending entry.
class ConfigError : public std::invalid_argument {
 public:
  ConfigError(std::string key, const std::string& message)
      : std::invalid_argument(key + ": " + message), key_(std::move(key)) {}
  const std::string& key() const { return key_; }

 private:
  std::string key_;
};

struct DataConfig {
  std::string manifest;  // written by `prepare`
  std::string root;      // raw dataset root
  int height = 0;        // 0 keeps the native size
  int width = 0;
  double acceleration = 4.0;
  int center_lines = 0;  // 0 picks the default for the acceleration
  std::uint64_t split_seed = 0;
  std::uint64_t mask_seed = 0;
  std::uint64_t phase_seed = 0;
  double noise_sigma = 0.0;
  bool per_frame_masks = false;
};

struct PlateauConfig {
  double factor = 0.5;
  int patience = 5;
  double min_lr = 1e-6;
};

struct TrainConfig {
  double learning_rate = 1e-3;
  int epochs = 100;
  int max_steps = 0;  // 0: no step budget
  int batch_size = 1;
  double weight_decay = 1e-2;
  PlateauConfig plateau;
  bool mixed_precision = false;
  std::uint64_t seed = 0;
  int val_every = 1;  // epochs between validations

  void validate() const;
};

struct ExperimentConfig {
  DataConfig data;
  NetConfig net;
  TrainConfig train;

  void validate() const;
};

ExperimentConfig parse_config(const std::string& yaml_text);
ExperimentConfig load_config(const std::filesystem::path& path);
/// Canonical YAML rendering; every key of the schema is present.
std::string to_yaml(const ExperimentConfig& config);
/// FNV-1a of the canonical rendering, as 16 hex digits.
std::string config_hash(const ExperimentConfig& config);

/// Applies dotted-key overrides ("mgda.mode" -> "FOGP"); values are YAML
/// scalars or flow sequences. Unknown keys raise ConfigError.
ExperimentConfig with_overrides(const ExperimentConfig& base, const std::vector<std::pair<std::string, std::string>>& overrides);
bool schema_has_key(const std::string& dotted_key);

}  // namespace cine
