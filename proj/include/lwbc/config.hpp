#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "json.hpp"
#include "lwbc/datagen.hpp"
#include "lwbc/trainer.hpp"

namespace lwbc {

/// A config file failed to parse or validate.
class ConfigError : public ValidationError {
 public:
  using ValidationError::ValidationError;
};

/// Everything one experiment needs: training hyper-parameters, the training
/// data generator and how the evaluation sets are produced.
struct ExperimentConfig {
  TrainConfig train;
  BiasedSpec data;
  int n_val = 1000;
  int n_test = 1000;
  /// Conflicting ratio of generated val/test sets; negative means
  /// group-balanced, 1 - 1/C.
  double eval_rho = -1.0;
  /// Stratified split applied to a dataset loaded with --data.
  SplitFractions split{0.70, 0.15, 0.15};
  /// Seeds per axis value in a sweep.
  int repeats = 1;

  double effective_eval_rho() const { return eval_rho < 0 ? 1.0 - 1.0 / data.num_classes : eval_rho; }
  void validate() const;
};

/// Flat JSON object keyed by field name. Keys absent from the document keep
/// their defaults; unknown keys and type mismatches raise ConfigError.
ExperimentConfig config_from_json(const nlohmann::json& j);
nlohmann::json config_to_json(const ExperimentConfig& c);
/// Every accepted key.
const std::vector<std::string>& config_keys();

/// Reads and parses a config file; a missing file is a ConfigError.
ExperimentConfig load_config(const std::filesystem::path& path);

/// Applies `key=value` assignments on top of a JSON config document. Values
/// that parse as JSON (numbers, booleans) are used as such; anything else is
/// taken as a string.
void apply_overrides(nlohmann::json& doc, const std::vector<std::string>& assignments);

}  // namespace lwbc
