#include "lwbc/config.hpp"

#include <algorithm>

#include "lwbc/io.hpp"

namespace lwbc {
namespace {

template <typename T>
void read(const nlohmann::json& j, const char* key, T& out) {
  const auto it = j.find(key);
  if (it == j.end()) return;
  try {
    if constexpr (std::is_same_v<T, bool>) {
      if (!it->is_boolean()) throw ConfigError("expected a boolean");
    } else if constexpr (std::is_integral_v<T>) {
      if (!it->is_number_integer()) throw ConfigError("expected an integer");
      if constexpr (std::is_unsigned_v<T>) {
        if (!it->is_number_unsigned()) throw ConfigError("expected a non-negative integer");
      }
    } else if constexpr (std::is_floating_point_v<T>) {
      if (!it->is_number()) throw ConfigError("expected a number");
    } else {
      if (!it->is_string()) throw ConfigError("expected a string");
    }
    out = it->get<T>();
  } catch (const ConfigError& e) {
    throw ConfigError(std::string("config field '") + key + "': " + e.what());
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("config field '") + key + "': " + e.what());
  }
}

}  // namespace

const std::vector<std::string>& config_keys() {
  static const std::vector<std::string> kKeys = {
      "method",      "lr",          "batch_size",       "m",
      "subset_size", "alpha",       "lambda",           "tau",
      "epochs",      "warmup_epochs", "kd_delay_epochs", "total_iterations",
      "warmup_iterations", "seed",  "selection_metric", "raw_sum_losses",
      "single_upweight", "jtt_epoch", "jtt_upweight",   "d_hidden",
      "subsets_with_replacement",
      "n",           "num_classes", "rho",              "d_core",
      "d_bias",      "delta_core",  "delta_bias",       "sigma_core",
      "sigma_bias",  "n_val",       "n_test",           "eval_rho",
      "split_train", "split_val",   "split_test",       "repeats"};
  return kKeys;
}

void ExperimentConfig::validate() const {
  try {
    train.validate();
    data.validate();
  } catch (const ValidationError& e) {
    throw ConfigError(e.what());
  }
  if (n_val < data.num_classes || n_val % data.num_classes != 0)
    throw ConfigError("config field 'n_val': must be a positive multiple of num_classes");
  if (n_test < data.num_classes || n_test % data.num_classes != 0)
    throw ConfigError("config field 'n_test': must be a positive multiple of num_classes");
  const double er = effective_eval_rho();
  if (er > 1.0 - 1.0 / data.num_classes + 1e-12)
    throw ConfigError("config field 'eval_rho': must be <= 1 - 1/num_classes");
  if (repeats < 1) throw ConfigError("config field 'repeats': must be >= 1");
  if (split.train <= 0 || split.val < 0 || split.test < 0 ||
      std::abs(split.train + split.val + split.test - 1.0) > 1e-9)
    throw ConfigError("config fields 'split_*': must be non-negative, train positive, summing to 1");
}

ExperimentConfig config_from_json(const nlohmann::json& j) {
  if (!j.is_object()) throw ConfigError("config must be a JSON object");
  const auto& keys = config_keys();
  for (const auto& [key, value] : j.items())
    if (std::find(keys.begin(), keys.end(), key) == keys.end()) throw ConfigError("unknown config field '" + key + "'");

  ExperimentConfig c;
  auto& t = c.train;
  std::string method = to_string(t.method);
  read(j, "method", method);
  try {
    t.method = method_from_string(method);
  } catch (const ValidationError& e) {
    throw ConfigError(std::string("config field 'method': ") + e.what());
  }
  read(j, "lr", t.lr);
  read(j, "batch_size", t.batch_size);
  read(j, "m", t.m);
  read(j, "subset_size", t.subset_size);
  read(j, "alpha", t.alpha);
  read(j, "lambda", t.lambda);
  read(j, "tau", t.tau);
  read(j, "epochs", t.epochs);
  read(j, "warmup_epochs", t.warmup_epochs);
  read(j, "kd_delay_epochs", t.kd_delay_epochs);
  read(j, "total_iterations", t.total_iterations);
  read(j, "warmup_iterations", t.warmup_iterations);
  read(j, "seed", t.seed);
  read(j, "selection_metric", t.selection_metric);
  read(j, "raw_sum_losses", t.raw_sum_losses);
  read(j, "single_upweight", t.single_upweight);
  read(j, "jtt_epoch", t.jtt_epoch);
  read(j, "jtt_upweight", t.jtt_upweight);
  read(j, "d_hidden", t.d_hidden);
  read(j, "subsets_with_replacement", t.subsets_with_replacement);

  auto& d = c.data;
  read(j, "n", d.n);
  read(j, "num_classes", d.num_classes);
  read(j, "rho", d.rho);
  read(j, "d_core", d.d_core);
  read(j, "d_bias", d.d_bias);
  read(j, "delta_core", d.delta_core);
  read(j, "delta_bias", d.delta_bias);
  read(j, "sigma_core", d.sigma_core);
  read(j, "sigma_bias", d.sigma_bias);
  read(j, "n_val", c.n_val);
  read(j, "n_test", c.n_test);
  read(j, "eval_rho", c.eval_rho);
  read(j, "split_train", c.split.train);
  read(j, "split_val", c.split.val);
  read(j, "split_test", c.split.test);
  read(j, "repeats", c.repeats);
  return c;
}

nlohmann::json config_to_json(const ExperimentConfig& c) {
  const auto& t = c.train;
  const auto& d = c.data;
  return {{"method", to_string(t.method)},
          {"lr", t.lr},
          {"batch_size", t.batch_size},
          {"m", t.m},
          {"subset_size", t.subset_size},
          {"alpha", t.alpha},
          {"lambda", t.lambda},
          {"tau", t.tau},
          {"epochs", t.epochs},
          {"warmup_epochs", t.warmup_epochs},
          {"kd_delay_epochs", t.kd_delay_epochs},
          {"total_iterations", t.total_iterations},
          {"warmup_iterations", t.warmup_iterations},
          {"seed", t.seed},
          {"selection_metric", t.selection_metric},
          {"raw_sum_losses", t.raw_sum_losses},
          {"single_upweight", t.single_upweight},
          {"jtt_epoch", t.jtt_epoch},
          {"jtt_upweight", t.jtt_upweight},
          {"d_hidden", t.d_hidden},
          {"subsets_with_replacement", t.subsets_with_replacement},
          {"n", d.n},
          {"num_classes", d.num_classes},
          {"rho", d.rho},
          {"d_core", d.d_core},
          {"d_bias", d.d_bias},
          {"delta_core", d.delta_core},
          {"delta_bias", d.delta_bias},
          {"sigma_core", d.sigma_core},
          {"sigma_bias", d.sigma_bias},
          {"n_val", c.n_val},
          {"n_test", c.n_test},
          {"eval_rho", c.eval_rho},
          {"split_train", c.split.train},
          {"split_val", c.split.val},
          {"split_test", c.split.test},
          {"repeats", c.repeats}};
}

ExperimentConfig load_config(const std::filesystem::path& path) {
  if (!std::filesystem::exists(path)) throw ConfigError("config file " + path.string() + " does not exist");
  const std::string text = read_text_file(path);
  try {
    return config_from_json(nlohmann::json::parse(text));
  } catch (const nlohmann::json::parse_error& e) {
    throw ConfigError("config file " + path.string() + ": " + e.what());
  }
}

void apply_overrides(nlohmann::json& doc, const std::vector<std::string>& assignments) {
  if (!doc.is_object()) throw ConfigError("config must be a JSON object");
  for (const auto& a : assignments) {
    const auto eq = a.find('=');
    if (eq == std::string::npos || eq == 0) throw ConfigError("override '" + a + "' is not key=value");
    const std::string key = a.substr(0, eq);
    const std::string value = a.substr(eq + 1);
    auto parsed = nlohmann::json::parse(value, nullptr, false);
    doc[key] = parsed.is_discarded() || parsed.is_object() || parsed.is_array() ? nlohmann::json(value) : parsed;
  }
}

}  // namespace lwbc
