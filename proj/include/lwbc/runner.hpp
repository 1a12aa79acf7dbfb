#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "lwbc/config.hpp"
#include "lwbc/datagen.hpp"
#include "lwbc/gradcheck.hpp"
#include "lwbc/trainer.hpp"

namespace lwbc {

inline constexpr const char* kToolVersion = "lwbc 1.0.0";

/// Process exit codes shared by every subcommand.
namespace exit_code {
inline constexpr int kOk = 0;
inline constexpr int kCheckFailed = 1;
inline constexpr int kUsage = 2;
inline constexpr int kIo = 3;
}  // namespace exit_code

struct ExperimentData {
  Dataset train;
  Dataset val;
  Dataset test;
};

/// Train/val/test for a config: generated from config.train.seed, or loaded
/// from `data_path` and split by config.split.
ExperimentData make_experiment_data(const ExperimentConfig& config,
                                    const std::optional<std::filesystem::path>& data_path = std::nullopt);

/// Outcome of one finished run, as written to summary.json.
struct RunSummary {
  nlohmann::json summary;
  MetricsReport best_val;
  MetricsReport best_test;
};

/// Trains per `config` and writes every run artifact into `out_dir`:
/// metrics.csv, timing.csv, summary.json, weights_hist.csv,
/// consensus_curve.csv, predictions_test.csv, main_best.ckpt.json and
/// manifest.json.
RunSummary run_experiment(const ExperimentConfig& config, const ExperimentData& data,
                          const std::filesystem::path& out_dir);

/// Per-epoch log rows with a fixed header; floats at 17 significant digits.
std::string metrics_csv(const RunLog& log);
std::string weights_hist_csv(const RunLog& log);
std::string consensus_curve_csv(const std::vector<RatioBucket>& curve);

struct CommonOptions {
  std::optional<std::filesystem::path> config;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> method;
  std::vector<std::string> overrides;  // key=value
};

/// Config file (or defaults), then --set overrides, then --seed/--method.
ExperimentConfig resolve_config(const CommonOptions& options);

struct RunOptions {
  CommonOptions common;
  std::filesystem::path out;
  std::optional<std::filesystem::path> data;
};

struct SweepOptions {
  CommonOptions common;
  std::filesystem::path out;
  std::optional<std::filesystem::path> data;
  std::string axis;  // rho, m, lambda, method, seed
  std::vector<std::string> values;
  int threads = 1;
};

struct GenDataOptions {
  CommonOptions common;
  std::filesystem::path out;  // CSV path; the spec sidecar lands next to it
};

int cmd_run(const RunOptions& options, std::ostream& out, std::ostream& err);
int cmd_sweep(const SweepOptions& options, std::ostream& out, std::ostream& err);
int cmd_gen_data(const GenDataOptions& options, std::ostream& out, std::ostream& err);
int cmd_gradcheck(const GradcheckOptions& options, std::ostream& out, std::ostream& err);

/// Sample standard deviation (n - 1); 0 for fewer than two values.
double sample_std(const std::vector<double>& values);

}  // namespace lwbc
