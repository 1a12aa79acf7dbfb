#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "lwbc/classifier.hpp"
#include "lwbc/committee.hpp"
#include "lwbc/datagen.hpp"
#include "lwbc/metrics.hpp"

namespace lwbc {

enum class Method { kErm, kSingleReweight, kJttLike, kLwbcNoKd, kLwbc };

std::string to_string(Method m);
/// Accepts erm, single_reweight, jtt_like, lwbc_nokd, lwbc.
Method method_from_string(const std::string& name);

struct TrainConfig {
  Method method = Method::kLwbc;
  double lr = 1e-3;
  int batch_size = 64;
  int m = 30;
  int subset_size = 200;
  double alpha = 0.02;
  double lambda = 0.6;
  double tau = 1.0;
  int epochs = 30;
  int warmup_epochs = 3;
  int kd_delay_epochs = 1;
  /// When positive, overrides `epochs` as the total iteration count t.
  long total_iterations = 0;
  /// When non-negative, overrides `warmup_epochs` as the warm-up count t_w.
  long warmup_iterations = -1;
  std::uint64_t seed = 0;
  std::string selection_metric = "conflicting";
  bool raw_sum_losses = false;
  double single_upweight = 50.0;
  int jtt_epoch = 10;
  double jtt_upweight = 20.0;
  int d_hidden = 16;
  bool subsets_with_replacement = true;

  /// Throws ValidationError naming the offending field.
  void validate() const;
  Reduction reduction() const { return raw_sum_losses ? Reduction::kSum : Reduction::kMean; }
};

/// Iteration counts derived from a config and a training-set size.
struct Schedule {
  long steps_per_epoch = 0;
  long total = 0;     // t
  long warmup = 0;    // t_w
  long kd_start = 0;  // first iteration with the KD term active
  long num_epochs = 0;
};

Schedule make_schedule(const TrainConfig& config, std::size_t train_size);

/// Datasets evaluated after every epoch; `test` is optional.
struct EvalSets {
  const Dataset& train;
  const Dataset& val;
  const Dataset* test = nullptr;
};

struct EpochRecord {
  int epoch = 0;  // 1-based
  long iterations = 0;
  long main_steps = 0;
  MetricsReport train;
  MetricsReport val;
  std::optional<MetricsReport> test;
  // Unbiased validation accuracy across committee members; NaN without a committee.
  double committee_unbiased_mean = 0.0;
  double committee_unbiased_min = 0.0;
  double committee_unbiased_max = 0.0;
  // Statistics of the weights the main classifier trained with this epoch;
  // NaN when it took no step.
  double mean_weight_conflicting = 0.0;
  double mean_weight_guiding = 0.0;
  double enrichment = 0.0;
  Matrix group_mean_weight;  // (y, a), NaN for cells without draws
  GroupCounts group_weight_draws;
  double wall_seconds = 0.0;
};

struct RunLog {
  std::vector<EpochRecord> epochs;
};

struct TrainResult {
  Classifier best;
  int best_epoch = 0;
  Classifier final_main;
  std::optional<Committee> committee;
  RunLog log;
  /// Consensus counts over the training set when warm-up ends (LWBC methods).
  std::vector<int> warmup_counts;
  /// Consensus counts over the training set after the last iteration.
  std::vector<int> final_counts;
  /// Frozen per-sample weights of the two-stage baselines.
  std::vector<double> stage_weights;
};

/// Stream ids derived from TrainConfig::seed.
namespace streams {
inline constexpr std::uint64_t kSubsets = 11;
inline constexpr std::uint64_t kMembers = 12;
inline constexpr std::uint64_t kMain = 13;
inline constexpr std::uint64_t kBatches = 14;
}  // namespace streams

/// Learning with a biased committee: bootstrapped subsets, committee warm-up,
/// then per batch consensus weights, a weighted-CE main step and a combined
/// CE + KD committee step. Returns the main-classifier checkpoint with the
/// best `selection_metric` on the validation set.
TrainResult train_lwbc(const TrainConfig& config, const EvalSets& data);
TrainResult train_erm(const TrainConfig& config, const EvalSets& data);
/// ERM, then upweight the samples it gets wrong by `single_upweight` and
/// retrain from the same initialisation.
TrainResult train_single_reweight(const TrainConfig& config, const EvalSets& data);
/// ERM for `jtt_epoch` epochs, then upweight its error set by `jtt_upweight`
/// and retrain.
TrainResult train_jtt_like(const TrainConfig& config, const EvalSets& data);
/// Dispatches on config.method.
TrainResult train(const TrainConfig& config, const EvalSets& data);

/// Trains with fixed per-sample weights (all ones is ERM) for `total_iterations`.
TrainResult train_fixed_weights(const TrainConfig& config, const EvalSets& data, const std::vector<double>& weights,
                                long total_iterations);

/// Error flags on the training set of an ERM model trained for `epochs` epochs.
std::vector<std::uint8_t> erm_error_set(const TrainConfig& config, const Dataset& train, int epochs);

MetricsReport evaluate(const Classifier& state, const Dataset& dataset, const GroupCounts& train_group_counts);

/// Unbiased accuracy of each member on `dataset`.
std::vector<double> committee_unbiased(const Committee& committee, const Dataset& dataset,
                                       const GroupCounts& train_group_counts);

}  // namespace lwbc
