#include "lwbc/trainer.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <limits>

namespace lwbc {
namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

using Clock = std::chrono::steady_clock;

/// Sums of the weights the main classifier saw during one epoch.
class WeightTally {
 public:
  explicit WeightTally(int num_classes)
      : sums_(Matrix::Zero(num_classes, num_classes)), draws_(GroupCounts::Zero(num_classes, num_classes)) {}

  void add(const Dataset& train, std::span<const int> indices, std::span<const double> weights) {
    for (std::size_t r = 0; r < indices.size(); ++r) {
      const auto i = static_cast<std::size_t>(indices[r]);
      sums_(train.labels[i], train.attrs[i]) += weights[r];
      ++draws_(train.labels[i], train.attrs[i]);
    }
  }

  void fill(EpochRecord& rec) const {
    const auto C = sums_.rows();
    rec.group_mean_weight = Matrix::Constant(C, C, kNaN);
    rec.group_weight_draws = draws_;
    double conf_sum = 0, guide_sum = 0, total = 0;
    long conf_n = 0, guide_n = 0;
    for (Eigen::Index y = 0; y < C; ++y) {
      for (Eigen::Index a = 0; a < C; ++a) {
        if (draws_(y, a) == 0) continue;
        rec.group_mean_weight(y, a) = sums_(y, a) / static_cast<double>(draws_(y, a));
        total += sums_(y, a);
        if (y == a) {
          guide_sum += sums_(y, a);
          guide_n += draws_(y, a);
        } else {
          conf_sum += sums_(y, a);
          conf_n += draws_(y, a);
        }
      }
    }
    const long n = conf_n + guide_n;
    rec.mean_weight_conflicting = conf_n > 0 ? conf_sum / static_cast<double>(conf_n) : kNaN;
    rec.mean_weight_guiding = guide_n > 0 ? guide_sum / static_cast<double>(guide_n) : kNaN;
    rec.enrichment = (conf_n > 0 && total > 0)
                         ? (conf_sum / total) / (static_cast<double>(conf_n) / static_cast<double>(n))
                         : kNaN;
  }

 private:
  Matrix sums_;
  GroupCounts draws_;
};

/// Per-epoch logging and best-checkpoint tracking shared by all methods.
class EpochLogger {
 public:
  EpochLogger(const TrainConfig& config, const EvalSets& data)
      : config_(config), data_(data), train_counts_(data.train.group_counts()), start_(Clock::now()) {}

  void record(int epoch, long iterations, long main_steps, const Classifier& main, const Committee* committee,
              const WeightTally& tally) {
    EpochRecord rec;
    rec.epoch = epoch;
    rec.iterations = iterations;
    rec.main_steps = main_steps;
    rec.train = evaluate(main, data_.train, train_counts_);
    rec.val = evaluate(main, data_.val, train_counts_);
    if (data_.test) rec.test = evaluate(main, *data_.test, train_counts_);
    rec.committee_unbiased_mean = rec.committee_unbiased_min = rec.committee_unbiased_max = kNaN;
    if (committee) {
      const auto accs = committee_unbiased(*committee, data_.val, train_counts_);
      double sum = 0;
      for (double a : accs) sum += a;
      rec.committee_unbiased_mean = sum / static_cast<double>(accs.size());
      rec.committee_unbiased_min = *std::min_element(accs.begin(), accs.end());
      rec.committee_unbiased_max = *std::max_element(accs.begin(), accs.end());
    }
    tally.fill(rec);
    rec.wall_seconds = std::chrono::duration<double>(Clock::now() - start_).count();

    // Only checkpoints the main classifier actually trained for are eligible;
    // ties keep the earliest epoch.
    if (main_steps > 0) {
      double score = rec.val.get(config_.selection_metric);
      if (std::isnan(score)) score = -std::numeric_limits<double>::infinity();
      if (!best_ || score > best_score_) {
        best_ = main;
        best_score_ = score;
        best_epoch_ = epoch;
      }
    }
    log_.epochs.push_back(std::move(rec));
  }

  void finish(TrainResult& result, const Classifier& final_main) {
    result.final_main = final_main;
    result.best = best_ ? *best_ : final_main;
    result.best_epoch = best_ ? best_epoch_ : static_cast<int>(log_.epochs.size());
    result.log = std::move(log_);
  }

 private:
  const TrainConfig& config_;
  const EvalSets& data_;
  GroupCounts train_counts_;
  Clock::time_point start_;
  RunLog log_;
  std::optional<Classifier> best_;
  double best_score_ = 0.0;
  int best_epoch_ = 0;
};

void require_method(const TrainConfig& config, std::initializer_list<Method> allowed, const char* fn) {
  if (std::find(allowed.begin(), allowed.end(), config.method) == allowed.end())
    throw ValidationError(std::string(fn) + ": method '" + to_string(config.method) + "' not handled here");
}

void check_data(const TrainConfig& config, const EvalSets& data) {
  config.validate();
  data.train.validate();
  if (data.train.size() == 0) throw ValidationError("training set is empty");
  if (static_cast<std::size_t>(config.batch_size) > data.train.size())
    throw ValidationError("batch_size exceeds the training set size");
  const auto d = data.train.features.cols();
  if (data.val.features.cols() != d || (data.test && data.test->features.cols() != d))
    throw ShapeError("evaluation sets have a different feature dimension from the training set");
}

}  // namespace

std::string to_string(Method m) {
  switch (m) {
    case Method::kErm: return "erm";
    case Method::kSingleReweight: return "single_reweight";
    case Method::kJttLike: return "jtt_like";
    case Method::kLwbcNoKd: return "lwbc_nokd";
    case Method::kLwbc: return "lwbc";
  }
  return "unknown";
}

Method method_from_string(const std::string& name) {
  for (Method m : {Method::kErm, Method::kSingleReweight, Method::kJttLike, Method::kLwbcNoKd, Method::kLwbc})
    if (to_string(m) == name) return m;
  throw ValidationError("unknown method '" + name + "'");
}

void TrainConfig::validate() const {
  const auto fail = [](const std::string& field, const std::string& rule) {
    throw ValidationError("config field '" + field + "': " + rule);
  };
  if (!(lr > 0)) fail("lr", "must be positive");
  if (batch_size < 1) fail("batch_size", "must be >= 1");
  if (m < 1) fail("m", "must be >= 1");
  if (subset_size < 1) fail("subset_size", "must be >= 1");
  if (!(alpha > 0)) fail("alpha", "must be positive");
  if (!(lambda >= 0 && lambda <= 1)) fail("lambda", "must lie in [0, 1]");
  if (!(tau > 0)) fail("tau", "must be positive");
  if (epochs < 1 && total_iterations <= 0) fail("epochs", "must be >= 1");
  if (warmup_epochs < 0) fail("warmup_epochs", "must be >= 0");
  if (kd_delay_epochs < 0) fail("kd_delay_epochs", "must be >= 0");
  if (total_iterations < 0) fail("total_iterations", "must be >= 0");
  if (!(single_upweight > 0)) fail("single_upweight", "must be positive");
  if (jtt_epoch < 1) fail("jtt_epoch", "must be >= 1");
  if (!(jtt_upweight > 0)) fail("jtt_upweight", "must be positive");
  if (d_hidden < 1) fail("d_hidden", "must be >= 1");
  const auto& names = MetricsReport::names();
  if (std::find(names.begin(), names.end(), selection_metric) == names.end())
    fail("selection_metric", "unknown metric '" + selection_metric + "'");
  if (method == Method::kLwbc || method == Method::kLwbcNoKd) {
    const long t = total_iterations > 0 ? total_iterations : -1;
    const long tw = warmup_iterations;
    if (t > 0 && tw >= 0 && tw >= t) fail("warmup_iterations", "must be smaller than total_iterations");
    if (t <= 0 && tw < 0 && warmup_epochs >= epochs) fail("warmup_epochs", "must be smaller than epochs");
  }
}

Schedule make_schedule(const TrainConfig& config, std::size_t train_size) {
  Schedule s;
  const auto b = static_cast<std::size_t>(config.batch_size);
  s.steps_per_epoch = static_cast<long>((train_size + b - 1) / b);
  s.total = config.total_iterations > 0 ? config.total_iterations : config.epochs * s.steps_per_epoch;
  s.warmup = config.warmup_iterations >= 0 ? config.warmup_iterations : config.warmup_epochs * s.steps_per_epoch;
  if (config.method == Method::kLwbc || config.method == Method::kLwbcNoKd) {
    if (s.warmup >= s.total) throw ValidationError("warm-up must end before the last iteration");
  } else {
    s.warmup = 0;
  }
  s.kd_start = s.warmup + config.kd_delay_epochs * s.steps_per_epoch;
  s.num_epochs = (s.total + s.steps_per_epoch - 1) / s.steps_per_epoch;
  return s;
}

MetricsReport evaluate(const Classifier& state, const Dataset& dataset, const GroupCounts& train_group_counts) {
  if (dataset.features.cols() != state.input_dim())
    throw ShapeError("evaluate: dataset has " + std::to_string(dataset.features.cols()) + " features, classifier " +
                     std::to_string(state.input_dim()));
  return metric_suite(predict(state, dataset.features), dataset, train_group_counts);
}

std::vector<double> committee_unbiased(const Committee& committee, const Dataset& dataset,
                                       const GroupCounts& train_group_counts) {
  std::vector<double> out;
  out.reserve(committee.members.size());
  for (const auto& member : committee.members) out.push_back(evaluate(member, dataset, train_group_counts).unbiased);
  return out;
}

TrainResult train_lwbc(const TrainConfig& config, const EvalSets& data) {
  require_method(config, {Method::kLwbc, Method::kLwbcNoKd}, "train_lwbc");
  check_data(config, data);
  const Dataset& train = data.train;
  const Schedule sched = make_schedule(config, train.size());
  const auto d_in = train.features.cols();
  const Reduction reduction = config.reduction();
  const double lambda = config.method == Method::kLwbcNoKd ? 0.0 : config.lambda;

  auto subsets = bootstrap_subsets(train.size(), config.m, config.subset_size, RngStream(config.seed, streams::kSubsets),
                                   config.subsets_with_replacement);
  Committee committee = make_committee(std::move(subsets), d_in, config.d_hidden, train.num_classes,
                                       RngStream(config.seed, streams::kMembers));
  RngStream main_init(config.seed, streams::kMain);
  Classifier main = init_classifier<double>(d_in, config.d_hidden, train.num_classes, main_init);
  const RngStream batch_rng(config.seed, streams::kBatches);

  TrainResult result;
  EpochLogger logger(config, data);
  WeightTally tally(train.num_classes);
  std::vector<std::vector<int>> batches;
  long main_steps = 0;
  if (sched.warmup == 0) result.warmup_counts = consensus_counts(committee, train.features, train.labels);

  for (long it = 0; it < sched.total; ++it) {
    const long epoch = it / sched.steps_per_epoch;
    const long pos = it % sched.steps_per_epoch;
    if (pos == 0) batches = minibatches(train.size(), config.batch_size, batch_rng, static_cast<std::uint64_t>(epoch));
    const Batch batch = gather_batch(train, batches[static_cast<std::size_t>(pos)]);

    if (it < sched.warmup) {
      warmup_step(committee, batch, config.lr, reduction);
      if (it + 1 == sched.warmup) result.warmup_counts = consensus_counts(committee, train.features, train.labels);
    } else {
      const auto wb = weights_from_counts(consensus_counts(committee, batch.x, batch.labels), config.m, config.alpha);
      const Grads g = weighted_ce_backward(main, batch.x, batch.labels, wb.weights, reduction);
      adam_step(main, g, config.lr);
      ++main_steps;
      tally.add(train, batch.indices, wb.weights);

      // The teacher is the main classifier after this iteration's update.
      const double lambda_now = it >= sched.kd_start ? lambda : 0.0;
      const Matrix teacher = lambda_now > 0 ? forward(main, batch.x) : Matrix(batch.x.rows(), train.num_classes);
      committee_step(committee, batch, teacher, config.lr, lambda_now, config.tau, reduction);
    }

    if (pos + 1 == sched.steps_per_epoch || it + 1 == sched.total) {
      logger.record(static_cast<int>(epoch + 1), it + 1, main_steps, main, &committee, tally);
      tally = WeightTally(train.num_classes);
    }
  }

  result.final_counts = consensus_counts(committee, train.features, train.labels);
  logger.finish(result, main);
  result.committee = std::move(committee);
  return result;
}

TrainResult train_fixed_weights(const TrainConfig& config, const EvalSets& data, const std::vector<double>& weights,
                                long total_iterations) {
  check_data(config, data);
  const Dataset& train = data.train;
  if (weights.size() != train.size()) throw ShapeError("train_fixed_weights: one weight per training sample required");
  if (total_iterations < 1) throw ValidationError("train_fixed_weights: total_iterations must be >= 1");
  const Schedule sched = make_schedule(config, train.size());
  const Reduction reduction = config.reduction();

  RngStream main_init(config.seed, streams::kMain);
  Classifier main = init_classifier<double>(train.features.cols(), config.d_hidden, train.num_classes, main_init);
  const RngStream batch_rng(config.seed, streams::kBatches);

  TrainResult result;
  result.stage_weights = weights;
  EpochLogger logger(config, data);
  WeightTally tally(train.num_classes);
  std::vector<std::vector<int>> batches;
  std::vector<double> batch_weights;
  for (long it = 0; it < total_iterations; ++it) {
    const long epoch = it / sched.steps_per_epoch;
    const long pos = it % sched.steps_per_epoch;
    if (pos == 0) batches = minibatches(train.size(), config.batch_size, batch_rng, static_cast<std::uint64_t>(epoch));
    const Batch batch = gather_batch(train, batches[static_cast<std::size_t>(pos)]);
    batch_weights.clear();
    for (int i : batch.indices) batch_weights.push_back(weights[static_cast<std::size_t>(i)]);
    const Grads g = weighted_ce_backward(main, batch.x, batch.labels, batch_weights, reduction);
    adam_step(main, g, config.lr);
    tally.add(train, batch.indices, batch_weights);
    if (pos + 1 == sched.steps_per_epoch || it + 1 == total_iterations) {
      logger.record(static_cast<int>(epoch + 1), it + 1, it + 1, main, nullptr, tally);
      tally = WeightTally(train.num_classes);
    }
  }
  logger.finish(result, main);
  return result;
}

TrainResult train_erm(const TrainConfig& config, const EvalSets& data) {
  require_method(config, {Method::kErm}, "train_erm");
  check_data(config, data);
  const Schedule sched = make_schedule(config, data.train.size());
  return train_fixed_weights(config, data, std::vector<double>(data.train.size(), 1.0), sched.total);
}

std::vector<std::uint8_t> erm_error_set(const TrainConfig& config, const Dataset& train, int epochs) {
  if (epochs < 1) throw ValidationError("erm_error_set: epochs must be >= 1");
  TrainConfig stage = config;
  stage.method = Method::kErm;
  stage.epochs = epochs;
  stage.total_iterations = 0;
  const EvalSets data{train, train, nullptr};
  const Schedule sched = make_schedule(stage, train.size());
  const auto first = train_fixed_weights(stage, data, std::vector<double>(train.size(), 1.0), sched.total);
  const auto preds = predict(first.final_main, train.features);
  std::vector<std::uint8_t> errors(train.size());
  for (std::size_t i = 0; i < train.size(); ++i) errors[i] = preds[i] != train.labels[i];
  return errors;
}

namespace {

TrainResult retrain_with_upweighted_errors(const TrainConfig& config, const EvalSets& data, int identify_epochs,
                                           double upweight) {
  check_data(config, data);
  const auto errors = erm_error_set(config, data.train, identify_epochs);
  std::vector<double> weights(errors.size());
  for (std::size_t i = 0; i < errors.size(); ++i) weights[i] = errors[i] ? upweight : 1.0;
  const Schedule sched = make_schedule(config, data.train.size());
  return train_fixed_weights(config, data, weights, sched.total);
}

}  // namespace

TrainResult train_single_reweight(const TrainConfig& config, const EvalSets& data) {
  require_method(config, {Method::kSingleReweight}, "train_single_reweight");
  check_data(config, data);
  const Schedule sched = make_schedule(config, data.train.size());
  const int stage_one_epochs = static_cast<int>(sched.num_epochs);
  return retrain_with_upweighted_errors(config, data, stage_one_epochs, config.single_upweight);
}

TrainResult train_jtt_like(const TrainConfig& config, const EvalSets& data) {
  require_method(config, {Method::kJttLike}, "train_jtt_like");
  return retrain_with_upweighted_errors(config, data, config.jtt_epoch, config.jtt_upweight);
}

TrainResult train(const TrainConfig& config, const EvalSets& data) {
  switch (config.method) {
    case Method::kErm: return train_erm(config, data);
    case Method::kSingleReweight: return train_single_reweight(config, data);
    case Method::kJttLike: return train_jtt_like(config, data);
    case Method::kLwbcNoKd:
    case Method::kLwbc: return train_lwbc(config, data);
  }
  throw ValidationError("unknown method");
}

}  // namespace lwbc
