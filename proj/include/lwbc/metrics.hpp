#pragma once

#include <optional>
#include <span>
#include <string>
#include <vector>

#include "lwbc/committee.hpp"
#include "lwbc/datagen.hpp"

namespace lwbc {

/// Accuracy summary of one predictor on one dataset.
///
/// guiding/conflicting: accuracy on a == y (resp. a != y) rows within each
/// class, averaged over classes. unbiased: the per-class mean of the two,
/// averaged over classes that have both. worst_group: the smallest (y, a)
/// cell accuracy. indistribution: cell accuracies weighted by the training
/// set's cell proportions, renormalised over cells present here.
/// Empty cells are skipped and reported in `warnings`; a metric with no
/// contributing cell is NaN.
struct MetricsReport {
  double overall = 0.0;
  Matrix per_group;  // (y, a) accuracy, NaN where the cell is empty
  GroupCounts group_sizes;
  double guiding = 0.0;
  double conflicting = 0.0;
  double unbiased = 0.0;
  double worst_group = 0.0;
  double indistribution = 0.0;
  std::vector<std::string> warnings;

  /// Looks a metric up by name: overall, guiding, conflicting, unbiased,
  /// worst_group, indistribution. Throws ValidationError for anything else.
  double get(const std::string& name) const;
  static const std::vector<std::string>& names();
};

MetricsReport metric_suite(std::span<const int> preds, const Dataset& dataset, const GroupCounts& train_group_counts);

/// (sum of conflicting weights / sum of weights) / (conflicting count / n).
double enrichment(std::span<const double> weights, std::span<const std::uint8_t> conflicting);

struct RatioBucket {
  int k = 0;
  long n_k = 0;
  long n_conflicting = 0;
  std::optional<double> ratio;  // empty bucket: undefined
};

/// Share of conflicting samples among samples with consensus count k, for
/// k = 0..m.
std::vector<RatioBucket> consensus_ratio_curve(std::span<const int> counts, std::span<const std::uint8_t> conflicting,
                                               int m);

struct PairDisagreement {
  int first = 0;
  int second = 0;
  long count = 0;
};

struct DisagreementTable {
  std::vector<PairDisagreement> pairs;  // (0,1), (0,2), ..., (m-2,m-1)
  double mean = 0.0;
};

/// For every unordered member pair, the number of rows where the two
/// predictions differ. `member_preds[l]` holds member l's predictions.
DisagreementTable pairwise_disagreement(const std::vector<std::vector<int>>& member_preds);
/// Same, evaluated on the conflicting rows of `dataset`.
DisagreementTable pairwise_disagreement(const Committee& committee, const Dataset& dataset);

}  // namespace lwbc
