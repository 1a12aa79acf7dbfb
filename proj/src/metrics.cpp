#include "lwbc/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace lwbc {
namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

double mean_or_nan(const std::vector<double>& v) {
  if (v.empty()) return kNaN;
  double s = 0.0;
  for (double x : v) s += x;
  return s / static_cast<double>(v.size());
}

}  // namespace

const std::vector<std::string>& MetricsReport::names() {
  static const std::vector<std::string> kNames = {"overall", "guiding", "conflicting",
                                                  "unbiased", "worst_group", "indistribution"};
  return kNames;
}

double MetricsReport::get(const std::string& name) const {
  if (name == "overall") return overall;
  if (name == "guiding") return guiding;
  if (name == "conflicting") return conflicting;
  if (name == "unbiased") return unbiased;
  if (name == "worst_group") return worst_group;
  if (name == "indistribution") return indistribution;
  throw ValidationError("unknown metric '" + name + "'");
}

MetricsReport metric_suite(std::span<const int> preds, const Dataset& dataset, const GroupCounts& train_group_counts) {
  const int C = dataset.num_classes;
  if (preds.size() != dataset.size())
    throw ShapeError("metric_suite: " + std::to_string(preds.size()) + " predictions for " +
                     std::to_string(dataset.size()) + " samples");
  if (train_group_counts.rows() != C || train_group_counts.cols() != C)
    throw ShapeError("metric_suite: training group counts do not cover " + std::to_string(C) + " classes");

  MetricsReport r;
  r.group_sizes = GroupCounts::Zero(C, C);
  GroupCounts correct = GroupCounts::Zero(C, C);
  long total_correct = 0;
  for (std::size_t i = 0; i < preds.size(); ++i) {
    const int y = dataset.labels[i];
    const int a = dataset.attrs[i];
    const bool ok = preds[i] == y;
    ++r.group_sizes(y, a);
    correct(y, a) += ok;
    total_correct += ok;
  }
  r.overall = preds.empty() ? kNaN : static_cast<double>(total_correct) / static_cast<double>(preds.size());

  r.per_group = Matrix::Constant(C, C, kNaN);
  double worst = std::numeric_limits<double>::infinity();
  double weighted = 0.0;
  double weight_total = 0.0;
  for (int y = 0; y < C; ++y) {
    for (int a = 0; a < C; ++a) {
      const long n = r.group_sizes(y, a);
      if (n == 0) {
        r.warnings.push_back("empty group (y=" + std::to_string(y) + ", a=" + std::to_string(a) + ")");
        continue;
      }
      const double acc = static_cast<double>(correct(y, a)) / static_cast<double>(n);
      r.per_group(y, a) = acc;
      worst = std::min(worst, acc);
      const auto w = static_cast<double>(train_group_counts(y, a));
      weighted += w * acc;
      weight_total += w;
    }
  }
  r.worst_group = std::isinf(worst) ? kNaN : worst;
  r.indistribution = weight_total > 0 ? weighted / weight_total : kNaN;

  std::vector<double> guiding;
  std::vector<double> conflicting;
  std::vector<double> unbiased;
  for (int y = 0; y < C; ++y) {
    const long n_guiding = r.group_sizes(y, y);
    long n_conf = 0;
    long ok_conf = 0;
    for (int a = 0; a < C; ++a) {
      if (a == y) continue;
      n_conf += r.group_sizes(y, a);
      ok_conf += correct(y, a);
    }
    const double g = n_guiding > 0 ? static_cast<double>(correct(y, y)) / static_cast<double>(n_guiding) : kNaN;
    const double c = n_conf > 0 ? static_cast<double>(ok_conf) / static_cast<double>(n_conf) : kNaN;
    if (n_guiding > 0) guiding.push_back(g);
    if (n_conf > 0) conflicting.push_back(c);
    if (n_guiding > 0 && n_conf > 0) unbiased.push_back(0.5 * (g + c));
  }
  r.guiding = mean_or_nan(guiding);
  r.conflicting = mean_or_nan(conflicting);
  r.unbiased = mean_or_nan(unbiased);
  return r;
}

double enrichment(std::span<const double> weights, std::span<const std::uint8_t> conflicting) {
  if (weights.size() != conflicting.size()) throw ShapeError("enrichment: weights and flags differ in length");
  double scale = 0.0;
  for (double w : weights) {
    if (!(w >= 0)) throw ValidationError("enrichment: weights must be >= 0");
    scale = std::max(scale, w);
  }
  if (!(scale > 0)) throw ValidationError("enrichment: total weight is zero");
  // Dividing by the largest weight keeps uniform weights exact.
  double total = 0.0;
  double conf_weight = 0.0;
  long n_conf = 0;
  for (std::size_t i = 0; i < weights.size(); ++i) {
    const double w = weights[i] / scale;
    total += w;
    if (conflicting[i]) {
      conf_weight += w;
      ++n_conf;
    }
  }
  if (!(total > 0)) throw ValidationError("enrichment: total weight is zero");
  if (n_conf == 0) throw ValidationError("enrichment: no conflicting samples");
  return (conf_weight / total) / (static_cast<double>(n_conf) / static_cast<double>(weights.size()));
}

std::vector<RatioBucket> consensus_ratio_curve(std::span<const int> counts, std::span<const std::uint8_t> conflicting,
                                               int m) {
  if (counts.size() != conflicting.size()) throw ShapeError("consensus_ratio_curve: length mismatch");
  if (m < 0) throw ValidationError("consensus_ratio_curve: m must be >= 0");
  std::vector<RatioBucket> buckets(static_cast<std::size_t>(m + 1));
  for (int k = 0; k <= m; ++k) buckets[static_cast<std::size_t>(k)].k = k;
  for (std::size_t i = 0; i < counts.size(); ++i) {
    if (counts[i] < 0 || counts[i] > m)
      throw ValidationError("consensus_ratio_curve: count " + std::to_string(counts[i]) + " outside [0, m]");
    auto& b = buckets[static_cast<std::size_t>(counts[i])];
    ++b.n_k;
    b.n_conflicting += conflicting[i] != 0;
  }
  for (auto& b : buckets)
    if (b.n_k > 0) b.ratio = static_cast<double>(b.n_conflicting) / static_cast<double>(b.n_k);
  return buckets;
}

DisagreementTable pairwise_disagreement(const std::vector<std::vector<int>>& member_preds) {
  const auto m = member_preds.size();
  if (m < 2) throw ValidationError("pairwise_disagreement: needs at least two members");
  DisagreementTable t;
  double sum = 0.0;
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t j = i + 1; j < m; ++j) {
      if (member_preds[i].size() != member_preds[j].size())
        throw ShapeError("pairwise_disagreement: prediction lists differ in length");
      long count = 0;
      for (std::size_t s = 0; s < member_preds[i].size(); ++s) count += member_preds[i][s] != member_preds[j][s];
      t.pairs.push_back({static_cast<int>(i), static_cast<int>(j), count});
      sum += static_cast<double>(count);
    }
  }
  t.mean = sum / static_cast<double>(t.pairs.size());
  return t;
}

DisagreementTable pairwise_disagreement(const Committee& committee, const Dataset& dataset) {
  std::vector<int> rows;
  for (std::size_t i = 0; i < dataset.size(); ++i)
    if (dataset.conflicting[i]) rows.push_back(static_cast<int>(i));
  const Matrix x = dataset.features(rows, Eigen::all);
  return pairwise_disagreement(member_predictions(committee, x));
}

}  // namespace lwbc
