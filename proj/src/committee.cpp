#include "lwbc/committee.hpp"

#include <cmath>
#include <limits>
#include <optional>

namespace lwbc {
namespace {

struct RowSplit {
  std::vector<int> inside;
  std::vector<int> outside;
};

RowSplit split_rows(const BootstrapSubset& subset, const Batch& batch) {
  RowSplit s;
  for (std::size_t r = 0; r < batch.indices.size(); ++r)
    (subset.contains(batch.indices[r]) ? s.inside : s.outside).push_back(static_cast<int>(r));
  return s;
}

Matrix take_rows(const Matrix& m, const std::vector<int>& rows) { return m(rows, Eigen::all); }

std::vector<int> take(const std::vector<int>& v, const std::vector<int>& rows) {
  std::vector<int> out;
  out.reserve(rows.size());
  for (int r : rows) out.push_back(v[static_cast<std::size_t>(r)]);
  return out;
}

Grads ce_grads(const Classifier& member, const Batch& batch, const std::vector<int>& rows, Reduction reduction) {
  const Matrix x = take_rows(batch.x, rows);
  const auto labels = take(batch.labels, rows);
  const std::vector<double> ones(rows.size(), 1.0);
  return weighted_ce_backward(member, x, labels, ones, reduction);
}

}  // namespace

void Committee::validate(std::size_t train_size) const {
  if (members.size() != subsets.size())
    throw ValidationError("Committee: " + std::to_string(members.size()) + " members but " +
                          std::to_string(subsets.size()) + " subsets");
  for (const auto& s : subsets) {
    if (s.member.size() != train_size) throw ValidationError("Committee: subset mask does not cover the training set");
    for (int idx : s.indices)
      if (idx < 0 || static_cast<std::size_t>(idx) >= train_size)
        throw ValidationError("Committee: subset index " + std::to_string(idx) + " out of range");
  }
}

Committee make_committee(std::vector<BootstrapSubset> subsets, Eigen::Index d_in, Eigen::Index d_hidden,
                         Eigen::Index num_classes, const RngStream& rng) {
  Committee c;
  c.members.reserve(subsets.size());
  for (std::size_t l = 0; l < subsets.size(); ++l) {
    RngStream init = rng.child(l);
    c.members.push_back(init_classifier<double>(d_in, d_hidden, num_classes, init));
  }
  c.subsets = std::move(subsets);
  return c;
}

Batch gather_batch(const Dataset& train, std::span<const int> indices) {
  Batch b;
  b.indices.assign(indices.begin(), indices.end());
  b.x = train.features(b.indices, Eigen::all);
  b.labels.reserve(indices.size());
  for (int i : indices) b.labels.push_back(train.labels[static_cast<std::size_t>(i)]);
  return b;
}

MemberLosses warmup_step(Committee& committee, const Batch& batch, double lr, Reduction reduction) {
  if (batch.indices.empty()) throw ValidationError("warmup_step: empty batch");
  MemberLosses losses(committee.members.size(), std::numeric_limits<double>::quiet_NaN());
  for (std::size_t l = 0; l < committee.members.size(); ++l) {
    const auto rows = split_rows(committee.subsets[l], batch);
    if (rows.inside.empty()) continue;
    const Grads g = ce_grads(committee.members[l], batch, rows.inside, reduction);
    adam_step(committee.members[l], g, lr);
    losses[l] = g.loss;
  }
  return losses;
}

std::vector<int> consensus_counts(const Committee& committee, const Matrix& x, std::span<const int> labels) {
  if (static_cast<Eigen::Index>(labels.size()) != x.rows())
    throw ShapeError("consensus_counts: label count does not match rows");
  std::vector<int> counts(labels.size(), 0);
  for (const auto& member : committee.members) {
    const auto preds = predict(member, x);
    for (std::size_t i = 0; i < labels.size(); ++i) counts[i] += preds[i] == labels[i];
  }
  return counts;
}

WeightBatch weights_from_counts(std::vector<int> counts, int m, double alpha) {
  if (!(alpha > 0)) throw ValidationError("weights_from_counts: alpha must be positive");
  if (m < 1) throw ValidationError("weights_from_counts: m must be >= 1");
  WeightBatch wb;
  wb.weights.reserve(counts.size());
  for (int k : counts) {
    if (k < 0 || k > m) throw ValidationError("weights_from_counts: count " + std::to_string(k) + " outside [0, m]");
    wb.weights.push_back(1.0 / (static_cast<double>(k) / m + alpha));
  }
  wb.counts = std::move(counts);
  return wb;
}

MemberLosses committee_step(Committee& committee, const Batch& batch, const Matrix& teacher_logits, double lr,
                            double lambda, double tau, Reduction reduction) {
  if (!(lambda >= 0.0 && lambda <= 1.0)) throw ValidationError("committee_step: lambda must lie in [0, 1]");
  if (!(tau > 0)) throw ValidationError("committee_step: tau must be positive");
  if (batch.indices.empty()) throw ValidationError("committee_step: empty batch");
  if (teacher_logits.rows() != batch.x.rows())
    throw ShapeError("committee_step: teacher logits have " + std::to_string(teacher_logits.rows()) +
                     " rows for a batch of " + std::to_string(batch.x.rows()));

  MemberLosses losses(committee.members.size(), std::numeric_limits<double>::quiet_NaN());
  for (std::size_t l = 0; l < committee.members.size(); ++l) {
    auto& member = committee.members[l];
    const auto rows = split_rows(committee.subsets[l], batch);
    const bool use_ce = !rows.inside.empty() && lambda < 1.0;
    const bool use_kd = !rows.outside.empty() && lambda > 0.0;
    if (!use_ce && !use_kd) continue;

    // lambda == 0 takes exactly the warm-up path, bit for bit.
    if (lambda == 0.0) {
      const Grads g = ce_grads(member, batch, rows.inside, reduction);
      adam_step(member, g, lr);
      losses[l] = g.loss;
      continue;
    }

    std::optional<Grads> total;
    if (use_ce) {
      Grads g = ce_grads(member, batch, rows.inside, reduction);
      g *= 1.0 - lambda;
      total = std::move(g);
    }
    if (use_kd) {
      const Matrix x_out = take_rows(batch.x, rows.outside);
      const Matrix t_out = take_rows(teacher_logits, rows.outside);
      Grads g = kd_backward(member, x_out, t_out, tau, reduction);
      g *= lambda;
      if (total) {
        *total += g;
      } else {
        total = std::move(g);
      }
    }
    adam_step(member, *total, lr);
    losses[l] = total->loss;
  }
  return losses;
}

std::vector<std::vector<int>> member_predictions(const Committee& committee, const Matrix& x) {
  std::vector<std::vector<int>> out;
  out.reserve(committee.members.size());
  for (const auto& member : committee.members) out.push_back(predict(member, x));
  return out;
}

}  // namespace lwbc
