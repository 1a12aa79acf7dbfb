#pragma once

#include <span>
#include <vector>

#include "lwbc/classifier.hpp"
#include "lwbc/datagen.hpp"

namespace lwbc {

/// The m auxiliary classifiers and the bootstrapped subset each one owns.
struct Committee {
  std::vector<Classifier> members;
  std::vector<BootstrapSubset> subsets;

  int size() const { return static_cast<int>(members.size()); }
  /// Throws ValidationError unless members and subsets pair up and every
  /// subset index lies in [0, train_size).
  void validate(std::size_t train_size) const;

  bool operator==(const Committee&) const = default;
};

/// Members initialised from `rng.child(l)`, one per subset.
Committee make_committee(std::vector<BootstrapSubset> subsets, Eigen::Index d_in, Eigen::Index d_hidden,
                         Eigen::Index num_classes, const RngStream& rng);

/// Consensus counts and the sample weights derived from them.
struct WeightBatch {
  std::vector<int> counts;
  std::vector<double> weights;
};

/// A minibatch gathered from the training set. `indices` are training-set
/// row ids and decide subset membership.
struct Batch {
  Matrix x;
  std::vector<int> labels;
  std::vector<int> indices;
};

Batch gather_batch(const Dataset& train, std::span<const int> indices);

/// Per-member loss of the last step; NaN for members that were skipped.
using MemberLosses = std::vector<double>;

/// Cross-entropy step for every member on the rows of `batch` that fall in
/// its subset. Members whose subset misses the batch are left untouched.
MemberLosses warmup_step(Committee& committee, const Batch& batch, double lr, Reduction reduction = Reduction::kMean);

/// Number of members predicting each row's label.
std::vector<int> consensus_counts(const Committee& committee, const Matrix& x, std::span<const int> labels);

/// w = 1 / (k / m + alpha).
WeightBatch weights_from_counts(std::vector<int> counts, int m, double alpha);

/// Combined step: gradient of (1 - lambda) * CE over batch rows inside the
/// member's subset plus lambda * KD towards `teacher_logits` over the rows
/// outside it, applied as one Adam step. An empty side contributes nothing.
MemberLosses committee_step(Committee& committee, const Batch& batch, const Matrix& teacher_logits, double lr,
                            double lambda, double tau, Reduction reduction = Reduction::kMean);

/// Per-member predictions on `x`.
std::vector<std::vector<int>> member_predictions(const Committee& committee, const Matrix& x);

}  // namespace lwbc
