#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "lwbc/classifier.hpp"

namespace lwbc {

struct GradcheckOptions {
  int configs = 100;
  double step = 1e-4;
  double tolerance = 1e-5;
  std::uint64_t seed = 20240601;
  /// Negates the analytic KD gradient; exists so tests can confirm the
  /// battery catches a broken gradient.
  bool flip_kd_sign = false;
};

struct GradcheckCase {
  std::string loss;  // ce, weighted_ce, kd_tau1, kd_tau2.5
  int configs = 0;
  double max_rel_error = 0.0;
  std::string worst_config;  // shape summary of the worst configuration
  bool passed = false;
};

struct GradcheckReport {
  std::vector<GradcheckCase> cases;
  bool passed = false;
};

/// One random configuration: a classifier with non-zero biases, a batch,
/// labels, per-sample weights in [0, 3) and teacher logits. Configurations
/// with a hidden pre-activation within 2e-3 of the ReLU kink are redrawn.
struct GradcheckProblem {
  Classifier net;
  Matrix x;
  std::vector<int> labels;
  std::vector<double> weights;
  Matrix teacher;
  std::string shape;
};

GradcheckProblem draw_gradcheck_problem(RngStream& rng);

/// Case i of the battery draws its configurations from
/// RngStream(options.seed, i), in the order listed by `cases`.
/// Compares analytic and finite-difference gradients of every loss on
/// `configs` random small classifiers (dims <= 8, batch <= 6).
GradcheckReport run_gradcheck(const GradcheckOptions& options = {});

}  // namespace lwbc
