#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"
#include "lwbc/numerics.hpp"
#include "lwbc/rng.hpp"

namespace lwbc {

/// Parameters of a synthetic biased dataset.
///
/// Each sample has a class y and a latent attribute a. Features are two
/// blocks: a core block centred on delta_core * e_y and a bias block centred
/// on delta_bias * e_a, with isotropic Gaussian noise. Within every class a
/// fraction rho of the samples is bias-conflicting (a != y); the rest are
/// bias-guiding (a == y). The bias block is the easier signal, which is what
/// makes a shortcut learner latch onto it.
struct BiasedSpec {
  int n = 4000;
  int num_classes = 4;
  double rho = 0.05;
  int d_core = 16;
  int d_bias = 4;
  double delta_core = 2.0;
  double delta_bias = 8.0;
  double sigma_core = 1.0;
  double sigma_bias = 1.0;

  int feature_dim() const { return d_core + d_bias; }
  /// Throws ValidationError naming the violated rule.
  void validate() const;

  bool operator==(const BiasedSpec&) const = default;
};

nlohmann::json spec_to_json(const BiasedSpec& spec);
BiasedSpec spec_from_json(const nlohmann::json& j);

/// Counts per (label, attribute) cell, indexed (y, a).
using GroupCounts = Eigen::Matrix<long, Eigen::Dynamic, Eigen::Dynamic>;

struct Sample {
  RowVector features;
  int label = 0;
  int attr = 0;
  bool conflicting = false;
};

/// Column-oriented labelled dataset.
struct Dataset {
  Matrix features;
  std::vector<int> labels;
  std::vector<int> attrs;
  std::vector<std::uint8_t> conflicting;
  int num_classes = 0;
  BiasedSpec spec;

  std::size_t size() const { return labels.size(); }
  Sample sample(std::size_t i) const;
  GroupCounts group_counts() const;
  long num_conflicting() const;
  /// Rows `indices` in the given order.
  Dataset subset(std::span<const int> indices) const;
  /// Checks the column lengths and that conflicting == (attr != label).
  void validate() const;

  bool operator==(const Dataset& o) const;
};

/// Draws a dataset with exactly round(rho * n / C) conflicting samples per class.
Dataset generate(const BiasedSpec& spec, const RngStream& rng);

/// Training subset S_l: drawn indices plus a dense membership mask over the
/// training set (duplicates collapse in the mask).
struct BootstrapSubset {
  std::vector<int> indices;
  std::vector<std::uint8_t> member;
  int unique_count = 0;

  bool contains(int idx) const { return member[static_cast<std::size_t>(idx)] != 0; }
  bool operator==(const BootstrapSubset&) const = default;
};

/// m subsets of `subset_size` indices from [0, n). With replacement, indices
/// are i.i.d. uniform and may repeat within a subset; without, each subset is
/// a uniformly random set of distinct indices.
std::vector<BootstrapSubset> bootstrap_subsets(std::size_t n, int m, int subset_size, const RngStream& rng,
                                               bool with_replacement = true);

struct SplitFractions {
  double train = 1.0;
  double val = 0.0;
  double test = 0.0;
};

struct DatasetSplits {
  Dataset train;
  Dataset val;
  Dataset test;
};

/// Stratified by (y, a) cell; every split keeps the input's relative order.
DatasetSplits split(const Dataset& dataset, SplitFractions fractions, const RngStream& rng);

/// A fresh permutation of [0, n) for `epoch`, cut into batches of `batch_size`
/// (the last batch may be short).
std::vector<std::vector<int>> minibatches(std::size_t n, int batch_size, const RngStream& rng, std::uint64_t epoch);

/// CSV with header `idx,y,a,conflicting,f0..f{d-1}`; conflicting is 0/1,
/// features use 17 significant digits.
std::string dataset_to_csv(const Dataset& dataset);
/// Parses dataset_to_csv output; `spec` supplies the metadata the CSV lacks.
Dataset dataset_from_csv(const std::string& csv, const BiasedSpec& spec);

/// Writes `<path>` (CSV) and `<path>.spec.json` (the BiasedSpec sidecar).
void save_dataset(const Dataset& dataset, const std::filesystem::path& csv_path);
Dataset load_dataset(const std::filesystem::path& csv_path);
std::filesystem::path spec_sidecar_path(const std::filesystem::path& csv_path);

}  // namespace lwbc
