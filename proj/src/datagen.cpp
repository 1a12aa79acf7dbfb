#include "lwbc/datagen.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <numeric>
#include <sstream>

#include "lwbc/errors.hpp"
#include "lwbc/io.hpp"

namespace lwbc {
namespace {

// Stream ids consumed by generate().
constexpr std::uint64_t kAssignStream = 1;
constexpr std::uint64_t kFeatureStream = 2;
constexpr std::uint64_t kOrderStream = 3;

long conflicting_quota(const BiasedSpec& spec) {
  return std::lround(spec.rho * static_cast<double>(spec.n) / spec.num_classes);
}

}  // namespace

void BiasedSpec::validate() const {
  const auto fail = [](const std::string& msg) { throw ValidationError("BiasedSpec: " + msg); };
  if (n < 1) fail("n must be positive");
  if (num_classes < 1) fail("num_classes must be positive");
  if (n % num_classes != 0) fail("n must be divisible by num_classes");
  if (!(rho >= 0.0)) fail("rho must be >= 0");
  if (rho > 1.0 - 1.0 / num_classes + 1e-12) fail("rho must be <= 1 - 1/num_classes");
  if (d_core < num_classes) fail("d_core must be >= num_classes");
  if (d_bias < num_classes) fail("d_bias must be >= num_classes");
  if (!(sigma_core > 0) || !(sigma_bias > 0)) fail("noise scales must be positive");
  if (!(delta_core >= 0) || !(delta_bias >= 0)) fail("mean separations must be >= 0");
  if (!(delta_bias / sigma_bias > delta_core / sigma_core))
    fail("delta_bias/sigma_bias must exceed delta_core/sigma_core");
}

nlohmann::json spec_to_json(const BiasedSpec& s) {
  return {{"n", s.n},
          {"num_classes", s.num_classes},
          {"rho", s.rho},
          {"d_core", s.d_core},
          {"d_bias", s.d_bias},
          {"delta_core", s.delta_core},
          {"delta_bias", s.delta_bias},
          {"sigma_core", s.sigma_core},
          {"sigma_bias", s.sigma_bias}};
}

BiasedSpec spec_from_json(const nlohmann::json& j) {
  BiasedSpec s;
  try {
    s.n = j.at("n").get<int>();
    s.num_classes = j.at("num_classes").get<int>();
    s.rho = j.at("rho").get<double>();
    s.d_core = j.at("d_core").get<int>();
    s.d_bias = j.at("d_bias").get<int>();
    s.delta_core = j.at("delta_core").get<double>();
    s.delta_bias = j.at("delta_bias").get<double>();
    s.sigma_core = j.at("sigma_core").get<double>();
    s.sigma_bias = j.at("sigma_bias").get<double>();
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(std::string("BiasedSpec: ") + e.what());
  }
  return s;
}

Sample Dataset::sample(std::size_t i) const {
  return {features.row(static_cast<Eigen::Index>(i)), labels[i], attrs[i], conflicting[i] != 0};
}

GroupCounts Dataset::group_counts() const {
  GroupCounts counts = GroupCounts::Zero(num_classes, num_classes);
  for (std::size_t i = 0; i < size(); ++i) ++counts(labels[i], attrs[i]);
  return counts;
}

long Dataset::num_conflicting() const { return std::count(conflicting.begin(), conflicting.end(), 1); }

Dataset Dataset::subset(std::span<const int> indices) const {
  Dataset out;
  out.num_classes = num_classes;
  out.spec = spec;
  out.features.resize(static_cast<Eigen::Index>(indices.size()), features.cols());
  out.labels.reserve(indices.size());
  out.attrs.reserve(indices.size());
  out.conflicting.reserve(indices.size());
  for (std::size_t r = 0; r < indices.size(); ++r) {
    const auto i = static_cast<std::size_t>(indices[r]);
    if (i >= size()) throw IndexError("Dataset::subset: index " + std::to_string(i) + " out of range");
    out.features.row(static_cast<Eigen::Index>(r)) = features.row(static_cast<Eigen::Index>(i));
    out.labels.push_back(labels[i]);
    out.attrs.push_back(attrs[i]);
    out.conflicting.push_back(conflicting[i]);
  }
  return out;
}

void Dataset::validate() const {
  const auto n = size();
  if (attrs.size() != n || conflicting.size() != n || static_cast<std::size_t>(features.rows()) != n)
    throw ValidationError("Dataset: column lengths differ");
  for (std::size_t i = 0; i < n; ++i) {
    if (labels[i] < 0 || labels[i] >= num_classes || attrs[i] < 0 || attrs[i] >= num_classes)
      throw ValidationError("Dataset: row " + std::to_string(i) + " has a label or attribute out of range");
    if ((conflicting[i] != 0) != (labels[i] != attrs[i]))
      throw ValidationError("Dataset: row " + std::to_string(i) + " has an inconsistent conflicting flag");
  }
  require_finite(features, "Dataset");
}

bool Dataset::operator==(const Dataset& o) const {
  return num_classes == o.num_classes && spec == o.spec && labels == o.labels && attrs == o.attrs &&
         conflicting == o.conflicting && features.rows() == o.features.rows() &&
         features.cols() == o.features.cols() && features == o.features;
}

Dataset generate(const BiasedSpec& spec, const RngStream& rng) {
  spec.validate();
  const int per_class = spec.n / spec.num_classes;
  const long quota = conflicting_quota(spec);

  RngStream assign = rng.child(kAssignStream);
  std::vector<int> labels;
  std::vector<int> attrs;
  labels.reserve(static_cast<std::size_t>(spec.n));
  attrs.reserve(static_cast<std::size_t>(spec.n));
  for (int y = 0; y < spec.num_classes; ++y) {
    std::vector<std::uint8_t> is_conflicting(static_cast<std::size_t>(per_class), 0);
    std::fill_n(is_conflicting.begin(), quota, 1);
    assign.shuffle(is_conflicting.begin(), is_conflicting.end());
    for (int i = 0; i < per_class; ++i) {
      int a = y;
      if (is_conflicting[static_cast<std::size_t>(i)]) {
        // Uniform over the C - 1 attributes other than y.
        a = static_cast<int>(assign.below(static_cast<std::uint64_t>(spec.num_classes - 1)));
        if (a >= y) ++a;
      }
      labels.push_back(y);
      attrs.push_back(a);
    }
  }

  std::vector<int> order(static_cast<std::size_t>(spec.n));
  std::iota(order.begin(), order.end(), 0);
  RngStream shuffler = rng.child(kOrderStream);
  shuffler.shuffle(order.begin(), order.end());

  RngStream noise = rng.child(kFeatureStream);
  Dataset d;
  d.num_classes = spec.num_classes;
  d.spec = spec;
  d.features.resize(spec.n, spec.feature_dim());
  d.labels.resize(static_cast<std::size_t>(spec.n));
  d.attrs.resize(static_cast<std::size_t>(spec.n));
  d.conflicting.resize(static_cast<std::size_t>(spec.n));
  for (int r = 0; r < spec.n; ++r) {
    const auto src = static_cast<std::size_t>(order[static_cast<std::size_t>(r)]);
    const int y = labels[src];
    const int a = attrs[src];
    d.labels[static_cast<std::size_t>(r)] = y;
    d.attrs[static_cast<std::size_t>(r)] = a;
    d.conflicting[static_cast<std::size_t>(r)] = a != y;
    for (int j = 0; j < spec.d_core; ++j)
      d.features(r, j) = noise.normal(j == y ? spec.delta_core : 0.0, spec.sigma_core);
    for (int j = 0; j < spec.d_bias; ++j)
      d.features(r, spec.d_core + j) = noise.normal(j == a ? spec.delta_bias : 0.0, spec.sigma_bias);
  }
  return d;
}

std::vector<BootstrapSubset> bootstrap_subsets(std::size_t n, int m, int subset_size, const RngStream& rng,
                                               bool with_replacement) {
  if (n == 0) throw ValidationError("bootstrap_subsets: empty training set");
  if (m < 1) throw ValidationError("bootstrap_subsets: m must be >= 1");
  if (subset_size < 1) throw ValidationError("bootstrap_subsets: subset_size must be >= 1");
  if (!with_replacement && static_cast<std::size_t>(subset_size) > n)
    throw ValidationError("bootstrap_subsets: subset_size exceeds the training set without replacement");

  std::vector<BootstrapSubset> out(static_cast<std::size_t>(m));
  std::vector<int> pool;
  if (!with_replacement) pool.resize(n);
  for (int l = 0; l < m; ++l) {
    RngStream draw = rng.child(static_cast<std::uint64_t>(l));
    auto& s = out[static_cast<std::size_t>(l)];
    s.indices.resize(static_cast<std::size_t>(subset_size));
    if (with_replacement) {
      for (auto& idx : s.indices) idx = static_cast<int>(draw.below(n));
    } else {
      std::iota(pool.begin(), pool.end(), 0);
      // Partial Fisher-Yates: the first subset_size slots are a uniform sample.
      for (std::size_t i = 0; i < static_cast<std::size_t>(subset_size); ++i) {
        const auto j = i + static_cast<std::size_t>(draw.below(n - i));
        std::swap(pool[i], pool[j]);
        s.indices[i] = pool[i];
      }
    }
    s.member.assign(n, 0);
    for (int idx : s.indices) s.member[static_cast<std::size_t>(idx)] = 1;
    s.unique_count = static_cast<int>(std::count(s.member.begin(), s.member.end(), 1));
  }
  return out;
}

DatasetSplits split(const Dataset& dataset, SplitFractions f, const RngStream& rng) {
  if (f.train < 0 || f.val < 0 || f.test < 0 || std::abs(f.train + f.val + f.test - 1.0) > 1e-9)
    throw ValidationError("split: fractions must be non-negative and sum to 1");
  const int parts = (f.train > 0) + (f.val > 0) + (f.test > 0);
  const int C = dataset.num_classes;

  std::vector<std::vector<int>> cells(static_cast<std::size_t>(C * C));
  for (std::size_t i = 0; i < dataset.size(); ++i)
    cells[static_cast<std::size_t>(dataset.labels[i] * C + dataset.attrs[i])].push_back(static_cast<int>(i));

  std::vector<int> train_idx;
  std::vector<int> val_idx;
  std::vector<int> test_idx;
  for (int y = 0; y < C; ++y) {
    for (int a = 0; a < C; ++a) {
      auto& cell = cells[static_cast<std::size_t>(y * C + a)];
      if (cell.empty()) continue;
      if (static_cast<int>(cell.size()) < parts) {
        throw ValidationError("split: group (y=" + std::to_string(y) + ", a=" + std::to_string(a) + ") has " +
                              std::to_string(cell.size()) + " samples, fewer than " + std::to_string(parts) +
                              " splits");
      }
      RngStream cell_rng = rng.child(static_cast<std::uint64_t>(y * C + a));
      cell_rng.shuffle(cell.begin(), cell.end());
      const auto size = static_cast<double>(cell.size());
      auto n_train = static_cast<std::size_t>(std::lround(f.train * size));
      auto n_val = static_cast<std::size_t>(std::lround(f.val * size));
      n_train = std::min(n_train, cell.size());
      n_val = std::min(n_val, cell.size() - n_train);
      if (f.test == 0) n_val = cell.size() - n_train;
      if (f.test == 0 && f.val == 0) n_train = cell.size();
      train_idx.insert(train_idx.end(), cell.begin(), cell.begin() + static_cast<long>(n_train));
      val_idx.insert(val_idx.end(), cell.begin() + static_cast<long>(n_train),
                     cell.begin() + static_cast<long>(n_train + n_val));
      test_idx.insert(test_idx.end(), cell.begin() + static_cast<long>(n_train + n_val), cell.end());
    }
  }
  std::sort(train_idx.begin(), train_idx.end());
  std::sort(val_idx.begin(), val_idx.end());
  std::sort(test_idx.begin(), test_idx.end());
  return {dataset.subset(train_idx), dataset.subset(val_idx), dataset.subset(test_idx)};
}

std::vector<std::vector<int>> minibatches(std::size_t n, int batch_size, const RngStream& rng, std::uint64_t epoch) {
  if (batch_size < 1) throw ValidationError("minibatches: batch size must be >= 1");
  if (static_cast<std::size_t>(batch_size) > n)
    throw ValidationError("minibatches: batch size exceeds the dataset size");
  std::vector<int> perm(n);
  std::iota(perm.begin(), perm.end(), 0);
  RngStream shuffler = rng.child(epoch);
  shuffler.shuffle(perm.begin(), perm.end());
  std::vector<std::vector<int>> batches;
  batches.reserve((n + static_cast<std::size_t>(batch_size) - 1) / static_cast<std::size_t>(batch_size));
  for (std::size_t start = 0; start < n; start += static_cast<std::size_t>(batch_size)) {
    const auto end = std::min(n, start + static_cast<std::size_t>(batch_size));
    batches.emplace_back(perm.begin() + static_cast<long>(start), perm.begin() + static_cast<long>(end));
  }
  return batches;
}

std::string dataset_to_csv(const Dataset& d) {
  std::string out = "idx,y,a,conflicting";
  for (Eigen::Index j = 0; j < d.features.cols(); ++j) out += ",f" + std::to_string(j);
  out += '\n';
  for (std::size_t i = 0; i < d.size(); ++i) {
    out += std::to_string(i);
    out += ',' + std::to_string(d.labels[i]);
    out += ',' + std::to_string(d.attrs[i]);
    out += d.conflicting[i] ? ",1" : ",0";
    for (Eigen::Index j = 0; j < d.features.cols(); ++j) {
      out += ',';
      out += format_double(d.features(static_cast<Eigen::Index>(i), j));
    }
    out += '\n';
  }
  return out;
}

Dataset dataset_from_csv(const std::string& csv, const BiasedSpec& spec) {
  std::istringstream in(csv);
  std::string line;
  if (!std::getline(in, line)) throw ValidationError("dataset CSV: missing header");
  std::vector<std::string> header;
  {
    std::stringstream hs(line);
    std::string cell;
    while (std::getline(hs, cell, ',')) header.push_back(cell);
  }
  if (header.size() < 4 || header[0] != "idx" || header[1] != "y" || header[2] != "a" || header[3] != "conflicting")
    throw ValidationError("dataset CSV: header must start with idx,y,a,conflicting");
  const auto d_features = static_cast<Eigen::Index>(header.size() - 4);
  for (Eigen::Index j = 0; j < d_features; ++j)
    if (header[static_cast<std::size_t>(4 + j)] != "f" + std::to_string(j))
      throw ValidationError("dataset CSV: unexpected feature column '" + header[static_cast<std::size_t>(4 + j)] + "'");

  std::vector<std::vector<double>> rows;
  Dataset d;
  d.num_classes = spec.num_classes;
  d.spec = spec;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    std::vector<double> feats;
    feats.reserve(static_cast<std::size_t>(d_features));
    std::stringstream ls(line);
    std::string cell;
    std::size_t col = 0;
    long ints[4] = {0, 0, 0, 0};
    while (std::getline(ls, cell, ',')) {
      if (col < 4) {
        const auto [ptr, ec] = std::from_chars(cell.data(), cell.data() + cell.size(), ints[col]);
        if (ec != std::errc() || ptr != cell.data() + cell.size())
          throw ValidationError("dataset CSV: bad integer on line " + std::to_string(line_no));
      } else {
        char* end = nullptr;
        const double v = std::strtod(cell.c_str(), &end);
        if (end != cell.c_str() + cell.size())
          throw ValidationError("dataset CSV: bad number on line " + std::to_string(line_no));
        feats.push_back(v);
      }
      ++col;
    }
    if (col != header.size()) throw ValidationError("dataset CSV: wrong column count on line " + std::to_string(line_no));
    d.labels.push_back(static_cast<int>(ints[1]));
    d.attrs.push_back(static_cast<int>(ints[2]));
    d.conflicting.push_back(static_cast<std::uint8_t>(ints[3] != 0));
    rows.push_back(std::move(feats));
  }
  d.features.resize(static_cast<Eigen::Index>(rows.size()), d_features);
  for (std::size_t i = 0; i < rows.size(); ++i)
    for (Eigen::Index j = 0; j < d_features; ++j) d.features(static_cast<Eigen::Index>(i), j) = rows[i][static_cast<std::size_t>(j)];
  d.validate();
  return d;
}

std::filesystem::path spec_sidecar_path(const std::filesystem::path& csv_path) {
  auto p = csv_path;
  p += ".spec.json";
  return p;
}

void save_dataset(const Dataset& dataset, const std::filesystem::path& csv_path) {
  write_text_file(csv_path, dataset_to_csv(dataset));
  write_text_file(spec_sidecar_path(csv_path), spec_to_json(dataset.spec).dump(2) + "\n");
}

Dataset load_dataset(const std::filesystem::path& csv_path) {
  const auto spec = spec_from_json(nlohmann::json::parse(read_text_file(spec_sidecar_path(csv_path))));
  return dataset_from_csv(read_text_file(csv_path), spec);
}

}  // namespace lwbc
