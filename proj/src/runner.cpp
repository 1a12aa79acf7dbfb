#include "lwbc/runner.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <mutex>
#include <ostream>
#include <set>
#include <sstream>
#include <thread>

#include "lwbc/checkpoint.hpp"
#include "lwbc/io.hpp"

namespace lwbc {
namespace {

namespace fs = std::filesystem;

// Data streams derived from the run seed.
constexpr std::uint64_t kTrainDataStream = 1;
constexpr std::uint64_t kValDataStream = 2;
constexpr std::uint64_t kTestDataStream = 3;
constexpr std::uint64_t kSplitStream = 4;

nlohmann::json number_or_null(double v) { return std::isfinite(v) ? nlohmann::json(v) : nlohmann::json(nullptr); }

nlohmann::json report_to_json(const MetricsReport& r) {
  nlohmann::json groups = nlohmann::json::array();
  for (Eigen::Index y = 0; y < r.per_group.rows(); ++y) {
    nlohmann::json row = nlohmann::json::array();
    for (Eigen::Index a = 0; a < r.per_group.cols(); ++a) row.push_back(number_or_null(r.per_group(y, a)));
    groups.push_back(std::move(row));
  }
  nlohmann::json j;
  for (const auto& name : MetricsReport::names()) j[name] = number_or_null(r.get(name));
  j["per_group"] = std::move(groups);
  return j;
}

void make_dir(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw IoError("cannot create directory " + dir.string() + ": " + ec.message());
}

std::string predictions_csv(const Dataset& d, const std::vector<int>& preds) {
  std::string out = "idx,y,a,conflicting,pred\n";
  for (std::size_t i = 0; i < d.size(); ++i) {
    out += std::to_string(i) + ',' + std::to_string(d.labels[i]) + ',' + std::to_string(d.attrs[i]) + ',' +
           (d.conflicting[i] ? "1" : "0") + ',' + std::to_string(preds[i]) + '\n';
  }
  return out;
}

std::string timing_csv(const RunLog& log) {
  std::string out = "epoch,wall_seconds\n";
  for (const auto& e : log.epochs) out += std::to_string(e.epoch) + ',' + format_double(e.wall_seconds) + '\n';
  return out;
}

template <typename Fn>
int guarded(std::ostream& err, Fn&& fn) {
  try {
    return fn();
  } catch (const ValidationError& e) {
    err << "error: " << e.what() << '\n';
    return exit_code::kUsage;
  } catch (const nlohmann::json::exception& e) {
    err << "error: " << e.what() << '\n';
    return exit_code::kUsage;
  } catch (const IoError& e) {
    err << "error: " << e.what() << '\n';
    return exit_code::kIo;
  } catch (const fs::filesystem_error& e) {
    err << "error: " << e.what() << '\n';
    return exit_code::kIo;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return exit_code::kCheckFailed;
  }
}

}  // namespace

double sample_std(const std::vector<double>& values) {
  if (values.size() < 2) return 0.0;
  double mean = 0.0;
  for (double v : values) mean += v;
  mean /= static_cast<double>(values.size());
  double ss = 0.0;
  for (double v : values) ss += (v - mean) * (v - mean);
  return std::sqrt(ss / static_cast<double>(values.size() - 1));
}

ExperimentData make_experiment_data(const ExperimentConfig& config, const std::optional<fs::path>& data_path) {
  const auto seed = config.train.seed;
  if (data_path) {
    if (!fs::exists(*data_path)) throw IoError("dataset " + data_path->string() + " does not exist");
    if (!fs::exists(spec_sidecar_path(*data_path)))
      throw IoError("dataset sidecar " + spec_sidecar_path(*data_path).string() + " does not exist");
    const Dataset all = load_dataset(*data_path);
    auto parts = split(all, config.split, RngStream(seed, kSplitStream));
    return {std::move(parts.train), std::move(parts.val), std::move(parts.test)};
  }
  BiasedSpec eval = config.data;
  eval.rho = config.effective_eval_rho();
  ExperimentData d;
  d.train = generate(config.data, RngStream(seed, kTrainDataStream));
  eval.n = config.n_val;
  d.val = generate(eval, RngStream(seed, kValDataStream));
  eval.n = config.n_test;
  d.test = generate(eval, RngStream(seed, kTestDataStream));
  return d;
}

std::string metrics_csv(const RunLog& log) {
  std::string out = "epoch,iterations,main_steps";
  for (const char* split : {"train", "val", "test"})
    for (const auto& name : MetricsReport::names()) out += std::string(",") + split + "_" + name;
  out +=
      ",committee_unbiased_mean,committee_unbiased_min,committee_unbiased_max,"
      "mean_weight_conflicting,mean_weight_guiding,enrichment\n";
  const double nan = std::nan("");
  for (const auto& e : log.epochs) {
    out += std::to_string(e.epoch) + ',' + std::to_string(e.iterations) + ',' + std::to_string(e.main_steps);
    for (const MetricsReport* r : {&e.train, &e.val, e.test ? &*e.test : nullptr})
      for (const auto& name : MetricsReport::names()) out += ',' + format_double(r ? r->get(name) : nan);
    for (double v : {e.committee_unbiased_mean, e.committee_unbiased_min, e.committee_unbiased_max,
                     e.mean_weight_conflicting, e.mean_weight_guiding, e.enrichment})
      out += ',' + format_double(v);
    out += '\n';
  }
  return out;
}

std::string weights_hist_csv(const RunLog& log) {
  std::string out = "epoch,y,a,draws,mean_weight\n";
  for (const auto& e : log.epochs) {
    for (Eigen::Index y = 0; y < e.group_mean_weight.rows(); ++y) {
      for (Eigen::Index a = 0; a < e.group_mean_weight.cols(); ++a) {
        out += std::to_string(e.epoch) + ',' + std::to_string(y) + ',' + std::to_string(a) + ',' +
               std::to_string(e.group_weight_draws(y, a)) + ',' + format_double(e.group_mean_weight(y, a)) + '\n';
      }
    }
  }
  return out;
}

std::string consensus_curve_csv(const std::vector<RatioBucket>& curve) {
  std::string out = "k,n_k,ratio\n";
  for (const auto& b : curve)
    out += std::to_string(b.k) + ',' + std::to_string(b.n_k) + ',' + (b.ratio ? format_double(*b.ratio) : "nan") + '\n';
  return out;
}

RunSummary run_experiment(const ExperimentConfig& config, const ExperimentData& data, const fs::path& out_dir) {
  const TrainResult result = train(config.train, {data.train, data.val, &data.test});
  const GroupCounts train_counts = data.train.group_counts();

  RunSummary s;
  s.best_val = evaluate(result.best, data.val, train_counts);
  const auto test_preds = predict(result.best, data.test.features);
  s.best_test = metric_suite(test_preds, data.test, train_counts);

  std::set<std::string> warnings;
  for (const auto* r : {&s.best_val, &s.best_test})
    for (const auto& w : r->warnings) warnings.insert(w);

  auto& j = s.summary;
  j["tool_version"] = kToolVersion;
  j["method"] = to_string(config.train.method);
  j["seed"] = config.train.seed;
  j["config"] = config_to_json(config);
  j["epochs"] = result.log.epochs.size();
  j["best_epoch"] = result.best_epoch;
  j["best"] = {{"val", report_to_json(s.best_val)}, {"test", report_to_json(s.best_test)}};
  j["final"] = {{"val", report_to_json(evaluate(result.final_main, data.val, train_counts))},
                {"test", report_to_json(evaluate(result.final_main, data.test, train_counts))}};
  if (result.committee) {
    const auto warm_epoch = std::min<std::size_t>(result.log.epochs.size(),
                                                  static_cast<std::size_t>(std::max(1, config.train.warmup_epochs)));
    j["committee"] = {
        {"unbiased_val_at_warmup_end", number_or_null(result.log.epochs[warm_epoch - 1].committee_unbiased_mean)},
        {"unbiased_val_final", number_or_null(result.log.epochs.back().committee_unbiased_mean)},
        {"warmup_enrichment",
         number_or_null(data.train.num_conflicting() > 0
                            ? enrichment(weights_from_counts(result.warmup_counts, config.train.m, config.train.alpha).weights,
                                         data.train.conflicting)
                            : std::nan(""))}};
  }
  if (!result.stage_weights.empty()) {
    long upweighted = 0;
    for (double w : result.stage_weights) upweighted += w != 1.0;
    j["upweighted_samples"] = upweighted;
  }
  j["warnings"] = warnings;

  std::vector<RatioBucket> curve;
  std::vector<RatioBucket> final_curve;
  if (!result.warmup_counts.empty()) {
    curve = consensus_ratio_curve(result.warmup_counts, data.train.conflicting, config.train.m);
    final_curve = consensus_ratio_curve(result.final_counts, data.train.conflicting, config.train.m);
  }

  make_dir(out_dir);
  const std::vector<std::pair<std::string, std::string>> files = {
      {"metrics.csv", metrics_csv(result.log)},
      {"weights_hist.csv", weights_hist_csv(result.log)},
      {"consensus_curve.csv", consensus_curve_csv(curve)},
      {"consensus_curve_final.csv", consensus_curve_csv(final_curve)},
      {"predictions_test.csv", predictions_csv(data.test, test_preds)},
      {"main_best.ckpt.json", checkpoint_to_json(result.best).dump(1) + "\n"},
      {"summary.json", j.dump(2) + "\n"},
  };
  nlohmann::json listing = nlohmann::json::array();
  for (const auto& [name, contents] : files) {
    write_text_file(out_dir / name, contents);
    listing.push_back({{"file", name}, {"fnv1a", fnv1a_hex(contents)}});
  }
  write_text_file(out_dir / "timing.csv", timing_csv(result.log));
  listing.push_back({{"file", "timing.csv"}, {"fnv1a", nullptr}});

  const nlohmann::json manifest = {
      {"tool_version", kToolVersion},
      {"seed", config.train.seed},
      {"config", config_to_json(config)},
      {"dataset_fingerprint",
       {{"train", fnv1a_hex(dataset_to_csv(data.train))},
        {"val", fnv1a_hex(dataset_to_csv(data.val))},
        {"test", fnv1a_hex(dataset_to_csv(data.test))}}},
      {"outputs", listing}};
  write_text_file(out_dir / "manifest.json", manifest.dump(2) + "\n");
  return s;
}

ExperimentConfig resolve_config(const CommonOptions& options) {
  nlohmann::json doc = nlohmann::json::object();
  if (options.config) {
    if (!fs::exists(*options.config)) throw ConfigError("config file " + options.config->string() + " does not exist");
    try {
      doc = nlohmann::json::parse(read_text_file(*options.config));
    } catch (const nlohmann::json::parse_error& e) {
      throw ConfigError("config file " + options.config->string() + ": " + e.what());
    }
  }
  apply_overrides(doc, options.overrides);
  if (options.seed) doc["seed"] = *options.seed;
  if (options.method) doc["method"] = *options.method;
  auto config = config_from_json(doc);
  config.validate();
  return config;
}

int cmd_run(const RunOptions& options, std::ostream& out, std::ostream& err) {
  return guarded(err, [&] {
    const auto config = resolve_config(options.common);
    const auto data = make_experiment_data(config, options.data);
    const auto s = run_experiment(config, data, options.out);
    out << "method=" << to_string(config.train.method) << " seed=" << config.train.seed
        << " best_epoch=" << s.summary["best_epoch"] << " test_worst_group=" << format_double(s.best_test.worst_group)
        << " test_unbiased=" << format_double(s.best_test.unbiased) << '\n';
    return exit_code::kOk;
  });
}

namespace {

void apply_axis(ExperimentConfig& c, const std::string& axis, const std::string& value) {
  try {
    std::size_t used = 0;
    if (axis == "rho") {
      c.data.rho = std::stod(value, &used);
    } else if (axis == "m") {
      c.train.m = std::stoi(value, &used);
    } else if (axis == "lambda") {
      c.train.lambda = std::stod(value, &used);
    } else if (axis == "seed") {
      if (!value.empty() && value[0] == '-') throw std::invalid_argument("negative seed");
      c.train.seed = std::stoull(value, &used);
    } else if (axis == "method") {
      c.train.method = method_from_string(value);
      used = value.size();
    } else {
      throw ConfigError("unknown sweep axis '" + axis + "' (expected rho, m, lambda, method or seed)");
    }
    if (used != value.size()) throw std::invalid_argument("trailing characters");
  } catch (const ValidationError&) {
    throw;
  } catch (const std::exception&) {
    throw ConfigError("sweep value '" + value + "' is not valid for axis '" + axis + "'");
  }
}

struct SweepRun {
  std::string value;
  int rep = 0;
  ExperimentConfig config;
  fs::path dir;
  std::optional<RunSummary> summary;
};

}  // namespace

int cmd_sweep(const SweepOptions& options, std::ostream& out, std::ostream& err) {
  return guarded(err, [&] {
    static const std::vector<std::string> kAxes = {"rho", "m", "lambda", "method", "seed"};
    if (std::find(kAxes.begin(), kAxes.end(), options.axis) == kAxes.end())
      throw ConfigError("unknown sweep axis '" + options.axis + "' (expected rho, m, lambda, method or seed)");
    if (options.values.empty()) throw ConfigError("sweep needs at least one value");
    const auto base = resolve_config(options.common);

    std::vector<SweepRun> runs;
    for (const auto& v : options.values) {
      ExperimentConfig c = base;
      apply_axis(c, options.axis, v);
      c.validate();
      const int reps = options.axis == "seed" ? 1 : base.repeats;
      for (int r = 0; r < reps; ++r) {
        SweepRun run{v, r, c, options.out / (options.axis + "=" + v) / ("rep" + std::to_string(r)), std::nullopt};
        if (options.axis != "seed") run.config.train.seed = derive_seed(base.train.seed, static_cast<std::uint64_t>(r));
        runs.push_back(std::move(run));
      }
    }

    std::atomic<std::size_t> next{0};
    std::atomic<bool> failed{false};
    std::mutex io_mutex;
    std::string first_error;
    int first_code = exit_code::kOk;
    const auto worker = [&] {
      while (!failed) {
        const std::size_t i = next++;
        if (i >= runs.size()) return;
        auto& run = runs[i];
        std::ostringstream run_err;
        const int code = guarded(run_err, [&] {
          const auto data = make_experiment_data(run.config, options.data);
          run.summary = run_experiment(run.config, data, run.dir);
          return exit_code::kOk;
        });
        std::lock_guard lock(io_mutex);
        if (code != exit_code::kOk) {
          if (!failed.exchange(true)) {
            first_code = code;
            first_error = run_err.str();
          }
          return;
        }
        out << options.axis << '=' << run.value << " rep=" << run.rep << " seed=" << run.config.train.seed
            << " test_worst_group=" << format_double(run.summary->best_test.worst_group) << '\n';
      }
    };
    const int threads = std::max(1, std::min<int>(options.threads, static_cast<int>(runs.size())));
    if (threads == 1) {
      worker();
    } else {
      std::vector<std::thread> pool;
      for (int t = 0; t < threads; ++t) pool.emplace_back(worker);
      for (auto& t : pool) t.join();
    }
    if (failed) {
      err << first_error;
      return first_code;
    }

    std::string csv = "axis_value,metric,mean,std\n";
    const auto emit = [&](const std::string& label, const std::vector<const SweepRun*>& group) {
      for (const auto& name : MetricsReport::names()) {
        std::vector<double> vals;
        for (const auto* r : group) vals.push_back(r->summary->best_test.get(name));
        double mean = 0.0;
        for (double v : vals) mean += v;
        mean /= static_cast<double>(vals.size());
        csv += label + ",test_" + name + ',' + format_double(mean) + ',' + format_double(sample_std(vals)) + '\n';
      }
    };
    std::vector<const SweepRun*> all;
    for (const auto& v : options.values) {
      std::vector<const SweepRun*> group;
      for (const auto& r : runs)
        if (r.value == v) group.push_back(&r);
      emit(v, group);
      all.insert(all.end(), group.begin(), group.end());
    }
    if (options.axis == "seed") emit("all", all);
    make_dir(options.out);
    write_text_file(options.out / "aggregate.csv", csv);
    out << "wrote " << (options.out / "aggregate.csv").string() << '\n';
    return exit_code::kOk;
  });
}

int cmd_gen_data(const GenDataOptions& options, std::ostream& out, std::ostream& err) {
  return guarded(err, [&] {
    const auto config = resolve_config(options.common);
    const Dataset d = generate(config.data, RngStream(config.train.seed, kTrainDataStream));
    if (options.out.has_parent_path()) make_dir(options.out.parent_path());
    save_dataset(d, options.out);
    out << "wrote " << options.out.string() << " rows=" << d.size() << " conflicting=" << d.num_conflicting()
        << " fnv1a=" << fnv1a_hex(dataset_to_csv(d)) << '\n';
    return exit_code::kOk;
  });
}

int cmd_gradcheck(const GradcheckOptions& options, std::ostream& out, std::ostream& err) {
  return guarded(err, [&] {
    const auto report = run_gradcheck(options);
    for (const auto& c : report.cases) {
      char line[256];
      std::snprintf(line, sizeof line, "%-12s configs=%d max_rel_error=%.3e %s (worst: %s)\n", c.loss.c_str(), c.configs,
                    c.max_rel_error, c.passed ? "PASS" : "FAIL", c.worst_config.c_str());
      out << line;
      if (!c.passed) err << "gradient check failed for loss '" << c.loss << "' at " << c.worst_config << '\n';
    }
    return report.passed ? exit_code::kOk : exit_code::kCheckFailed;
  });
}

}  // namespace lwbc
