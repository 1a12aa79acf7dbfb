// Acceptance suite: one PASS/FAIL line per criterion, exit status 1 if any
// criterion fails.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "lwbc/io.hpp"
#include "lwbc/runner.hpp"

using namespace lwbc;
namespace fs = std::filesystem;
using Clock = std::chrono::steady_clock;

namespace {

int failures = 0;

void report(int id, bool pass, const std::string& what, const std::string& detail) {
  std::printf("%s criterion %d: %s | %s\n", pass ? "PASS" : "FAIL", id, what.c_str(), detail.c_str());
  std::fflush(stdout);
  failures += !pass;
}

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

double mean(const std::vector<double>& v) {
  double s = 0;
  for (double x : v) s += x;
  return s / static_cast<double>(v.size());
}

ExperimentConfig default_config(Method method, std::uint64_t seed) {
  ExperimentConfig c;
  c.train.method = method;
  c.train.seed = seed;
  return c;
}

struct SeedRun {
  std::map<Method, double> worst_group;  // test, best checkpoint
  double kd_gain_lwbc = 0, kd_gain_nokd = 0;
  std::vector<int> warmup_counts;
  std::vector<std::uint8_t> conflicting;
  std::vector<std::uint8_t> erm_errors;
};

double committee_gain(const TrainResult& r, int warmup_epochs) {
  const auto& epochs = r.log.epochs;
  return epochs.back().committee_unbiased_mean - epochs[static_cast<std::size_t>(warmup_epochs - 1)].committee_unbiased_mean;
}

SeedRun run_seed(std::uint64_t seed) {
  SeedRun out;
  const auto base = default_config(Method::kErm, seed);
  const ExperimentData data = make_experiment_data(base, std::nullopt);
  const GroupCounts counts = data.train.group_counts();
  out.conflicting = data.train.conflicting;
  for (Method m : {Method::kErm, Method::kSingleReweight, Method::kLwbcNoKd, Method::kLwbc}) {
    const auto cfg = default_config(m, seed);
    const TrainResult r = train(cfg.train, {data.train, data.val, &data.test});
    out.worst_group[m] = evaluate(r.best, data.test, counts).worst_group;
    if (m == Method::kLwbc) {
      out.kd_gain_lwbc = committee_gain(r, cfg.train.warmup_epochs);
      out.warmup_counts = r.warmup_counts;
    }
    if (m == Method::kLwbcNoKd) out.kd_gain_nokd = committee_gain(r, cfg.train.warmup_epochs);
  }
  // The single biased classifier: ERM for the full schedule, as in stage 1
  // of single_reweight.
  out.erm_errors = erm_error_set(base.train, data.train, base.train.epochs);
  return out;
}

// Committee accuracy gap between guiding and conflicting validation samples
// right after warm-up, rebuilt from the trainer's streams.
double warmup_bias_gap(std::uint64_t seed) {
  const auto cfg = default_config(Method::kLwbc, seed);
  const TrainConfig& t = cfg.train;
  const ExperimentData data = make_experiment_data(cfg, std::nullopt);
  const Dataset& train = data.train;
  Committee committee = make_committee(
      bootstrap_subsets(train.size(), t.m, t.subset_size, RngStream(t.seed, streams::kSubsets), t.subsets_with_replacement),
      train.features.cols(), t.d_hidden, train.num_classes, RngStream(t.seed, streams::kMembers));
  const Schedule sched = make_schedule(t, train.size());
  const RngStream batch_rng(t.seed, streams::kBatches);
  std::vector<std::vector<int>> batches;
  for (long it = 0; it < sched.warmup; ++it) {
    if (it % sched.steps_per_epoch == 0)
      batches = minibatches(train.size(), t.batch_size, batch_rng, static_cast<std::uint64_t>(it / sched.steps_per_epoch));
    warmup_step(committee, gather_batch(train, batches[static_cast<std::size_t>(it % sched.steps_per_epoch)]), t.lr);
  }
  const GroupCounts counts = train.group_counts();
  std::vector<double> guiding, conflicting;
  for (const auto& member : committee.members) {
    const auto r = evaluate(member, data.val, counts);
    guiding.push_back(r.guiding);
    conflicting.push_back(r.conflicting);
  }
  return mean(guiding) - mean(conflicting);
}

bool curve_non_increasing(const std::vector<RatioBucket>& curve, std::string& where) {
  std::optional<double> prev;
  for (const auto& b : curve) {
    if (b.n_k < 10 || !b.ratio) continue;
    if (prev && *b.ratio > *prev) {
      where = "k=" + std::to_string(b.k) + " ratio " + fmt("%.4f", *b.ratio) + " > " + fmt("%.4f", *prev);
      return false;
    }
    prev = b.ratio;
  }
  return true;
}

}  // namespace

int main() {
  const fs::path scratch = fs::temp_directory_path() / "lwbc_acceptance";
  fs::remove_all(scratch);

  // 1. Gradient battery.
  {
    const auto t0 = Clock::now();
    const auto r = run_gradcheck();
    const double secs = seconds_since(t0);
    std::string detail;
    for (const auto& c : r.cases) detail += c.loss + "=" + fmt("%.2e", c.max_rel_error) + " ";
    report(1, r.passed && secs < 10.0, "gradcheck max rel. error < 1e-5 on 100 configs per loss, < 10 s",
           detail + "time=" + fmt("%.2fs", secs));
  }

  // 2. Weight function.
  {
    const double alpha = 0.02;
    const auto w = weights_from_counts({0, 30, 15}, 30, alpha).weights;
    bool pass = w[0] == 50.0 && w[1] == 1.0 / 1.02 && w[2] == 1.0 / 0.52;
    for (int m = 1; m <= 64 && pass; ++m) {
      std::vector<int> k;
      for (int i = 0; i <= m; ++i) k.push_back(i);
      const auto ws = weights_from_counts(k, m, alpha).weights;
      for (int i = 0; i < m; ++i) pass = pass && ws[static_cast<std::size_t>(i)] > ws[static_cast<std::size_t>(i + 1)];
    }
    report(2, pass, "w(0)=50, w(m)=1/1.02, w(m/2)=1/0.52; strictly decreasing in k for 1<=m<=64",
           "w(0)=" + format_double(w[0]) + " w(m)=" + format_double(w[1]) + " w(m/2)=" + format_double(w[2]));
  }

  // 3. Enrichment.
  {
    std::vector<std::uint8_t> conf(100, 0);
    std::vector<double> w(100, 1.0);
    for (int i = 0; i < 10; ++i) {
      conf[static_cast<std::size_t>(i)] = 1;
      w[static_cast<std::size_t>(i)] = 50.0;
    }
    const double uniform = enrichment(std::vector<double>(100, 1.0), conf);
    const double two_value = enrichment(w, conf);
    const double err = std::abs(two_value - (500.0 / 590.0) / 0.1);
    report(3, uniform == 1.0 && err <= 1e-12, "enrichment: uniform = 1 exactly; {50,1} fixture = (500/590)/0.1 within 1e-12",
           "uniform=" + format_double(uniform) + " fixture=" + format_double(two_value) + " err=" + fmt("%.1e", err));
  }

  // 4. Committee bias after warm-up.
  {
    std::vector<double> gaps;
    for (std::uint64_t s = 0; s < 3; ++s) gaps.push_back(warmup_bias_gap(s));
    const double g = mean(gaps);
    report(4, g >= 0.20, "after warm-up, member guiding accuracy exceeds conflicting by >= 20 pts (3 seeds)",
           "gap=" + fmt("%.1f pts", 100 * g) + " per seed: " + fmt("%.1f ", 100 * gaps[0]) + fmt("%.1f ", 100 * gaps[1]) +
               fmt("%.1f", 100 * gaps[2]));
  }

  // Shared reference runs for criteria 5 to 9.
  std::vector<SeedRun> runs;
  {
    const auto t0 = Clock::now();
    for (std::uint64_t s = 0; s < 5; ++s) runs.push_back(run_seed(s));
    std::printf("info: reference runs (5 seeds x 4 methods) took %.1fs\n", seconds_since(t0));
  }
  const double alpha = TrainConfig{}.alpha;
  const int m = TrainConfig{}.m;
  const double upweight = TrainConfig{}.single_upweight;

  // 5. Committee vs single biased classifier enrichment.
  {
    int wins = 0;
    std::string detail;
    for (const auto& r : runs) {
      const auto committee_w = weights_from_counts(r.warmup_counts, m, alpha).weights;
      std::vector<double> single_w(r.erm_errors.size());
      for (std::size_t i = 0; i < single_w.size(); ++i) single_w[i] = r.erm_errors[i] ? upweight : 1.0;
      const double ec = enrichment(committee_w, r.conflicting), es = enrichment(single_w, r.conflicting);
      wins += ec >= es;
      detail += fmt("%.2f", ec) + " vs " + fmt("%.2f", es) + "; ";
    }
    report(5, wins == 5, "committee enrichment >= single-classifier enrichment on 5 of 5 seeds",
           std::to_string(wins) + "/5 (committee vs single: " + detail + ")");
  }

  // 6. and 7. Worst-group ordering.
  {
    std::map<Method, std::vector<double>> wg;
    for (const auto& r : runs)
      for (const auto& [method, v] : r.worst_group) wg[method].push_back(v);
    const double erm = mean(wg[Method::kErm]), single = mean(wg[Method::kSingleReweight]),
                 nokd = mean(wg[Method::kLwbcNoKd]), lwbc = mean(wg[Method::kLwbc]);
    const bool ordered = single - erm >= 0.02 && nokd - single >= 0.02 && lwbc - nokd >= -0.01;
    report(6, ordered, "worst-group erm < single_reweight < lwbc_nokd <= lwbc, gaps >= 2 pts (last >= -1 pt), 5 seeds",
           "erm=" + fmt("%.1f", 100 * erm) + " single=" + fmt("%.1f", 100 * single) + " nokd=" + fmt("%.1f", 100 * nokd) +
               " lwbc=" + fmt("%.1f", 100 * lwbc));

    const double lwbc3 = (wg[Method::kLwbc][0] + wg[Method::kLwbc][1] + wg[Method::kLwbc][2]) / 3;
    const double erm3 = (wg[Method::kErm][0] + wg[Method::kErm][1] + wg[Method::kErm][2]) / 3;
    report(7, lwbc3 - erm3 >= 0.15, "lwbc worst-group exceeds erm by >= 15 pts (3 seeds)",
           "lwbc=" + fmt("%.1f", 100 * lwbc3) + " erm=" + fmt("%.1f", 100 * erm3) + " gap=" + fmt("%.1f pts", 100 * (lwbc3 - erm3)));
  }

  // 8. KD lifts the committee.
  {
    const double kd = (runs[0].kd_gain_lwbc + runs[1].kd_gain_lwbc + runs[2].kd_gain_lwbc) / 3;
    const double nokd = (runs[0].kd_gain_nokd + runs[1].kd_gain_nokd + runs[2].kd_gain_nokd) / 3;
    report(8, kd >= 0.05 && nokd < 0.05,
           "committee unbiased val accuracy gain from warm-up end to final epoch: >= 5 pts with KD, < 5 pts without (3 seeds)",
           "lambda=0.6: " + fmt("%+.1f pts", 100 * kd) + " lambda=0: " + fmt("%+.1f pts", 100 * nokd));
  }

  // 9. Consensus-ratio curve.
  {
    bool pass = true;
    std::string detail;
    for (std::size_t s = 0; s < runs.size(); ++s) {
      std::string where;
      const bool ok = curve_non_increasing(consensus_ratio_curve(runs[s].warmup_counts, runs[s].conflicting, m), where);
      pass = pass && ok;
      detail += "seed " + std::to_string(s) + (ok ? " ok; " : " violated at " + where + "; ");
    }
    report(9, pass, "conflicting ratio non-increasing in k after warm-up (buckets with < 10 samples ignored)", detail);
  }

  // 10. and 11. Determinism and runtime of the default run.
  {
    RunOptions o;
    o.common.seed = 0;
    std::ostringstream sink;
    double secs = 0;
    int codes = 0;
    for (const char* name : {"a", "b"}) {
      o.out = scratch / name;
      const auto t0 = Clock::now();
      codes += cmd_run(o, sink, sink);
      const double s = seconds_since(t0);
      if (secs == 0) secs = s;
    }
    bool same = codes == 0;
    for (const char* f : {"metrics.csv", "summary.json"})
      same = same && read_text_file(scratch / "a" / f) == read_text_file(scratch / "b" / f);
    report(10, same, "two default runs give byte-identical metrics.csv and summary.json",
           codes == 0 ? "metrics.csv fnv1a=" + fnv1a_hex(read_text_file(scratch / "a" / "metrics.csv")) : "run failed");
    report(11, codes == 0 && secs < 120.0, "full default run (n=4000, m=30, 30 epochs) under 120 s single-threaded",
           fmt("%.1fs", secs));
  }

  fs::remove_all(scratch);
  std::printf("%d of 11 criteria passed\n", 11 - failures);
  return failures == 0 ? 0 : 1;
}
