#include <algorithm>
#include <cmath>
#include <set>

#include "doctest.h"
#include "lwbc/runner.hpp"
#include "lwbc/trainer.hpp"
#include "oracle.hpp"

using namespace lwbc;

namespace {

Dataset small_data(std::uint64_t seed, int n = 400, double rho = 0.05) {
  BiasedSpec spec;
  spec.n = n;
  spec.rho = rho;
  return generate(spec, RngStream(seed, 1));
}

TrainConfig small_config(Method method) {
  TrainConfig c;
  c.method = method;
  c.batch_size = 32;
  c.m = 5;
  c.subset_size = 60;
  c.epochs = 6;
  c.warmup_epochs = 1;
  c.lr = 5e-3;
  return c;
}

// ERM by hand: same init stream, same batch stream, unit weights.
Classifier manual_erm(const TrainConfig& config, const Dataset& train, long iterations) {
  RngStream init(config.seed, streams::kMain);
  Classifier s = init_classifier<double>(train.features.cols(), config.d_hidden, train.num_classes, init);
  const RngStream batches(config.seed, streams::kBatches);
  const long spe = static_cast<long>((train.size() + config.batch_size - 1) / config.batch_size);
  std::vector<std::vector<int>> epoch_batches;
  for (long it = 0; it < iterations; ++it) {
    if (it % spe == 0) epoch_batches = minibatches(train.size(), config.batch_size, batches, static_cast<std::uint64_t>(it / spe));
    const auto& rows = epoch_batches[static_cast<std::size_t>(it % spe)];
    const Batch b = gather_batch(train, rows);
    adam_step(s, weighted_ce_backward(s, b.x, b.labels, std::vector<double>(rows.size(), 1.0)), config.lr);
  }
  return s;
}

}  // namespace

TEST_SUITE("TrainConfig") {
  TEST_CASE("method names round trip") {
    for (Method m : {Method::kErm, Method::kSingleReweight, Method::kJttLike, Method::kLwbcNoKd, Method::kLwbc})
      CHECK(method_from_string(to_string(m)) == m);
    CHECK_THROWS_AS(method_from_string("lff"), ValidationError);
  }

  TEST_CASE("invalid fields are named") {
    const auto message = [](TrainConfig c) {
      try {
        c.validate();
      } catch (const ValidationError& e) {
        return std::string(e.what());
      }
      return std::string();
    };
    TrainConfig c;
    CHECK(message(c).empty());
    c.lambda = 1.5;
    CHECK(message(c).find("lambda") != std::string::npos);
    c = TrainConfig{};
    c.warmup_epochs = 30;
    CHECK(message(c).find("warmup") != std::string::npos);
    c = TrainConfig{};
    c.selection_metric = "accuracy";
    CHECK(message(c).find("selection_metric") != std::string::npos);
    c = TrainConfig{};
    c.lr = 0;
    CHECK(message(c).find("lr") != std::string::npos);
    c = TrainConfig{};
    c.total_iterations = 10;
    c.warmup_iterations = 10;
    CHECK(message(c).find("warmup_iterations") != std::string::npos);
  }

  TEST_CASE("schedule arithmetic") {
    TrainConfig c = small_config(Method::kLwbc);
    const Schedule s = make_schedule(c, 400);
    CHECK(s.steps_per_epoch == 13);
    CHECK(s.total == 78);
    CHECK(s.warmup == 13);
    CHECK(s.kd_start == 26);
    CHECK(s.num_epochs == 6);
    c.total_iterations = 37;
    CHECK(make_schedule(c, 400).num_epochs == 3);
    c.method = Method::kErm;
    CHECK(make_schedule(c, 400).warmup == 0);
  }
}

TEST_SUITE("train_lwbc") {
  TEST_CASE("one main step right after warm-up") {
    const Dataset train = small_data(1);
    TrainConfig c = small_config(Method::kLwbc);
    c.lambda = 0.0;
    c.warmup_iterations = 5;
    c.total_iterations = 6;
    const TrainResult r = train_lwbc(c, {train, train, nullptr});
    CHECK(r.log.epochs.size() == 1u);
    CHECK(r.log.epochs[0].main_steps == 1);

    // Oracle: six committee CE steps on the shared batch stream.
    Committee ref = make_committee(bootstrap_subsets(train.size(), c.m, c.subset_size, RngStream(c.seed, streams::kSubsets)),
                                   train.features.cols(), c.d_hidden, train.num_classes, RngStream(c.seed, streams::kMembers));
    const auto batches = minibatches(train.size(), c.batch_size, RngStream(c.seed, streams::kBatches), 0);
    for (int it = 0; it < 5; ++it) warmup_step(ref, gather_batch(train, batches[static_cast<std::size_t>(it)]), c.lr);
    const Batch last = gather_batch(train, batches[5]);
    const auto weights = weights_from_counts(consensus_counts(ref, last.x, last.labels), c.m, c.alpha).weights;
    warmup_step(ref, last, c.lr);
    REQUIRE(r.committee.has_value());
    CHECK(*r.committee == ref);

    RngStream init(c.seed, streams::kMain);
    Classifier main = init_classifier<double>(train.features.cols(), c.d_hidden, train.num_classes, init);
    CHECK_FALSE(r.final_main.w1 == main.w1);
    adam_step(main, weighted_ce_backward(main, last.x, last.labels, weights), c.lr);
    CHECK(r.final_main == main);
  }

  TEST_CASE("one alternating iteration on a two-sample set matches a hand-computed oracle") {
    Dataset d;
    d.num_classes = 2;
    d.features.resize(2, 3);
    d.features << 0.8, -0.4, 1.1, -0.6, 0.9, 0.3;
    d.labels = {0, 1};
    d.attrs = {0, 0};
    d.conflicting = {0, 1};

    TrainConfig c;
    c.method = Method::kLwbc;
    c.batch_size = 2;
    c.m = 2;
    c.subset_size = 1;
    c.d_hidden = 4;
    c.total_iterations = 1;
    c.warmup_iterations = 0;
    c.kd_delay_epochs = 0;
    c.lr = 0.05;
    c.lambda = 0.6;
    c.tau = 1.5;
    c.alpha = 0.02;
    c.seed = 3;
    const TrainResult r = train_lwbc(c, {d, d, nullptr});

    // Initial states come from the same streams the trainer uses.
    const auto subsets = bootstrap_subsets(2, 2, 1, RngStream(c.seed, streams::kSubsets));
    const Committee init = make_committee(subsets, 3, 4, 2, RngStream(c.seed, streams::kMembers));
    RngStream main_stream(c.seed, streams::kMain);
    oracle::Net main = oracle::from_classifier(init_classifier<double>(3, 4, 2, main_stream));
    std::vector<oracle::Net> members{oracle::from_classifier(init.members[0]), oracle::from_classifier(init.members[1])};

    const auto order = minibatches(2, 2, RngStream(c.seed, streams::kBatches), 0)[0];
    std::vector<oracle::Vec> x;
    std::vector<int> y;
    for (int i : order) {
      x.push_back({d.features(i, 0), d.features(i, 1), d.features(i, 2)});
      y.push_back(d.labels[static_cast<std::size_t>(i)]);
    }

    // Counts and weights.
    oracle::Vec w(2);
    for (std::size_t s = 0; s < 2; ++s) {
      int k = 0;
      for (const auto& m : members) k += oracle::argmax(oracle::forward(m, {x[s]}).logits[0]) == y[s];
      w[s] = 1.0 / (k / 2.0 + c.alpha);
    }
    // Main step, then the teacher from the updated main classifier.
    oracle::adam(main, oracle::weighted_ce_grad(main, x, y, w, 2.0), c.lr);
    const auto teacher = oracle::forward(main, x).logits;
    // Combined member steps.
    for (std::size_t l = 0; l < 2; ++l) {
      std::vector<oracle::Vec> xin, xout, tout;
      std::vector<int> yin;
      for (std::size_t s = 0; s < 2; ++s) {
        if (subsets[l].contains(order[s])) {
          xin.push_back(x[s]);
          yin.push_back(y[s]);
        } else {
          xout.push_back(x[s]);
          tout.push_back(teacher[s]);
        }
      }
      oracle::Vec g(members[l].p.size(), 0.0);
      if (!xin.empty()) {
        const auto ce = oracle::weighted_ce_grad(members[l], xin, yin, oracle::Vec(xin.size(), 1.0), static_cast<double>(xin.size()));
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += (1 - c.lambda) * ce[i];
      }
      if (!xout.empty()) {
        const auto kd = oracle::kd_grad(members[l], xout, tout, c.tau, static_cast<double>(xout.size()));
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += c.lambda * kd[i];
      }
      oracle::adam(members[l], g, c.lr);
    }

    CHECK(oracle::max_abs_diff(main.p, flatten_params(r.final_main)) < 1e-10);
    REQUIRE(r.committee.has_value());
    for (std::size_t l = 0; l < 2; ++l)
      CHECK(oracle::max_abs_diff(members[l].p, flatten_params(r.committee->members[l])) < 1e-10);
  }

  TEST_CASE("deterministic per seed") {
    const Dataset train = small_data(2), val = small_data(3, 200, 0.5);
    const TrainConfig c = small_config(Method::kLwbc);
    const TrainResult a = train_lwbc(c, {train, val, nullptr});
    const TrainResult b = train_lwbc(c, {train, val, nullptr});
    CHECK(a.best == b.best);
    CHECK(*a.committee == *b.committee);
    CHECK(metrics_csv(a.log) == metrics_csv(b.log));
  }

  TEST_CASE("lambda = 0 reproduces the no-KD method") {
    const Dataset train = small_data(4), val = small_data(5, 200, 0.5);
    TrainConfig nokd = small_config(Method::kLwbcNoKd);
    TrainConfig zero = small_config(Method::kLwbc);
    zero.lambda = 0.0;
    const TrainResult a = train_lwbc(nokd, {train, val, nullptr});
    const TrainResult b = train_lwbc(zero, {train, val, nullptr});
    CHECK(a.final_main == b.final_main);
    CHECK(*a.committee == *b.committee);
    CHECK(metrics_csv(a.log) == metrics_csv(b.log));
  }

  TEST_CASE("epoch records follow the schedule") {
    const Dataset train = small_data(6);
    TrainConfig c = small_config(Method::kLwbc);
    c.total_iterations = 37;
    c.warmup_iterations = 13;
    const TrainResult r = train_lwbc(c, {train, train, nullptr});
    REQUIRE(r.log.epochs.size() == 3u);
    for (std::size_t e = 0; e < 3; ++e) CHECK(r.log.epochs[e].epoch == static_cast<int>(e + 1));
    CHECK(r.log.epochs[0].main_steps == 0);
    CHECK(r.log.epochs[2].iterations == 37);
    CHECK(r.log.epochs[2].main_steps == 24);
    CHECK(std::isnan(r.log.epochs[0].mean_weight_conflicting));
  }

  TEST_CASE("the selected checkpoint is the first epoch with the best validation score") {
    const Dataset train = small_data(7), val = small_data(8, 40, 0.5);
    for (const char* metric : {"worst_group", "conflicting", "overall"}) {
      TrainConfig c = small_config(Method::kLwbc);
      c.selection_metric = metric;
      c.epochs = 8;
      const TrainResult r = train_lwbc(c, {train, val, nullptr});
      int expected = 0;
      double best = -1;
      for (const auto& e : r.log.epochs) {
        if (e.main_steps == 0) continue;
        if (e.val.get(metric) > best) {
          best = e.val.get(metric);
          expected = e.epoch;
        }
      }
      CHECK(r.best_epoch == expected);
      CHECK(evaluate(r.best, val, train.group_counts()).get(metric) == best);
    }
  }
}

TEST_SUITE("baselines") {
  TEST_CASE("ERM equals a hand-written training loop") {
    const Dataset train = small_data(9), val = small_data(10, 200, 0.5);
    TrainConfig c = small_config(Method::kErm);
    c.epochs = 3;
    const TrainResult r = train_erm(c, {train, val, nullptr});
    CHECK(r.final_main == manual_erm(c, train, 3 * 13));
    CHECK(r.log.epochs.size() == 3u);
    CHECK_FALSE(r.committee.has_value());
  }

  TEST_CASE("ERM learns the shortcut on the default dataset") {
    const Dataset train = generate(BiasedSpec{}, RngStream(0, 1));
    TrainConfig c;
    c.method = Method::kErm;
    const TrainResult r = train_erm(c, {train, train, nullptr});
    CHECK(r.log.epochs.back().train.overall > 0.95);
    CHECK(r.log.epochs.back().train.guiding > r.log.epochs.back().train.conflicting);
  }

  TEST_CASE("single reweighting uses exactly two weight values") {
    const Dataset train = small_data(11), val = small_data(12, 200, 0.5);
    const TrainConfig c = small_config(Method::kSingleReweight);
    const TrainResult r = train_single_reweight(c, {train, val, nullptr});
    const std::set<double> values(r.stage_weights.begin(), r.stage_weights.end());
    CHECK(values == std::set<double>{1.0, 50.0});
  }

  TEST_CASE("single reweighting after a perfect first stage is ERM") {
    const Dataset train = small_data(13, 400, 0.0), val = small_data(14, 200, 0.5);
    const TrainConfig c = small_config(Method::kSingleReweight);
    const TrainResult r = train_single_reweight(c, {train, val, nullptr});
    for (double w : r.stage_weights) REQUIRE(w == 1.0);
    TrainConfig erm = c;
    erm.method = Method::kErm;
    const TrainResult e = train_erm(erm, {train, val, nullptr});
    CHECK(r.final_main == e.final_main);
    CHECK(r.best == e.best);
  }

  TEST_CASE("JTT with unit upweight is ERM") {
    const Dataset train = small_data(15), val = small_data(16, 200, 0.5);
    TrainConfig c = small_config(Method::kJttLike);
    c.jtt_upweight = 1.0;
    c.jtt_epoch = 2;
    const TrainResult r = train_jtt_like(c, {train, val, nullptr});
    TrainConfig erm = c;
    erm.method = Method::kErm;
    CHECK(r.final_main == train_erm(erm, {train, val, nullptr}).final_main);
  }

  TEST_CASE("the JTT error set shrinks with longer identification") {
    const Dataset train = generate(BiasedSpec{}, RngStream(1, 1));
    TrainConfig c;
    c.method = Method::kJttLike;
    long prev = static_cast<long>(train.size()) + 1;
    for (int epochs : {1, 10, 50}) {
      const auto errors = erm_error_set(c, train, epochs);
      const long n = std::count(errors.begin(), errors.end(), std::uint8_t{1});
      CHECK(n <= prev);
      prev = n;
    }
  }

  TEST_CASE("dispatch rejects mismatched methods") {
    const Dataset train = small_data(17);
    CHECK_THROWS_AS(train_erm(small_config(Method::kLwbc), {train, train, nullptr}), ValidationError);
    CHECK_THROWS_AS(train_lwbc(small_config(Method::kErm), {train, train, nullptr}), ValidationError);
    TrainConfig big = small_config(Method::kErm);
    big.batch_size = 1000;
    CHECK_THROWS_AS(lwbc::train(big, {train, train, nullptr}), ValidationError);
  }
}

TEST_SUITE("lwbc on the default dataset") {
  TEST_CASE("conflicting samples get larger weights after warm-up") {
    const Dataset train = generate(BiasedSpec{}, RngStream(0, 1));
    BiasedSpec eval;
    eval.n = 1000;
    eval.rho = 0.75;
    const Dataset val = generate(eval, RngStream(0, 2));
    const TrainResult r = train_lwbc(TrainConfig{}, {train, val, nullptr});
    int checked = 0;
    for (const auto& e : r.log.epochs) {
      if (e.main_steps == 0) continue;
      CHECK(e.mean_weight_conflicting > e.mean_weight_guiding);
      ++checked;
    }
    CHECK(checked == 27);
  }
}

TEST_SUITE("evaluate") {
  TEST_CASE("perfect and constant predictors") {
    const Dataset base = small_data(18, 200, 0.5);
    RngStream rng(1, 0);
    Classifier s = init_classifier<double>(base.features.cols(), 8, base.num_classes, rng);
    Dataset relabelled = base;
    relabelled.labels = predict(s, base.features);
    relabelled.attrs = relabelled.labels;
    relabelled.conflicting.assign(base.size(), 0);
    const auto perfect = evaluate(s, relabelled, relabelled.group_counts());
    CHECK(perfect.overall == 1.0);
    CHECK(perfect.worst_group == 1.0);

    BiasedSpec two;
    two.n = 200;
    two.num_classes = 2;
    two.rho = 0.5;
    const Dataset d = generate(two, RngStream(2, 1));
    Classifier constant = init_classifier<double>(d.features.cols(), 4, 2, rng);
    constant.w1.setZero();
    constant.w2.setZero();
    constant.b2 << 1.0, 0.0;
    CHECK(evaluate(constant, d, d.group_counts()).worst_group == 0.0);
    Dataset narrow = d;
    narrow.features = Matrix::Zero(static_cast<Eigen::Index>(d.size()), 3);
    CHECK_THROWS_AS(evaluate(constant, narrow, d.group_counts()), ShapeError);
  }
}
