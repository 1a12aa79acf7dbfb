#include <cstdlib>
#include <iostream>
#include <string>

#include "CLI11.hpp"
#include "lwbc/runner.hpp"

namespace {

void add_common(CLI::App* cmd, lwbc::CommonOptions& common) {
  cmd->add_option("--config", common.config, "JSON config file");
  cmd->add_option("--seed", common.seed, "Seed override");
  cmd->add_option("--method", common.method, "erm, single_reweight, jtt_like, lwbc_nokd or lwbc");
  cmd->add_option("--set", common.overrides, "Config override key=value (repeatable)");
}

int env_threads() {
  const char* v = std::getenv("LWBC_THREADS");
  if (!v) return 1;
  try {
    return std::max(1, std::stoi(v));
  } catch (const std::exception&) {
    return 1;
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Learning with a biased committee on a synthetic biased benchmark"};
  app.set_version_flag("--version", lwbc::kToolVersion);
  app.require_subcommand(1);

  lwbc::RunOptions run;
  auto* run_cmd = app.add_subcommand("run", "Train one configuration and write its artifacts");
  add_common(run_cmd, run.common);
  run_cmd->add_option("--out", run.out, "Output directory")->required();
  run_cmd->add_option("--data", run.data, "Dataset CSV written by gen-data");

  lwbc::SweepOptions sweep;
  auto* sweep_cmd = app.add_subcommand("sweep", "Run one configuration per axis value and aggregate");
  add_common(sweep_cmd, sweep.common);
  sweep_cmd->add_option("--out", sweep.out, "Output directory")->required();
  sweep_cmd->add_option("--data", sweep.data, "Dataset CSV written by gen-data");
  sweep_cmd->add_option("--axis", sweep.axis, "rho, m, lambda, method or seed")->required();
  sweep_cmd->add_option("--values", sweep.values, "Comma separated axis values")->required()->delimiter(',');

  lwbc::GradcheckOptions grad;
  std::string fault;
  auto* grad_cmd = app.add_subcommand("gradcheck", "Compare analytic gradients against finite differences");
  grad_cmd->add_option("--configs", grad.configs, "Random configurations per loss");
  grad_cmd->add_option("--seed", grad.seed, "Seed for the random configurations");
  grad_cmd->add_option("--inject-fault", fault)->check(CLI::IsMember({"kd-sign"}))->group("");

  lwbc::GenDataOptions gen;
  auto* gen_cmd = app.add_subcommand("gen-data", "Write a synthetic dataset CSV and its spec sidecar");
  add_common(gen_cmd, gen.common);
  gen_cmd->add_option("--out", gen.out, "CSV path")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? lwbc::exit_code::kOk : lwbc::exit_code::kUsage;
  }

  if (*run_cmd) return lwbc::cmd_run(run, std::cout, std::cerr);
  if (*sweep_cmd) {
    sweep.threads = env_threads();
    return lwbc::cmd_sweep(sweep, std::cout, std::cerr);
  }
  if (*grad_cmd) {
    grad.flip_kd_sign = fault == "kd-sign";
    return lwbc::cmd_gradcheck(grad, std::cout, std::cerr);
  }
  return lwbc::cmd_gen_data(gen, std::cout, std::cerr);
}
