// Command-line driver: kernel-check | dsmc | train | sweep.
// Exit codes: 0 success, 1 check/experiment failure, 2 usage/config error.

#include <cstdint>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>

#include "kitinet/commands.hpp"
#include "kitinet/config.hpp"
#include "kitinet/csv.hpp"

namespace {

struct CommonArgs {
  std::string config_path;
  std::string output_dir;
  std::optional<std::uint64_t> seed;
  bool quiet = false;
};

void add_common(CLI::App* cmd, CommonArgs& args) {
  cmd->add_option("--config", args.config_path, "path to a JSON experiment config");
  cmd->add_option("--output", args.output_dir, "output directory (overrides config)");
  cmd->add_option("--seed", args.seed, "master seed overriding every configured seed");
  cmd->add_flag("--quiet", args.quiet, "suppress progress output");
}

kitinet::cli::ExperimentConfig load(const CommonArgs& args) {
  kitinet::cli::ExperimentConfig cfg;
  if (!args.config_path.empty()) {
    std::string text;
    try {
      text = kitinet::read_text_file(args.config_path);
    } catch (const std::exception& e) {
      throw kitinet::cli::ConfigError(e.what());
    }
    cfg = kitinet::cli::parse_config_text(text);
  } else {
    cfg = kitinet::cli::parse_config(kitinet::cli::json::object());
  }
  if (!args.output_dir.empty()) cfg.output_dir = args.output_dir;
  if (args.seed) kitinet::cli::override_seeds(cfg, *args.seed);
  return cfg;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"collision-based residual operator, DSMC reference gas, and "
               "parameter-condensation experiments"};
  app.require_subcommand(1);

  CommonArgs kernel_args, dsmc_args, train_args, sweep_args;
  auto* kernel = app.add_subcommand("kernel-check", "run the collision-kernel invariant suite");
  add_common(kernel, kernel_args);
  auto* dsmc = app.add_subcommand("dsmc", "run the hard-sphere DSMC gas simulation");
  add_common(dsmc, dsmc_args);
  auto* train = app.add_subcommand("train", "train a dense net and export condensation data");
  add_common(train, train_args);
  auto* sweep = app.add_subcommand("sweep", "grid over n_divide / coll_coef / seeds");
  add_common(sweep, sweep_args);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << e.what() << "\n";
    return 2;
  }

  try {
    if (kernel->parsed()) return kitinet::cli::run_kernel_check(load(kernel_args), kernel_args.quiet);
    if (dsmc->parsed()) return kitinet::cli::run_dsmc(load(dsmc_args), dsmc_args.quiet);
    if (train->parsed()) return kitinet::cli::run_train(load(train_args), train_args.quiet);
    if (sweep->parsed()) return kitinet::cli::run_sweep(load(sweep_args), sweep_args.quiet);
  } catch (const kitinet::cli::ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 2;
}
