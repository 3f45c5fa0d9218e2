#include <catch2/catch_amalgamated.hpp>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <sys/wait.h>
#include <vector>

#include "kitinet/commands.hpp"

using namespace kitinet;
using namespace kitinet::cli;
namespace fs = std::filesystem;

namespace {

fs::path fresh_dir(const std::string& name) {
  const fs::path p = fs::path("cli_test_runs") / name;
  fs::remove_all(p);
  return p;
}

int spawn_cli(const std::string& args) {
  const std::string cmd = std::string(KITINET_CLI_BIN) + " " + args + " >/dev/null 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

std::vector<std::string> read_lines(const fs::path& p) {
  std::istringstream in(read_text_file(p));
  std::vector<std::string> lines;
  std::string l;
  while (std::getline(in, l)) lines.push_back(l);
  return lines;
}

std::size_t count_files_with_prefix(const fs::path& dir, const std::string& prefix) {
  std::size_t n = 0;
  for (const auto& e : fs::directory_iterator(dir))
    if (e.path().filename().string().rfind(prefix, 0) == 0) ++n;
  return n;
}

}  // namespace

TEST_CASE("kernel-check passes on the default config", "[cli]") {
  auto cfg = parse_config(json::object());
  cfg.output_dir = fresh_dir("kernel_default").string();
  REQUIRE(run_kernel_check(cfg, true) == 0);

  const auto lines = read_lines(fs::path(cfg.output_dir) / "checks.csv");
  REQUIRE(lines.size() == 5);  // header + four checks
  CHECK(lines[0] == "check_name,metric,tolerance,pass");
  for (std::size_t i = 1; i < lines.size(); ++i)
    CHECK(lines[i].find(",true") != std::string::npos);
  CHECK(lines[1].rfind("reduction_coll_coef_zero,0,0,true", 0) == 0);
  CHECK(fs::exists(fs::path(cfg.output_dir) / "report.json"));
  CHECK(fs::exists(fs::path(cfg.output_dir) / "MANIFEST"));
  CHECK(fs::exists(fs::path(cfg.output_dir) / "config.echo.json"));
}

TEST_CASE("kernel-check reruns are byte-identical", "[cli]") {
  auto cfg = parse_config(json::object());
  cfg.output_dir = fresh_dir("kernel_rerun_a").string();
  REQUIRE(run_kernel_check(cfg, true) == 0);
  auto cfg2 = cfg;
  cfg2.output_dir = fresh_dir("kernel_rerun_b").string();
  REQUIRE(run_kernel_check(cfg2, true) == 0);
  CHECK(read_text_file(fs::path(cfg.output_dir) / "checks.csv") ==
        read_text_file(fs::path(cfg2.output_dir) / "checks.csv"));
  CHECK(read_text_file(fs::path(cfg.output_dir) / "report.json") ==
        read_text_file(fs::path(cfg2.output_dir) / "report.json"));
}

TEST_CASE("malformed or unknown config keys are usage errors", "[cli]") {
  CHECK_THROWS_AS(parse_config_text("{ not json"), ConfigError);
  CHECK_THROWS_AS(parse_config_text(R"({"kiti": {"dt": 1.0, "typo": 3}})"), ConfigError);
  CHECK_THROWS_AS(parse_config_text(R"({"mystery_section": {}})"), ConfigError);
  CHECK_THROWS_AS(parse_config_text(R"({"kiti": {"coll_coef": 1.5}})"), ConfigError);
  CHECK_THROWS_AS(parse_config_text(R"({"train": {"checkpoints": [10, 5]}})"), ConfigError);
}

TEST_CASE("malformed config through the binary exits 2 without outputs", "[cli]") {
  const fs::path dir = fresh_dir("badcfg");
  fs::create_directories("cli_test_runs");
  write_text_file("cli_test_runs/bad.json", "{ definitely not json");
  CHECK(spawn_cli("kernel-check --config cli_test_runs/bad.json --output " + dir.string()) == 2);
  CHECK_FALSE(fs::exists(dir));
}

TEST_CASE("usage errors exit 2", "[cli]") {
  CHECK(spawn_cli("") == 2);                    // missing subcommand
  CHECK(spawn_cli("frobnicate") == 2);          // unknown subcommand
  CHECK(spawn_cli("dsmc --no-such-flag") == 2); // unknown option
}

TEST_CASE("seed override lands in the echoed config", "[cli]") {
  const fs::path dir = fresh_dir("seed_override");
  REQUIRE(spawn_cli("kernel-check --quiet --seed 77 --output " + dir.string()) == 0);
  const auto echo = json::parse(read_text_file(dir / "config.echo.json"));
  CHECK(echo["kiti"]["seed"].get<std::uint64_t>() == 77);
  CHECK(echo["dsmc"]["seed"].get<std::uint64_t>() == 77);
  CHECK(echo["train"]["seed"].get<std::uint64_t>() == 77);
  CHECK(echo["train"]["dataset_seed"].get<std::uint64_t>() == 77);
}

TEST_CASE("dsmc with zero steps writes a header-only time series", "[cli]") {
  auto cfg = parse_config(json::object());
  cfg.output_dir = fresh_dir("dsmc_zero").string();
  cfg.dsmc_run.steps = 0;
  cfg.dsmc_run.gas.num_particles = 50;
  REQUIRE(run_dsmc(cfg, true) == 0);
  const auto lines = read_lines(fs::path(cfg.output_dir) / "timeseries.csv");
  REQUIRE(lines.size() == 1);
  CHECK(lines[0] ==
        "step,time,total_momentum_x,total_momentum_y,total_momentum_z,"
        "kinetic_energy,temperature,l2_to_maxwell");
}

TEST_CASE("dsmc runs reproduce byte-identical outputs", "[cli]") {
  auto cfg = parse_config(json::object());
  cfg.dsmc_run.gas.num_particles = 400;
  cfg.dsmc_run.steps = 30;
  cfg.output_dir = fresh_dir("dsmc_a").string();
  REQUIRE(run_dsmc(cfg, true) == 0);
  auto cfg2 = cfg;
  cfg2.output_dir = fresh_dir("dsmc_b").string();
  REQUIRE(run_dsmc(cfg2, true) == 0);
  CHECK(read_text_file(fs::path(cfg.output_dir) / "timeseries.csv") ==
        read_text_file(fs::path(cfg2.output_dir) / "timeseries.csv"));
  CHECK(read_text_file(fs::path(cfg.output_dir) / "histogram.csv") ==
        read_text_file(fs::path(cfg2.output_dir) / "histogram.csv"));

  // the echoed config alone reproduces the run
  auto replay = parse_config(json::parse(read_text_file(fs::path(cfg.output_dir) /
                                                        "config.echo.json")));
  replay.output_dir = fresh_dir("dsmc_c").string();
  REQUIRE(run_dsmc(replay, true) == 0);
  CHECK(read_text_file(fs::path(cfg.output_dir) / "timeseries.csv") ==
        read_text_file(fs::path(replay.output_dir) / "timeseries.csv"));
}

TEST_CASE("train emits four heatmaps per analyzed layer", "[cli]") {
  auto cfg = parse_config(json::object());
  cfg.output_dir = fresh_dir("train_small").string();
  cfg.network.hidden_dim = 8;
  cfg.network.depth = 3;
  cfg.network.kiti_layers = {2};
  cfg.kiti.n_divide = 2;
  cfg.network.kiti = cfg.kiti;
  cfg.train.opt.epochs = 100;
  cfg.train.opt.learning_rate = 0.02;
  cfg.train.opt.checkpoints = {1, 10, 50, 100};
  cfg.train.dataset_n = 16;
  cfg.train.analyze_layers = {1, 2};
  REQUIRE(run_train(cfg, true) == 0);

  const fs::path dir(cfg.output_dir);
  CHECK(count_files_with_prefix(dir, "heatmap_layer1_") == 4);
  CHECK(count_files_with_prefix(dir, "heatmap_layer2_") == 4);
  CHECK(count_files_with_prefix(dir, "params_epoch") == 4);
  const auto loss_lines = read_lines(dir / "loss.csv");
  REQUIRE(loss_lines.size() == 101);
  CHECK(loss_lines[0] == "epoch,train_mse");
  const auto score_lines = read_lines(dir / "scores.csv");
  CHECK(score_lines.size() == 1 + 4 * 2);  // header + 4 checkpoints x 2 layers
}

TEST_CASE("diverging training exits 1 and keeps partial outputs", "[cli]") {
  auto cfg = parse_config(json::object());
  cfg.output_dir = fresh_dir("train_diverge").string();
  cfg.network.hidden_dim = 8;
  cfg.network.kiti_layers = {};
  cfg.network.gamma = 0.0;
  cfg.train.opt.epochs = 200;
  cfg.train.opt.learning_rate = 1e9;
  cfg.train.dataset_n = 8;
  CHECK(run_train(cfg, true) == 1);
  CHECK(fs::exists(fs::path(cfg.output_dir) / "loss.csv"));
  CHECK(fs::exists(fs::path(cfg.output_dir) / "config.echo.json"));
  CHECK(fs::exists(fs::path(cfg.output_dir) / "MANIFEST"));
}

TEST_CASE("sweep covers the grid once per seed and skips infeasible points", "[cli]") {
  auto cfg = parse_config(json::object());
  cfg.output_dir = fresh_dir("sweep_grid").string();
  cfg.network.hidden_dim = 8;
  cfg.network.depth = 3;
  cfg.network.kiti_layers = {2};
  cfg.train.opt.epochs = 5;
  cfg.train.dataset_n = 8;
  cfg.train.analyze_layers = {1};
  cfg.sweep.n_divide = {1, 2, 2, 4, 5};  // duplicate and non-dividing entries
  cfg.sweep.coll_coef = {0.5};
  cfg.sweep.seeds = {1, 2};
  REQUIRE(run_sweep(cfg, true) == 0);
  const auto lines = read_lines(fs::path(cfg.output_dir) / "sweep.csv");
  CHECK(lines[0] == "n_divide,coll_coef,seed,final_train_mse,final_condensation_score");
  CHECK(lines.size() == 1 + 3 * 2);  // {1,2,4} x seeds {1,2}; 5 skipped, dup deduped
}

TEST_CASE("sweep at coll_coef zero reproduces the baseline run", "[cli]") {
  auto cfg = parse_config(json::object());
  cfg.output_dir = fresh_dir("sweep_zero").string();
  cfg.network.hidden_dim = 8;
  cfg.network.depth = 3;
  cfg.network.skip_connections = true;
  cfg.network.kiti_layers = {2};
  cfg.train.opt.epochs = 6;
  cfg.train.opt.learning_rate = 0.05;
  cfg.train.dataset_n = 8;
  cfg.train.analyze_layers = {1};
  cfg.sweep.n_divide = {1};
  cfg.sweep.coll_coef = {0.0};
  cfg.sweep.seeds = {9};
  REQUIRE(run_sweep(cfg, true) == 0);

  // baseline: identical net with no collision layer, same seeds and data
  net::NetworkSpec base = cfg.network;
  base.kiti = cfg.kiti;
  base.kiti_layers = {};
  net::TrainConfig topt = cfg.train.opt;
  topt.seed = 9;
  topt.checkpoints.clear();
  Rng drng(RngKey::root(cfg.train.dataset_seed).child(2));
  const auto data = net::make_sine_dataset(cfg.train.dataset_n, drng);
  const auto run = net::train(base, topt, data);

  const auto lines = read_lines(fs::path(cfg.output_dir) / "sweep.csv");
  REQUIRE(lines.size() == 2);
  CHECK(lines[1].rfind("1,0,9," + format_double(run.final_mse) + ",", 0) == 0);
}

TEST_CASE("collision report dump carries the mask structure", "[cli]") {
  KitiConfig kcfg;
  kcfg.n_divide = 2;
  kcfg.coll_coef = 0.9;
  kcfg.training = true;
  Rng gen(3);
  std::vector<double> x(12), v(12);
  for (auto& e : x) e = gen.gaussian();
  for (auto& e : v) e = gen.gaussian();
  Rng fwd_rng(4);
  const auto fwd = kitinet_forward(x, v, kcfg, fwd_rng);
  const auto doc = report_to_json(*fwd.report);
  CHECK(doc["particles"].get<std::size_t>() == 6);
  CHECK(doc["dim"].get<std::size_t>() == 2);
  CHECK(doc["v_r_max"].get<double>() == fwd.report->v_r_max);
  std::size_t accepted = 0;
  for (std::size_t i = 0; i < 6; ++i)
    for (std::size_t j = i + 1; j < 6; ++j)
      if (fwd.report->accepted.at(i, j)) ++accepted;
  CHECK(doc["accepted_pairs"].size() == accepted);
}
