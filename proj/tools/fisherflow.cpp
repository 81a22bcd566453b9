// Command-line front end: train, compare, matsqrt, selftest.

#include "fisherflow/commands.hpp"
#include "fisherflow/config.hpp"
#include "fisherflow/error.hpp"

#include <CLI11.hpp>

#include <iostream>
#include <optional>
#include <string>

namespace {

struct Overrides {
  std::string config_path;
  std::optional<std::uint64_t> seed;
  bool per_step = false;
  std::optional<std::string> out;
};

void add_run_options(CLI::App* cmd, Overrides& o) {
  cmd->add_option("--config,-c", o.config_path, "TOML experiment config")->required();
  cmd->add_option("--seed", o.seed, "override the config seed");
  cmd->add_flag("--per-step", o.per_step, "log one metrics row per optimizer step");
  cmd->add_option("--out,-o", o.out, "override the metrics CSV path");
}

fisherflow::TrainConfig resolve(const Overrides& o) {
  fisherflow::TrainConfig cfg = fisherflow::load_config(o.config_path);
  if (o.seed) cfg.seed = *o.seed;
  if (o.per_step) cfg.per_step = true;
  if (o.out) cfg.out = *o.out;
  cfg.validate();
  return cfg;
}

int with_config(const Overrides& o,
                int (*cmd)(const fisherflow::TrainConfig&, std::ostream&, std::ostream&)) {
  fisherflow::TrainConfig cfg;
  try {
    cfg = resolve(o);
  } catch (const fisherflow::ConfigError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return fisherflow::kExitBadConfig;
  }
  return cmd(cfg, std::cout, std::cerr);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Structured natural gradient training for small MLPs"};
  app.require_subcommand(1);

  Overrides train_opts, compare_opts;
  auto* train = app.add_subcommand("train", "train one model and write a metrics CSV");
  add_run_options(train, train_opts);
  auto* compare = app.add_subcommand(
      "compare", "train SGD and SNGD from identical weights and compare them");
  add_run_options(compare, compare_opts);

  int dim = 64, trials = 10;
  std::uint64_t seed = 1;
  auto* matsqrt = app.add_subcommand(
      "matsqrt", "compare Newton-Schulz and Denman-Beavers against an eigen-decomposition");
  matsqrt->add_option("--dim", dim, "matrix dimension")->check(CLI::PositiveNumber);
  matsqrt->add_option("--trials", trials, "number of random SPD matrices")
      ->check(CLI::PositiveNumber);
  matsqrt->add_option("--seed", seed, "random seed");

  auto* selftest = app.add_subcommand("selftest", "run the built-in numerical checks");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? 0 : fisherflow::kExitBadConfig;
  }

  if (train->parsed()) return with_config(train_opts, fisherflow::cmd_train);
  if (compare->parsed()) return with_config(compare_opts, fisherflow::cmd_compare);
  if (matsqrt->parsed()) return fisherflow::cmd_matsqrt(dim, trials, seed, std::cout, std::cerr);
  if (selftest->parsed()) return fisherflow::cmd_selftest(std::cout);
  return fisherflow::kExitFailure;
}
