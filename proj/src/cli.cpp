#include <iostream>

#include "CLI11.hpp"

#include "explore_prob/errors.hpp"
#include "explore_prob/experiment.hpp"

namespace explore_prob::cli {

namespace {

constexpr int kOk = 0;
constexpr int kConfigError = 2;
constexpr int kInfeasible = 3;

}  // namespace

int run_cli(int argc, char** argv) {
  CLI::App app{"Success probability of optimistic exploration in chain MDPs"};
  app.require_subcommand(1);
  app.set_version_flag("--version", kVersion);

  std::optional<std::uint64_t> seed;
  std::optional<unsigned> workers;
  std::string out_dir = ".";
  std::string config_path;
  app.add_option("--seed", seed, "Override the config's master seed");
  app.add_option("--out-dir", out_dir, "Directory for report files")->capture_default_str();
  app.add_option("--workers", workers, "Worker threads for Monte Carlo batches")->check(CLI::PositiveNumber);

  CLI::App* run = app.add_subcommand("run", "Run an experiment and write CSV reports");
  run->add_option("config", config_path, "Experiment config (JSON)")->required();
  CLI::App* adv = app.add_subcommand("advise", "Recommend m and compare chains");
  adv->add_option("config", config_path, "ADVISE config (JSON)")->required();
  run->fallthrough();
  adv->fallthrough();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kConfigError;
  }

  try {
    ExperimentConfig config = load_config(config_path);
    if (seed) config.master_seed = *seed;
    if (workers) config.workers = *workers;
    if (run->parsed()) {
      if (config.experiment == Experiment::Advise) throw ConfigError("config: ADVISE configs go through 'advise'");
      for (const auto& path : run_experiment(config, out_dir)) std::cout << "wrote " << path.string() << "\n";
      return kOk;
    }
    const Advice advice = advise(config);
    std::cout << advice.text;
    const std::filesystem::path report = std::filesystem::path(out_dir) / config.output_path;
    if (report.has_parent_path()) std::filesystem::create_directories(report.parent_path());
    std::ofstream(report) << advice.report.dump(2) << "\n";
    std::cout << "wrote " << report.string() << "\n";
    return advice.infeasible ? kInfeasible : kOk;
  } catch (const ConfigError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kConfigError;
  } catch (const ValidationError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kConfigError;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
}

}  // namespace explore_prob::cli
