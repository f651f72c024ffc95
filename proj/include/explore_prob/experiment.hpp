#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"

#include "explore_prob/advisor.hpp"
#include "explore_prob/chain.hpp"
#include "explore_prob/ops.hpp"

namespace explore_prob::cli {

inline constexpr const char* kVersion = "0.1.0";

enum class Experiment { TravSweepM, TravSweepN, VisitNumbers, Dispersion, ValueDist, SuccessCurve, Maze, Advise };

std::string to_string(Experiment e);

/// A chain as written in a config: either a full spec or a prototype
/// shorthand that can be re-instantiated at other lengths.
struct ChainTemplate {
  std::string id;
  std::optional<ChainSpec> full;
  int hazard = 1;
  Productivity productivity = Productivity::SelfLoop;
  int n = 2;
  std::vector<double> p;  ///< one value (uniform) or n-1 values
  bool random_p = false;
  double r_G = 1.0;
  double r_D = 0.001;
  double gamma = 0.998;
};

struct RdRule {
  enum class Kind { None, Fixed, CriticalFraction };
  Kind kind = Kind::None;
  double value = 0.0;
};

struct RandomPTable {
  std::uint64_t seed = 20240101;
  double low = 0.3;
  double high = 0.7;
};

/// Criterion in configs: STRICT (mapped to the optimal family member),
/// PI(k), SET(ks) or the set of goal-reaching members 0..n-1.
struct CriterionSpec {
  enum class Kind { Strict, Pi, Set, GoalReaching };
  Kind kind = Kind::Strict;
  std::vector<int> ks;
};

struct FailureContext {
  int m = 1;
  double tau_budget_remaining = 0.0;
  std::vector<int> m_alternatives;
  Thresholds thresholds;
};

struct ExperimentConfig {
  Experiment experiment = Experiment::TravSweepM;
  std::vector<ChainTemplate> chains;
  std::optional<MazeSpec> maze;
  std::vector<int> m_values;
  std::vector<int> n_values;
  std::int64_t repetitions = 1000;
  std::int64_t budget = 300000;
  std::uint64_t master_seed = 0;
  std::string output_path;
  RdRule rd_rule;
  RandomPTable random_p;
  CriterionSpec criterion;
  AdvisorMethod method = AdvisorMethod::Approx;
  unsigned workers = 1;
  Navigation navigation = Navigation::ExpectedSteps;
  double residual = 1e-6;
  std::optional<double> delta;
  int m_min = 1;
  int m_max = 30;
  std::optional<FailureContext> failure;
  nlohmann::json raw;
};

/// Throws ConfigError on any schema problem.
ExperimentConfig parse_config(const nlohmann::json& j);
ExperimentConfig load_config(const std::filesystem::path& path);

/// Seed-pinned table of forward probabilities in [low, high].
std::vector<double> random_p_table(const RandomPTable& table, std::size_t length);

/// Concrete spec for a template at length n (rd_rule applied).
ChainSpec instantiate(const ExperimentConfig& config, const ChainTemplate& chain, int n);

FamilyCriterion family_criterion(const CriterionSpec& c, const ChainSpec& spec);

/// Runs the configured experiment and returns the files written.
std::vector<std::filesystem::path> run_experiment(const ExperimentConfig& config,
                                                  const std::filesystem::path& out_dir);

struct Advice {
  std::string text;
  nlohmann::json report;
  bool infeasible = false;
};

Advice advise(const ExperimentConfig& config);

/// Full command-line entry point; returns the process exit code.
int run_cli(int argc, char** argv);

}  // namespace explore_prob::cli
