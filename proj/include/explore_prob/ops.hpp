#pragma once

#include <cstdint>
#include <optional>
#include <vector>

#include "explore_prob/mdp.hpp"

namespace explore_prob {

/// Visit counts of one run. Pairs use FiniteMdp::pair_index.
struct VisitCounts {
  std::size_t num_states = 0;
  std::vector<std::int64_t> n_sa;      ///< per pair
  std::vector<std::int64_t> n_sas;     ///< per pair, times num_states
  std::vector<double> last_reward;     ///< last reward seen on (pair, next)

  std::int64_t count(std::size_t pair) const { return n_sa[pair]; }
  std::int64_t count(std::size_t pair, StateIndex next) const { return n_sas[pair * num_states + next]; }
  std::int64_t total() const;
  /// Sum over next states equals n_sa for every pair.
  bool consistent() const;
};

struct RunRecord {
  std::uint64_t seed = 0;
  std::int64_t steps_taken = 0;
  std::optional<std::int64_t> tau_m;
  bool traverse = false;
  VisitCounts visits;
  std::optional<Policy> output_policy;
  bool budget_exhausted = false;
  std::vector<char> visited;  ///< states arrived at (the start counts)
};

struct SuccessCriterion {
  enum class Kind { Strict, Epsilon, Pi, Set };
  Kind kind = Kind::Strict;
  double epsilon = 0.0;
  Policy target;
  PolicySet set;

  static SuccessCriterion strict() { return {}; }
  static SuccessCriterion eps(double e);
  static SuccessCriterion pi(Policy target);
  static SuccessCriterion in_set(PolicySet set);
};

/// How a fully explored state picks its route to the nearest under-explored
/// state. ExpectedSteps uses the true transition probabilities over visited
/// states; EstimatedModel plans on the observed frequencies (R-MAX style), so
/// routes can drift away from actions that happened to fail early.
enum class Navigation { ExpectedSteps, EstimatedModel };

struct RunOptions {
  /// Traverse means this state was reached; defaults to the last state.
  std::optional<StateIndex> goal_state;
  double tie_window = kTieWindow;
  Navigation navigation = Navigation::ExpectedSteps;
};

/// Optimistic exploration with parameter m until every visited state has all
/// of its actions tried m times (tau_m) or the step budget runs out.
RunRecord run_ops(const FiniteMdp& mdp, int m, std::int64_t budget, std::uint64_t seed,
                  const RunOptions& options = {});

/// Model estimated from counts: observed frequencies and rewards for visited
/// pairs, a zero-reward self-loop for pairs never tried.
FiniteMdp estimated_model(const FiniteMdp& mdp, const VisitCounts& visits);

/// Pairs with at least one visit; for states never arrived at, every action
/// is allowed so the planned policy stays total.
ActionMask output_mask(const FiniteMdp& mdp, const RunRecord& run);

/// Precomputes V* once so many runs can be judged cheaply.
class SuccessJudge {
 public:
  SuccessJudge(const FiniteMdp& mdp, SuccessCriterion criterion);
  bool operator()(const Policy& output) const;
  const ValueVector& optimal_values() const { return optimal_; }

 private:
  const FiniteMdp* mdp_;
  SuccessCriterion criterion_;
  ValueVector optimal_;
};

/// Judges the run's output policy. Throws ValidationError if it has none.
bool classify_success(const RunRecord& run, const FiniteMdp& mdp, const SuccessCriterion& criterion);

/// True when every pair the policy uses was visited at least once.
bool policy_traversed(const FiniteMdp& mdp, const VisitCounts& visits, const Policy& policy);

struct BatchOptions {
  unsigned workers = 1;
  std::optional<StateIndex> goal_state;
  Navigation navigation = Navigation::ExpectedSteps;
  /// Policy whose estimated value at probe_state is sampled from each run.
  std::optional<Policy> probe_policy;
  StateIndex probe_state = 0;
  bool keep_records = false;
  /// Redraws allowed per run index when conditioning on traverse.
  std::int64_t max_redraws = 1000000;
};

struct BatchSummary {
  std::int64_t runs = 0;
  std::int64_t attempts = 0;  ///< includes redrawn non-traversing runs
  double traverse_frequency = 0.0;
  std::int64_t successes = 0;
  double success_frequency = 0.0;
  double wilson_lo = 0.0;
  double wilson_hi = 0.0;
  std::int64_t completed = 0;          ///< runs that reached tau_m
  std::vector<double> visit_mean;      ///< per pair, over completed runs
  std::vector<double> visit_std;
  double tau_mean = 0.0;
  std::vector<char> success_flags;     ///< per run, in seed-index order
  std::vector<char> traverse_flags;
  std::vector<double> probe_values;    ///< one per run with tau_m and traverse; NaN otherwise
  std::vector<RunRecord> records;      ///< only with keep_records
};

BatchSummary monte_carlo(const FiniteMdp& mdp, int m, std::int64_t budget, std::int64_t repetitions,
                         const SuccessCriterion& criterion, bool condition_on_traverse, std::uint64_t master_seed,
                         const BatchOptions& options = {});

}  // namespace explore_prob
