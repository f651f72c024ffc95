#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <vector>

namespace explore_prob {

using StateIndex = std::size_t;
using ActionIndex = std::size_t;
using ValueVector = std::vector<double>;

/// One possible result of taking an action: next state, its probability and
/// the (deterministic) reward paid on that transition.
struct Outcome {
  StateIndex next = 0;
  double probability = 0.0;
  double reward = 0.0;
};

/// Tabular discounted MDP with sparse transition rows.
class FiniteMdp {
 public:
  using Row = std::vector<Outcome>;

  /// rows[s][a] lists the outcomes of action a in state s.
  FiniteMdp(std::vector<std::vector<Row>> rows, double gamma);

  std::size_t num_states() const { return rows_.size(); }
  std::size_t num_actions(StateIndex s) const { return rows_.at(s).size(); }
  std::size_t num_pairs() const { return pair_offset_.back(); }
  /// Flat index of (s, a) in [0, num_pairs()).
  std::size_t pair_index(StateIndex s, ActionIndex a) const { return pair_offset_[s] + a; }
  std::vector<std::size_t> actions_per_state() const;

  const Row& outcomes(StateIndex s, ActionIndex a) const { return rows_.at(s).at(a); }
  double gamma() const { return gamma_; }
  double max_reward() const { return max_reward_; }

  double probability(StateIndex s, ActionIndex a, StateIndex next) const;
  double reward(StateIndex s, ActionIndex a, StateIndex next) const;
  /// Expected immediate reward of (s, a).
  double expected_reward(StateIndex s, ActionIndex a) const;

 private:
  std::vector<std::vector<Row>> rows_;
  std::vector<std::size_t> pair_offset_;
  double gamma_;
  double max_reward_ = 0.0;
};

/// Deterministic stationary policy: one action per state.
struct Policy {
  std::vector<ActionIndex> actions;

  ActionIndex operator[](StateIndex s) const { return actions[s]; }
  bool operator==(const Policy&) const = default;
  auto operator<=>(const Policy&) const = default;
};

struct PolicySet {
  std::vector<Policy> members;
  std::optional<double> epsilon;  ///< set when built as an epsilon-optimal set

  bool contains(const Policy& p) const;
  std::size_t size() const { return members.size(); }
};

/// mask[s][a] != 0 marks (s, a) as allowed.
using ActionMask = std::vector<std::vector<char>>;

struct PlanResult {
  ValueVector values;
  Policy policy;
};

inline constexpr double kDefaultResidual = 1e-6;
inline constexpr double kTieWindow = 1e-12;

void validate_policy(const FiniteMdp& mdp, const Policy& policy);

/// Iteration cap ceil(ln(tol (1-gamma) / r_max) / ln gamma) + margin.
std::size_t iteration_cap(double gamma, double r_max, double tol);

/// Exact evaluation (dense LU) followed by fixed-point refinement until the
/// Bellman residual for the policy is below tol.
ValueVector evaluate_policy(const FiniteMdp& mdp, const Policy& policy, double tol = 1e-10);

/// Value iteration stopped at the given Bellman residual. The returned policy
/// is greedy with respect to one final backup; ties are broken uniformly with
/// the given seed.
PlanResult value_iteration(const FiniteMdp& mdp, double residual_tol = kDefaultResidual,
                           std::uint64_t seed = 0, double tie_window = kTieWindow);

/// Policy iteration with exact evaluation, restricted to allowed actions.
/// Returns the optimal values and one optimal policy (lowest action index on
/// ties). Used where an exact optimum is needed.
PlanResult solve_optimal(const FiniteMdp& mdp, const ActionMask* allowed = nullptr,
                         double tie_window = kTieWindow);

/// Per state, the allowed actions whose one-step backup of values is within
/// the (relative) tie window of the best one.
std::vector<std::vector<ActionIndex>> greedy_action_sets(const FiniteMdp& mdp, const ValueVector& values,
                                                         const ActionMask* allowed = nullptr,
                                                         double tie_window = kTieWindow);

PolicySet enumerate_policies(const FiniteMdp& mdp, std::size_t cap);

PolicySet epsilon_optimal_set(const FiniteMdp& mdp, double epsilon, std::size_t cap);

/// Output planner: maximizes estimated value using visited pairs only and
/// picks uniformly among co-maximal policies.
Policy plan_from_estimate(const FiniteMdp& estimated, const ActionMask& visited_pairs,
                          std::uint64_t rng_seed, double tie_window = kTieWindow);

}  // namespace explore_prob
