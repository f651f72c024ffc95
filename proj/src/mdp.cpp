#include "explore_prob/mdp.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>
#include <string>

#include <Eigen/Dense>

#include "explore_prob/errors.hpp"
#include "explore_prob/rng.hpp"

namespace explore_prob {

namespace {

constexpr double kRowSumTolerance = 1e-12;

double backup(const FiniteMdp& mdp, StateIndex s, ActionIndex a, const ValueVector& v) {
  double q = 0.0;
  for (const Outcome& o : mdp.outcomes(s, a)) q += o.probability * (o.reward + mdp.gamma() * v[o.next]);
  return q;
}

bool is_allowed(const ActionMask* allowed, StateIndex s, ActionIndex a) {
  return allowed == nullptr || (*allowed)[s][a] != 0;
}

double tie_scale(double q) { return std::max(1.0, std::fabs(q)); }

ValueVector solve_linear(const FiniteMdp& mdp, const Policy& policy) {
  const auto n = static_cast<Eigen::Index>(mdp.num_states());
  Eigen::MatrixXd a = Eigen::MatrixXd::Identity(n, n);
  Eigen::VectorXd r = Eigen::VectorXd::Zero(n);
  for (StateIndex s = 0; s < mdp.num_states(); ++s) {
    const auto row = static_cast<Eigen::Index>(s);
    for (const Outcome& o : mdp.outcomes(s, policy[s])) {
      a(row, static_cast<Eigen::Index>(o.next)) -= mdp.gamma() * o.probability;
      r(row) += o.probability * o.reward;
    }
  }
  const Eigen::VectorXd x = a.partialPivLu().solve(r);
  return ValueVector(x.data(), x.data() + n);
}

double policy_residual(const FiniteMdp& mdp, const Policy& policy, const ValueVector& v) {
  double worst = 0.0;
  for (StateIndex s = 0; s < mdp.num_states(); ++s)
    worst = std::max(worst, std::fabs(backup(mdp, s, policy[s], v) - v[s]));
  return worst;
}

double optimality_residual(const FiniteMdp& mdp, const ValueVector& v) {
  double worst = 0.0;
  for (StateIndex s = 0; s < mdp.num_states(); ++s) {
    double best = -std::numeric_limits<double>::infinity();
    for (ActionIndex a = 0; a < mdp.num_actions(s); ++a) best = std::max(best, backup(mdp, s, a, v));
    worst = std::max(worst, std::fabs(best - v[s]));
  }
  return worst;
}

Policy first_greedy(const FiniteMdp& mdp, const ValueVector& v) {
  Policy p{std::vector<ActionIndex>(mdp.num_states(), 0)};
  for (StateIndex s = 0; s < mdp.num_states(); ++s) {
    double best = -std::numeric_limits<double>::infinity();
    for (ActionIndex a = 0; a < mdp.num_actions(s); ++a) {
      const double q = backup(mdp, s, a, v);
      if (q > best) {
        best = q;
        p.actions[s] = a;
      }
    }
  }
  return p;
}

}  // namespace

FiniteMdp::FiniteMdp(std::vector<std::vector<Row>> rows, double gamma)
    : rows_(std::move(rows)), gamma_(gamma) {
  if (rows_.empty()) throw ValidationError("FiniteMdp: at least one state required");
  if (!(gamma_ > 0.0 && gamma_ < 1.0)) throw ValidationError("FiniteMdp: gamma must lie strictly inside (0,1)");
  pair_offset_.assign(rows_.size() + 1, 0);
  for (StateIndex s = 0; s < rows_.size(); ++s) {
    if (rows_[s].empty()) throw ValidationError("FiniteMdp: state " + std::to_string(s) + " has no actions");
    pair_offset_[s + 1] = pair_offset_[s] + rows_[s].size();
    for (ActionIndex a = 0; a < rows_[s].size(); ++a) {
      const Row& row = rows_[s][a];
      if (row.empty()) throw ValidationError("FiniteMdp: empty transition row");
      double total = 0.0;
      for (std::size_t i = 0; i < row.size(); ++i) {
        const Outcome& o = row[i];
        if (o.next >= rows_.size()) throw ValidationError("FiniteMdp: next state out of range");
        if (!(o.probability >= 0.0 && o.probability <= 1.0))
          throw ValidationError("FiniteMdp: probability outside [0,1]");
        if (!(o.reward >= 0.0) || !std::isfinite(o.reward))
          throw ValidationError("FiniteMdp: rewards must be finite and nonnegative");
        for (std::size_t j = 0; j < i; ++j)
          if (row[j].next == o.next) throw ValidationError("FiniteMdp: duplicate next state in a row");
        total += o.probability;
        max_reward_ = std::max(max_reward_, o.reward);
      }
      if (std::fabs(total - 1.0) > kRowSumTolerance) {
        std::ostringstream msg;
        msg << "FiniteMdp: row (" << s << "," << a << ") sums to " << total << ", not 1";
        throw ValidationError(msg.str());
      }
    }
  }
}

std::vector<std::size_t> FiniteMdp::actions_per_state() const {
  std::vector<std::size_t> out;
  out.reserve(rows_.size());
  for (const auto& r : rows_) out.push_back(r.size());
  return out;
}

double FiniteMdp::probability(StateIndex s, ActionIndex a, StateIndex next) const {
  for (const Outcome& o : outcomes(s, a))
    if (o.next == next) return o.probability;
  return 0.0;
}

double FiniteMdp::reward(StateIndex s, ActionIndex a, StateIndex next) const {
  for (const Outcome& o : outcomes(s, a))
    if (o.next == next) return o.reward;
  return 0.0;
}

double FiniteMdp::expected_reward(StateIndex s, ActionIndex a) const {
  double r = 0.0;
  for (const Outcome& o : outcomes(s, a)) r += o.probability * o.reward;
  return r;
}

bool PolicySet::contains(const Policy& p) const {
  return std::find(members.begin(), members.end(), p) != members.end();
}

void validate_policy(const FiniteMdp& mdp, const Policy& policy) {
  if (policy.actions.size() != mdp.num_states())
    throw ValidationError("policy must define an action at every state");
  for (StateIndex s = 0; s < mdp.num_states(); ++s)
    if (policy[s] >= mdp.num_actions(s))
      throw ValidationError("policy action out of range at state " + std::to_string(s));
}

std::size_t iteration_cap(double gamma, double r_max, double tol) {
  constexpr std::size_t kMargin = 1000;
  if (r_max <= 0.0) return kMargin;
  const double ratio = tol * (1.0 - gamma) / r_max;
  if (ratio >= 1.0) return kMargin;
  return static_cast<std::size_t>(std::ceil(std::log(ratio) / std::log(gamma))) + kMargin;
}

ValueVector evaluate_policy(const FiniteMdp& mdp, const Policy& policy, double tol) {
  if (!(tol > 0.0)) throw ValidationError("evaluate_policy: tol must be positive");
  validate_policy(mdp, policy);
  ValueVector v = solve_linear(mdp, policy);
  double residual = policy_residual(mdp, policy, v);
  const std::size_t cap = iteration_cap(mdp.gamma(), mdp.max_reward(), tol);
  ValueVector next(v.size());
  for (std::size_t it = 0; residual >= tol && it < cap; ++it) {
    for (StateIndex s = 0; s < mdp.num_states(); ++s) next[s] = backup(mdp, s, policy[s], v);
    v.swap(next);
    residual = policy_residual(mdp, policy, v);
  }
  if (residual >= tol) {
    std::ostringstream msg;
    msg << "evaluate_policy: residual " << residual << " still above tolerance " << tol << " after " << cap
        << " iterations";
    throw ConvergenceError(msg.str());
  }
  return v;
}

std::vector<std::vector<ActionIndex>> greedy_action_sets(const FiniteMdp& mdp, const ValueVector& values,
                                                         const ActionMask* allowed, double tie_window) {
  std::vector<std::vector<ActionIndex>> sets(mdp.num_states());
  std::vector<double> q;
  for (StateIndex s = 0; s < mdp.num_states(); ++s) {
    q.assign(mdp.num_actions(s), 0.0);
    double best = -std::numeric_limits<double>::infinity();
    for (ActionIndex a = 0; a < mdp.num_actions(s); ++a) {
      if (!is_allowed(allowed, s, a)) continue;
      q[a] = backup(mdp, s, a, values);
      best = std::max(best, q[a]);
    }
    for (ActionIndex a = 0; a < mdp.num_actions(s); ++a)
      if (is_allowed(allowed, s, a) && q[a] >= best - tie_window * tie_scale(best)) sets[s].push_back(a);
  }
  return sets;
}

PlanResult value_iteration(const FiniteMdp& mdp, double residual_tol, std::uint64_t seed, double tie_window) {
  if (!(residual_tol > 0.0)) throw ValidationError("value_iteration: residual_tol must be positive");
  const std::size_t cap = iteration_cap(mdp.gamma(), mdp.max_reward(), residual_tol);
  ValueVector v(mdp.num_states(), 0.0), next(mdp.num_states(), 0.0);
  double residual = std::numeric_limits<double>::infinity();
  std::size_t it = 0;
  for (; it < cap && residual >= residual_tol; ++it) {
    residual = 0.0;
    for (StateIndex s = 0; s < mdp.num_states(); ++s) {
      double best = -std::numeric_limits<double>::infinity();
      for (ActionIndex a = 0; a < mdp.num_actions(s); ++a) best = std::max(best, backup(mdp, s, a, v));
      next[s] = best;
      residual = std::max(residual, std::fabs(best - v[s]));
    }
    v.swap(next);
  }
  if (residual >= residual_tol) {
    std::ostringstream msg;
    msg << "value_iteration: residual " << residual << " still above tolerance " << residual_tol << " after "
        << cap << " iterations";
    throw ConvergenceError(msg.str());
  }

  // Polish: the exact value of the greedy policy replaces the iterate when it
  // is at least as good a fixed point.
  const Policy greedy = first_greedy(mdp, v);
  const ValueVector exact = solve_linear(mdp, greedy);
  if (optimality_residual(mdp, exact) <= optimality_residual(mdp, v)) v = exact;

  const auto sets = greedy_action_sets(mdp, v, nullptr, tie_window);
  Rng rng(seed);
  Policy policy{std::vector<ActionIndex>(mdp.num_states(), 0)};
  for (StateIndex s = 0; s < mdp.num_states(); ++s) policy.actions[s] = sets[s][rng.index(sets[s].size())];
  return {std::move(v), std::move(policy)};
}

PlanResult solve_optimal(const FiniteMdp& mdp, const ActionMask* allowed, double tie_window) {
  if (allowed != nullptr && allowed->size() != mdp.num_states())
    throw ValidationError("solve_optimal: mask shape does not match the MDP");
  Policy policy{std::vector<ActionIndex>(mdp.num_states(), 0)};
  for (StateIndex s = 0; s < mdp.num_states(); ++s) {
    if (allowed != nullptr && (*allowed)[s].size() != mdp.num_actions(s))
      throw ValidationError("solve_optimal: mask shape does not match the MDP");
    bool found = false;
    for (ActionIndex a = 0; a < mdp.num_actions(s) && !found; ++a) {
      if (is_allowed(allowed, s, a)) {
        policy.actions[s] = a;
        found = true;
      }
    }
    if (!found) throw ValidationError("state " + std::to_string(s) + " has no allowed action");
  }

  constexpr int kMaxRounds = 10000;
  ValueVector v;
  for (int round = 0; round < kMaxRounds; ++round) {
    v = solve_linear(mdp, policy);
    bool changed = false;
    for (StateIndex s = 0; s < mdp.num_states(); ++s) {
      const double current = backup(mdp, s, policy[s], v);
      double best = current;
      ActionIndex best_a = policy[s];
      for (ActionIndex a = 0; a < mdp.num_actions(s); ++a) {
        if (!is_allowed(allowed, s, a)) continue;
        const double q = backup(mdp, s, a, v);
        if (q > best) {
          best = q;
          best_a = a;
        }
      }
      if (best_a != policy[s] && best > current + tie_window * tie_scale(current)) {
        policy.actions[s] = best_a;
        changed = true;
      }
    }
    if (!changed) return {std::move(v), std::move(policy)};
  }
  throw ConvergenceError("solve_optimal: policy iteration did not stabilize");
}

PolicySet enumerate_policies(const FiniteMdp& mdp, std::size_t cap) {
  std::size_t product = 1;
  bool overflow = false;
  for (StateIndex s = 0; s < mdp.num_states(); ++s) {
    const std::size_t k = mdp.num_actions(s);
    if (product > std::numeric_limits<std::size_t>::max() / k) {
      overflow = true;
      break;
    }
    product *= k;
  }
  if (overflow || product > cap) {
    std::ostringstream msg;
    msg << "enumerate_policies: product of action counts ";
    if (overflow)
      msg << "overflows";
    else
      msg << "is " << product;
    msg << ", above the cap " << cap;
    throw SizeError(msg.str());
  }
  PolicySet set;
  set.members.reserve(product);
  Policy current{std::vector<ActionIndex>(mdp.num_states(), 0)};
  for (std::size_t i = 0; i < product; ++i) {
    set.members.push_back(current);
    for (StateIndex s = 0; s < mdp.num_states(); ++s) {
      if (++current.actions[s] < mdp.num_actions(s)) break;
      current.actions[s] = 0;
    }
  }
  return set;
}

PolicySet epsilon_optimal_set(const FiniteMdp& mdp, double epsilon, std::size_t cap) {
  if (!(epsilon >= 0.0)) throw ValidationError("epsilon_optimal_set: epsilon must be nonnegative");
  PolicySet all = enumerate_policies(mdp, cap);
  const ValueVector best = solve_optimal(mdp).values;
  PolicySet out;
  out.epsilon = epsilon;
  for (Policy& p : all.members) {
    const ValueVector v = evaluate_policy(mdp, p);
    bool ok = true;
    for (StateIndex s = 0; s < mdp.num_states() && ok; ++s)
      ok = v[s] >= best[s] - epsilon - 1e-9 * tie_scale(best[s]);
    if (ok) out.members.push_back(std::move(p));
  }
  return out;
}

Policy plan_from_estimate(const FiniteMdp& estimated, const ActionMask& visited_pairs, std::uint64_t rng_seed,
                          double tie_window) {
  if (visited_pairs.size() != estimated.num_states())
    throw ValidationError("plan_from_estimate: mask shape does not match the model");
  for (StateIndex s = 0; s < estimated.num_states(); ++s) {
    if (visited_pairs[s].size() != estimated.num_actions(s))
      throw ValidationError("plan_from_estimate: mask shape does not match the model");
    if (std::none_of(visited_pairs[s].begin(), visited_pairs[s].end(), [](char c) { return c != 0; }))
      throw ValidationError("plan_from_estimate: state " + std::to_string(s) +
                            " has no visited action and cannot appear in the output");
  }
  const PlanResult optimum = solve_optimal(estimated, &visited_pairs, tie_window);
  const auto sets = greedy_action_sets(estimated, optimum.values, &visited_pairs, tie_window);
  Rng rng(rng_seed);
  Policy policy{std::vector<ActionIndex>(estimated.num_states(), 0)};
  for (StateIndex s = 0; s < estimated.num_states(); ++s) policy.actions[s] = sets[s][rng.index(sets[s].size())];
  return policy;
}

}  // namespace explore_prob
