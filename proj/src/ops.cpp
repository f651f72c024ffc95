#include "explore_prob/ops.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <exception>
#include <limits>
#include <mutex>
#include <string>
#include <thread>

#include "explore_prob/errors.hpp"
#include "explore_prob/rng.hpp"
#include "explore_prob/stats.hpp"

namespace explore_prob {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

double scale(double x) { return std::max(1.0, std::fabs(x)); }

// Mutable state of one exploration run.
class Explorer {
 public:
  Explorer(const FiniteMdp& mdp, int m, std::uint64_t seed, const RunOptions& options)
      : mdp_(mdp), m_(m), rng_(seed), options_(options), succ_(mdp.num_pairs()) {
    const std::size_t S = mdp.num_states();
    record_.seed = seed;
    record_.visits.num_states = S;
    record_.visits.n_sa.assign(mdp.num_pairs(), 0);
    record_.visits.n_sas.assign(mdp.num_pairs() * S, 0);
    record_.visits.last_reward.assign(mdp.num_pairs() * S, 0.0);
    record_.visited.assign(S, 0);
    deficit_.resize(S);
    for (StateIndex s = 0; s < S; ++s) deficit_[s] = static_cast<int>(mdp.num_actions(s));
    steps_to_target_.assign(S, kInf);
    route_.resize(S);
  }

  RunRecord run(std::int64_t budget) {
    arrive(0);
    StateIndex current = 0;
    while (true) {
      if (pending_ == 0) {
        record_.tau_m = record_.steps_taken;
        break;
      }
      if (record_.steps_taken >= budget) {
        record_.budget_exhausted = true;
        break;
      }
      const ActionIndex a = choose(current);
      current = step(current, a);
    }
    const StateIndex goal = options_.goal_state.value_or(mdp_.num_states() - 1);
    record_.traverse = record_.visited.at(goal) != 0;
    if (record_.tau_m) {
      const FiniteMdp estimate = estimated_model(mdp_, record_.visits);
      record_.output_policy =
          plan_from_estimate(estimate, output_mask(mdp_, record_), rng_.next(), options_.tie_window);
    }
    return std::move(record_);
  }

 private:
  void arrive(StateIndex s) {
    if (record_.visited[s]) return;
    record_.visited[s] = 1;
    ++pending_;
    plan_stale_ = true;
  }

  ActionIndex choose(StateIndex s) {
    const std::size_t actions = mdp_.num_actions(s);
    if (deficit_[s] > 0) {
      // Uniform among the under-explored actions here.
      std::size_t pick = rng_.index(static_cast<std::size_t>(deficit_[s]));
      for (ActionIndex a = 0; a < actions; ++a) {
        if (record_.visits.n_sa[mdp_.pair_index(s, a)] < m_) {
          if (pick == 0) return a;
          --pick;
        }
      }
    }
    if (plan_stale_) {
      replan();
      plan_stale_ = false;
    }
    const auto& options = route_[s];
    if (options.empty()) return rng_.index(actions);
    return options[rng_.index(options.size())];
  }

  StateIndex step(StateIndex s, ActionIndex a) {
    const auto& row = mdp_.outcomes(s, a);
    const double u = rng_.uniform();
    double acc = 0.0;
    const Outcome* chosen = &row.back();
    for (const Outcome& o : row) {
      acc += o.probability;
      if (u < acc) {
        chosen = &o;
        break;
      }
    }
    const std::size_t pair = mdp_.pair_index(s, a);
    const std::size_t slot = pair * mdp_.num_states() + chosen->next;
    VisitCounts& v = record_.visits;
    ++v.n_sa[pair];
    if (v.n_sas[slot]++ == 0) succ_[pair].push_back(chosen->next);
    v.last_reward[slot] = chosen->reward;
    if (v.n_sa[pair] == m_) {
      if (--deficit_[s] == 0) --pending_;
      plan_stale_ = true;
    }
    ++record_.steps_taken;
    arrive(chosen->next);
    return chosen->next;
  }

  // Expected number of steps to reach a visited, under-explored state.
  // Self-loops are folded in analytically: q = (1 + sum_{s' != s} P(s') T(s')) / (1 - P(s)).
  double route_cost(StateIndex s, ActionIndex a) const {
    if (options_.navigation == Navigation::ExpectedSteps) {
      double stay = 0.0, onward = 0.0;
      for (const Outcome& o : mdp_.outcomes(s, a)) {
        if (o.next == s) {
          stay = o.probability;
        } else {
          if (steps_to_target_[o.next] == kInf) return kInf;
          onward += o.probability * steps_to_target_[o.next];
        }
      }
      if (stay >= 1.0) return kInf;
      return (1.0 + onward) / (1.0 - stay);
    }
    const std::size_t pair = mdp_.pair_index(s, a);
    const VisitCounts& v = record_.visits;
    const double total = static_cast<double>(v.n_sa[pair]);
    double stay = 0.0, onward = 0.0;
    for (StateIndex next : succ_[pair]) {
      const double prob = static_cast<double>(v.n_sas[pair * mdp_.num_states() + next]) / total;
      if (next == s) {
        stay = prob;
      } else {
        if (steps_to_target_[next] == kInf) return kInf;
        onward += prob * steps_to_target_[next];
      }
    }
    if (stay >= 1.0) return kInf;
    return (1.0 + onward) / (1.0 - stay);
  }

  void replan() {
    const std::size_t S = mdp_.num_states();
    for (StateIndex s = 0; s < S; ++s)
      steps_to_target_[s] = (record_.visited[s] && deficit_[s] > 0) ? 0.0 : kInf;
    const std::size_t max_sweeps = 10 * S + 100;
    for (std::size_t sweep = 0; sweep < max_sweeps; ++sweep) {
      bool changed = false;
      for (std::size_t k = 0; k < S; ++k) {
        const StateIndex s = sweep % 2 == 0 ? k : S - 1 - k;
        if (!record_.visited[s] || deficit_[s] > 0) continue;
        double best = kInf;
        for (ActionIndex a = 0; a < mdp_.num_actions(s); ++a) best = std::min(best, route_cost(s, a));
        if (best < steps_to_target_[s] && (steps_to_target_[s] == kInf ||
                                           steps_to_target_[s] - best > 1e-12 * scale(best))) {
          steps_to_target_[s] = best;
          changed = true;
        }
      }
      if (!changed) break;
    }
    for (StateIndex s = 0; s < S; ++s) {
      route_[s].clear();
      if (!record_.visited[s] || deficit_[s] > 0 || steps_to_target_[s] == kInf) continue;
      const double best = steps_to_target_[s];
      for (ActionIndex a = 0; a < mdp_.num_actions(s); ++a)
        if (route_cost(s, a) <= best + 1e-9 * scale(best)) route_[s].push_back(a);
    }
  }

  const FiniteMdp& mdp_;
  const int m_;
  Rng rng_;
  RunOptions options_;
  RunRecord record_;
  std::vector<int> deficit_;  // actions still below m, per state
  std::int64_t pending_ = 0;  // visited states with deficit > 0
  bool plan_stale_ = true;
  std::vector<std::vector<StateIndex>> succ_;  // observed next states per pair
  std::vector<double> steps_to_target_;
  std::vector<std::vector<ActionIndex>> route_;
};

}  // namespace

std::int64_t VisitCounts::total() const {
  std::int64_t t = 0;
  for (auto c : n_sa) t += c;
  return t;
}

bool VisitCounts::consistent() const {
  for (std::size_t pair = 0; pair < n_sa.size(); ++pair) {
    std::int64_t sum = 0;
    for (StateIndex s = 0; s < num_states; ++s) sum += n_sas[pair * num_states + s];
    if (sum != n_sa[pair]) return false;
  }
  return true;
}

SuccessCriterion SuccessCriterion::eps(double e) {
  if (!(e >= 0.0)) throw ValidationError("epsilon must be nonnegative");
  SuccessCriterion c;
  c.kind = Kind::Epsilon;
  c.epsilon = e;
  return c;
}

SuccessCriterion SuccessCriterion::pi(Policy target) {
  SuccessCriterion c;
  c.kind = Kind::Pi;
  c.target = std::move(target);
  return c;
}

SuccessCriterion SuccessCriterion::in_set(PolicySet set) {
  SuccessCriterion c;
  c.kind = Kind::Set;
  c.set = std::move(set);
  return c;
}

RunRecord run_ops(const FiniteMdp& mdp, int m, std::int64_t budget, std::uint64_t seed,
                  const RunOptions& options) {
  if (m < 1) throw ValidationError("run_ops: m must be at least 1");
  if (budget < 1) throw ValidationError("run_ops: budget must be at least 1");
  if (options.goal_state && *options.goal_state >= mdp.num_states())
    throw ValidationError("run_ops: goal state out of range");
  Explorer explorer(mdp, m, seed, options);
  return explorer.run(budget);
}

FiniteMdp estimated_model(const FiniteMdp& mdp, const VisitCounts& visits) {
  const std::size_t S = mdp.num_states();
  std::vector<std::vector<FiniteMdp::Row>> rows(S);
  for (StateIndex s = 0; s < S; ++s) {
    rows[s].resize(mdp.num_actions(s));
    for (ActionIndex a = 0; a < mdp.num_actions(s); ++a) {
      const std::size_t pair = mdp.pair_index(s, a);
      const std::int64_t total = visits.n_sa[pair];
      if (total == 0) {
        rows[s][a] = {{s, 1.0, 0.0}};
        continue;
      }
      for (StateIndex next = 0; next < S; ++next) {
        const std::int64_t c = visits.n_sas[pair * S + next];
        if (c > 0)
          rows[s][a].push_back({next, static_cast<double>(c) / static_cast<double>(total),
                                visits.last_reward[pair * S + next]});
      }
    }
  }
  return FiniteMdp(std::move(rows), mdp.gamma());
}

ActionMask output_mask(const FiniteMdp& mdp, const RunRecord& run) {
  ActionMask mask(mdp.num_states());
  for (StateIndex s = 0; s < mdp.num_states(); ++s) {
    mask[s].assign(mdp.num_actions(s), 0);
    for (ActionIndex a = 0; a < mdp.num_actions(s); ++a)
      mask[s][a] = (!run.visited[s] || run.visits.n_sa[mdp.pair_index(s, a)] > 0) ? 1 : 0;
  }
  return mask;
}

SuccessJudge::SuccessJudge(const FiniteMdp& mdp, SuccessCriterion criterion)
    : mdp_(&mdp), criterion_(std::move(criterion)) {
  using Kind = SuccessCriterion::Kind;
  if (criterion_.kind == Kind::Strict || criterion_.kind == Kind::Epsilon)
    optimal_ = solve_optimal(mdp).values;
  if (criterion_.kind == Kind::Pi) validate_policy(mdp, criterion_.target);
}

bool SuccessJudge::operator()(const Policy& output) const {
  using Kind = SuccessCriterion::Kind;
  switch (criterion_.kind) {
    case Kind::Pi:
      return output == criterion_.target;
    case Kind::Set:
      return criterion_.set.contains(output);
    case Kind::Strict:
    case Kind::Epsilon: {
      const ValueVector v = evaluate_policy(*mdp_, output, 1e-9);
      const double eps = criterion_.kind == Kind::Strict ? 0.0 : criterion_.epsilon;
      for (StateIndex s = 0; s < v.size(); ++s)
        if (v[s] < optimal_[s] - eps - 1e-9 * scale(optimal_[s])) return false;
      return true;
    }
  }
  return false;
}

bool classify_success(const RunRecord& run, const FiniteMdp& mdp, const SuccessCriterion& criterion) {
  if (!run.output_policy) throw ValidationError("classify_success: run has no output policy");
  return SuccessJudge(mdp, criterion)(*run.output_policy);
}

bool policy_traversed(const FiniteMdp& mdp, const VisitCounts& visits, const Policy& policy) {
  for (StateIndex s = 0; s < mdp.num_states(); ++s)
    if (visits.n_sa[mdp.pair_index(s, policy[s])] == 0) return false;
  return true;
}

namespace {

struct RunResult {
  std::int64_t attempts = 0;
  bool traverse = false;
  bool success = false;
  bool completed = false;
  std::int64_t tau = 0;
  double probe = std::numeric_limits<double>::quiet_NaN();
  std::vector<std::int64_t> n_sa;
  std::optional<RunRecord> record;
};

}  // namespace

BatchSummary monte_carlo(const FiniteMdp& mdp, int m, std::int64_t budget, std::int64_t repetitions,
                         const SuccessCriterion& criterion, bool condition_on_traverse, std::uint64_t master_seed,
                         const BatchOptions& options) {
  if (repetitions < 1) throw ValidationError("monte_carlo: repetitions must be at least 1");
  if (options.probe_policy) validate_policy(mdp, *options.probe_policy);
  const SuccessJudge judge(mdp, criterion);
  RunOptions run_options;
  run_options.goal_state = options.goal_state;
  run_options.navigation = options.navigation;

  const auto count = static_cast<std::size_t>(repetitions);
  std::vector<RunResult> results(count);
  auto work = [&](std::size_t i) {
    RunResult& out = results[i];
    const std::uint64_t base = stream_seed(master_seed, i);
    RunRecord rec;
    for (std::int64_t attempt = 0;; ++attempt) {
      if (attempt > options.max_redraws)
        throw ConvergenceError("monte_carlo: no traversing run after " + std::to_string(attempt) + " redraws");
      const std::uint64_t seed = attempt == 0 ? base : stream_seed(base, static_cast<std::uint64_t>(attempt));
      rec = run_ops(mdp, m, budget, seed, run_options);
      ++out.attempts;
      if (!condition_on_traverse || rec.traverse) break;
    }
    out.traverse = rec.traverse;
    out.completed = rec.tau_m.has_value();
    if (out.completed) {
      out.tau = *rec.tau_m;
      out.n_sa = rec.visits.n_sa;
      const Policy& policy = *rec.output_policy;
      out.success = policy_traversed(mdp, rec.visits, policy) && judge(policy);
      if (options.probe_policy && rec.traverse) {
        const FiniteMdp estimate = estimated_model(mdp, rec.visits);
        out.probe = evaluate_policy(estimate, *options.probe_policy, 1e-9).at(options.probe_state);
      }
    }
    if (options.keep_records) out.record = std::move(rec);
  };

  const unsigned workers = std::max(1u, options.workers);
  if (workers == 1) {
    for (std::size_t i = 0; i < count; ++i) work(i);
  } else {
    std::atomic<std::size_t> next{0};
    std::exception_ptr failure;
    std::mutex failure_mutex;
    std::vector<std::thread> pool;
    for (unsigned w = 0; w < workers; ++w) {
      pool.emplace_back([&] {
        for (std::size_t i = next++; i < count; i = next++) {
          try {
            work(i);
          } catch (...) {
            std::lock_guard<std::mutex> lock(failure_mutex);
            if (!failure) failure = std::current_exception();
          }
        }
      });
    }
    for (auto& t : pool) t.join();
    if (failure) std::rethrow_exception(failure);
  }

  BatchSummary summary;
  summary.runs = repetitions;
  const std::size_t pairs = mdp.num_pairs();
  std::vector<double> sum(pairs, 0.0), sum_sq(pairs, 0.0);
  std::int64_t traversed = 0;
  double tau_total = 0.0;
  for (RunResult& r : results) {
    summary.attempts += r.attempts;
    traversed += r.traverse ? 1 : 0;
    summary.successes += r.success ? 1 : 0;
    summary.success_flags.push_back(r.success ? 1 : 0);
    summary.traverse_flags.push_back(r.traverse ? 1 : 0);
    summary.probe_values.push_back(r.probe);
    if (r.completed) {
      ++summary.completed;
      tau_total += static_cast<double>(r.tau);
      for (std::size_t p = 0; p < pairs; ++p) {
        const auto c = static_cast<double>(r.n_sa[p]);
        sum[p] += c;
        sum_sq[p] += c * c;
      }
    }
    if (r.record) summary.records.push_back(std::move(*r.record));
  }
  summary.traverse_frequency = static_cast<double>(traversed) / static_cast<double>(repetitions);
  summary.success_frequency = static_cast<double>(summary.successes) / static_cast<double>(repetitions);
  std::tie(summary.wilson_lo, summary.wilson_hi) = stats::wilson_interval(summary.successes, repetitions, 0.95);
  summary.visit_mean.assign(pairs, 0.0);
  summary.visit_std.assign(pairs, 0.0);
  if (summary.completed > 0) {
    const auto k = static_cast<double>(summary.completed);
    summary.tau_mean = tau_total / k;
    for (std::size_t p = 0; p < pairs; ++p) {
      summary.visit_mean[p] = sum[p] / k;
      if (summary.completed > 1)
        summary.visit_std[p] = std::sqrt(std::max(0.0, (sum_sq[p] - k * summary.visit_mean[p] * summary.visit_mean[p]) / (k - 1.0)));
    }
  }
  return summary;
}

}  // namespace explore_prob
