#include "explore_prob/analytic.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "explore_prob/errors.hpp"
#include "explore_prob/stats.hpp"

namespace explore_prob {

namespace {

std::size_t at(int i) { return static_cast<std::size_t>(i - 1); }

void check_k(const ChainSpec& spec, int k) {
  if (k < 0 || k > spec.n) throw ValidationError("family index k must lie in 0..n");
}

// -1, 0 or +1 for a < b, a == b (relative 1e-12), a > b.
int compare(double a, double b) {
  const double diff = a - b;
  if (std::fabs(diff) <= 1e-12 * std::max(std::fabs(a), std::fabs(b))) return 0;
  return diff > 0.0 ? 1 : -1;
}

// Family members consistent with the comparison signs d[1..n], where d[i]
// compares the forward-seeking value at s_i against the backward one.
// Strictly satisfied members win; otherwise the tied ones share.
void collect_winners(const std::vector<int>& d, int n, std::vector<int>& out) {
  out.clear();
  for (int k = 0; k <= n; ++k)
    if ((k == 0 || d[k] < 0) && (k == n || d[k + 1] > 0)) out.push_back(k);
  if (!out.empty()) return;
  for (int k = 0; k <= n; ++k)
    if ((k == 0 || d[k] <= 0) && (k == n || d[k + 1] >= 0)) out.push_back(k);
}

}  // namespace

std::string to_string(EstimateMethod method) {
  switch (method) {
    case EstimateMethod::ExactEnum: return "EXACT_ENUM";
    case EstimateMethod::LogNormal: return "LOGNORMAL";
    case EstimateMethod::MonteCarlo: return "MONTE_CARLO";
  }
  return "UNKNOWN";
}

double traverse_probability(const std::vector<double>& forward_p, int m) {
  if (m < 0) throw ValidationError("traverse_probability: m must be nonnegative");
  double prob = 1.0;
  for (double p : forward_p) {
    if (!(p > 0.0 && p <= 1.0)) throw ValidationError("traverse_probability: p outside (0,1]");
    prob *= 1.0 - std::pow(1.0 - p, m);
  }
  return prob;
}

ExpectedVisits expected_visit_numbers(const ChainSpec& spec, int m) {
  validate_chain_spec(spec);
  if (m < 1) throw ValidationError("expected_visit_numbers: m must be at least 1");
  const int n = spec.n;
  const double md = m;
  ExpectedVisits ev;
  ev.fwd.assign(at(n) + 1, 0.0);
  ev.bwd.assign(at(n) + 1, md);
  ev.lam.assign(at(n) + 1, 0.0);
  ev.fwd[at(n)] = md;

  // Expected a- arrivals into each state from states above it.
  std::vector<double> back_inflow(at(n) + 1, 0.0);
  for (int j = 2; j <= n; ++j) back_inflow[at(backward_target(spec, j))] += spec.backward_p[at(j)] * md;

  // flow = p_{i} * N_i^+, solved from the top. At the goal the lemma's
  // lambda is the goal self-loop count (G=1) or 0 (reset); the G=1 chain also
  // ends on one extra arrival at the goal, hence the +1.
  double flow = spec.productivity == Productivity::SelfLoop ? md + 1.0 : 2.0 * md;
  for (int i = n - 1; i >= 1; --i) {
    if (flow < 0.0) throw ValidationError("expected_visit_numbers: hazard pattern gives negative flow");
    ev.fwd[at(i)] = flow / spec.forward_p[at(i)];
    if (i > 1) flow += spec.backward_p[at(i)] * md - back_inflow[at(i)];
  }
  ev.lam[0] = ev.fwd[0] + ev.bwd[0];
  for (int i = 2; i <= n; ++i)
    // Residual of the balance; clamp the rounding noise at zero inflow.
    ev.lam[at(i)] = std::max(0.0, ev.fwd[at(i)] + ev.bwd[at(i)] - spec.forward_p[at(i - 1)] * ev.fwd[at(i - 1)]);
  return ev;
}

double expected_tau_m(const ChainSpec& spec, int m) {
  const ExpectedVisits ev = expected_visit_numbers(spec, m);
  double total = 0.0;
  for (std::size_t i = 0; i < ev.fwd.size(); ++i) total += ev.fwd[i] + ev.bwd[i];
  return total;
}

double forward_product(const std::vector<double>& p, double gamma, int j) {
  const int n = static_cast<int>(p.size()) + 1;
  if (j < 1 || j > n) throw ValidationError("forward_product: j out of range");
  double f = 1.0;
  for (int i = j; i <= n - 1; ++i) {
    const double pi = p[at(i)];
    f *= gamma * pi / (1.0 - gamma * (1.0 - pi));
  }
  return f;
}

double goal_state_value(const ChainSpec& spec, int k, double f1) {
  const double g = spec.gamma;
  if (spec.productivity == Productivity::SelfLoop) return spec.r_G / (1.0 - g);
  if (k == 0) return spec.r_G / (1.0 - g * f1);
  return spec.r_G + g * spec.r_D / (1.0 - g);
}

double closed_form_value(const ChainSpec& spec, int k, int j) {
  check_k(spec, k);
  if (j < 1 || j > spec.n) throw ValidationError("closed_form_value: j must lie in 1..n");
  const double g = spec.gamma;
  if (j <= k) {
    // Backward prefix: s1 collects r_D forever; s_j falls back to its target.
    std::vector<double> back(at(j) + 1, 0.0);
    back[0] = spec.r_D / (1.0 - g);
    for (int i = 2; i <= j; ++i) {
      const double b = spec.backward_p[at(i)];
      back[at(i)] = b * g * back[at(backward_target(spec, i))] / (1.0 - g * (1.0 - b));
    }
    return back[at(j)];
  }
  const double f1 = forward_product(spec.forward_p, g, 1);
  return forward_product(spec.forward_p, g, j) * goal_state_value(spec, k, f1);
}

bool reward_constraint_holds(const ChainSpec& spec) {
  validate_chain_spec(spec);
  const double g = spec.gamma;
  const double f1 = forward_product(spec.forward_p, g, 1);
  if (spec.productivity == Productivity::SelfLoop) return f1 * spec.r_G > spec.r_D;
  return f1 * spec.r_G / (1.0 - g * f1) > spec.r_D / (1.0 - g);
}

std::vector<SuccessCondition> success_conditions(const ChainSpec& spec, int k) {
  validate_chain_spec(spec);
  check_k(spec, k);
  using C = SuccessCondition::Comparator;
  std::vector<SuccessCondition> out;
  // (1): backward beats the forward-seeking pi_{k-1} at s_k.
  if (k >= 1) out.push_back({k - 1, k, C::Less, closed_form_value(spec, k, k)});
  // (2): pi_k's forward value at s_{k+1} beats backing off there.
  if (k < spec.n) out.push_back({k, k + 1, C::Greater, closed_form_value(spec, k + 1, k + 1)});
  return out;
}

int optimal_family_index(const ChainSpec& spec) {
  validate_chain_spec(spec);
  const int n = spec.n;
  std::vector<int> d(static_cast<std::size_t>(n) + 2, 0);
  for (int i = 1; i <= n; ++i) d[static_cast<std::size_t>(i)] = compare(closed_form_value(spec, i - 1, i), closed_form_value(spec, i, i));
  std::vector<int> winners;
  collect_winners(d, n, winners);
  return winners.empty() ? 0 : winners.front();
}

double enumeration_size(const ChainSpec& spec, int m) {
  const ExpectedVisits ev = expected_visit_numbers(spec, m);
  double size = 1.0;
  for (int i = 1; i < spec.n; ++i) size *= std::floor(ev.fwd[at(i)] + 0.5) + 1.0;
  return size;
}

namespace {

// Binomial(count, p) for the forward successes, conditioned on the traverse
// event: at least one of the first `first` tries succeeded. Given b successes
// in count exchangeable tries, all of them miss the first `first` tries with
// probability C(count-first, b) / C(count, b).
std::vector<double> traverse_conditioned_pmf(std::int64_t count, std::int64_t first, double p) {
  std::vector<double> pmf = stats::binomial_pmf_table(count, p);
  double miss = 1.0;
  for (std::int64_t b = 0; b <= count; ++b) {
    pmf[static_cast<std::size_t>(b)] *= 1.0 - miss;
    miss = b < count - first ? miss * static_cast<double>(count - first - b) / static_cast<double>(count - b) : 0.0;
  }
  const double reach = -std::expm1(static_cast<double>(first) * std::log1p(-p));
  for (double& x : pmf) x = p == 1.0 ? x : x / reach;
  return pmf;
}

// Enumerates forward-success counts b_{n-1}..b_2 depth first; the b_1 axis is
// resolved by binary search because the sign at s1 is monotone in b_1.
class FamilyEnumerator {
 public:
  explicit FamilyEnumerator(const ChainSpec& spec, int m) : spec_(spec), n_(spec.n) {
    const ExpectedVisits ev = expected_visit_numbers(spec, m);
    const double g = spec.gamma;
    y_.resize(static_cast<std::size_t>(n_));
    pmf_.resize(static_cast<std::size_t>(n_));
    for (int i = 1; i < n_; ++i) {
      const auto count = std::max<std::int64_t>(1, static_cast<std::int64_t>(std::floor(ev.fwd[at(i)] + 0.5)));
      const double p = spec.forward_p[at(i)];
      pmf_[at(i)] = traverse_conditioned_pmf(count, std::min<std::int64_t>(m, count), p);
      auto& ys = y_[at(i)];
      ys.resize(static_cast<std::size_t>(count) + 1);
      for (std::int64_t b = 0; b <= count; ++b) {
        const double phat = static_cast<double>(b) / static_cast<double>(count);
        ys[static_cast<std::size_t>(b)] = g * phat / (1.0 - g * (1.0 - phat));
      }
    }
    backward_.assign(static_cast<std::size_t>(n_) + 1, 0.0);
    for (int i = 1; i <= n_; ++i) backward_[static_cast<std::size_t>(i)] = closed_form_value(spec, i, i);
    suffix_goal_ = goal_state_value(spec, 1, 0.0);
    d_.assign(static_cast<std::size_t>(n_) + 2, 0);
    mass_.assign(static_cast<std::size_t>(n_) + 1, 0.0);
    const auto& p1 = pmf_[0];
    prefix_.assign(p1.size() + 1, 0.0);
    for (std::size_t b = 0; b < p1.size(); ++b) prefix_[b + 1] = prefix_[b] + p1[b];
  }

  std::vector<double> run() {
    d_[static_cast<std::size_t>(n_)] = compare(suffix_goal_, backward_[static_cast<std::size_t>(n_)]);
    descend(n_ - 1, 1.0, 1.0);
    return mass_;
  }

 private:
  // Value of pi_0 at s1 given F_1.
  double start_value(double f1) const {
    if (spec_.productivity == Productivity::SelfLoop) return f1 * suffix_goal_;
    return f1 * spec_.r_G / (1.0 - spec_.gamma * f1);
  }

  void descend(int i, double f_above, double prob) {
    if (i == 1) {
      leaf(f_above, prob);
      return;
    }
    const auto& ys = y_[at(i)];
    const auto& ps = pmf_[at(i)];
    for (std::size_t b = 0; b < ys.size(); ++b) {
      const double weight = prob * ps[b];
      if (weight == 0.0) continue;
      const double f = ys[b] * f_above;
      d_[static_cast<std::size_t>(i)] = compare(f * suffix_goal_, backward_[static_cast<std::size_t>(i)]);
      descend(i - 1, f, weight);
    }
  }

  void leaf(double f2, double prob) {
    const auto& ys = y_[0];
    const double b1 = backward_[1];
    auto sign_at = [&](std::size_t b) { return compare(start_value(ys[b] * f2), b1); };
    std::size_t lo = 0, hi = ys.size();
    // first index with sign >= 0
    {
      std::size_t l = 0, r = ys.size();
      while (l < r) {
        const std::size_t mid = (l + r) / 2;
        if (sign_at(mid) >= 0) r = mid; else l = mid + 1;
      }
      lo = l;
    }
    {
      std::size_t l = lo, r = ys.size();
      while (l < r) {
        const std::size_t mid = (l + r) / 2;
        if (sign_at(mid) > 0) r = mid; else l = mid + 1;
      }
      hi = l;
    }
    const double below = prefix_[lo];
    const double tied = prefix_[hi] - prefix_[lo];
    const double above = prefix_.back() - prefix_[hi];
    assign(-1, prob * below);
    assign(0, prob * tied);
    assign(1, prob * above);
  }

  void assign(int sign_at_start, double weight) {
    if (weight <= 0.0) return;
    d_[1] = sign_at_start;
    collect_winners(d_, n_, winners_);
    if (winners_.empty()) return;
    const double share = weight / static_cast<double>(winners_.size());
    for (int k : winners_) mass_[static_cast<std::size_t>(k)] += share;
  }

  const ChainSpec& spec_;
  int n_;
  std::vector<std::vector<double>> y_;
  std::vector<std::vector<double>> pmf_;
  std::vector<double> prefix_;
  std::vector<double> backward_;
  double suffix_goal_ = 0.0;
  std::vector<int> d_;
  std::vector<double> mass_;
  std::vector<int> winners_;
};

}  // namespace

std::vector<double> exact_family_distribution(const ChainSpec& spec, int m, std::uint64_t cap) {
  validate_chain_spec(spec);
  const double size = enumeration_size(spec, m);
  if (size > static_cast<double>(cap)) {
    std::ostringstream msg;
    msg << "exact enumeration needs " << size << " outcome vectors, above the cap " << cap
        << "; use the log-normal approximation instead";
    throw SizeError(msg.str());
  }
  return FamilyEnumerator(spec, m).run();
}

SuccessEstimate exact_success_probability(const ChainSpec& spec, int m, const FamilyCriterion& criterion,
                                          std::uint64_t cap) {
  if (criterion.ks.empty()) throw ValidationError("criterion needs at least one family index");
  for (int k : criterion.ks) check_k(spec, k);
  const std::vector<double> mass = exact_family_distribution(spec, m, cap);
  std::vector<int> ks(criterion.ks);
  std::sort(ks.begin(), ks.end());
  ks.erase(std::unique(ks.begin(), ks.end()), ks.end());
  double conditional = 0.0;
  for (int k : ks) conditional += mass[static_cast<std::size_t>(k)];
  SuccessEstimate est;
  est.conditional_prob = std::clamp(conditional, 0.0, 1.0);
  est.traverse_prob = traverse_probability(spec.forward_p, m);
  est.total = est.traverse_prob * est.conditional_prob;
  est.method = EstimateMethod::ExactEnum;
  return est;
}

}  // namespace explore_prob
