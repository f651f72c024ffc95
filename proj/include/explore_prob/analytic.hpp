#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "explore_prob/chain.hpp"

namespace explore_prob {

/// Expected visit numbers, indexed by 1-based chain position minus one.
struct ExpectedVisits {
  std::vector<double> fwd;  ///< expected tries of a+ (the goal action at s_n)
  std::vector<double> bwd;  ///< expected tries of a-
  std::vector<double> lam;  ///< expected non-forward inflow
};

struct SuccessCondition {
  enum class Comparator { Greater, Less };
  int target_k = 0;     ///< family member whose estimated value is constrained
  int state_index = 1;  ///< 1-based chain position of the comparison
  Comparator comparator = Comparator::Greater;
  double critical_value = 0.0;
};

enum class EstimateMethod { ExactEnum, LogNormal, MonteCarlo };

std::string to_string(EstimateMethod method);

struct SuccessEstimate {
  double traverse_prob = 0.0;
  double conditional_prob = 0.0;
  double total = 0.0;
  EstimateMethod method = EstimateMethod::ExactEnum;
  double interval_lo = 0.0;  ///< Monte Carlo only
  double interval_hi = 0.0;
};

/// Success event over the pi^{-+} family: a single member or a set of them.
struct FamilyCriterion {
  std::vector<int> ks;
  bool is_set = false;

  static FamilyCriterion pi(int k) { return {{k}, false}; }
  static FamilyCriterion set(std::vector<int> ks) { return {std::move(ks), true}; }
};

double traverse_probability(const std::vector<double>& forward_p, int m);

ExpectedVisits expected_visit_numbers(const ChainSpec& spec, int m);

double expected_tau_m(const ChainSpec& spec, int m);

/// F_j = prod_{i=j}^{n-1} gamma p_i / (1 - gamma (1 - p_i)); F_n = 1.
double forward_product(const std::vector<double>& p, double gamma, int j);

/// V^{pi_k}(s_j) in closed form; k in 0..n, j in 1..n.
double closed_form_value(const ChainSpec& spec, int k, int j);

/// Value of the goal-seeking suffix at s_n under pi_k (k < n), given F_1
/// (only used when k = 0 and the goal action resets).
double goal_state_value(const ChainSpec& spec, int k, double f1);

bool reward_constraint_holds(const ChainSpec& spec);

std::vector<SuccessCondition> success_conditions(const ChainSpec& spec, int k);

/// Index of the family member that is optimal in the true chain.
int optimal_family_index(const ChainSpec& spec);

inline constexpr std::uint64_t kDefaultEnumerationCap = 10'000'000'000ULL;

/// Size of the outcome space prod_i (round(N_i) + 1).
double enumeration_size(const ChainSpec& spec, int m);

/// Probability mass of each family member k = 0..n being the output, by
/// exhaustive enumeration of the binomial forward-success counts.
std::vector<double> exact_family_distribution(const ChainSpec& spec, int m,
                                              std::uint64_t cap = kDefaultEnumerationCap);

SuccessEstimate exact_success_probability(const ChainSpec& spec, int m, const FamilyCriterion& criterion,
                                          std::uint64_t cap = kDefaultEnumerationCap);

}  // namespace explore_prob
