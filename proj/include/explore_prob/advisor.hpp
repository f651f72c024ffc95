#pragma once

#include <optional>
#include <string>
#include <vector>

#include "explore_prob/analytic.hpp"

namespace explore_prob {

enum class AdvisorMethod { Exact, Approx };

struct AdvisorQuery {
  ChainSpec spec;
  FamilyCriterion criterion = FamilyCriterion::pi(0);
  double delta = 0.05;
  int m_min = 1;
  int m_max = 30;
  AdvisorMethod method = AdvisorMethod::Approx;
};

struct BestM {
  int m = 0;
  double expected_tau = 0.0;
  double achieved_p = 0.0;
  EstimateMethod method = EstimateMethod::LogNormal;  ///< after any fallback
};

struct SweepPoint {
  int m = 0;
  double expected_tau = 0.0;
  double p_succ = 0.0;
  EstimateMethod method = EstimateMethod::LogNormal;
};

/// Success probability for one m; EXACT falls back to the log-normal
/// approximation when enumeration is too large.
SweepPoint evaluate_m(const AdvisorQuery& query, int m);

std::vector<SweepPoint> sweep(const AdvisorQuery& query);

/// Cheapest m (by expected tau_m) whose success probability is >= 1 - delta;
/// nullopt when no m in range qualifies.
std::optional<BestM> best_m(const AdvisorQuery& query);

enum class Verdict { AEasier, BEasier, Incomparable };

std::string to_string(Verdict v);

struct HardnessReport {
  std::optional<BestM> a;
  std::optional<BestM> b;
  Verdict verdict = Verdict::Incomparable;
};

HardnessReport compare_hardness(const AdvisorQuery& query_a, const AdvisorQuery& query_b);

enum class Situation { A, B, C, D };

struct Thresholds {
  double high = 0.95;
  double acceptable = 0.8;
};

struct SituationReport {
  Situation situation = Situation::D;
  double current_p = 0.0;
  std::optional<int> suggested_m;
  std::string narrative;
};

std::string to_string(Situation s);

SituationReport analyze_situation(const AdvisorQuery& query, int m, double tau_budget_remaining,
                                  const std::vector<int>& m_alternatives, const Thresholds& thresholds);

}  // namespace explore_prob
