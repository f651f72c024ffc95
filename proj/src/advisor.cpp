#include "explore_prob/advisor.hpp"

#include <sstream>

#include "explore_prob/approx.hpp"
#include "explore_prob/errors.hpp"

namespace explore_prob {

namespace {

void validate_query(const AdvisorQuery& q) {
  validate_chain_spec(q.spec);
  if (!(q.delta > 0.0 && q.delta < 1.0)) throw ValidationError("advisor: delta must lie in (0,1)");
  if (q.m_min < 1 || q.m_max < q.m_min) throw ValidationError("advisor: m range must be nonempty with m >= 1");
}

}  // namespace

SweepPoint evaluate_m(const AdvisorQuery& query, int m) {
  SweepPoint pt;
  pt.m = m;
  pt.expected_tau = expected_tau_m(query.spec, m);
  SuccessEstimate est;
  if (query.method == AdvisorMethod::Exact) {
    try {
      est = exact_success_probability(query.spec, m, query.criterion);
    } catch (const SizeError&) {
      est = approx_success_probability(query.spec, m, query.criterion);
    }
  } else {
    est = approx_success_probability(query.spec, m, query.criterion);
  }
  pt.p_succ = est.total;
  pt.method = est.method;
  return pt;
}

std::vector<SweepPoint> sweep(const AdvisorQuery& query) {
  validate_query(query);
  std::vector<SweepPoint> out;
  for (int m = query.m_min; m <= query.m_max; ++m) out.push_back(evaluate_m(query, m));
  return out;
}

std::optional<BestM> best_m(const AdvisorQuery& query) {
  std::optional<BestM> best;
  for (const SweepPoint& pt : sweep(query)) {
    if (pt.p_succ < 1.0 - query.delta) continue;
    if (!best || pt.expected_tau < best->expected_tau) best = BestM{pt.m, pt.expected_tau, pt.p_succ, pt.method};
  }
  return best;
}

std::string to_string(Verdict v) {
  switch (v) {
    case Verdict::AEasier: return "A_EASIER";
    case Verdict::BEasier: return "B_EASIER";
    case Verdict::Incomparable: return "INCOMPARABLE";
  }
  return "INCOMPARABLE";
}

HardnessReport compare_hardness(const AdvisorQuery& query_a, const AdvisorQuery& query_b) {
  if (query_a.delta != query_b.delta) throw ValidationError("compare_hardness: queries must share delta");
  if (query_a.criterion.is_set != query_b.criterion.is_set)
    throw ValidationError("compare_hardness: queries must share the criterion kind");
  HardnessReport report;
  report.a = best_m(query_a);
  report.b = best_m(query_b);
  if (report.a && report.b) {
    if (report.a->expected_tau < report.b->expected_tau)
      report.verdict = Verdict::AEasier;
    else if (report.b->expected_tau < report.a->expected_tau)
      report.verdict = Verdict::BEasier;
  }
  return report;
}

std::string to_string(Situation s) {
  switch (s) {
    case Situation::A: return "A";
    case Situation::B: return "B";
    case Situation::C: return "C";
    case Situation::D: return "D";
  }
  return "D";
}

SituationReport analyze_situation(const AdvisorQuery& query, int m, double tau_budget_remaining,
                                  const std::vector<int>& m_alternatives, const Thresholds& thresholds) {
  validate_chain_spec(query.spec);
  if (m < 1) throw ValidationError("analyze_situation: m must be at least 1");
  if (thresholds.high < thresholds.acceptable)
    throw ValidationError("analyze_situation: thresholds must satisfy high >= acceptable");
  SituationReport report;
  const SweepPoint current = evaluate_m(query, m);
  report.current_p = current.p_succ;
  std::ostringstream text;
  if (current.p_succ >= thresholds.high) {
    report.situation = Situation::A;
    text << "Success probability at m=" << m << " is " << current.p_succ
         << ", above the high threshold; the failure was most likely bad luck. Re-run with the same setting.";
    report.narrative = text.str();
    return report;
  }

  constexpr int kMaxExtra = 1000;
  for (int mm = m + 1; mm <= m + kMaxExtra; ++mm) {
    const SweepPoint pt = evaluate_m(query, mm);
    if (pt.expected_tau - current.expected_tau > tau_budget_remaining) break;
    if (pt.p_succ >= thresholds.acceptable) {
      report.situation = Situation::B;
      report.suggested_m = mm;
      text << "Continuing with m=" << mm << " needs about " << (pt.expected_tau - current.expected_tau)
           << " more expected steps, within the remaining budget, and reaches success probability "
           << pt.p_succ << ".";
      report.narrative = text.str();
      return report;
    }
  }

  for (int alt : m_alternatives) {
    if (alt < 1) continue;
    const SweepPoint pt = evaluate_m(query, alt);
    if (pt.p_succ >= thresholds.acceptable) {
      report.situation = Situation::C;
      report.suggested_m = alt;
      text << "The remaining budget is not enough, but restarting with m=" << alt
           << " reaches success probability " << pt.p_succ << " (expected tau_m " << pt.expected_tau << ").";
      report.narrative = text.str();
      return report;
    }
  }

  report.situation = Situation::D;
  text << "No setting within the budget or the listed alternatives reaches the acceptable success probability "
       << thresholds.acceptable << " (current " << current.p_succ
       << "); consider changing the problem or the learning strategy.";
  report.narrative = text.str();
  return report;
}

}  // namespace explore_prob
