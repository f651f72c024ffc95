// End-to-end acceptance checks. Each criterion prints one PASS/FAIL line; the
// exit status is nonzero when any criterion fails.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "explore_prob/approx.hpp"
#include "explore_prob/errors.hpp"
#include "explore_prob/experiment.hpp"
#include "explore_prob/ops.hpp"
#include "explore_prob/rng.hpp"
#include "explore_prob/stats.hpp"

#include "generators.hpp"

using namespace explore_prob;

namespace {

constexpr std::uint64_t kSeed = 20261016;
constexpr std::int64_t kBudget = 300000;

unsigned workers() { return std::max(1u, std::thread::hardware_concurrency()); }

struct Check {
  bool pass = true;
  std::string detail;
};

std::string format(const char* f, double a = 0, double b = 0, double c = 0, double d = 0) {
  char buf[256];
  std::snprintf(buf, sizeof buf, f, a, b, c, d);
  return buf;
}

/// Seeds for criterion c: batch b uses hash(hash(kSeed, c), b).
struct Seeds {
  std::uint64_t base;
  std::uint64_t next = 0;
  explicit Seeds(int criterion) : base(stream_seed(kSeed, static_cast<std::uint64_t>(criterion))) {}
  std::uint64_t operator()() { return stream_seed(base, next++); }
};

struct Proto {
  int hazard;
  Productivity g;
};
const Proto kProtos[] = {{1, Productivity::SelfLoop},
                         {kResetHazard, Productivity::SelfLoop},
                         {1, Productivity::Reset},
                         {kResetHazard, Productivity::Reset}};

BatchOptions batch() {
  BatchOptions o;
  o.workers = workers();
  return o;
}

// Central 99.7% band of Binomial(runs, p), in counts.
std::pair<std::int64_t, std::int64_t> binomial_band(std::int64_t runs, double p) {
  const std::vector<double> pmf = stats::binomial_pmf_table(runs, p);
  const double tail = 0.003 / 2.0;
  double cdf = 0.0;
  std::int64_t lo = 0, hi = runs;
  bool lo_set = false;
  for (std::int64_t k = 0; k <= runs; ++k) {
    cdf += pmf[static_cast<std::size_t>(k)];
    if (!lo_set && cdf > tail) {
      lo = k;
      lo_set = true;
    }
    if (cdf >= 1.0 - tail) {
      hi = k;
      break;
    }
  }
  return {lo, hi};
}

Check traverse_theorem() {
  Check v;
  Seeds seeds(1);
  int inside = 0, total = 0;
  std::string misses;
  for (const Proto& pr : kProtos) {
    const ChainSpec spec = make_prototype_spec(pr.hazard, pr.g, 40, 0.3, 1.0, 0.001, 0.998);
    const FiniteMdp mdp = build_general_chain(spec);
    for (int m = 5; m <= 15; ++m) {
      const BatchSummary s = monte_carlo(mdp, m, kBudget, 1000, SuccessCriterion::pi(pbf_policy(0, spec)), false,
                                         seeds(), batch());
      const auto hits = std::count(s.traverse_flags.begin(), s.traverse_flags.end(), 1);
      const double theory = std::pow(1.0 - std::pow(0.7, m), 39);
      const auto [lo, hi] = binomial_band(1000, theory);
      ++total;
      if (hits >= lo && hits <= hi) {
        ++inside;
      } else {
        misses += " " + prototype_label(pr.hazard, pr.g) + "@m" + std::to_string(m) +
                  format("(%.3f vs %.3f)", static_cast<double>(hits) / 1000.0, theory);
      }
    }
  }
  v.pass = inside == total;
  v.detail = std::to_string(inside) + "/" + std::to_string(total) + " points in the 99.7% band;" + misses;

  // Anchors at m=10.
  const double anchors[][2] = {{10, 0.77}, {60, 0.18}};
  for (const auto& a : anchors) {
    const int n = static_cast<int>(a[0]);
    const ChainSpec spec = make_prototype_spec(1, Productivity::SelfLoop, n, 0.3, 1.0, 0.001, 0.998);
    const double theory = traverse_probability(spec.forward_p, 10);
    const BatchSummary s = monte_carlo(build_general_chain(spec), 10, kBudget, 1000,
                                       SuccessCriterion::pi(pbf_policy(0, spec)), false, seeds(), batch());
    const bool ok = std::fabs(theory - a[1]) < 0.005 && std::fabs(s.traverse_frequency - theory) <= 0.05;
    v.pass = v.pass && ok;
    v.detail += format(" | n=%.0f theory %.4f empirical %.3f", n, theory, s.traverse_frequency);
  }
  return v;
}

struct VisitData {
  ChainSpec spec;
  ExpectedVisits ev;
  BatchSummary summary;
};

std::vector<VisitData>& visit_runs() {
  static std::vector<VisitData> data = [] {
    std::vector<VisitData> out;
    Seeds seeds(2);
    for (const Proto& pr : kProtos) {
      VisitData d;
      d.spec = make_prototype_spec(pr.hazard, pr.g, 15, 0.3, 1.0, 0.001, 0.998);
      d.ev = expected_visit_numbers(d.spec, 15);
      BatchOptions o = batch();
      o.keep_records = true;
      d.summary = monte_carlo(build_general_chain(d.spec), 15, kBudget, 1000, SuccessCriterion::strict(), true,
                              seeds(), o);
      out.push_back(std::move(d));
    }
    return out;
  }();
  return data;
}

Check visit_numbers() {
  Check v;
  // Reference values: 53.33 flat, 703.33 down to 53.33, 100 flat, 750 down to 50.
  auto reference = [](int proto, int i) {
    switch (proto) {
      case 0: return 160.0 / 3.0;
      case 1: return 703.0 + 1.0 / 3.0 - 50.0 * (i - 1);
      case 2: return 100.0;
      default: return 750.0 - 50.0 * (i - 1);
    }
  };
  double worst = 0.0;
  bool theory_ok = true;
  const auto& data = visit_runs();
  for (std::size_t p = 0; p < data.size(); ++p) {
    const VisitData& d = data[p];
    const FiniteMdp mdp = build_general_chain(d.spec);
    for (int i = 1; i < d.spec.n; ++i) {
      const auto st = static_cast<StateIndex>(i - 1);
      const double theory = d.ev.fwd[st];
      if (std::fabs(theory - reference(static_cast<int>(p), i)) > 0.01) theory_ok = false;
      const double emp = d.summary.visit_mean[mdp.pair_index(st, kForward)];
      worst = std::max(worst, std::fabs(emp - theory) / theory);
    }
  }
  v.pass = theory_ok && worst <= 0.05;
  v.detail = std::string("theory matches reference values: ") + (theory_ok ? "yes" : "no") +
             format("; worst relative error of mean N+ %.4f (limit 0.05)", worst);
  return v;
}

Check dispersion() {
  Check v;
  double worst = 0.0;
  std::string where;
  for (const VisitData& d : visit_runs()) {
    const FiniteMdp mdp = build_general_chain(d.spec);
    for (int i = 1; i < d.spec.n; ++i) {
      const auto st = static_cast<StateIndex>(i - 1);
      const std::size_t pair = mdp.pair_index(st, kForward);
      std::vector<double> p_hat;
      for (const RunRecord& r : d.summary.records)
        p_hat.push_back(static_cast<double>(r.visits.count(pair, st + 1)) / static_cast<double>(r.visits.count(pair)));
      const double p = d.spec.forward_p[st];
      const double theory = std::sqrt(p * (1.0 - p) / d.ev.fwd[st]);
      const double rel = std::fabs(stats::summarize(p_hat).std - theory) / theory;
      if (rel > worst) {
        worst = rel;
        where = prototype_label(d.spec.hazard[0], d.spec.productivity) + " s" + std::to_string(i);
      }
    }
  }
  v.pass = worst <= 0.15;
  v.detail = format("worst relative error of std(p^) %.4f (limit 0.15) at ", worst) + where;
  return v;
}

int ks_rejections(const std::vector<double>& forward_p, Seeds& seeds, std::string& where) {
  int rejections = 0;
  for (const Proto& pr : kProtos) {
    const ChainSpec spec = make_prototype_spec(pr.hazard, pr.g, 20, forward_p, 1.0, 0.001, 0.998);
    const FiniteMdp mdp = build_general_chain(spec);
    BatchOptions o = batch();
    o.probe_policy = pbf_policy(0, spec);
    for (int m = 8; m <= 20; ++m) {
      const BatchSummary s = monte_carlo(mdp, m, kBudget, 1000, SuccessCriterion::strict(), true, seeds(), o);
      const stats::TestResult ks = stats::ks_test_lognormal(s.probe_values, lognormal_from_moments(v_moments(spec, 0, m)));
      if (ks.p_value < 0.01) {
        ++rejections;
        where += " " + prototype_label(pr.hazard, pr.g) + "@m" + std::to_string(m) + format("(p=%.4f)", ks.p_value);
      }
    }
  }
  return rejections;
}

Check value_distribution() {
  Check v;
  Seeds seeds(4);
  std::string where_fixed, where_random;
  const int fixed = ks_rejections(std::vector<double>(19, 0.5), seeds, where_fixed);
  const std::vector<double> table = cli::random_p_table(cli::RandomPTable{}, 19);
  const int random = ks_rejections(table, seeds, where_random);
  v.pass = fixed <= 4 && random <= 4;
  v.detail = "KS rejections at 1%: p=0.5 " + std::to_string(fixed) + "/52" + where_fixed + "; random p " +
             std::to_string(random) + "/52" + where_random + " (limit 4 each)";
  return v;
}

Check success_curve() {
  Check v;
  Seeds seeds(5);
  // Order in which theory values must be non-increasing.
  const Proto order[] = {{kResetHazard, Productivity::SelfLoop},
                         {1, Productivity::SelfLoop},
                         {kResetHazard, Productivity::Reset},
                         {1, Productivity::Reset}};
  std::vector<std::vector<double>> theory(4);
  double worst = 0.0, sum_err = 0.0, sum_var = 0.0;
  int points = 0;
  bool all_pi0 = true;
  for (std::size_t c = 0; c < 4; ++c) {
    ChainSpec spec = make_prototype_spec(order[c].hazard, order[c].g, 20, 0.5, 1.0, 0.0, 0.998);
    spec.r_D = 0.993 * (1.0 - spec.gamma) * closed_form_value(spec, 0, 1);
    if (optimal_family_index(spec) != 0) all_pi0 = false;
    const FiniteMdp mdp = build_general_chain(spec);
    const FamilyCriterion fam = FamilyCriterion::pi(optimal_family_index(spec));
    for (int m = 8; m <= 20; ++m) {
      const SuccessEstimate est = approx_success_probability(spec, m, fam);
      const BatchSummary s = monte_carlo(mdp, m, kBudget, 1000, SuccessCriterion::strict(), false, seeds(), batch());
      theory[c].push_back(est.total);
      const double err = s.success_frequency - est.total;
      worst = std::max(worst, std::fabs(err));
      sum_err += err;
      sum_var += est.total * (1.0 - est.total) / 1000.0;
      ++points;
    }
  }
  bool ordered = true;
  for (std::size_t c = 0; c + 1 < 4; ++c)
    for (std::size_t k = 0; k < theory[c].size(); ++k)
      if (theory[c][k] < theory[c + 1][k]) ordered = false;
  const double mean_err = sum_err / points;
  const double z = sum_err / std::sqrt(sum_var);
  // A systematic error (|z| > 3) must be an underestimate by the theory.
  const bool sign_ok = std::fabs(z) <= 3.0 || mean_err > 0.0;
  v.pass = all_pi0 && worst <= 0.10 && ordered && sign_ok;
  v.detail = format("max |empirical - approx| %.4f (limit 0.10); mean error %+.4f (z=%+.2f, positive = theory low)",
                    worst, mean_err, z) +
             "; ordering " + (ordered ? "holds" : "violated") + (all_pi0 ? "" : "; optimal member is not pi_0");
  return v;
}

Check exact_vs_approx() {
  Check v;
  Seeds seeds(6);
  double worst = 0.0;
  int outside = 0, points = 0;
  std::string misses;
  for (const Proto& pr : kProtos) {
    for (int n : {3, 4, 5}) {
      for (double p : {0.4, 0.6, 0.8}) {
        for (int m : {5, 10, 15}) {
          const ChainSpec spec = make_prototype_spec(pr.hazard, pr.g, n, p, 1.0, 0.001, 0.998);
          const FamilyCriterion fam = FamilyCriterion::pi(optimal_family_index(spec));
          const SuccessEstimate ex = exact_success_probability(spec, m, fam);
          const SuccessEstimate ap = approx_success_probability(spec, m, fam);
          worst = std::max(worst, std::fabs(ex.total - ap.total));
          const BatchSummary s = monte_carlo(build_general_chain(spec), m, kBudget, 100000,
                                             SuccessCriterion::strict(), false, seeds(), batch());
          const auto [lo, hi] = stats::wilson_interval(s.successes, s.runs, 0.99);
          ++points;
          if (ex.total < lo || ex.total > hi) {
            ++outside;
            misses += " " + prototype_label(pr.hazard, pr.g) +
                      format("(n=%.0f,p=%.1f,m=%.0f: exact %.5f)", n, p, m, ex.total) +
                      format("[%.5f,%.5f]", lo, hi);
          }
        }
      }
    }
  }
  v.pass = worst <= 0.03 && outside == 0;
  v.detail = format("max |exact - approx| %.5f (limit 0.03); exact outside the 99%% Wilson interval of 1e5 runs at %.0f/%.0f points",
                    worst, outside, points) + misses;
  return v;
}

Check oracles() {
  Check v;
  Rng rng(stream_seed(kSeed, 7));
  // (a) closed form vs linear-system evaluation.
  double worst_value = 0.0;
  for (int t = 0; t < 50; ++t) {
    const ChainSpec spec = gen::chain(rng);
    const FiniteMdp mdp = build_general_chain(spec);
    for (int k = 0; k <= spec.n; ++k) {
      const ValueVector values = evaluate_policy(mdp, pbf_policy(k, spec));
      for (int j = 1; j <= spec.n; ++j)
        worst_value = std::max(worst_value, std::fabs(closed_form_value(spec, k, j) - values[static_cast<std::size_t>(j - 1)]));
    }
  }
  // (b) family probabilities are exhaustive.
  double worst_sum = 0.0;
  for (int t = 0; t < 50; ++t) {
    ChainSpec spec = gen::chain(rng, 2, 5);
    const int m = gen::integer(rng, 1, 6);
    try {
      const std::vector<double> dist = exact_family_distribution(spec, m);
      double sum = 0.0;
      for (double x : dist) sum += x;
      worst_sum = std::max(worst_sum, std::fabs(sum - 1.0));
    } catch (const ValidationError&) {
      --t;  // hazard pattern without a valid visit flow; draw again
    }
  }
  // (c) reward constraint <=> value iteration picks pi_0.
  int agree = 0, trials = 0;
  while (trials < 50) {
    ChainSpec spec = gen::prototype(rng, 2, 8, 0.2, 1.0);
    const double critical = (1.0 - spec.gamma) * closed_form_value(spec, 0, 1);
    const double u = gen::uniform(rng, 0.5, 1.5);
    if (std::fabs(u - 1.0) < 0.02) continue;
    spec.r_D = u * critical;
    const PlanResult vi = value_iteration(build_general_chain(spec), kDefaultResidual, 0);
    const bool picks_pi0 = vi.policy == pbf_policy(0, spec);
    agree += picks_pi0 == reward_constraint_holds(spec) ? 1 : 0;
    ++trials;
  }
  // (d) flow balance of the expected visit numbers.
  double worst_flow = 0.0;
  for (int t = 0; t < 50; ++t) {
    ChainSpec spec = gen::chain(rng, 2, 10);
    spec.backward_p.back() = 1.0;
    const int m = gen::integer(rng, 1, 30);
    ExpectedVisits ev;
    try {
      ev = expected_visit_numbers(spec, m);
    } catch (const ValidationError&) {
      --t;
      continue;
    }
    const int n = spec.n;
    auto idx = [](int i) { return static_cast<std::size_t>(i - 1); };
    std::vector<double> in(idx(n) + 1, 0.0), out(idx(n) + 1, 0.0);
    in[0] += 1.0;
    for (int i = 1; i <= n; ++i) {
      if (i < n) {
        out[idx(i)] += spec.forward_p[idx(i)] * ev.fwd[idx(i)];
        in[idx(i + 1)] += spec.forward_p[idx(i)] * ev.fwd[idx(i)];
      }
      if (i > 1) {
        const double moved = spec.backward_p[idx(i)] * ev.bwd[idx(i)];
        out[idx(i)] += moved;
        in[idx(backward_target(spec, i))] += moved;
      }
    }
    if (spec.productivity == Productivity::Reset) {
      out[idx(n)] += ev.fwd[idx(n)];
      in[0] += ev.fwd[idx(n)];
    }
    const std::size_t end = spec.productivity == Productivity::SelfLoop ? idx(n) : 0;
    for (std::size_t s = 0; s < in.size(); ++s) {
      const double expected = s == end ? 1.0 : 0.0;
      worst_flow = std::max(worst_flow, std::fabs(in[s] - out[s] - expected) / std::max(1.0, in[s]));
    }
  }
  v.pass = worst_value <= 1e-4 && worst_sum <= 1e-9 && agree == trials && worst_flow < 1e-9;
  v.detail = format("closed form vs evaluation max |diff| %.2e (limit 1e-4); family sum max |1 - sum| %.2e (limit 1e-9)",
                    worst_value, worst_sum) +
             "; constraint <=> VI picks pi_0 in " + std::to_string(agree) + "/" + std::to_string(trials) +
             format("; flow-balance residual %.2e (limit 1e-9)", worst_flow);
  return v;
}

Check maze() {
  Check v;
  Seeds seeds(8);
  const MazePair pair = build_maze_pair(standard_maze(0.5, 1.0, 0.998));
  BatchOptions o = batch();
  o.goal_state = pair.path.back();
  o.probe_policy = solve_optimal(pair.mdp).policy;
  o.probe_state = pair.path.front();
  int rejections = 0;
  double min_p = 1.0;
  std::string where;
  for (int m = 8; m <= 20; ++m) {
    const BatchSummary s = monte_carlo(pair.mdp, m, kBudget, 1000, SuccessCriterion::strict(), true, seeds(), o);
    const stats::TestResult ks =
        stats::ks_test_lognormal(s.probe_values, lognormal_from_moments(v_moments(pair.chain, 0, m)));
    min_p = std::min(min_p, ks.p_value);
    if (ks.p_value < 0.01) {
      ++rejections;
      where += format(" m=%.0f(p=%.4f)", m, ks.p_value);
    }
  }
  v.pass = rejections == 0;
  v.detail = "KS rejections at 1%: " + std::to_string(rejections) + "/13" + where + format("; smallest p %.4f", min_p);
  return v;
}

std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

Check determinism() {
  Check v;
  namespace fs = std::filesystem;
  const fs::path root = fs::temp_directory_path() / "explore_prob_acceptance";
  fs::remove_all(root);
  const char* configs[] = {
      R"({"experiment":"TRAV_SWEEP_M","chains":[{"H":1,"G":"SELF_LOOP","n":12,"p":0.3},{"H":"inf","G":"RESET","n":12,"p":"random"}],"m_values":[6,9],"repetitions":300,"master_seed":77})",
      R"({"experiment":"SUCCESS_CURVE","chains":[{"H":"inf","G":"SELF_LOOP","n":8,"p":0.5}],"m_range":[5,7],"repetitions":300,"master_seed":78,"rd_rule":{"kind":"CRITICAL_FRACTION","f":0.993}})",
      R"({"experiment":"MAZE","m_values":[8],"repetitions":100,"master_seed":79})"};
  int compared = 0, identical = 0;
  for (std::size_t c = 0; c < std::size(configs); ++c) {
    cli::ExperimentConfig cfg = cli::parse_config(nlohmann::json::parse(configs[c]));
    std::vector<std::vector<fs::path>> runs;
    for (unsigned w : {1u, 4u, 1u}) {
      cfg.workers = w;
      runs.push_back(cli::run_experiment(cfg, root / ("c" + std::to_string(c)) / ("run" + std::to_string(runs.size()))));
    }
    for (std::size_t f = 0; f < runs[0].size(); ++f) {
      if (runs[0][f].extension() != ".csv") continue;
      for (std::size_t r = 1; r < runs.size(); ++r) {
        ++compared;
        if (slurp(runs[0][f]) == slurp(runs[r][f]) && !slurp(runs[0][f]).empty()) ++identical;
      }
    }
  }
  fs::remove_all(root);
  v.pass = compared > 0 && identical == compared;
  v.detail = std::to_string(identical) + "/" + std::to_string(compared) +
             " CSV reruns byte-identical (same seed, worker counts 1 and 4)";
  return v;
}

}  // namespace

int main() {
  const std::vector<std::pair<std::string, std::function<Check()>>> criteria = {
      {"traverse-probability", traverse_theorem},
      {"visit-numbers", visit_numbers},
      {"dispersion", dispersion},
      {"value-distribution", value_distribution},
      {"success-curve", success_curve},
      {"exact-vs-approx", exact_vs_approx},
      {"oracle-equivalences", oracles},
      {"maze", maze},
      {"determinism", determinism},
  };
  int failures = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    const auto t0 = std::chrono::steady_clock::now();
    Check v;
    try {
      v = criteria[i].second();
    } catch (const std::exception& e) {
      v = {false, std::string("exception: ") + e.what()};
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    if (!v.pass) ++failures;
    std::printf("[%s] %zu %s: %s (%.1fs)\n", v.pass ? "PASS" : "FAIL", i + 1, criteria[i].first.c_str(),
                v.detail.c_str(), secs);
    std::fflush(stdout);
  }
  std::printf("%d/%zu criteria passed\n", static_cast<int>(criteria.size()) - failures, criteria.size());
  return failures == 0 ? 0 : 1;
}
