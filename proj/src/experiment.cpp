#include "explore_prob/experiment.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <sstream>

#include "explore_prob/approx.hpp"
#include "explore_prob/errors.hpp"
#include "explore_prob/ops.hpp"
#include "explore_prob/rng.hpp"
#include "explore_prob/stats.hpp"

namespace explore_prob::cli {

using nlohmann::json;
namespace fs = std::filesystem;

namespace {

const std::map<std::string, Experiment> kExperimentNames = {
    {"TRAV_SWEEP_M", Experiment::TravSweepM},       {"TRAV_SWEEP_N", Experiment::TravSweepN},
    {"VISIT_NUMBERS", Experiment::VisitNumbers},    {"DISPERSION", Experiment::Dispersion},
    {"VALUE_DIST", Experiment::ValueDist},          {"SUCCESS_CURVE", Experiment::SuccessCurve},
    {"MAZE", Experiment::Maze},                     {"ADVISE", Experiment::Advise},
};

[[noreturn]] void fail(const std::string& what) { throw ConfigError("config: " + what); }

std::string fmt(double x) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.10g", x);
  return buf;
}

template <typename T>
T get_or(const json& j, const char* key, T fallback) {
  if (!j.contains(key) || j.at(key).is_null()) return fallback;
  try {
    return j.at(key).get<T>();
  } catch (const json::exception&) {
    fail(std::string("field '") + key + "' has the wrong type");
  }
}

// Accepts [a, b, ...], {"from","to","step"} or [from, to] (inclusive range).
std::vector<int> int_list(const json& j, const char* list_key, const char* range_key) {
  std::vector<int> out;
  if (j.contains(list_key)) {
    const json& v = j.at(list_key);
    if (!v.is_array()) fail(std::string("'") + list_key + "' must be an array");
    for (const json& x : v) {
      if (!x.is_number_integer()) fail(std::string("'") + list_key + "' must hold integers");
      out.push_back(x.get<int>());
    }
  } else if (j.contains(range_key)) {
    const json& r = j.at(range_key);
    int from = 0, to = 0, step = 1;
    try {
      if (r.is_array() && (r.size() == 2 || r.size() == 3)) {
        from = r[0].get<int>();
        to = r[1].get<int>();
        if (r.size() == 3) step = r[2].get<int>();
      } else if (r.is_object()) {
        from = r.at("from").get<int>();
        to = r.at("to").get<int>();
        step = get_or(r, "step", 1);
      } else {
        fail(std::string("'") + range_key + "' must be [from, to(, step)] or an object");
      }
    } catch (const json::exception&) {
      fail(std::string("'") + range_key + "' must hold integers");
    }
    if (step < 1 || to < from) fail(std::string("'") + range_key + "' is empty");
    for (int v = from; v <= to; v += step) out.push_back(v);
  }
  return out;
}

int parse_hazard_value(const json& h) {
  if (h.is_string()) {
    const std::string s = h.get<std::string>();
    if (s == "inf" || s == "INF" || s == "RESET") return kResetHazard;
    fail("hazard must be 1 or \"inf\"");
  }
  if (h.is_number_integer() && h.get<int>() == 1) return 1;
  fail("prototype hazard must be 1 or \"inf\"");
}

Productivity parse_productivity(const json& g) {
  const std::string s = g.is_string() ? g.get<std::string>() : g.dump();
  if (s == "SELF_LOOP" || s == "1") return Productivity::SelfLoop;
  if (s == "RESET" || s == "inf") return Productivity::Reset;
  fail("G must be SELF_LOOP or RESET");
}

ChainTemplate parse_chain(const json& c, std::size_t index, const json& top) {
  if (!c.is_object()) fail("each chain must be an object");
  ChainTemplate t;
  t.r_G = get_or(c, "r_G", get_or(top, "r_G", 1.0));
  t.r_D = get_or(c, "r_D", get_or(top, "r_D", 0.001));
  t.gamma = get_or(c, "gamma", get_or(top, "gamma", 0.998));
  try {
    if (c.contains("spec") || c.contains("forward_p")) {
      json body = c.contains("spec") ? c.at("spec") : c;
      for (const char* key : {"r_G", "r_D", "gamma"})
        if (!body.contains(key) && top.contains(key)) body[key] = top.at(key);
      t.full = body.get<ChainSpec>();
      t.n = t.full->n;
      t.id = get_or<std::string>(c, "id", "chain" + std::to_string(index));
      return t;
    }
  } catch (const ValidationError& e) {
    fail(e.what());
  } catch (const json::exception& e) {
    fail(std::string("chain spec: ") + e.what());
  }
  if (!c.contains("H") || !c.contains("G") || !c.contains("n")) fail("prototype chains need H, G and n");
  t.hazard = parse_hazard_value(c.at("H"));
  t.productivity = parse_productivity(c.at("G"));
  t.n = get_or(c, "n", 0);
  if (t.n < 2) fail("chain n must be at least 2");
  const json p = c.contains("p") ? c.at("p") : json(0.5);
  if (p.is_string()) {
    if (p.get<std::string>() != "random") fail("p must be a number, an array or \"random\"");
    t.random_p = true;
  } else if (p.is_number()) {
    t.p = {p.get<double>()};
  } else if (p.is_array()) {
    for (const json& x : p) {
      if (!x.is_number()) fail("p array must hold numbers");
      t.p.push_back(x.get<double>());
    }
  } else {
    fail("p must be a number, an array or \"random\"");
  }
  t.id = get_or<std::string>(c, "id", prototype_label(t.hazard, t.productivity));
  return t;
}

CriterionSpec parse_criterion(const json& j) {
  CriterionSpec c;
  if (j.is_string()) {
    const std::string s = j.get<std::string>();
    if (s == "STRICT") return c;
    if (s == "GOAL_REACHING") {
      c.kind = CriterionSpec::Kind::GoalReaching;
      return c;
    }
    fail("criterion must be STRICT, GOAL_REACHING or an object");
  }
  if (!j.is_object()) fail("criterion must be a string or an object");
  const std::string kind = get_or<std::string>(j, "kind", "");
  if (kind == "STRICT") return c;
  if (kind == "PI") {
    c.kind = CriterionSpec::Kind::Pi;
    c.ks = {get_or(j, "k", 0)};
  } else if (kind == "SET") {
    c.kind = CriterionSpec::Kind::Set;
    if (j.contains("ks") && j.at("ks").is_string()) {
      if (j.at("ks").get<std::string>() != "GOAL_REACHING") fail("SET ks must be a list or \"GOAL_REACHING\"");
      c.kind = CriterionSpec::Kind::GoalReaching;
    } else {
      c.ks = get_or<std::vector<int>>(j, "ks", {});
      if (c.ks.empty()) fail("SET criterion needs a nonempty 'ks'");
    }
  } else if (kind == "GOAL_REACHING") {
    c.kind = CriterionSpec::Kind::GoalReaching;
  } else {
    fail("unknown criterion kind '" + kind + "'");
  }
  return c;
}

std::optional<MazeSpec> parse_maze(const json& j) {
  const double move_p = get_or(j, "move_p", 0.5);
  const double r_G = get_or(j, "r_G", 1.0);
  const double gamma = get_or(j, "gamma", 0.998);
  try {
    if (j.contains("grid")) return maze_from_rows(j.at("grid").get<std::vector<std::string>>(), move_p, r_G, gamma);
    return standard_maze(move_p, r_G, gamma);
  } catch (const ValidationError& e) {
    fail(std::string("maze: ") + e.what());
  } catch (const json::exception& e) {
    fail(std::string("maze: ") + e.what());
  }
}

void write_text(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot open " + path.string() + " for writing");
  out << text;
  if (!out) throw std::runtime_error("write failed for " + path.string());
}

/// Accumulates one CSV file in memory; rows are written in call order.
class Csv {
 public:
  explicit Csv(std::string header) { text_ << header << '\n'; }

  template <typename... Cells>
  void row(const Cells&... cells) {
    bool first = true;
    ((text_ << (first ? "" : ",") << cell(cells), first = false), ...);
    text_ << '\n';
  }

  std::string str() const { return text_.str(); }

 private:
  static std::string cell(const std::string& s) { return s; }
  static std::string cell(const char* s) { return s; }
  static std::string cell(double x) { return fmt(x); }
  static std::string cell(int x) { return std::to_string(x); }
  static std::string cell(std::int64_t x) { return std::to_string(x); }
  static std::string cell(std::size_t x) { return std::to_string(x); }

  std::ostringstream text_;
};

SuccessCriterion mc_criterion(const CriterionSpec& c, const ChainSpec& spec) {
  if (c.kind == CriterionSpec::Kind::Strict) return SuccessCriterion::strict();
  const FamilyCriterion fam = family_criterion(c, spec);
  if (!fam.is_set) return SuccessCriterion::pi(pbf_policy(fam.ks.front(), spec));
  PolicySet set;
  for (int k : fam.ks) set.members.push_back(pbf_policy(k, spec));
  return SuccessCriterion::in_set(std::move(set));
}

/// State shared by the experiment bodies.
struct Runner {
  const ExperimentConfig& config;
  fs::path csv_path;
  json meta;
  std::vector<fs::path> written;
  std::uint64_t batch_index = 0;

  BatchOptions options() const {
    BatchOptions o;
    o.workers = config.workers;
    o.navigation = config.navigation;
    return o;
  }

  std::uint64_t next_batch_seed() {
    const std::uint64_t seed = stream_seed(config.master_seed, batch_index);
    meta["batch_seeds"].push_back(std::to_string(seed));
    ++batch_index;
    return seed;
  }

  ChainSpec spec_for(const ChainTemplate& t, int n) { return instantiate(config, t, n); }

  fs::path companion(const std::string& suffix) const {
    fs::path p = csv_path;
    p.replace_extension();
    return fs::path(p.string() + suffix);
  }

  void emit(const fs::path& path, const std::string& text) {
    write_text(path, text);
    written.push_back(path);
  }

  void record_friedman(const std::string& blocked_by, const std::vector<std::string>& treatments,
                       const std::vector<std::vector<double>>& blocks) {
    json f;
    f["blocked_by"] = blocked_by;
    f["treatments"] = treatments;
    if (treatments.size() < 2 || blocks.size() < 2) {
      f["status"] = "not applicable: needs at least two chains and two sweep points";
    } else {
      const stats::TestResult r = stats::friedman_test(blocks);
      f["status"] = "ok";
      f["statistic"] = r.statistic;
      f["p_value"] = r.p_value;
      f["note"] = r.method_note;
    }
    meta["friedman"] = f;
  }

  void trav_sweep(bool sweep_n) {
    Csv csv("chain_id,n,m,theory_trav,empirical_trav,wilson_lo,wilson_hi,runs");
    std::vector<std::string> ids;
    std::map<std::pair<int, int>, std::vector<double>> by_point;
    std::vector<std::pair<int, int>> point_order;
    for (const ChainTemplate& t : config.chains) {
      ids.push_back(t.id);
      const std::vector<int> ns = sweep_n ? config.n_values : std::vector<int>{t.n};
      for (int n : ns) {
        const ChainSpec spec = spec_for(t, n);
        const FiniteMdp mdp = build_general_chain(spec);
        for (int m : config.m_values) {
          const BatchSummary s = monte_carlo(mdp, m, config.budget, config.repetitions, SuccessCriterion::strict(),
                                             false, next_batch_seed(), options());
          const auto hits = static_cast<std::int64_t>(std::count(s.traverse_flags.begin(), s.traverse_flags.end(), 1));
          const auto [lo, hi] = stats::wilson_interval(hits, s.runs, 0.95);
          csv.row(t.id, n, m, traverse_probability(spec.forward_p, m), s.traverse_frequency, lo, hi, s.runs);
          const std::pair<int, int> key{n, m};
          if (!by_point.count(key)) point_order.push_back(key);
          by_point[key].push_back(s.traverse_frequency);
        }
      }
    }
    std::vector<std::vector<double>> blocks;
    for (const auto& key : point_order) blocks.push_back(by_point[key]);
    record_friedman(sweep_n ? "(n, m) sweep point" : "m", ids, blocks);
    emit(csv_path, csv.str());
  }

  void visit_numbers() {
    Csv csv("chain_id,state,action,nbar_theory,mean_emp,std_emp");
    const bool tag_m = config.m_values.size() > 1;
    for (const ChainTemplate& t : config.chains) {
      const ChainSpec spec = spec_for(t, t.n);
      const FiniteMdp mdp = build_general_chain(spec);
      for (int m : config.m_values) {
        const ExpectedVisits ev = expected_visit_numbers(spec, m);
        const BatchSummary s = monte_carlo(mdp, m, config.budget, config.repetitions, SuccessCriterion::strict(),
                                           true, next_batch_seed(), options());
        const std::string id = tag_m ? t.id + "@m" + std::to_string(m) : t.id;
        for (int i = 1; i <= spec.n; ++i) {
          const auto st = static_cast<StateIndex>(i - 1);
          const std::size_t fwd = mdp.pair_index(st, kForward);
          const std::size_t bwd = mdp.pair_index(st, kBackward);
          csv.row(id, i, "a+", ev.fwd[st], s.visit_mean[fwd], s.visit_std[fwd]);
          csv.row(id, i, "a-", ev.bwd[st], s.visit_mean[bwd], s.visit_std[bwd]);
        }
      }
    }
    emit(csv_path, csv.str());
  }

  void dispersion() {
    Csv csv("chain_id,m,state,nbar_theory,p,mean_emp,std_theory,std_emp");
    for (const ChainTemplate& t : config.chains) {
      const ChainSpec spec = spec_for(t, t.n);
      const FiniteMdp mdp = build_general_chain(spec);
      for (int m : config.m_values) {
        const ExpectedVisits ev = expected_visit_numbers(spec, m);
        BatchOptions o = options();
        o.keep_records = true;
        const BatchSummary s =
            monte_carlo(mdp, m, config.budget, config.repetitions, SuccessCriterion::strict(), true, next_batch_seed(), o);
        for (int i = 1; i < spec.n; ++i) {
          const auto st = static_cast<StateIndex>(i - 1);
          const std::size_t pair = mdp.pair_index(st, kForward);
          std::vector<double> p_hat;
          for (const RunRecord& r : s.records) {
            if (!r.tau_m || r.visits.count(pair) == 0) continue;
            p_hat.push_back(static_cast<double>(r.visits.count(pair, st + 1)) /
                            static_cast<double>(r.visits.count(pair)));
          }
          const double p = spec.forward_p[st];
          const stats::Summary sum = p_hat.size() >= 2 ? stats::summarize(p_hat) : stats::Summary{NAN, NAN, NAN, NAN, NAN};
          csv.row(t.id, m, i, ev.fwd[st], p, sum.mean, std::sqrt(p * (1.0 - p) / ev.fwd[st]), sum.std);
        }
      }
    }
    emit(csv_path, csv.str());
  }

  // One VALUE_DIST row: KS of the probe sample against the log-normal fitted
  // to the chain's value moments.
  double value_row(Csv& csv, const std::string& id, int m, const ChainSpec& chain, const BatchSummary& s) {
    const Moments mom = v_moments(chain, 0, m);
    std::vector<double> sample;
    for (double v : s.probe_values)
      if (std::isfinite(v) && v > 0.0) sample.push_back(v);
    if (sample.size() < 2) {
      csv.row(id, m, mom.mean, std::sqrt(mom.variance), NAN, NAN, NAN, NAN);
      return NAN;
    }
    const stats::Summary sum = stats::summarize(sample);
    const stats::TestResult ks = stats::ks_test_lognormal(sample, lognormal_from_moments(mom));
    csv.row(id, m, mom.mean, std::sqrt(mom.variance), sum.mean, sum.std, ks.statistic, ks.p_value);
    return sum.mean;
  }

  void value_dist() {
    Csv csv("chain_id,m,mean_theory,std_theory,mean_emp,std_emp,ks_D,ks_p");
    std::vector<std::string> ids;
    std::vector<std::vector<double>> blocks(config.m_values.size());
    for (const ChainTemplate& t : config.chains) {
      ids.push_back(t.id);
      const ChainSpec spec = spec_for(t, t.n);
      const FiniteMdp mdp = build_general_chain(spec);
      BatchOptions o = options();
      o.probe_policy = pbf_policy(0, spec);
      o.probe_state = 0;
      for (std::size_t mi = 0; mi < config.m_values.size(); ++mi) {
        const int m = config.m_values[mi];
        const BatchSummary s =
            monte_carlo(mdp, m, config.budget, config.repetitions, SuccessCriterion::strict(), true, next_batch_seed(), o);
        blocks[mi].push_back(value_row(csv, t.id, m, spec, s));
      }
    }
    record_friedman("m", ids, blocks);
    emit(csv_path, csv.str());
  }

  SuccessEstimate theory(const ChainSpec& spec, int m, const FamilyCriterion& fam, const std::string& id) {
    if (config.method == AdvisorMethod::Exact) {
      try {
        return exact_success_probability(spec, m, fam);
      } catch (const SizeError& e) {
        meta["fallbacks"].push_back({{"chain_id", id}, {"m", m}, {"reason", e.what()}, {"method", "LOGNORMAL"}});
      }
    }
    return approx_success_probability(spec, m, fam);
  }

  void success_curve() {
    Csv csv("chain_id,m,theory_total,empirical,wilson_lo,wilson_hi");
    Csv theory_csv("chain_id,m,theory_traverse,theory_conditional,theory_total,method");
    Csv groups_csv("chain_id,m,group,success_freq");
    const int groups = std::max<int>(1, static_cast<int>(std::min<std::int64_t>(config.repetitions, 10)));
    std::vector<std::string> ids;
    std::vector<std::vector<double>> blocks(config.m_values.size());
    for (const ChainTemplate& t : config.chains) {
      ids.push_back(t.id);
      const ChainSpec spec = spec_for(t, t.n);
      const FiniteMdp mdp = build_general_chain(spec);
      const FamilyCriterion fam = family_criterion(config.criterion, spec);
      const SuccessCriterion crit = mc_criterion(config.criterion, spec);
      json chain_meta{{"chain_id", t.id}, {"r_D", spec.r_D}, {"family_criterion", fam.ks},
                      {"reward_constraint_holds", reward_constraint_holds(spec)}};
      meta["chains"].push_back(chain_meta);
      for (std::size_t mi = 0; mi < config.m_values.size(); ++mi) {
        const int m = config.m_values[mi];
        const SuccessEstimate est = theory(spec, m, fam, t.id);
        const BatchSummary s =
            monte_carlo(mdp, m, config.budget, config.repetitions, crit, false, next_batch_seed(), options());
        csv.row(t.id, m, est.total, s.success_frequency, s.wilson_lo, s.wilson_hi);
        theory_csv.row(t.id, m, est.traverse_prob, est.conditional_prob, est.total, to_string(est.method));
        std::vector<std::int64_t> hit(static_cast<std::size_t>(groups), 0), size(static_cast<std::size_t>(groups), 0);
        for (std::size_t i = 0; i < s.success_flags.size(); ++i) {
          const auto g = static_cast<std::size_t>(static_cast<std::int64_t>(i) * groups / s.runs);
          hit[g] += s.success_flags[i] ? 1 : 0;
          ++size[g];
        }
        for (int g = 0; g < groups; ++g) {
          const auto gi = static_cast<std::size_t>(g);
          csv_group(groups_csv, t.id, m, g + 1, size[gi] ? static_cast<double>(hit[gi]) / size[gi] : NAN);
        }
        blocks[mi].push_back(s.success_frequency);
      }
    }
    record_friedman("m", ids, blocks);
    meta["grouping"] = "runs split into consecutive seed-index groups";
    emit(csv_path, csv.str());
    emit(companion(".theory.csv"), theory_csv.str());
    emit(companion(".groups.csv"), groups_csv.str());
  }

  static void csv_group(Csv& csv, const std::string& id, int m, int g, double freq) { csv.row(id, m, g, freq); }

  void maze() {
    if (!config.maze) fail("MAZE needs a 'maze' object");
    const MazePair pair = build_maze_pair(*config.maze);
    Csv csv("chain_id,m,mean_theory,std_theory,mean_emp,std_emp,ks_D,ks_p");
    BatchOptions o = options();
    o.goal_state = pair.path.back();
    o.probe_policy = solve_optimal(pair.mdp).policy;
    o.probe_state = pair.path.front();
    json abstraction;
    to_json(abstraction, pair.chain);
    meta["maze_chain"] = abstraction;
    meta["maze_states"] = pair.mdp.num_states();
    for (int m : config.m_values) {
      const BatchSummary s = monte_carlo(pair.mdp, m, config.budget, config.repetitions, SuccessCriterion::strict(),
                                         true, next_batch_seed(), o);
      value_row(csv, "maze", m, pair.chain, s);
    }
    emit(csv_path, csv.str());
  }
};

std::string lower(std::string s) {
  std::transform(s.begin(), s.end(), s.begin(), [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  return s;
}

}  // namespace

std::string to_string(Experiment e) {
  for (const auto& [name, value] : kExperimentNames)
    if (value == e) return name;
  return "UNKNOWN";
}

ExperimentConfig parse_config(const json& j) {
  if (!j.is_object()) fail("top level must be a JSON object");
  ExperimentConfig c;
  c.raw = j;
  const std::string name = get_or<std::string>(j, "experiment", "");
  const auto it = kExperimentNames.find(name);
  if (it == kExperimentNames.end()) fail("unknown or missing experiment '" + name + "'");
  c.experiment = it->second;

  c.repetitions = get_or<std::int64_t>(j, "repetitions", 1000);
  c.budget = get_or<std::int64_t>(j, "budget", 300000);
  if (c.repetitions < 1) fail("repetitions must be at least 1");
  if (c.budget < 1) fail("budget must be at least 1");
  c.master_seed = get_or<std::uint64_t>(j, "master_seed", 0);
  c.workers = get_or<unsigned>(j, "workers", 1u);
  c.residual = get_or(j, "residual", kDefaultResidual);
  c.output_path = get_or<std::string>(j, "output_path", lower(name) + (name == "ADVISE" ? ".json" : ".csv"));

  if (j.contains("rd_rule") && !j.at("rd_rule").is_null()) {
    const json& r = j.at("rd_rule");
    const std::string kind = get_or<std::string>(r, "kind", "");
    if (kind == "FIXED") {
      c.rd_rule = {RdRule::Kind::Fixed, get_or(r, "value", -1.0)};
      if (c.rd_rule.value < 0.0) fail("FIXED rd_rule needs a nonnegative 'value'");
    } else if (kind == "CRITICAL_FRACTION") {
      c.rd_rule = {RdRule::Kind::CriticalFraction, get_or(r, "f", -1.0)};
      if (!(c.rd_rule.value > 0.0)) fail("CRITICAL_FRACTION rd_rule needs a positive 'f'");
    } else {
      fail("rd_rule kind must be FIXED or CRITICAL_FRACTION");
    }
  }
  if (j.contains("random_p")) {
    const json& r = j.at("random_p");
    c.random_p.seed = get_or<std::uint64_t>(r, "seed", c.random_p.seed);
    c.random_p.low = get_or(r, "low", c.random_p.low);
    c.random_p.high = get_or(r, "high", c.random_p.high);
    if (!(c.random_p.low > 0.0 && c.random_p.low <= c.random_p.high && c.random_p.high <= 1.0))
      fail("random_p needs 0 < low <= high <= 1");
  }
  if (j.contains("criterion")) c.criterion = parse_criterion(j.at("criterion"));
  const std::string nav = get_or<std::string>(j, "navigation", "EXPECTED_STEPS");
  if (nav == "ESTIMATED_MODEL")
    c.navigation = Navigation::EstimatedModel;
  else if (nav != "EXPECTED_STEPS")
    fail("navigation must be EXPECTED_STEPS or ESTIMATED_MODEL");
  const std::string method = get_or<std::string>(j, "method", "APPROX");
  if (method == "EXACT")
    c.method = AdvisorMethod::Exact;
  else if (method != "APPROX")
    fail("method must be EXACT or APPROX");

  if (c.experiment == Experiment::Maze) {
    c.maze = parse_maze(j.contains("maze") ? j.at("maze") : json::object());
  } else {
    if (!j.contains("chains") || !j.at("chains").is_array() || j.at("chains").empty())
      fail("'chains' must be a nonempty array");
    std::size_t idx = 0;
    for (const json& ch : j.at("chains")) c.chains.push_back(parse_chain(ch, idx++, j));
  }

  c.m_values = int_list(j, "m_values", "m_range");
  c.n_values = int_list(j, "n_values", "n_range");
  if (c.experiment == Experiment::Advise) {
    if (!j.contains("delta")) fail("ADVISE needs 'delta'");
    c.delta = get_or(j, "delta", 0.05);
    if (!(*c.delta > 0.0 && *c.delta < 1.0)) fail("delta must lie in (0,1)");
    if (c.m_values.empty()) fail("ADVISE needs 'm_range'");
    c.m_min = *std::min_element(c.m_values.begin(), c.m_values.end());
    c.m_max = *std::max_element(c.m_values.begin(), c.m_values.end());
    if (j.contains("failure_context")) {
      const json& f = j.at("failure_context");
      FailureContext fc;
      fc.m = get_or(f, "m", 0);
      if (fc.m < 1) fail("failure_context.m must be at least 1");
      fc.tau_budget_remaining = get_or(f, "tau_budget_remaining", 0.0);
      fc.m_alternatives = get_or<std::vector<int>>(f, "m_alternatives", {});
      if (f.contains("thresholds")) {
        fc.thresholds.high = get_or(f.at("thresholds"), "high", fc.thresholds.high);
        fc.thresholds.acceptable = get_or(f.at("thresholds"), "acceptable", fc.thresholds.acceptable);
      }
      if (fc.thresholds.high < fc.thresholds.acceptable) fail("thresholds need high >= acceptable");
      c.failure = fc;
    }
  } else {
    if (c.m_values.empty()) fail("'m_values' (or 'm_range') must be nonempty");
    for (int m : c.m_values)
      if (m < 1) fail("m values must be at least 1");
    if (c.experiment == Experiment::TravSweepN && c.n_values.empty()) fail("TRAV_SWEEP_N needs 'n_values'");
    for (int n : c.n_values)
      if (n < 2) fail("n values must be at least 2");
  }

  // Instantiate everything once so bad chain parameters surface as config errors.
  for (const ChainTemplate& t : c.chains) {
    if (c.experiment == Experiment::TravSweepN) {
      for (int n : c.n_values) instantiate(c, t, n);
    } else {
      instantiate(c, t, t.n);
    }
  }
  return c;
}

ExperimentConfig load_config(const fs::path& path) {
  std::ifstream in(path);
  if (!in) fail("cannot read " + path.string());
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    fail(std::string("invalid JSON: ") + e.what());
  }
  return parse_config(j);
}

std::vector<double> random_p_table(const RandomPTable& table, std::size_t length) {
  Rng rng(table.seed);
  std::vector<double> out(length);
  for (double& p : out) p = table.low + (table.high - table.low) * rng.uniform();
  return out;
}

ChainSpec instantiate(const ExperimentConfig& config, const ChainTemplate& t, int n) {
  ChainSpec spec;
  try {
    if (t.full) {
      if (n != t.full->n) fail("chain '" + t.id + "' is a full spec and cannot be resized");
      spec = *t.full;
    } else {
      const auto len = static_cast<std::size_t>(n - 1);
      std::vector<double> p;
      if (t.random_p)
        p = random_p_table(config.random_p, len);
      else if (t.p.size() == 1)
        p.assign(len, t.p.front());
      else if (t.p.size() == len)
        p = t.p;
      else
        fail("chain '" + t.id + "': p array needs n-1 entries");
      spec = make_prototype_spec(t.hazard, t.productivity, n, p, t.r_G, t.r_D, t.gamma);
    }
    switch (config.rd_rule.kind) {
      case RdRule::Kind::None: break;
      case RdRule::Kind::Fixed: spec.r_D = config.rd_rule.value; break;
      case RdRule::Kind::CriticalFraction:
        spec.r_D = config.rd_rule.value * (1.0 - spec.gamma) * closed_form_value(spec, 0, 1);
        break;
    }
    validate_chain_spec(spec);
  } catch (const ValidationError& e) {
    fail("chain '" + t.id + "': " + e.what());
  }
  return spec;
}

FamilyCriterion family_criterion(const CriterionSpec& c, const ChainSpec& spec) {
  switch (c.kind) {
    case CriterionSpec::Kind::Strict: return FamilyCriterion::pi(optimal_family_index(spec));
    case CriterionSpec::Kind::Pi:
      if (c.ks.front() < 0 || c.ks.front() > spec.n) fail("criterion k must lie in 0..n");
      return FamilyCriterion::pi(c.ks.front());
    case CriterionSpec::Kind::Set:
      for (int k : c.ks)
        if (k < 0 || k > spec.n) fail("criterion ks must lie in 0..n");
      return FamilyCriterion::set(c.ks);
    case CriterionSpec::Kind::GoalReaching: {
      std::vector<int> ks(static_cast<std::size_t>(spec.n));
      for (int k = 0; k < spec.n; ++k) ks[static_cast<std::size_t>(k)] = k;
      return FamilyCriterion::set(ks);
    }
  }
  return FamilyCriterion::pi(0);
}

std::vector<fs::path> run_experiment(const ExperimentConfig& config, const fs::path& out_dir) {
  if (config.experiment == Experiment::Advise) fail("ADVISE configs go through the advise command");
  Runner r{config, out_dir / config.output_path, json::object(), {}, 0};
  r.meta["config"] = config.raw;
  r.meta["version"] = kVersion;
  r.meta["experiment"] = to_string(config.experiment);
  r.meta["master_seed"] = config.master_seed;
  r.meta["seed_rule"] = "seed_i=hash(master_seed,i)";
  r.meta["seed_rule_detail"] =
      "each (chain, n, m) batch in CSV row order takes batch_seed_b = hash(master_seed, b); run i of that batch uses "
      "hash(batch_seed_b, i); a redrawn non-traversing run uses hash(run seed, attempt); hash is splitmix64 mixing";
  r.meta["batch_seeds"] = json::array();
  r.meta["repetitions"] = config.repetitions;
  r.meta["budget"] = config.budget;
  r.meta["navigation"] = config.navigation == Navigation::ExpectedSteps ? "EXPECTED_STEPS" : "ESTIMATED_MODEL";
  r.meta["workers_do_not_change_results"] = true;
  const bool any_random = std::any_of(config.chains.begin(), config.chains.end(), [](const auto& t) { return t.random_p; });
  if (any_random) {
    std::size_t len = 0;
    for (const ChainTemplate& t : config.chains) len = std::max(len, static_cast<std::size_t>(t.n - 1));
    for (int n : config.n_values) len = std::max(len, static_cast<std::size_t>(n - 1));
    r.meta["random_p_table"] = {{"seed", config.random_p.seed},
                                {"low", config.random_p.low},
                                {"high", config.random_p.high},
                                {"values", random_p_table(config.random_p, len)}};
  }

  switch (config.experiment) {
    case Experiment::TravSweepM: r.trav_sweep(false); break;
    case Experiment::TravSweepN: r.trav_sweep(true); break;
    case Experiment::VisitNumbers: r.visit_numbers(); break;
    case Experiment::Dispersion: r.dispersion(); break;
    case Experiment::ValueDist: r.value_dist(); break;
    case Experiment::SuccessCurve: r.success_curve(); break;
    case Experiment::Maze: r.maze(); break;
    case Experiment::Advise: break;
  }
  const fs::path meta_path = r.companion(".meta.json");
  write_text(meta_path, r.meta.dump(2) + "\n");
  r.written.push_back(meta_path);
  return r.written;
}

namespace {

json best_to_json(const std::optional<BestM>& b) {
  if (!b) return nullptr;
  return {{"m", b->m}, {"expected_tau", b->expected_tau}, {"achieved_p", b->achieved_p}, {"method", to_string(b->method)}};
}

}  // namespace

Advice advise(const ExperimentConfig& config) {
  if (config.experiment != Experiment::Advise) fail("advise needs an ADVISE config");
  if (!config.delta) fail("ADVISE needs 'delta'");
  Advice out;
  std::ostringstream text;
  json chains = json::array();
  std::vector<AdvisorQuery> queries;
  std::vector<std::optional<BestM>> bests;

  text << "Target: success probability >= " << fmt(1.0 - *config.delta) << " over m in [" << config.m_min << ", "
       << config.m_max << "]\n";
  for (const ChainTemplate& t : config.chains) {
    AdvisorQuery q;
    q.spec = instantiate(config, t, t.n);
    q.criterion = family_criterion(config.criterion, q.spec);
    q.delta = *config.delta;
    q.m_min = config.m_min;
    q.m_max = config.m_max;
    q.method = config.method;
    json sweep_json = json::array();
    std::optional<BestM> best;
    for (const SweepPoint& pt : sweep(q)) {
      sweep_json.push_back({{"m", pt.m}, {"expected_tau", pt.expected_tau}, {"p_succ", pt.p_succ},
                            {"method", to_string(pt.method)}});
      if (pt.p_succ >= 1.0 - q.delta && (!best || pt.expected_tau < best->expected_tau))
        best = BestM{pt.m, pt.expected_tau, pt.p_succ, pt.method};
    }
    if (!best) out.infeasible = true;
    json entry{{"id", t.id},
               {"n", q.spec.n},
               {"criterion_ks", q.criterion.ks},
               {"status", best ? "FEASIBLE" : "INFEASIBLE"},
               {"best_m", best_to_json(best)},
               {"sweep", sweep_json}};

    text << "\n[" << t.id << "] n=" << q.spec.n << "\n";
    if (best)
      text << "  best m = " << best->m << ", expected tau_m = " << fmt(best->expected_tau)
           << ", success probability = " << fmt(best->achieved_p) << " (" << to_string(best->method) << ")\n";
    else
      text << "  INFEASIBLE: no m in range reaches the target\n";

    if (config.failure) {
      const FailureContext& f = *config.failure;
      const SituationReport sr = analyze_situation(q, f.m, f.tau_budget_remaining, f.m_alternatives, f.thresholds);
      entry["situation"] = {{"situation", to_string(sr.situation)},
                            {"current_m", f.m},
                            {"current_p", sr.current_p},
                            {"suggested_m", sr.suggested_m ? json(*sr.suggested_m) : json(nullptr)},
                            {"narrative", sr.narrative}};
      text << "  situation " << to_string(sr.situation) << ": " << sr.narrative << "\n";
    }
    chains.push_back(entry);
    queries.push_back(q);
    bests.push_back(best);
  }

  json comparisons = json::array();
  if (queries.size() > 1) text << "\nHardness comparisons (by expected tau_m at the best m):\n";
  for (std::size_t a = 0; a < queries.size(); ++a) {
    for (std::size_t b = a + 1; b < queries.size(); ++b) {
      Verdict v = Verdict::Incomparable;
      if (bests[a] && bests[b]) {
        if (bests[a]->expected_tau < bests[b]->expected_tau) v = Verdict::AEasier;
        if (bests[b]->expected_tau < bests[a]->expected_tau) v = Verdict::BEasier;
      }
      const std::string& ida = config.chains[a].id;
      const std::string& idb = config.chains[b].id;
      comparisons.push_back({{"a", ida}, {"b", idb}, {"verdict", to_string(v)},
                             {"tau_a", bests[a] ? json(bests[a]->expected_tau) : json(nullptr)},
                             {"tau_b", bests[b] ? json(bests[b]->expected_tau) : json(nullptr)}});
      text << "  " << ida << " vs " << idb << ": ";
      if (v == Verdict::AEasier)
        text << ida << " is easier, " << idb << " is harder\n";
      else if (v == Verdict::BEasier)
        text << idb << " is easier, " << ida << " is harder\n";
      else if (bests[a] && bests[b])
        text << "equal expected tau (tie)\n";
      else
        text << "incomparable (at least one is infeasible)\n";
    }
  }
  text << "\nNote: expected tau_m is the expected number of steps until exploration ends, not conditioned on "
          "traversing the chain.\n";

  out.report = {{"version", kVersion},
                {"delta", *config.delta},
                {"m_range", {config.m_min, config.m_max}},
                {"method", config.method == AdvisorMethod::Exact ? "EXACT" : "APPROX"},
                {"chains", chains},
                {"comparisons", comparisons},
                {"infeasible", out.infeasible}};
  out.text = text.str();
  return out;
}

}  // namespace explore_prob::cli
