#include <cmath>
#include <random>

#include "doctest.h"

#include "explore_prob/analytic.hpp"
#include "explore_prob/approx.hpp"
#include "explore_prob/chain.hpp"
#include "explore_prob/errors.hpp"
#include "explore_prob/ops.hpp"

#include "generators.hpp"

using namespace explore_prob;
using doctest::Approx;

namespace {

double transform_y(double phat, double gamma) { return gamma * phat / (1.0 - gamma * (1.0 - phat)); }

ChainSpec with_rd(ChainSpec spec, double rd) {
  spec.r_D = rd;
  return spec;
}

}  // namespace

TEST_CASE("y_moments") {
  const Moments one = y_moments(1.0, 50.0, 0.998);
  CHECK(one.mean == Approx(0.998).epsilon(1e-14));
  CHECK(one.variance == 0.0);

  const Moments y = y_moments(0.5, 100.0, 0.998);
  CHECK(std::fabs(y.mean - 0.996008) < 5e-7);
  CHECK(std::fabs(y.variance - 1.581e-7) < 1e-10);

  // Sampling p^ = Binomial(100, 0.5) / 100 and transforming.
  std::mt19937_64 eng(606);
  std::binomial_distribution<int> draw(100, 0.5);
  double sum = 0.0, sum2 = 0.0;
  const int samples = 1000000;
  for (int i = 0; i < samples; ++i) {
    const double v = transform_y(draw(eng) / 100.0, 0.998);
    sum += v;
    sum2 += v * v;
  }
  const double mean = sum / samples, var = sum2 / samples - mean * mean;
  // First order only: the curvature term g''/2 Var(p^) is about -4e-5 here.
  const double c = 0.002 / 0.998, curvature = -2.0 * c / std::pow(0.5 + c, 3);
  CHECK(std::fabs(mean - y.mean) < 1e-4);
  CHECK(std::fabs(mean - (y.mean + curvature / 2.0 * 0.0025)) < 3e-6);
  CHECK(var == Approx(y.variance).epsilon(0.03));

  const Moments big = y_moments(0.5, 1e12, 0.998);
  CHECK(big.mean == y.mean);
  CHECK(big.variance < 1e-16);

  CHECK_THROWS_AS(y_moments(0.0, 10.0, 0.9), ValidationError);
  CHECK_THROWS_AS(y_moments(0.5, 0.0, 0.9), ValidationError);
}

TEST_CASE("f_moments") {
  const Moments a{0.9, 0.01};
  const Moments f = f_moments({a});
  CHECK(f.mean == Approx(a.mean).epsilon(1e-15));
  CHECK(f.variance == Approx(a.variance).epsilon(1e-12));

  const Moments flat = f_moments({{0.5, 0.0}, {0.8, 0.0}, {0.9, 0.0}});
  CHECK(flat.mean == Approx(0.36).epsilon(1e-15));
  CHECK(flat.variance == Approx(0.0).epsilon(1e-15));

  CHECK_THROWS_AS(f_moments({}), ValidationError);
}

TEST_CASE("f_moments matches sampled products") {
  const ChainSpec spec = make_prototype_spec(1, Productivity::SelfLoop, 20, 0.5, 1.0, 0.001, 0.998);
  const ExpectedVisits ev = expected_visit_numbers(spec, 15);
  std::vector<Moments> ys;
  std::vector<std::binomial_distribution<int>> draws;
  std::vector<int> counts;
  for (int i = 1; i < spec.n; ++i) {
    const double nbar = ev.fwd[static_cast<std::size_t>(i - 1)];
    ys.push_back(y_moments(0.5, nbar, spec.gamma));
    counts.push_back(static_cast<int>(std::lround(nbar)));
    draws.emplace_back(counts.back(), 0.5);
  }
  REQUIRE(ys.size() == 19);
  const Moments f = f_moments(ys);

  std::mt19937_64 eng(1717);
  double sum = 0.0, sum2 = 0.0;
  const int samples = 1000000;
  for (int s = 0; s < samples; ++s) {
    double prod = 1.0;
    for (std::size_t i = 0; i < draws.size(); ++i) prod *= transform_y(draws[i](eng) / static_cast<double>(counts[i]), spec.gamma);
    sum += prod;
    sum2 += prod * prod;
  }
  const double mean = sum / samples, var = sum2 / samples - mean * mean;
  CHECK(mean == Approx(f.mean).epsilon(0.02));
  CHECK(var == Approx(f.variance).epsilon(0.02));
}

TEST_CASE("property: log of the product mean") {
  Rng rng(2718);
  for (int t = 0; t < 200; ++t) {
    std::vector<Moments> ys;
    double log_sum = 0.0;
    const int count = gen::integer(rng, 1, 60);
    for (int i = 0; i < count; ++i) {
      const Moments y = y_moments(gen::uniform(rng, 0.05, 1.0), gen::uniform(rng, 1.0, 500.0), gen::uniform(rng, 0.5, 0.999));
      ys.push_back(y);
      log_sum += std::log(y.mean);
    }
    CHECK(std::fabs(std::log(f_moments(ys).mean) - log_sum) < 1e-12);
  }
}

TEST_CASE("v_moments") {
  const ChainSpec spec = make_prototype_spec(1, Productivity::SelfLoop, 20, 0.5, 1.0, 0.001, 0.998);
  const Moments v = v_moments(spec, 0, 15);
  CHECK(v.mean == Approx(463.4).epsilon(0.0005));
  CHECK(v.mean == Approx(closed_form_value(spec, 0, 1)).epsilon(1e-9));

  // Mean of the estimated value over simulated runs.
  BatchOptions o;
  o.probe_policy = pbf_policy(0, spec);
  const BatchSummary s = monte_carlo(build_general_chain(spec), 15, 300000, 200, SuccessCriterion::strict(), true, 55, o);
  double mean = 0.0;
  for (double x : s.probe_values) mean += x;
  mean /= static_cast<double>(s.probe_values.size());
  CHECK(mean == Approx(v.mean).epsilon(0.01));

  const ChainSpec sure = make_prototype_spec(kResetHazard, Productivity::SelfLoop, 6, 1.0, 1.0, 0.001, 0.95);
  const Moments vs = v_moments(sure, 0, 4);
  CHECK(vs.variance == 0.0);
  CHECK(vs.mean == Approx(closed_form_value(sure, 0, 1)).epsilon(1e-12));

  // Reset at the goal: delta method on r_G F / (1 - gamma F).
  const ChainSpec reset = make_prototype_spec(1, Productivity::Reset, 8, 0.6, 1.0, 0.001, 0.998);
  const ExpectedVisits ev = expected_visit_numbers(reset, 10);
  std::vector<Moments> ys;
  for (int i = 1; i < reset.n; ++i) ys.push_back(y_moments(0.6, ev.fwd[static_cast<std::size_t>(i - 1)], reset.gamma));
  const Moments f = f_moments(ys);
  const Moments vr = v_moments(reset, 0, 10);
  CHECK(vr.mean == Approx(f.mean / (1.0 - reset.gamma * f.mean)).epsilon(1e-12));
  CHECK(vr.variance == Approx(f.variance / std::pow(1.0 - reset.gamma * f.mean, 4)).epsilon(1e-12));

  CHECK_THROWS_AS(v_moments(spec, 20, 15), ValidationError);
}

TEST_CASE("lognormal_from_moments") {
  const LogNormalParams std_ln = lognormal_from_moments({std::exp(0.5), (std::exp(1.0) - 1.0) * std::exp(1.0)});
  CHECK(std_ln.mu_log == Approx(0.0).epsilon(1e-12));
  CHECK(std::fabs(std_ln.mu_log) < 1e-12);
  CHECK(std_ln.sigma_log == Approx(1.0).epsilon(1e-12));

  const LogNormalParams point = lognormal_from_moments({3.0, 0.0});
  CHECK(point.mu_log == Approx(std::log(3.0)).epsilon(1e-15));
  CHECK(point.sigma_log == 0.0);

  Rng rng(99);
  for (int t = 0; t < 100; ++t) {
    const Moments in{gen::uniform(rng, 1e-3, 1e3), 0.0};
    const Moments mom{in.mean, in.mean * in.mean * gen::uniform(rng, 0.0, 4.0)};
    const LogNormalParams ln = lognormal_from_moments(mom);
    const double s2 = ln.sigma_log * ln.sigma_log;
    const double mean = std::exp(ln.mu_log + s2 / 2.0);
    const double var = std::expm1(s2) * std::exp(2.0 * ln.mu_log + s2);
    CHECK(mean == Approx(mom.mean).epsilon(1e-9));
    if (mom.variance > 0.0) CHECK(var == Approx(mom.variance).epsilon(1e-9));
  }

  CHECK_THROWS_AS(lognormal_from_moments({0.0, 1.0}), ValidationError);
  CHECK_THROWS_AS(lognormal_from_moments({-1.0, 1.0}), ValidationError);
}

TEST_CASE("approx success at the median and on a step") {
  const ChainSpec base = make_prototype_spec(1, Productivity::SelfLoop, 6, 0.5, 1.0, 0.001, 0.998);
  const LogNormalParams ln = lognormal_from_moments(v_moments(base, 0, 10));
  // pi_1 earns r_D forever at s_1, so its value is r_D / (1 - gamma).
  const ChainSpec median = with_rd(base, std::exp(ln.mu_log) * (1.0 - base.gamma));
  REQUIRE(closed_form_value(median, 1, 1) == Approx(std::exp(ln.mu_log)).epsilon(1e-12));
  const SuccessEstimate at_median = approx_success_probability(median, 10, FamilyCriterion::pi(0));
  CHECK(std::fabs(at_median.conditional_prob - 0.5) < 1e-6);
  CHECK(at_median.method == EstimateMethod::LogNormal);
  CHECK(at_median.total == Approx(at_median.traverse_prob * at_median.conditional_prob).epsilon(1e-15));

  const ChainSpec sure = make_prototype_spec(1, Productivity::SelfLoop, 5, 1.0, 1.0, 0.001, 0.998);
  CHECK(approx_success_probability(sure, 3, FamilyCriterion::pi(0)).conditional_prob == 1.0);
  const double v0 = closed_form_value(sure, 0, 1);
  CHECK(approx_success_probability(with_rd(sure, 1.01 * v0 * (1 - sure.gamma)), 3, FamilyCriterion::pi(0)).conditional_prob ==
        0.0);
}

TEST_CASE("approx success against enumeration") {
  const ChainSpec spec = make_prototype_spec(1, Productivity::SelfLoop, 4, 0.6, 1.0, 0.001, 0.998);
  const SuccessEstimate a = approx_success_probability(spec, 8, FamilyCriterion::pi(0));
  const SuccessEstimate e = exact_success_probability(spec, 8, FamilyCriterion::pi(0));
  CHECK(std::fabs(a.total - e.total) <= 0.02);
  CHECK_THROWS_AS(approx_success_probability(spec, 8, FamilyCriterion::pi(5)), ValidationError);
}

TEST_CASE("critical value at the log-normal median") {
  // With the threshold in the bulk, enumeration at the fixed count N = 15 is
  // visibly discrete. 0.4045 is a brute-force sum over all 16^3 outcomes.
  ChainSpec spec = make_prototype_spec(1, Productivity::SelfLoop, 4, 0.6, 1.0, 0.001, 0.998);
  const LogNormalParams ln = lognormal_from_moments(v_moments(spec, 0, 8));
  spec.r_D = std::exp(ln.mu_log) * (1.0 - spec.gamma);
  const SuccessEstimate a = approx_success_probability(spec, 8, FamilyCriterion::pi(0));
  const SuccessEstimate e = exact_success_probability(spec, 8, FamilyCriterion::pi(0));
  CHECK(std::fabs(a.conditional_prob - 0.5) < 1e-6);
  CHECK(e.conditional_prob == Approx(0.4045).epsilon(0.0005 / 0.4045));
}

TEST_CASE("property: approx total never exceeds traverse") {
  Rng rng(8080);
  for (int t = 0; t < 150; ++t) {
    ChainSpec spec = gen::prototype(rng, 2, 8, 0.2, 1.0);
    spec.r_D = gen::uniform(rng, 0.0, 0.9) * (1.0 - spec.gamma) * closed_form_value(spec, 0, 1);
    const int m = gen::integer(rng, 1, 20);
    const int k = gen::integer(rng, 0, spec.n);
    const SuccessEstimate est = approx_success_probability(spec, m, FamilyCriterion::pi(k));
    CHECK(est.total <= est.traverse_prob);
    CHECK(est.conditional_prob >= 0.0);
    CHECK(est.conditional_prob <= 1.0);
  }
}

TEST_CASE("property: sigma' does not grow with m") {
  Rng rng(4321);
  for (int t = 0; t < 150; ++t) {
    const ChainSpec spec = gen::prototype(rng, 2, 10, 0.2, 1.0);
    double last = INFINITY;
    for (int m = 1; m <= 25; ++m) {
      const double sigma = lognormal_from_moments(v_moments(spec, 0, m)).sigma_log;
      CHECK(sigma <= last + 1e-15);
      last = sigma;
    }
  }
}
