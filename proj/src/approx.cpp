#include "explore_prob/approx.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include <boost/math/quadrature/gauss_kronrod.hpp>

#include "explore_prob/errors.hpp"

namespace explore_prob {

namespace {

std::size_t at(int i) { return static_cast<std::size_t>(i - 1); }

// Moments of F_j = prod_{i=j}^{n-1} Y_i under the expected visit numbers.
Moments suffix_moments(const ChainSpec& spec, const ExpectedVisits& ev, int j) {
  std::vector<Moments> factors;
  for (int i = j; i < spec.n; ++i) factors.push_back(y_moments(spec.forward_p[at(i)], ev.fwd[at(i)], spec.gamma));
  if (factors.empty()) return {1.0, 0.0};
  return f_moments(factors);
}

// P(ln X > threshold) for X log-normal; sigma 0 is a step at the median.
double upper_tail(const LogNormalParams& ln, double log_threshold) {
  if (ln.sigma_log == 0.0) {
    if (ln.mu_log > log_threshold) return 1.0;
    return ln.mu_log == log_threshold ? 0.5 : 0.0;
  }
  return 1.0 - stats::normal_cdf((log_threshold - ln.mu_log) / ln.sigma_log);
}

double lower_tail(const LogNormalParams& ln, double log_threshold) {
  return 1.0 - upper_tail(ln, log_threshold);
}

double safe_log(double x) { return x > 0.0 ? std::log(x) : -INFINITY; }

// Conditional probability that pi_k is the output, 0 <= k <= n.
double member_probability(const ChainSpec& spec, const ExpectedVisits& ev, int k, int m) {
  const int n = spec.n;
  const double g = spec.gamma;
  if (k == 0) {
    const LogNormalParams ln = lognormal_from_moments(v_moments(spec, 0, m));
    return upper_tail(ln, safe_log(closed_form_value(spec, 1, 1)));
  }
  const double suffix_goal = goal_state_value(spec, 1, 0.0);
  if (k == n) return suffix_goal < closed_form_value(spec, n, n) ? 1.0 : 0.0;

  // Condition (1) on Y_k * X < t1 and condition (2) on X > t2, X = F_{k+1}.
  const double b_k = closed_form_value(spec, k, k);
  const double t1 = (k == 1 && spec.productivity == Productivity::Reset) ? b_k / (spec.r_G + g * b_k)
                                                                        : b_k / suffix_goal;
  const double t2 = closed_form_value(spec, k + 1, k + 1) / suffix_goal;
  if (!(t1 > 0.0)) return 0.0;
  const LogNormalParams x = lognormal_from_moments(suffix_moments(spec, ev, k + 1));
  const LogNormalParams y = lognormal_from_moments(y_moments(spec.forward_p[at(k)], ev.fwd[at(k)], g));
  const double log_t1 = std::log(t1);
  const double log_t2 = safe_log(t2);

  if (x.sigma_log == 0.0) {
    if (!(x.mu_log > log_t2)) return 0.0;
    return lower_tail(y, log_t1 - x.mu_log);
  }
  constexpr double kReach = 12.0;
  const double z_lo = std::max(-kReach, (log_t2 - x.mu_log) / x.sigma_log);
  if (z_lo >= kReach) return 0.0;
  auto integrand = [&](double z) {
    const double density = std::exp(-0.5 * z * z) / std::sqrt(2.0 * std::numbers::pi);
    return density * lower_tail(y, log_t1 - (x.mu_log + x.sigma_log * z));
  };
  const double value = boost::math::quadrature::gauss_kronrod<double, 61>::integrate(integrand, z_lo, kReach, 15, 1e-12);
  return std::clamp(value, 0.0, 1.0);
}

}  // namespace

Moments y_moments(double p, double n_bar, double gamma) {
  if (!(p > 0.0 && p <= 1.0)) throw ValidationError("y_moments: p must lie in (0,1]");
  if (!(n_bar > 0.0)) throw ValidationError("y_moments: n_bar must be positive");
  if (!(gamma > 0.0 && gamma < 1.0)) throw ValidationError("y_moments: gamma must lie in (0,1)");
  const double c = (1.0 - gamma) / gamma;
  const double denom = p + c;
  return {p / denom, c * c / std::pow(denom, 4) * p * (1.0 - p) / n_bar};
}

Moments f_moments(const std::vector<Moments>& factors) {
  if (factors.empty()) throw ValidationError("f_moments: empty factor list");
  double mean = 1.0, second = 1.0;
  for (const Moments& y : factors) {
    mean *= y.mean;
    second *= y.variance + y.mean * y.mean;
  }
  return {mean, std::max(0.0, second - mean * mean)};
}

Moments v_moments(const ChainSpec& spec, int k, int m) {
  validate_chain_spec(spec);
  if (k < 0 || k >= spec.n) throw ValidationError("v_moments: k must lie in 0..n-1");
  const ExpectedVisits ev = expected_visit_numbers(spec, m);
  const Moments f = suffix_moments(spec, ev, k + 1);
  const double g = spec.gamma;
  if (spec.productivity == Productivity::Reset && k == 0) {
    const double denom = 1.0 - g * f.mean;
    return {spec.r_G * f.mean / denom, spec.r_G * spec.r_G * f.variance / std::pow(denom, 4)};
  }
  const double scale = goal_state_value(spec, 1, 0.0);
  return {scale * f.mean, scale * scale * f.variance};
}

LogNormalParams lognormal_from_moments(const Moments& mom) {
  if (!(mom.mean > 0.0)) throw ValidationError("lognormal_from_moments: mean must be positive");
  if (!(mom.variance >= 0.0)) throw ValidationError("lognormal_from_moments: variance must be nonnegative");
  const double ratio = mom.variance / (mom.mean * mom.mean);
  return {std::log(mom.mean / std::sqrt(1.0 + ratio)), std::sqrt(std::log1p(ratio))};
}

SuccessEstimate approx_success_probability(const ChainSpec& spec, int m, const FamilyCriterion& criterion) {
  validate_chain_spec(spec);
  if (criterion.ks.empty()) throw ValidationError("criterion needs at least one family index");
  std::vector<int> ks(criterion.ks);
  std::sort(ks.begin(), ks.end());
  ks.erase(std::unique(ks.begin(), ks.end()), ks.end());
  const ExpectedVisits ev = expected_visit_numbers(spec, m);
  double conditional = 0.0;
  for (int k : ks) {
    if (k < 0 || k > spec.n) throw ValidationError("family index k must lie in 0..n");
    conditional += member_probability(spec, ev, k, m);
  }
  SuccessEstimate est;
  est.conditional_prob = std::clamp(conditional, 0.0, 1.0);
  est.traverse_prob = traverse_probability(spec.forward_p, m);
  est.total = est.traverse_prob * est.conditional_prob;
  est.method = EstimateMethod::LogNormal;
  return est;
}

}  // namespace explore_prob
