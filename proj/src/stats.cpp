#include "explore_prob/stats.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include <boost/math/distributions/binomial.hpp>
#include <boost/math/distributions/normal.hpp>
#include <boost/math/special_functions/gamma.hpp>

#include "explore_prob/errors.hpp"

namespace explore_prob::stats {

double binomial_pmf(std::int64_t n, std::int64_t k, double p) {
  if (n < 0 || k < 0 || k > n) throw ValidationError("binomial_pmf: need 0 <= k <= n");
  if (!(p >= 0.0 && p <= 1.0)) throw ValidationError("binomial_pmf: p outside [0,1]");
  if (p == 0.0) return k == 0 ? 1.0 : 0.0;
  if (p == 1.0) return k == n ? 1.0 : 0.0;
  // Boost evaluates through the incomplete-beta derivative, which stays
  // accurate to a few ulp where the log-gamma route loses ~1e-10 at n=1e5.
  const boost::math::binomial_distribution<double> dist(static_cast<double>(n), p);
  return boost::math::pdf(dist, static_cast<double>(k));
}

std::vector<double> binomial_pmf_table(std::int64_t n, double p) {
  std::vector<double> out(static_cast<std::size_t>(n) + 1);
  for (std::int64_t k = 0; k <= n; ++k) out[static_cast<std::size_t>(k)] = binomial_pmf(n, k, p);
  return out;
}

double normal_cdf(double x) {
  if (std::isnan(x)) throw ValidationError("normal_cdf: NaN argument");
  if (x == INFINITY) return 1.0;
  if (x == -INFINITY) return 0.0;
  constexpr double p = 0.2316419;
  constexpr double b1 = 0.319381530, b2 = -0.356563782, b3 = 1.781477937, b4 = -1.821255978,
                   b5 = 1.330274429;
  const double ax = std::fabs(x);
  const double t = 1.0 / (1.0 + p * ax);
  const double density = std::exp(-0.5 * ax * ax) / std::sqrt(2.0 * std::numbers::pi);
  const double poly = t * (b1 + t * (b2 + t * (b3 + t * (b4 + t * b5))));
  const double upper = density * poly;
  return x >= 0.0 ? 1.0 - upper : upper;
}

double lognormal_cdf(double x, const LogNormalParams& params) {
  if (!(x > 0.0)) throw ValidationError("lognormal_cdf: x must be positive");
  const double z = std::log(x) - params.mu_log;
  if (params.sigma_log == 0.0) return z >= 0.0 ? 1.0 : 0.0;
  return normal_cdf(z / params.sigma_log);
}

double normal_quantile(double prob) {
  return boost::math::quantile(boost::math::normal_distribution<double>(), prob);
}

std::pair<double, double> wilson_interval(std::int64_t successes, std::int64_t trials,
                                          double confidence) {
  if (trials <= 0) throw ValidationError("wilson_interval: trials must be positive");
  if (successes < 0 || successes > trials)
    throw ValidationError("wilson_interval: successes outside [0, trials]");
  const double z = normal_quantile(0.5 + confidence / 2.0);
  const double n = static_cast<double>(trials);
  const double phat = static_cast<double>(successes) / n;
  const double z2 = z * z;
  const double center = (phat + z2 / (2.0 * n)) / (1.0 + z2 / n);
  const double half = z * std::sqrt(phat * (1.0 - phat) / n + z2 / (4.0 * n * n)) / (1.0 + z2 / n);
  return {std::max(0.0, center - half), std::min(1.0, center + half)};
}

double kolmogorov_sf(double lambda) {
  if (lambda <= 0.0) return 1.0;
  constexpr double kTermFloor = 1e-10;
  if (lambda < 1.0) {
    // Small lambda: the theta-function form converges much faster.
    const double pi2 = std::numbers::pi * std::numbers::pi;
    double cdf = 0.0;
    for (int k = 1; k < 1000; ++k) {
      const double j = 2.0 * k - 1.0;
      const double term = std::exp(-j * j * pi2 / (8.0 * lambda * lambda));
      cdf += term;
      if (term < kTermFloor) break;
    }
    cdf *= std::sqrt(2.0 * std::numbers::pi) / lambda;
    return std::clamp(1.0 - cdf, 0.0, 1.0);
  }
  double sum = 0.0;
  for (int k = 1; k < 1000; ++k) {
    const double term = std::exp(-2.0 * k * k * lambda * lambda);
    sum += (k % 2 == 1 ? term : -term);
    if (term < kTermFloor) break;
  }
  return std::clamp(2.0 * sum, 0.0, 1.0);
}

TestResult ks_test_lognormal(const std::vector<double>& sample, const LogNormalParams& params) {
  if (sample.empty()) throw ValidationError("ks_test_lognormal: empty sample");
  std::vector<double> xs(sample);
  for (double x : xs)
    if (!(x > 0.0)) throw ValidationError("ks_test_lognormal: sample values must be positive");
  std::sort(xs.begin(), xs.end());
  const double n = static_cast<double>(xs.size());
  double d = 0.0;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    const double f = lognormal_cdf(xs[i], params);
    const double above = static_cast<double>(i + 1) / n - f;
    const double below = f - static_cast<double>(i) / n;
    d = std::max({d, above, below});
  }
  d = std::clamp(d, 0.0, 1.0);
  return {d, kolmogorov_sf(std::sqrt(n) * d), "asymptotic Kolmogorov distribution, sqrt(n) scaling"};
}

TestResult friedman_test(const std::vector<std::vector<double>>& blocks) {
  if (blocks.size() < 2) throw ValidationError("friedman_test: need at least 2 blocks");
  const std::size_t k = blocks.front().size();
  if (k < 2) throw ValidationError("friedman_test: need at least 2 treatments");
  for (const auto& row : blocks)
    if (row.size() != k) throw ValidationError("friedman_test: ragged block matrix");

  const double n = static_cast<double>(blocks.size());
  const double kd = static_cast<double>(k);
  std::vector<double> rank_sums(k, 0.0);
  double tie_sum = 0.0;
  std::vector<std::size_t> order(k);
  for (const auto& row : blocks) {
    for (std::size_t j = 0; j < k; ++j) order[j] = j;
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return row[a] < row[b]; });
    std::size_t i = 0;
    while (i < k) {
      std::size_t j = i;
      while (j + 1 < k && row[order[j + 1]] == row[order[i]]) ++j;
      const double mid_rank = (static_cast<double>(i + j) / 2.0) + 1.0;
      for (std::size_t t = i; t <= j; ++t) rank_sums[order[t]] += mid_rank;
      const double tied = static_cast<double>(j - i + 1);
      tie_sum += tied * tied * tied - tied;
      i = j + 1;
    }
  }
  double sq = 0.0;
  for (double r : rank_sums) sq += r * r;
  const double raw = 12.0 / (n * kd * (kd + 1.0)) * sq - 3.0 * n * (kd + 1.0);
  const double correction = 1.0 - tie_sum / (n * (kd * kd * kd - kd));
  const std::string note = "mid-ranks with tie correction, chi-square approximation";
  if (correction <= 1e-12) return {0.0, 1.0, note};
  const double stat = std::max(0.0, raw / correction);
  const double p = boost::math::gamma_q((kd - 1.0) / 2.0, stat / 2.0);
  return {stat, std::clamp(p, 0.0, 1.0), note};
}

Summary summarize(const std::vector<double>& sample) {
  if (sample.empty()) throw ValidationError("summarize: empty sample");
  Summary s;
  const double n = static_cast<double>(sample.size());
  double total = 0.0;
  for (double x : sample) total += x;
  s.mean = total / n;
  double ss = 0.0;
  for (double x : sample) ss += (x - s.mean) * (x - s.mean);
  s.std = sample.size() > 1 ? std::sqrt(ss / (n - 1.0)) : 0.0;

  std::vector<double> xs(sample);
  std::sort(xs.begin(), xs.end());
  auto quantile = [&](double q) {
    const double pos = q * (n - 1.0);
    const auto lo = static_cast<std::size_t>(std::floor(pos));
    const std::size_t hi = std::min(lo + 1, xs.size() - 1);
    return xs[lo] + (pos - static_cast<double>(lo)) * (xs[hi] - xs[lo]);
  };
  s.q1 = quantile(0.25);
  s.median = quantile(0.5);
  s.q3 = quantile(0.75);
  return s;
}

}  // namespace explore_prob::stats
