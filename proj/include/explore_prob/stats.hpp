#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

namespace explore_prob {

/// Parameters of a log-normal: ln X ~ N(mu_log, sigma_log^2).
struct LogNormalParams {
  double mu_log = 0.0;
  double sigma_log = 0.0;
};

namespace stats {

struct TestResult {
  double statistic = 0.0;
  double p_value = 1.0;
  std::string method_note;
};

struct Summary {
  double mean = 0.0;
  double std = 0.0;  ///< unbiased (n-1) standard deviation
  double q1 = 0.0;
  double median = 0.0;
  double q3 = 0.0;
};

/// C(n,k) p^k (1-p)^(n-k), computed in log space.
double binomial_pmf(std::int64_t n, std::int64_t k, double p);

/// All pmf values for k = 0..n.
std::vector<double> binomial_pmf_table(std::int64_t n, double p);

/// Standard normal CDF, Abramowitz & Stegun 26.2.17 (|error| < 7.5e-8).
double normal_cdf(double x);

double lognormal_cdf(double x, const LogNormalParams& params);

/// Quantile of the standard normal (used for interval half-widths).
double normal_quantile(double prob);

/// Wilson score interval for a binomial proportion.
std::pair<double, double> wilson_interval(std::int64_t successes, std::int64_t trials,
                                          double confidence = 0.95);

/// Survival function of the Kolmogorov distribution, P(K > lambda).
double kolmogorov_sf(double lambda);

/// One-sample KS test of the sample against a log-normal model.
TestResult ks_test_lognormal(const std::vector<double>& sample, const LogNormalParams& params);

/// Friedman rank test; rows are blocks, columns are treatments.
TestResult friedman_test(const std::vector<std::vector<double>>& blocks);

Summary summarize(const std::vector<double>& sample);

}  // namespace stats
}  // namespace explore_prob
