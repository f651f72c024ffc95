#pragma once

#include <vector>

#include "explore_prob/analytic.hpp"
#include "explore_prob/stats.hpp"

namespace explore_prob {

struct Moments {
  double mean = 0.0;
  double variance = 0.0;
};

/// Delta-method moments of Y = gamma p^ / (1 - gamma (1 - p^)) with
/// p^ = Binomial(N, p) / N.
Moments y_moments(double p, double n_bar, double gamma);

/// Moments of a product of independent factors.
Moments f_moments(const std::vector<Moments>& factors);

/// Moments of the estimated value of pi_k at s_{k+1}, k in 0..n-1.
Moments v_moments(const ChainSpec& spec, int k, int m);

LogNormalParams lognormal_from_moments(const Moments& mom);

SuccessEstimate approx_success_probability(const ChainSpec& spec, int m, const FamilyCriterion& criterion);

}  // namespace explore_prob
