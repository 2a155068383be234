#pragma once

// Closed-form toy environment in which N reward "directions" each carry a
// matched/mismatched pair of extreme choices (+-R1), 2K conservative choices
// (+-R2) and neutral payoffs R3 elsewhere. Used to contrast the expected
// posterior entropy left by a demonstration with that left by a comparison.

#include <optional>

namespace rrl {

struct ToyEnvParams {
  int n = 2;  // directions
  int k = 5;  // conservative choices per sign
  double r1 = 3.0;
  double r2 = 2.0;
  double r3 = 1.0;

  /// Throws std::invalid_argument unless n >= 1, k >= 0 and r1 > r2 > r3 > 0.
  void validate() const;
};

/// Expected posterior entropy (nats) after one demonstration under a uniform prior over the 2N rewards.
double demo_expected_posterior_entropy(const ToyEnvParams& p, double beta);
/// Expected posterior entropy after a comparison between the two extreme choices of one direction.
double comparison_expected_posterior_entropy(const ToyEnvParams& p, double beta);

struct CrossoverSearch {
  double low = 1e-3;
  double high = 1e3;
  int scan_points = 200;  // log grid used to bracket the first sign change
  int iterations = 60;
};

/// First beta in range where demo entropy - comparison entropy changes sign, refined by bisection in log beta.
/// Empty when the difference never changes sign on the scan.
std::optional<double> find_crossover_beta(const ToyEnvParams& p, const CrossoverSearch& search = {});

}  // namespace rrl
