#include <cmath>
#include <random>

#include "doctest.h"
#include "toy_oracle.hpp"

using namespace rrl;
using namespace rrl::testing;

TEST_CASE("parameter validation") {
  CHECK_NOTHROW(ToyEnvParams{}.validate());
  CHECK_THROWS_AS((ToyEnvParams{0, 1, 3, 2, 1}.validate()), std::invalid_argument);
  CHECK_THROWS_AS((ToyEnvParams{1, -1, 3, 2, 1}.validate()), std::invalid_argument);
  CHECK_THROWS_AS((ToyEnvParams{1, 1, 2, 2, 1}.validate()), std::invalid_argument);
  CHECK_THROWS_AS((ToyEnvParams{1, 1, 3, 2, 0}.validate()), std::invalid_argument);
  CHECK_THROWS_AS(demo_expected_posterior_entropy(ToyEnvParams{}, -1.0), std::invalid_argument);
}

TEST_CASE("beta = 0 leaves the uniform posterior") {
  for (int n : {1, 2, 4})
    for (int k : {0, 3}) {
      const ToyEnvParams p{n, k, 3, 2, 1};
      CHECK(demo_expected_posterior_entropy(p, 0.0) == doctest::Approx(std::log(2.0 * n)).epsilon(1e-14));
      CHECK(comparison_expected_posterior_entropy(p, 0.0) == doctest::Approx(std::log(2.0 * n)).epsilon(1e-14));
    }
}

TEST_CASE("K = 0 keeps only the extreme-choice term") {
  const ToyEnvParams p{3, 0, 3, 2, 1};
  const double beta = 0.7;
  std::vector<double> w{std::exp(beta * 3), std::exp(-beta * 3)};
  for (int i = 0; i < 4; ++i) w.push_back(std::exp(beta * 1));
  double z = 0, h = 0;
  for (double x : w) z += x;
  for (double x : w) h -= x / z * std::log(x / z);
  CHECK(demo_expected_posterior_entropy(p, beta) == doctest::Approx(h).epsilon(1e-13));
}

TEST_CASE("closed forms match exhaustive enumeration") {
  SUBCASE("N = 2, K = 5, R = (3, 2, 1), beta = 1") {
    const ToyOracle o{{2, 5, 3, 2, 1}};
    CHECK(std::abs(demo_expected_posterior_entropy(o.p, 1.0) - o.demo(1.0)) < 1e-9);
    CHECK(std::abs(comparison_expected_posterior_entropy(o.p, 1.0) - o.comparison(1.0)) < 1e-9);
  }
  SUBCASE("fuzzed parameters with N <= 4, K <= 6") {
    std::mt19937_64 rng(5);
    std::uniform_int_distribution<int> dn(1, 4), dk(0, 6);
    std::uniform_real_distribution<double> u(0.05, 3.0);
    for (int trial = 0; trial < 40; ++trial) {
      const double r3 = u(rng), r2 = r3 + u(rng), r1 = r2 + u(rng);
      const ToyOracle o{{dn(rng), dk(rng), r1, r2, r3}};
      const double beta = std::exp(std::uniform_real_distribution<double>(std::log(1e-2), std::log(10.0))(rng));
      CHECK(std::abs(demo_expected_posterior_entropy(o.p, beta) - o.demo(beta)) < 1e-9);
      CHECK(std::abs(comparison_expected_posterior_entropy(o.p, beta) - o.comparison(beta)) < 1e-9);
    }
  }
}

TEST_CASE("entropies are bounded and non-increasing in beta") {
  for (const ToyEnvParams p : {ToyEnvParams{1, 3, 3, 2, 1}, ToyEnvParams{2, 5, 3, 2, 1}, ToyEnvParams{4, 6, 1, 0.5, 0.1},
                               ToyEnvParams{3, 0, 5, 2, 1}}) {
    double prev_d = std::log(2.0 * p.n), prev_c = prev_d;
    for (double beta = 1e-3; beta <= 1e3; beta *= 1.1) {
      const double d = demo_expected_posterior_entropy(p, beta), c = comparison_expected_posterior_entropy(p, beta);
      CHECK(d >= 0.0);
      CHECK(c >= 0.0);
      CHECK(d <= prev_d + 1e-12);
      CHECK(c <= prev_c + 1e-12);
      prev_d = d;
      prev_c = c;
    }
  }
}

TEST_CASE("with one direction comparisons beat demonstrations") {
  for (int k : {1, 3, 10}) {
    const ToyEnvParams p{1, k, 3, 2, 1};
    for (double beta = 1e-2; beta <= 10.0; beta *= 1.25)
      CHECK(comparison_expected_posterior_entropy(p, beta) < demo_expected_posterior_entropy(p, beta));
    CHECK_FALSE(find_crossover_beta(p).has_value());
  }
}

TEST_CASE("identical choice sets have no crossover") {
  const ToyEnvParams p{1, 0, 3, 2, 1};
  for (double beta : {0.01, 1.0, 50.0})
    CHECK(demo_expected_posterior_entropy(p, beta) == comparison_expected_posterior_entropy(p, beta));
  CHECK_FALSE(find_crossover_beta(p).has_value());
}

TEST_CASE("crossover agrees with a dense scan") {
  const ToyEnvParams p{2, 5, 3, 2, 1};
  const auto beta_star = find_crossover_beta(p);
  REQUIRE(beta_star.has_value());
  CHECK(*beta_star >= 0.1);
  CHECK(*beta_star <= 10.0);

  const int n = 10000;
  const double la = std::log(1e-3), lb = std::log(1e3);
  auto diff = [&](double beta) {
    return demo_expected_posterior_entropy(p, beta) - comparison_expected_posterior_entropy(p, beta);
  };
  double prev = diff(1e-3), scan = -1.0;
  for (int i = 1; i < n && scan < 0; ++i) {
    const double beta = std::exp(la + (lb - la) * i / (n - 1));
    const double d = diff(beta);
    if ((d < 0) != (prev < 0)) scan = beta;
    prev = d;
  }
  CHECK(std::abs(*beta_star - scan) < 1e-3);
  // Comparisons win below the crossover, demonstrations above it.
  CHECK(diff(0.5 * *beta_star) > 0.0);
  CHECK(diff(2.0 * *beta_star) < 0.0);
}

TEST_CASE("invalid search range") {
  CHECK_THROWS_AS(find_crossover_beta(ToyEnvParams{}, CrossoverSearch{1.0, 0.5}), std::invalid_argument);
}
