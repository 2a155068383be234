#include "rrl/toy.hpp"

#include <cmath>
#include <stdexcept>
#include <vector>

#include "rrl/common.hpp"

namespace rrl {

void ToyEnvParams::validate() const {
  if (n < 1) throw std::invalid_argument("toy environment needs at least one direction");
  if (k < 0) throw std::invalid_argument("conservative choice count must be non-negative");
  if (!(r1 > r2 && r2 > r3 && r3 > 0.0)) throw std::invalid_argument("toy rewards need r1 > r2 > r3 > 0");
}

namespace {

void check_beta(double beta) {
  if (!(beta >= 0.0) || !std::isfinite(beta)) throw std::invalid_argument("beta must be finite and non-negative");
}

// Entropy of the distribution proportional to (e^{a}, e^{b}, m copies of e^{c}).
double pair_plus_copies(double a, double b, int m, double c) {
  std::vector<double> lw{a, b};
  lw.insert(lw.end(), static_cast<std::size_t>(m), c);
  return entropy_from_log_weights(lw);
}

// log(e^{a} + e^{b} + m e^{c}), with the m term dropped when m = 0.
double lse3(double a, double b, int m, double c) {
  std::vector<double> xs{a, b};
  if (m > 0) xs.push_back(std::log(static_cast<double>(m)) + c);
  return log_sum_exp(xs);
}

}  // namespace

double demo_expected_posterior_entropy(const ToyEnvParams& p, double beta) {
  p.validate();
  check_beta(beta);
  const int others = 2 * (p.n - 1);
  const double h_extreme = pair_plus_copies(beta * p.r1, -beta * p.r1, others, beta * p.r3);
  if (p.k == 0) return h_extreme;
  const double h_conservative = pair_plus_copies(beta * p.r2, -beta * p.r2, others, beta * p.r3);
  const double lw_ext = lse3(beta * p.r1, -beta * p.r1, others, beta * p.r3);
  const double lw_con = std::log(static_cast<double>(p.k)) + lse3(beta * p.r2, -beta * p.r2, others, beta * p.r3);
  const double lz = log_sum_exp(std::vector<double>{lw_ext, lw_con});
  return std::exp(lw_ext - lz) * h_extreme + std::exp(lw_con - lz) * h_conservative;
}

double comparison_expected_posterior_entropy(const ToyEnvParams& p, double beta) {
  p.validate();
  check_beta(beta);
  // Posterior ∝ (e^{bR1}/Z, e^{-bR1}/Z, 1/2, ...); scaled by Z so N = 1 matches the demonstration vector exactly.
  const double log_half_z = lse3(beta * p.r1, -beta * p.r1, 0, 0.0) - std::log(2.0);
  return pair_plus_copies(beta * p.r1, -beta * p.r1, 2 * (p.n - 1), log_half_z);
}

std::optional<double> find_crossover_beta(const ToyEnvParams& p, const CrossoverSearch& search) {
  p.validate();
  if (!(search.low > 0.0) || !(search.high > search.low) || search.scan_points < 2 || search.iterations < 1)
    throw std::invalid_argument("crossover search needs 0 < low < high and at least two scan points");
  auto diff = [&](double lb) {
    const double beta = std::exp(lb);
    const double d = demo_expected_posterior_entropy(p, beta) - comparison_expected_posterior_entropy(p, beta);
    return std::abs(d) <= 1e-13 ? 0.0 : d;
  };
  const double la = std::log(search.low), lb = std::log(search.high);
  double u = la, du = diff(u);
  for (int i = 1; i < search.scan_points; ++i) {
    const double w = la + (lb - la) * i / (search.scan_points - 1);
    const double dw = diff(w);
    if (du != 0.0 && dw != 0.0 && (du < 0.0) != (dw < 0.0)) {
      double lo = u, hi = w;
      for (int it = 0; it < search.iterations; ++it) {
        const double m = 0.5 * (lo + hi);
        const double dm = diff(m);
        if (dm == 0.0) return std::exp(m);
        ((dm < 0.0) == (du < 0.0) ? lo : hi) = m;
      }
      return std::exp(0.5 * (lo + hi));
    }
    if (dw != 0.0) {
      u = w;
      du = dw;
    }
  }
  return std::nullopt;
}

}  // namespace rrl
