#include "rrl/common.hpp"

#include <algorithm>
#include <cstdio>
#include <cstdlib>
#include <random>

namespace rrl {

double dot(const Theta& a, const Theta& b) {
  double s = 0.0;
  for (int i = 0; i < kNumColors; ++i) s += a[i] * b[i];
  return s;
}

double norm(const Theta& t) { return std::sqrt(dot(t, t)); }

Theta normalized(const Theta& t) {
  const double n = norm(t);
  if (!(n > 0.0) || !std::isfinite(n)) throw std::invalid_argument("cannot normalize a zero or non-finite reward vector");
  Theta out;
  for (int i = 0; i < kNumColors; ++i) out[i] = t[i] / n;
  return out;
}

RewardVector::RewardVector(const Theta& theta) : theta_(theta) {
  if (std::abs(norm(theta) - 1.0) > 1e-9) throw std::invalid_argument("reward vector must have unit l2 norm");
}

double log_sum_exp(std::span<const double> xs) {
  if (xs.empty()) return kNegInf;
  const double m = *std::max_element(xs.begin(), xs.end());
  if (m == kNegInf) return kNegInf;
  if (!std::isfinite(m)) return m;
  double s = 0.0;
  for (double x : xs) s += std::exp(x - m);
  return m + std::log(s);
}

void log_softmax(std::span<const double> xs, double scale, std::span<double> out) {
  double m = kNegInf;
  for (std::size_t i = 0; i < xs.size(); ++i) m = std::max(m, scale * xs[i]);
  double s = 0.0;
  for (std::size_t i = 0; i < xs.size(); ++i) s += std::exp(scale * xs[i] - m);
  const double lz = m + std::log(s);
  for (std::size_t i = 0; i < xs.size(); ++i) out[i] = scale * xs[i] - lz;
}

std::vector<double> log_softmax(std::span<const double> xs, double scale) {
  std::vector<double> out(xs.size());
  log_softmax(xs, scale, out);
  return out;
}

double entropy_of(std::span<const double> probs) {
  double h = 0.0;
  for (double p : probs)
    if (p > 0.0) h -= p * std::log(p);
  return h;
}

double entropy_from_log_weights(std::span<const double> log_weights) {
  const double lz = log_sum_exp(log_weights);
  double h = 0.0;
  for (double lw : log_weights) {
    const double l = lw - lz;
    if (l == kNegInf) continue;
    h -= std::exp(l) * l;
  }
  return h;
}

std::string format_double(double x) {
  char buf[32];
  for (int precision = 6; precision <= 17; ++precision) {
    std::snprintf(buf, sizeof buf, "%.*g", precision, x);
    if (std::strtod(buf, nullptr) == x) break;
  }
  return buf;
}

std::uint64_t derive_seed(std::uint64_t a, std::uint64_t b) {
  std::seed_seq seq{static_cast<std::uint32_t>(a), static_cast<std::uint32_t>(a >> 32), static_cast<std::uint32_t>(b),
                    static_cast<std::uint32_t>(b >> 32)};
  std::array<std::uint32_t, 2> out{};
  seq.generate(out.begin(), out.end());
  return (static_cast<std::uint64_t>(out[0]) << 32) | out[1];
}

}  // namespace rrl
