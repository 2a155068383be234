#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <limits>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace rrl {

inline constexpr int kNumColors = 4;

/// Per-color reward weights. Grid points are unit norm; posterior means are not.
using Theta = std::array<double, kNumColors>;

inline constexpr double kNegInf = -std::numeric_limits<double>::infinity();

/// Raised when every hypothesis receives zero likelihood.
class DegeneratePosteriorError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Raised when a scalar objective carries no information about its argument.
class FlatObjectiveError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

double dot(const Theta& a, const Theta& b);
double norm(const Theta& t);
Theta normalized(const Theta& t);

/// Unit-norm reward vector. Construction throws if the norm is off by more than 1e-9.
class RewardVector {
 public:
  explicit RewardVector(const Theta& theta);
  static RewardVector normalize(const Theta& theta) { return RewardVector(normalized(theta)); }

  const Theta& theta() const { return theta_; }
  double operator[](int i) const { return theta_[static_cast<std::size_t>(i)]; }
  operator const Theta&() const { return theta_; }

 private:
  Theta theta_;
};

// Numerics shared by every module. All reductions run in index order.
double log_sum_exp(std::span<const double> xs);
/// Writes log softmax(scale * xs) into out.
void log_softmax(std::span<const double> xs, double scale, std::span<double> out);
std::vector<double> log_softmax(std::span<const double> xs, double scale = 1.0);
/// Shannon entropy (nats) of a normalized probability vector; 0 log 0 = 0.
double entropy_of(std::span<const double> probs);
/// Entropy of the distribution proportional to exp(log_weights).
double entropy_from_log_weights(std::span<const double> log_weights);

/// Seed of an independent stream derived from (a, b).
std::uint64_t derive_seed(std::uint64_t a, std::uint64_t b);

/// Shortest round-trippable text form used for CSV/JSON output.
std::string format_double(double x);

}  // namespace rrl
