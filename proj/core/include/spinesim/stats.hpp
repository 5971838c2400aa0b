#pragma once

#include <array>
#include <cstdint>
#include <functional>
#include <span>
#include <vector>

namespace spinesim {

// Exactly rounded floating-point sum (Shewchuk partials, as in Python's fsum).
// The result depends only on the multiset of inputs, so merges are associative.
class ExactSum {
 public:
  void add(double x);
  void merge(const ExactSum& other);
  double value() const;

 private:
  std::vector<double> partials_;
};

struct Estimate {
  double mean = 0.0;
  double se = 0.0;
  std::uint64_t n = 0;
};

class Accumulator {
 public:
  void add(double x);
  void merge(const Accumulator& other);

  std::uint64_t count() const { return n_; }
  double sum() const { return sum_.value(); }
  double mean() const;
  double variance() const;  // sample variance, n - 1 denominator
  double se() const;
  double min() const { return min_; }
  double max() const { return max_; }
  Estimate estimate() const;

 private:
  std::uint64_t n_ = 0;
  ExactSum sum_;
  ExactSum sumsq_;
  double min_ = 0.0;
  double max_ = 0.0;
};

// Throws std::invalid_argument when fewer than two samples.
Estimate mc_mean(std::span<const double> samples);

double z_score(const Estimate& a, double b);
double z_score(const Estimate& a, const Estimate& b);

// P(K > lambda) for the Kolmogorov distribution.
double kolmogorov_sf(double lambda);

struct KsResult {
  double d = 0.0;
  double p = 1.0;
  std::size_t n = 0;
};

KsResult ks_test(std::vector<double> samples, const std::function<double(double)>& cdf);

// Asymptotic 1% critical value of D.
double ks_critical_1pct(std::size_t n);

struct ChiSquareResult {
  double stat = 0.0;
  int dof = 0;
  double p = 1.0;
};

double chi_square_sf(double x, int dof);
ChiSquareResult chi_square_test(std::span<const std::uint64_t> counts, std::span<const double> probs);

struct LaplaceCell {
  double theta = 0.0;
  double mu = 0.0;
  double value = 0.0;
  double se = 0.0;
};

// Mean of exp(-theta x - mu y) over samples for each (theta, mu) in thetas x mus (row-major).
std::vector<LaplaceCell> empirical_laplace(std::span<const std::array<double, 2>> samples,
                                           std::span<const double> thetas, std::span<const double> mus);

}  // namespace spinesim
