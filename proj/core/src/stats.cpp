#include "spinesim/stats.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <stdexcept>

#include <boost/math/special_functions/gamma.hpp>

namespace spinesim {

void ExactSum::add(double x) {
  std::size_t i = 0;
  for (double y : partials_) {
    if (std::fabs(x) < std::fabs(y)) std::swap(x, y);
    const double hi = x + y;
    const double lo = y - (hi - x);
    if (lo != 0.0) partials_[i++] = lo;
    x = hi;
  }
  partials_.resize(i);
  partials_.push_back(x);
}

void ExactSum::merge(const ExactSum& other) {
  for (double p : other.partials_) add(p);
}

double ExactSum::value() const {
  if (partials_.empty()) return 0.0;
  auto n = partials_.size();
  double hi = partials_[--n];
  double lo = 0.0;
  while (n > 0) {
    const double x = hi;
    const double y = partials_[--n];
    hi = x + y;
    const double yr = hi - x;
    lo = y - yr;
    if (lo != 0.0) break;
  }
  // Round-half-even correction when the tail sits exactly on a tie.
  if (n > 0 && ((lo < 0.0 && partials_[n - 1] < 0.0) || (lo > 0.0 && partials_[n - 1] > 0.0))) {
    const double y = lo * 2.0;
    const double x = hi + y;
    if (y == x - hi) hi = x;
  }
  return hi;
}

void Accumulator::add(double x) {
  if (n_ == 0) {
    min_ = max_ = x;
  } else {
    min_ = std::min(min_, x);
    max_ = std::max(max_, x);
  }
  ++n_;
  sum_.add(x);
  sumsq_.add(x * x);
}

void Accumulator::merge(const Accumulator& o) {
  if (o.n_ == 0) return;
  if (n_ == 0) {
    min_ = o.min_;
    max_ = o.max_;
  } else {
    min_ = std::min(min_, o.min_);
    max_ = std::max(max_, o.max_);
  }
  n_ += o.n_;
  sum_.merge(o.sum_);
  sumsq_.merge(o.sumsq_);
}

double Accumulator::mean() const { return n_ == 0 ? 0.0 : sum_.value() / static_cast<double>(n_); }

double Accumulator::variance() const {
  if (n_ < 2 || min_ == max_) return 0.0;
  const double n = static_cast<double>(n_);
  const double s = sum_.value();
  const double v = (sumsq_.value() - s * (s / n)) / (n - 1.0);
  return std::max(v, 0.0);
}

double Accumulator::se() const { return n_ < 2 ? 0.0 : std::sqrt(variance() / static_cast<double>(n_)); }

Estimate Accumulator::estimate() const { return {mean(), se(), n_}; }

Estimate mc_mean(std::span<const double> samples) {
  if (samples.size() < 2) throw std::invalid_argument("mc_mean needs at least two samples");
  Accumulator acc;
  for (double x : samples) acc.add(x);
  return acc.estimate();
}

double z_score(const Estimate& a, double b) {
  if (a.se == 0.0) return a.mean == b ? 0.0 : std::copysign(INFINITY, a.mean - b);
  return (a.mean - b) / a.se;
}

double z_score(const Estimate& a, const Estimate& b) {
  const double se = std::hypot(a.se, b.se);
  if (se == 0.0) return a.mean == b.mean ? 0.0 : std::copysign(INFINITY, a.mean - b.mean);
  return (a.mean - b.mean) / se;
}

double kolmogorov_sf(double lambda) {
  if (lambda <= 0.0) return 1.0;
  if (lambda < 1.18) {
    // Theta-function form converges fast for small arguments.
    const double pi2 = std::numbers::pi * std::numbers::pi;
    double s = 0.0;
    for (int k = 1; k <= 20; ++k) {
      const double m = 2.0 * k - 1.0;
      s += std::exp(-m * m * pi2 / (8.0 * lambda * lambda));
    }
    return std::clamp(1.0 - std::sqrt(2.0 * std::numbers::pi) / lambda * s, 0.0, 1.0);
  }
  double s = 0.0;
  for (int k = 1; k <= 100; ++k) {
    const double term = std::exp(-2.0 * k * k * lambda * lambda);
    s += (k % 2 == 1 ? term : -term);
    if (term < 1e-300) break;
  }
  return std::clamp(2.0 * s, 0.0, 1.0);
}

KsResult ks_test(std::vector<double> samples, const std::function<double(double)>& cdf) {
  if (samples.empty()) throw std::invalid_argument("ks_test on empty sample");
  std::sort(samples.begin(), samples.end());
  const double n = static_cast<double>(samples.size());
  double d = 0.0;
  for (std::size_t i = 0; i < samples.size(); ++i) {
    const double f = cdf(samples[i]);
    d = std::max({d, f - static_cast<double>(i) / n, static_cast<double>(i + 1) / n - f});
  }
  return {d, kolmogorov_sf(std::sqrt(n) * d), samples.size()};
}

double ks_critical_1pct(std::size_t n) { return 1.63 / std::sqrt(static_cast<double>(n)); }

double chi_square_sf(double x, int dof) {
  if (x <= 0.0) return 1.0;
  return boost::math::gamma_q(0.5 * dof, 0.5 * x);
}

ChiSquareResult chi_square_test(std::span<const std::uint64_t> counts, std::span<const double> probs) {
  if (counts.size() != probs.size() || counts.size() < 2) throw std::invalid_argument("chi_square_test: bad sizes");
  double total = 0.0;
  for (auto c : counts) total += static_cast<double>(c);
  ChiSquareResult r;
  int cells = 0;
  for (std::size_t i = 0; i < counts.size(); ++i) {
    const double e = total * probs[i];
    if (e <= 0.0) continue;
    const double diff = static_cast<double>(counts[i]) - e;
    r.stat += diff * diff / e;
    ++cells;
  }
  r.dof = cells - 1;
  r.p = chi_square_sf(r.stat, r.dof);
  return r;
}

std::vector<LaplaceCell> empirical_laplace(std::span<const std::array<double, 2>> samples,
                                           std::span<const double> thetas, std::span<const double> mus) {
  std::vector<LaplaceCell> out;
  out.reserve(thetas.size() * mus.size());
  for (double th : thetas) {
    for (double mu : mus) {
      Accumulator acc;
      for (const auto& s : samples) acc.add(std::exp(-th * s[0] - mu * s[1]));
      out.push_back({th, mu, acc.mean(), acc.se()});
    }
  }
  return out;
}

}  // namespace spinesim
