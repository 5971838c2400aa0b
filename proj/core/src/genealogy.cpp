#include "spinesim/genealogy.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

#include "spinesim/census.hpp"
#include "spinesim/error.hpp"
#include "spinesim/parallel.hpp"
#include "spinesim/quadrature.hpp"

namespace spinesim {

namespace {

// Stream ranges per experiment so that one seed never reuses draws across them.
constexpr std::uint64_t kTagGammaMc = 1ull << 48;
constexpr std::uint64_t kTagMixture = 2ull << 48;
constexpr std::uint64_t kTagSplit = 3ull << 48;
constexpr std::uint64_t kTagJoint = 4ull << 48;
constexpr std::uint64_t kTagSurvival = 5ull << 48;
constexpr std::uint64_t kTagSpineSurvival = 6ull << 48;
constexpr std::uint64_t kTagMarginal = 7ull << 48;

constexpr std::uint64_t kBlock = 1u << 14;

void check_a_u(double a, double u) {
  if (!(a > 0.0 && a < 1.0)) throw std::invalid_argument("a must lie in (0, 1)");
  if (!(u >= 0.0 && u <= a)) throw std::invalid_argument("u must lie in [0, a]");
}

void require_critical(const EigenTriple& e) {
  if (std::fabs(e.lambda) > 1e-10)
    throw ModelError("model", "not critical: lambda = " + std::to_string(e.lambda));
}

}  // namespace

double f_a(double a, double u) {
  check_a_u(a, u);
  if (u == a) return -2.0 * std::log1p(-a) / (a * a);
  if (u < 1e-3 * a) {
    // sum_{m>=3} [2 sum_{j<m-2} a^j - (m-2) a^{m-2}] u^{m-3} / (a^{m-1} m (m-1)), times 2a
    double sum = 0.0;
    double um = 1.0;
    for (int m = 3; m <= 12; ++m) {
      double geo = 0.0;
      for (int j = 0; j <= m - 3; ++j) geo += std::pow(a, j);
      const double c = (2.0 * geo - (m - 2) * std::pow(a, m - 2)) / (std::pow(a, m - 1) * m * (m - 1));
      sum += c * um;
      um *= u;
    }
    return 2.0 * a * sum;
  }
  const double br = 2.0 * (a - u) * std::log1p(-u / a) - (2.0 - u - u / a) * std::log1p(-u);
  return 2.0 * a / (1.0 - a) * br / (u * u * u);
}

double F_a(double a, double u) {
  check_a_u(a, u);
  if (u == a) return 1.0;
  const double v = u / a;
  double h;
  if (v < 0.5) {
    // (1 - v) sum_{n>=2} (a^n - a) v^{n-2} / (n (n - 1))
    double s = 0.0;
    double an = a;
    double vn = 1.0;
    for (int n = 2; n < 200; ++n) {
      an *= a;
      const double term = (an - a) * vn / (n * (n - 1.0));
      s += term;
      if (std::fabs(term) < 1e-18 * std::fabs(s)) break;
      vn *= v;
    }
    h = (1.0 - v) * s;
  } else {
    h = (1.0 - v) / (v * v) * (a * (v - 1.0) * std::log1p(-v) + (1.0 - a * v) * std::log1p(-a * v));
  }
  return 1.0 + 2.0 / (a * (1.0 - a)) * h;
}

double f_limit(double u) {
  if (!(u >= 0.0 && u < 1.0)) throw std::invalid_argument("u must lie in [0, 1)");
  if (u < 1e-3) {
    // 2 sum_{m>=3} (m - 2) u^{m-3} / (m (m - 1))
    double s = 0.0, um = 1.0;
    for (int m = 3; m <= 12; ++m, um *= u) s += (m - 2.0) * um / (m * (m - 1.0));
    return 2.0 * s;
  }
  return f_limit_unscaled(u) / (u * u * u);
}

double f_limit_unscaled(double u) {
  if (!(u >= 0.0 && u < 1.0)) throw std::invalid_argument("u must lie in [0, 1)");
  return 2.0 * (-2.0 * u + (u - 2.0) * std::log1p(-u));
}

namespace {

// Antiderivatives of y/((1+y)^2(1+gy)^2) and 1/((1+y)^2(1+gy)^2) for g != 1.
double g1(double g, double y) {
  const double d = g - 1.0;
  return (d * (g * y + y + 2.0) / ((y + 1.0) * (g * y + 1.0)) - (g + 1.0) * std::log((y + 1.0) / (g * y + 1.0))) /
         (d * d * d);
}

double g2(double g, double y) {
  const double d = g - 1.0;
  return (-d * (2.0 * g * y + g + 1.0) / ((y + 1.0) * (g * y + 1.0)) +
          2.0 * g * std::log((y + 1.0) / (g * y + 1.0))) /
         (d * d * d);
}

double g2_inf(double g) {
  const double d = g - 1.0;
  return g == 0.0 ? 0.0 : -2.0 * g * std::log(g) / (d * d * d);
}

}  // namespace

double f_a_theta_integral(double a, double u, double tol) {
  check_a_u(a, u);
  const double g = 1.0 - u / a;
  const double c = a / (1.0 - a);
  double val;
  if (g == 1.0) {
    auto G1 = [](double y) { return -0.5 / ((1 + y) * (1 + y)) + 1.0 / (3.0 * (1 + y) * (1 + y) * (1 + y)); };
    auto G2 = [](double y) { return -1.0 / (3.0 * (1 + y) * (1 + y) * (1 + y)); };
    val = G1(c) - G1(0.0) + c * (0.0 - G2(c));
  } else if (std::fabs(g - 1.0) < 0.05) {
    // Closed forms cancel badly here; integrate over x = theta / (1 + theta) instead.
    auto h = [&](double x) {
      if (x >= 1.0) return 0.0;
      const double th = x / (1.0 - x);
      const double p = th / ((1 + th) * (1 + th) * (1 + g * th) * (1 + g * th));
      const double y = th + c;
      const double q = th / ((1 + y) * (1 + y) * (1 + g * y) * (1 + g * y));
      return (p - q) / ((1.0 - x) * (1.0 - x));
    };
    val = adaptive_simpson(h, 0.0, 1.0, tol);
  } else {
    val = g1(g, c) - g1(g, 0.0) + c * (g2_inf(g) - g2(g, c));
  }
  return 2.0 / (a * a) * val;
}

Estimate f_a_gamma_mc(double a, double u, std::uint64_t n, std::uint64_t seed, unsigned workers) {
  check_a_u(a, u);
  if (n < 2) throw std::invalid_argument("need at least two draws");
  const double g = 1.0 - u / a;
  const double c = a / (1.0 - a);
  const std::size_t blocks = (n + kBlock - 1) / kBlock;
  auto parts = parallel_map<Accumulator>(blocks, workers, [&](std::size_t b) {
    Accumulator acc;
    RngStream rng(seed, kTagGammaMc | b);
    const std::uint64_t hi = std::min<std::uint64_t>(n, (b + 1) * kBlock);
    for (std::uint64_t i = b * kBlock; i < hi; ++i) {
      const double y = rng.gamma(2.0, 1.0) + g * rng.gamma(2.0, 1.0);
      acc.add(-std::expm1(-c * y) / (y * y));
    }
    return acc;
  }, 1);
  Accumulator all;
  for (const auto& p : parts) all.merge(p);
  Estimate e = all.estimate();
  e.mean *= 2.0 / (a * a);
  e.se *= 2.0 / (a * a);
  return e;
}

double f_a_normalization(double a, double tol) {
  check_a_u(a, 0.0);
  return integrate_tanh_sinh([a](double u) { return f_a(a, u); }, 0.0, a, tol);
}

void LimitLawParams::validate() const {
  if (!(a > 0.0 && a < 1.0)) throw std::invalid_argument("a must lie in (0, 1)");
  if (!(sigma > 0.0)) throw std::invalid_argument("sigma must be positive");
  if (!(mass > 0.0)) throw std::invalid_argument("mass must be positive");
  if (!(phi_x0 > 0.0)) throw std::invalid_argument("phi(x0) must be positive");
}

std::array<double, 2> gamma_poisson_sample(const LimitLawParams& p, RngStream& rng) {
  const double ta = p.a * p.sigma * p.mass / 2.0;
  const double tb = (1.0 - p.a) * p.sigma * p.mass / 2.0;
  const double z = rng.gamma(2.0, ta);
  const auto k = rng.poisson(z / tb);
  const double zh = rng.gamma(2.0 + static_cast<double>(k), tb);
  return {z, zh};
}

double gamma_poisson_split_sample(const LimitLawParams& p, double u, RngStream& rng) {
  check_a_u(p.a, u);
  const double sc = p.sigma * p.mass / 2.0;
  return p.a * rng.gamma(2.0, sc) + (p.a - u) * rng.gamma(2.0, sc);
}

std::vector<LaplaceCell> weighted_mixture_transform(const LimitLawParams& p, std::span<const double> thetas,
                                                    std::span<const double> mus, std::uint64_t n,
                                                    std::uint64_t seed, unsigned workers) {
  p.validate();
  if (n < 2) throw std::invalid_argument("need at least two draws");
  const double ta = p.a * p.sigma * p.mass / 2.0;
  const double tb = (1.0 - p.a) * p.sigma * p.mass / 2.0;
  const std::size_t cells = thetas.size() * mus.size();
  // Per cell: sums of v, v^2, v w; plus sums of w, w^2.
  struct Part {
    std::vector<double> v, vv, vw;
    double w = 0.0, ww = 0.0;
  };
  const std::size_t blocks = (n + kBlock - 1) / kBlock;
  auto parts = parallel_map<Part>(blocks, workers, [&](std::size_t b) {
    Part out;
    out.v.assign(cells, 0.0);
    out.vv.assign(cells, 0.0);
    out.vw.assign(cells, 0.0);
    RngStream rng(seed, kTagMixture | b);
    const std::uint64_t hi = std::min<std::uint64_t>(n, (b + 1) * kBlock);
    for (std::uint64_t i = b * kBlock; i < hi; ++i) {
      const double z = rng.gamma(2.0, ta);
      const double k = static_cast<double>(rng.poisson(z / tb));
      // E[exp(-mu Zhat) / Zhat | K] = (1 + mu tb)^{-(1+K)} / (tb (1 + K))
      const double w = 1.0 / (tb * (1.0 + k));
      out.w += w;
      out.ww += w * w;
      std::size_t c = 0;
      for (double th : thetas) {
        const double ez = std::exp(-th * z);
        for (double mu : mus) {
          const double v = ez * std::pow(1.0 + mu * tb, -(1.0 + k)) * w;
          out.v[c] += v;
          out.vv[c] += v * v;
          out.vw[c] += v * w;
          ++c;
        }
      }
    }
    return out;
  }, 1);
  std::vector<ExactSum> v(cells), vv(cells), vw(cells);
  ExactSum w, ww;
  for (const auto& part : parts) {
    for (std::size_t c = 0; c < cells; ++c) {
      v[c].add(part.v[c]);
      vv[c].add(part.vv[c]);
      vw[c].add(part.vw[c]);
    }
    w.add(part.w);
    ww.add(part.ww);
  }
  const double nn = static_cast<double>(n);
  const double mw = w.value() / nn;
  const double sww = ww.value() / nn - mw * mw;
  std::vector<LaplaceCell> out;
  std::size_t c = 0;
  for (double th : thetas) {
    for (double mu : mus) {
      const double mv = v[c].value() / nn;
      const double r = mv / mw;
      const double svv = vv[c].value() / nn - mv * mv;
      const double svw = vw[c].value() / nn - mv * mw;
      // Delta method for a ratio of means.
      const double var = (svv - 2.0 * r * svw + r * r * sww) / (mw * mw);
      out.push_back({th, mu, r, std::sqrt(std::max(var, 0.0) / nn)});
      ++c;
    }
  }
  return out;
}

std::vector<SplitSample> split_time_experiment(const BranchingModel& m, const EigenTriple& e, int x0, double a,
                                               double t, std::uint64_t n, const ExperimentOptions& opt) {
  require_critical(e);
  if (!(a > 0.0 && a < 1.0)) throw std::invalid_argument("a must lie in (0, 1)");
  if (!(t > 0.0)) throw std::invalid_argument("t must be positive");
  SimOptions so;
  so.max_nodes = opt.max_nodes;
  return parallel_map<SplitSample>(n, opt.workers, [&](std::size_t i) {
    RngStream rng(opt.seed, kTagSplit | i);
    const auto ct = sample_conditioned(m, x0, t, rng, opt.max_attempts, so);
    const Tree& tree = ct.tree;
    const auto alive_t = tree.alive_indices(t);
    const auto alive_at = tree.alive_indices(a * t);
    SplitSample s;
    s.attempts = ct.attempts;
    s.n_t = static_cast<std::int64_t>(alive_t.size());
    s.n_at = static_cast<std::int64_t>(alive_at.size());
    const int v = alive_t[rng.below(alive_t.size())];
    const int w = alive_at[rng.below(alive_at.size())];
    s.ancestor = tree.is_ancestor_or_self(w, v);
    s.u = tree.mrca_split_time(v, w) / t;
    return s;
  }, 4);
}

std::vector<std::array<double, 2>> joint_population_experiment(const BranchingModel& m, const EigenTriple& e, int x0,
                                                               double a, double t, std::uint64_t n,
                                                               const ExperimentOptions& opt) {
  require_critical(e);
  if (!(a > 0.0 && a < 1.0)) throw std::invalid_argument("a must lie in (0, 1)");
  if (!(t > 0.0)) throw std::invalid_argument("t must be positive");
  const CensusSampler census(m);
  const double times[2] = {a * t, t};
  return parallel_map<std::array<double, 2>>(n, opt.workers, [&](std::size_t i) {
    RngStream rng(opt.seed, kTagJoint | i);
    std::int64_t tot[2];
    for (std::uint64_t att = 0; att < opt.max_attempts; ++att)
      if (census.run(x0, times, rng, tot)) return std::array<double, 2>{tot[0] / t, tot[1] / t};
    throw SimulationError("joint_population_experiment: no surviving run after " +
                          std::to_string(opt.max_attempts) + " attempts");
  });
}

Estimate survival_estimate(const BranchingModel& m, const EigenTriple& e, int x0, double t, std::uint64_t n,
                           const ExperimentOptions& opt) {
  require_critical(e);
  if (n < 2) throw std::invalid_argument("need at least two runs");
  const CensusSampler census(m);
  const double times[1] = {t};
  const auto alive = parallel_map<char>(n, opt.workers, [&](std::size_t i) {
    RngStream rng(opt.seed, kTagSurvival | i);
    std::int64_t tot[1];
    return static_cast<char>(census.run(x0, times, rng, tot));
  }, 256);
  std::uint64_t k = 0;
  for (char c : alive) k += c != 0;
  const double p = static_cast<double>(k) / static_cast<double>(n);
  return {t * p, t * std::sqrt(p * (1.0 - p) / static_cast<double>(n)), n};
}

Estimate survival_estimate_spine(const SpineModel& sm, int x0, double t, std::uint64_t n,
                                 const ExperimentOptions& opt) {
  require_critical(sm.eigen());
  const CensusSampler census(sm);
  const double times[1] = {t};
  const double phi0 = sm.eigen().phi[x0];
  const auto vals = parallel_map<double>(n, opt.workers, [&](std::size_t i) {
    RngStream rng(opt.seed, kTagSpineSurvival | i);
    std::int64_t tot[1];
    const auto end = census.run_spine(x0, times, rng, tot);
    return t * phi0 / end.phi_sum;
  });
  return mc_mean(vals);
}

std::vector<SpineMarginalSample> q1_marginal_samples(const SpineModel& sm, int x0, double t, std::uint64_t n,
                                                     const ExperimentOptions& opt) {
  const CensusSampler census(sm);
  const double times[1] = {t};
  return parallel_map<SpineMarginalSample>(n, opt.workers, [&](std::size_t i) {
    RngStream rng(opt.seed, kTagMarginal | i);
    std::int64_t tot[1];
    const auto end = census.run_spine(x0, times, rng, tot);
    return SpineMarginalSample{static_cast<double>(tot[0]) / t, end.spine_state};
  }, 4);
}

double limit_gamma_scale(const EigenTriple& e, MarginalScale s) {
  return s == MarginalScale::kWithMass ? e.sigma * e.mass / 2.0 : e.sigma / 2.0;
}

namespace binary_exact {

double pgf(double t, double s) { return 1.0 - (1.0 - s) / (1.0 + t * (1.0 - s) / 2.0); }

double survival(double t) { return 2.0 / (2.0 + t); }

double conditional_laplace(double a, double t, double theta, double mu) {
  const double s = std::exp(-theta / t);
  const double r = std::exp(-mu / t);
  const double b = (1.0 - a) * t;
  const double joint = pgf(a * t, s * pgf(b, r)) - pgf(a * t, s * pgf(b, 0.0));
  return joint / survival(t);
}

}  // namespace binary_exact

}  // namespace spinesim
