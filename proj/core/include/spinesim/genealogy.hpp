#pragma once

#include <array>
#include <cstdint>
#include <span>
#include <vector>

#include "spinesim/model.hpp"
#include "spinesim/rng.hpp"
#include "spinesim/spine.hpp"
#include "spinesim/stats.hpp"
#include "spinesim/tree.hpp"

namespace spinesim {

// Limit-law density of the split time T_t / t for a in (0, 1), u in [0, a].
double f_a(double a, double u);
// Its distribution function on [0, a].
double F_a(double a, double u);
// a -> 1 limit density 2(-2u + (u - 2) log(1 - u)) / u^3.
double f_limit(double u);
// The same expression without the u^-3 factor.
double f_limit_unscaled(double u);
// f_a through the theta-integral and its closed antiderivatives.
double f_a_theta_integral(double a, double u, double tol = 1e-12);
// (2/a^2) E[(1 - exp(-cY)) / Y^2], Y = Y' + (1 - u/a) Y'', c = a/(1-a).
Estimate f_a_gamma_mc(double a, double u, std::uint64_t n, std::uint64_t seed, unsigned workers = 1);
// Adaptive quadrature of f_a over [0, a].
double f_a_normalization(double a, double tol = 1e-12);

struct LimitLawParams {
  double a = 0.5;
  double sigma = 1.0;
  double mass = 1.0;
  double phi_x0 = 1.0;

  // Throws std::invalid_argument.
  void validate() const;
};

// (Z, Zhat) of the two-time limit under Q^1.
std::array<double, 2> gamma_poisson_sample(const LimitLawParams& p, RngStream& rng);
// Population at time at given a split at ut: aZ + (a - u)Z'.
double gamma_poisson_split_sample(const LimitLawParams& p, double u, RngStream& rng);

// E[exp(-theta Z - mu Zhat) / Zhat] / E[1 / Zhat] on thetas x mus (row-major),
// estimated from n sampler draws with the Zhat integral done in closed form.
std::vector<LaplaceCell> weighted_mixture_transform(const LimitLawParams& p, std::span<const double> thetas,
                                                    std::span<const double> mus, std::uint64_t n,
                                                    std::uint64_t seed, unsigned workers = 1);

struct SplitSample {
  double u = 0.0;          // tau_{v,w} / t
  bool ancestor = false;   // w is an ancestor of v (or v itself)
  std::int64_t n_at = 0;   // N_{at}
  std::int64_t n_t = 0;    // N_t
  std::uint64_t attempts = 0;
};

struct ExperimentOptions {
  std::uint64_t seed = 1;
  unsigned workers = 1;
  std::uint64_t max_attempts = 1'000'000;
  std::size_t max_nodes = kDefaultNodeCap;
};

// Conditioned trees (N_t > 0); v uniform in N_t, w uniform in N_{at}.
std::vector<SplitSample> split_time_experiment(const BranchingModel& m, const EigenTriple& e, int x0, double a,
                                               double t, std::uint64_t n, const ExperimentOptions& opt);

// (N_{at} / t, N_t / t) under P(. | N_t > 0).
std::vector<std::array<double, 2>> joint_population_experiment(const BranchingModel& m, const EigenTriple& e, int x0,
                                                               double a, double t, std::uint64_t n,
                                                               const ExperimentOptions& opt);

// t P(N_t > 0) from n forward runs.
Estimate survival_estimate(const BranchingModel& m, const EigenTriple& e, int x0, double t, std::uint64_t n,
                           const ExperimentOptions& opt);
// t phi(x0) E_Q1[1 / X_t[phi]], which equals t P(N_t > 0) at criticality.
Estimate survival_estimate_spine(const SpineModel& sm, int x0, double t, std::uint64_t n,
                                 const ExperimentOptions& opt);

struct SpineMarginalSample {
  double n_over_t = 0.0;
  int spine_state = 0;
};

// Q^1 samples of N_t / t and the spine position at t.
std::vector<SpineMarginalSample> q1_marginal_samples(const SpineModel& sm, int x0, double t, std::uint64_t n,
                                                     const ExperimentOptions& opt);

// Which limit scale the Q^1 marginal test uses.
enum class MarginalScale {
  kWithMass,     // Gamma(2, scale Sigma <1, phi~> / 2)
  kWithoutMass,  // Gamma(2, scale Sigma / 2)
};
double limit_gamma_scale(const EigenTriple& e, MarginalScale s);

// Exact quantities for the single-state binary model with p0 = 1/2, beta = 1.
namespace binary_exact {
// Generating function E[s^{N_t}].
double pgf(double t, double s);
double survival(double t);
// E[exp(-theta N_{at}/t - mu N_t/t) | N_t > 0].
double conditional_laplace(double a, double t, double theta, double mu);
}  // namespace binary_exact

}  // namespace spinesim
