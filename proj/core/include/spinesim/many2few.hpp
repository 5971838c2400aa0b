#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "spinesim/model.hpp"
#include "spinesim/spine.hpp"
#include "spinesim/stats.hpp"
#include "spinesim/tree.hpp"

namespace spinesim {

// Y(v_1, ..., v_k) with v_i alive at s_i.
struct FunctionalSpec {
  enum class Kind { kProduct, kGenealogy };

  std::string id;
  Kind kind = Kind::kProduct;
  int k = 1;
  std::vector<double> s_times;  // s_1 >= ... >= s_k
  // kProduct: prod_i f[i](X_{v_i}(s_i)).
  std::vector<Vec> f;
  // kGenealogy (k = 2, v = v_1 at s_1, w = v_2 at s_2):
  //   F(tau_{v,w} / s_1) 1{w not an ancestor of v} [1 / (N_{s_2} Nhat^w_{s_1})]
  // where Nhat^w_{s_1} counts particles at s_1 not descended from w.
  std::function<double(double)> F;
  bool inverse_sizes = false;
  // Only tuples of pairwise distinct particles (k <= 2).
  bool distinct = false;

  void validate(const BranchingModel& m) const;
  bool equal_times() const;
};

FunctionalSpec product_functional(std::vector<Vec> f, std::vector<double> s_times, bool distinct = false);
FunctionalSpec genealogy_functional(std::function<double(double)> F, double s1, double s2, bool inverse_sizes);

// Y summed over all tuples of one P-tree (repeats and ancestor pairs included
// unless the spec asks for distinct tuples).
double lhs_sum(const Tree& tree, const FunctionalSpec& fs, std::size_t max_population = 5000);
// Y at the spine leaves of a marked tree.
double functional_at_leaves(const Tree& tree, const FunctionalSpec& fs, std::span<const int> leaves);

struct EstimatorOptions {
  std::uint64_t seed = 1;
  unsigned workers = 1;
  std::size_t max_population = 5000;  // per-time cap on tuple enumeration
  std::size_t max_nodes = kDefaultNodeCap;
  MarkConvention convention = MarkConvention::kRetire;
  std::uint64_t stream_offset = 0;  // distinct offsets give independent runs
};

struct RhsResult {
  Estimate estimate;
  // Largest relative gap between the equal-time closed form and the general
  // weight on the same tree (0 for distinct times).
  double route_max_rel_diff = 0.0;
  std::uint64_t vanished = 0;
};

Estimate lhs_estimate(const BranchingModel& m, int x0, const FunctionalSpec& fs, std::uint64_t n,
                      const EstimatorOptions& opt = {});

// Q^k-side estimator: Y / W_s^k times prod_i prod_{v before psi^i} N_v.
RhsResult rhs_estimate(const SpineModel& sm, int x0, const FunctionalSpec& fs, std::uint64_t n,
                       const EstimatorOptions& opt = {});

// Equal-time estimator restricted to distinct spine leaves, using the closed
// natural-zeta weight.
RhsResult rhs_separated_estimate(const SpineModel& sm, int x0, const FunctionalSpec& fs, std::uint64_t n,
                                 const EstimatorOptions& opt = {});

enum class MartingaleSampler {
  kPlain,        // one uniform mark placement per tree
  kConditional,  // exact average of W over all mark placements on each tree
};

// Mean of W_s^k over P^k trees (unit mean when the weight is a martingale).
Estimate martingale_mean(const SpineModel& sm, int x0, int k, std::span<const double> s_times, std::uint64_t n,
                         const EstimatorOptions& opt = {},
                         MartingaleSampler sampler = MartingaleSampler::kConditional);
// E_{P^k}[W | tree]: sums W over every assignment of marks to terminal nodes
// (alive at the horizon, or childless), weighted by prod 1/N_u along each path.
double conditional_weight(MarkedTree& mt, const SpineModel& sm, std::span<const double> s_times,
                          MarkConvention conv, std::size_t max_terms = 1'000'000);

// Per-tree factors for a Q^k tree with equal times t.
double rhs_factor_general(const MarkedTree& mt, const SpineModel& sm, std::span<const double> s);
double rhs_factor_equal_time(const MarkedTree& mt, const SpineModel& sm, double t);
// Zero unless the leaves are distinct.
double separated_factor(const MarkedTree& mt, const SpineModel& sm, double t);

}  // namespace spinesim
