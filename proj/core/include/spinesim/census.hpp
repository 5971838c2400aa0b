#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "spinesim/model.hpp"
#include "spinesim/rng.hpp"
#include "spinesim/spine.hpp"

namespace spinesim {

constexpr std::int64_t kDefaultPopulationCap = 50'000'000;

// Final spine data of a Q^1 census run.
struct SpineCensusEnd {
  int spine_state = 0;
  double phi_sum = 0.0;  // X_t[phi] at the last observation time, spine included
};

// Count-only Gillespie simulation: tracks the number of particles per state and
// nothing else. Much cheaper than a Tree when only population sizes matter.
class CensusSampler {
 public:
  explicit CensusSampler(const BranchingModel& m, std::int64_t population_cap = kDefaultPopulationCap);
  // Enables run_spine().
  explicit CensusSampler(const SpineModel& sm, std::int64_t population_cap = kDefaultPopulationCap);

  // Under P from one particle at x0: totals[i] = N_{times[i]}, times ascending.
  // Returns false when the population died out before times.back().
  bool run(int x0, std::span<const double> times, RngStream& rng, std::span<std::int64_t> totals) const;

  // Under Q^1: one spine with tilted motion and biased branching, P-copies off it.
  // totals include the spine.
  SpineCensusEnd run_spine(int x0, std::span<const double> times, RngStream& rng,
                           std::span<std::int64_t> totals) const;

 private:
  const BranchingModel* model_;
  const SpineModel* spine_ = nullptr;
  std::int64_t cap_;
  std::vector<double> move_, beta_, total_;
  std::vector<std::vector<double>> move_cdf_;
  std::vector<std::vector<int>> move_to_;
  std::vector<std::vector<double>> atom_cdf_;
  // spine side
  std::vector<double> s_move_, s_branch_;
  std::vector<std::vector<double>> s_move_cdf_;
  std::vector<std::vector<int>> s_move_to_;

  void init_plain();
  template <bool kSpine>
  SpineCensusEnd simulate(int x0, std::span<const double> times, RngStream& rng, std::span<std::int64_t> totals,
                          bool* survived) const;
};

}  // namespace spinesim
