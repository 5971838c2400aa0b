#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "spinesim/model.hpp"
#include "spinesim/rng.hpp"

namespace spinesim {

using MarkMask = std::uint8_t;  // bit i set <=> mark i+1 carried
constexpr int kMaxMarks = 8;

// Count tuple (k_1..k_N) with sum k and exactly n positive entries, weighted by
// multinomial(k; k_1..k_N) * prod_{k_i > 0} phi(x_i).
struct MarkTuple {
  std::vector<std::uint8_t> counts;
  double weight = 0.0;
};

std::vector<MarkTuple> mark_tuples(std::span<const int> children, const Vec& phi, int k, int n);

// <phi, Z>_{k,n} for one offspring realisation.
double bracket_kn(std::span<const int> children, const Vec& phi, int k, int n);
// <phi, Z>_k(x) = sum_n phi(x)^{-n} <phi, Z>_{k,n}.
double bracket_k(std::span<const int> children, const Vec& phi, double phi_x, int k);

double m_kn(const BranchingModel& m, const Vec& phi, int x, int k, int n);
double m_k(const BranchingModel& m, const Vec& phi, int x, int k);

// Tabulated m_{k,n}, m_k and the biased offspring laws for k <= k_max.
class MomentTable {
 public:
  MomentTable(const BranchingModel& m, const Vec& phi, int k_max = 3);

  int k_max() const { return k_max_; }
  double m_kn(int x, int k, int n) const { return mkn_[index(x, k, n)]; }
  double m_k(int x, int k) const { return mk_[x * (k_max_ + 1) + k]; }
  const Vec& v_phi() const { return v_phi_; }

  // Atom probabilities of the (j, n)-biased law at x; empty when m_{j,n}(x) = 0.
  const std::vector<double>& biased_atom_cdf(int x, int j, int n) const { return atom_cdf_[index(x, j, n)]; }
  // Tuples of atom a at x for (j, n), with cumulative normalised weights.
  const std::vector<MarkTuple>& tuples(int x, int atom, int j, int n) const;
  const std::vector<double>& tuple_cdf(int x, int atom, int j, int n) const;

  // Draws an atom index from the (j, n)-biased law. Throws SimulationError
  // "no valid offspring configuration" when m_{j,n}(x) = 0.
  int sample_biased_atom(int x, int j, int n, RngStream& rng) const;
  // Allocates the marks in `marks` (bitmask with j bits) among the children of
  // atom a so that exactly n children receive marks. Writes one mask per child.
  void sample_mark_partition(int x, int atom, MarkMask marks, int n, RngStream& rng, std::vector<MarkMask>& out) const;

 private:
  std::size_t index(int x, int k, int n) const { return (static_cast<std::size_t>(x) * (k_max_ + 1) + k) * (k_max_ + 1) + n; }

  int k_max_;
  std::vector<double> mkn_;
  std::vector<double> mk_;
  Vec v_phi_;
  std::vector<std::vector<double>> atom_cdf_;
  // [x][atom][(j, n)] -> tuples / cdf
  std::vector<std::vector<std::vector<std::vector<MarkTuple>>>> tuples_;
  std::vector<std::vector<std::vector<std::vector<double>>>> tuple_cdf_;
};

// Index drawn from a cumulative (nondecreasing, last entry = total) table.
std::size_t sample_cdf(const std::vector<double>& cdf, RngStream& rng);

// Stand-alone variants over an explicit realisation.
int biased_offspring_sample(const BranchingModel& m, const Vec& phi, int x, int j, int n, RngStream& rng);
std::vector<MarkMask> mark_partition_sample(std::span<const int> children, const Vec& phi, MarkMask marks, int n,
                                            RngStream& rng);

// E_{delta_x}[X_t[f] X_t[g]] by the Duhamel formula, adaptive Simpson at tol.
Vec second_moment_oracle(const BranchingModel& m, const Vec& f, const Vec& g, double t, double tol = 1e-10);
// E_{delta_x}[X_{s2}[f] X_{s1}[g]] for s2 <= s1.
Vec two_time_moment_oracle(const BranchingModel& m, const Vec& f, const Vec& g, double s2, double s1, double tol = 1e-10);
// E_x[sum_{i != j} h1(x_i) h2(x_j)] per state.
Vec pair_functional(const BranchingModel& m, const Vec& h1, const Vec& h2);

}  // namespace spinesim
