#pragma once

#include <span>
#include <vector>

#include "spinesim/model.hpp"
#include "spinesim/moments.hpp"
#include "spinesim/tree.hpp"

namespace spinesim {

// How a mark behaves after its own time s_i under Q^k.
//  kRetire: mark i is dropped at s_i; a node whose marks are all retired reverts
//           to P dynamics, otherwise it continues with the reduced mark count.
//  kFollowThrough: marks are never dropped; every spine follows Q^k up to s_1.
// Weights must be computed with the same convention used to simulate.
enum class MarkConvention { kRetire, kFollowThrough };

// Q^k dynamics precomputed from a model and its eigen triple. Holds its own copies.
class SpineModel {
 public:
  SpineModel(const BranchingModel& m, const EigenTriple& e, int k_max = 3);

  const BranchingModel& model() const { return model_; }
  const EigenTriple& eigen() const { return eigen_; }
  const MomentTable& moments() const { return moments_; }
  const Mat& tilted_rates() const { return tilted_; }

 private:
  BranchingModel model_;
  EigenTriple eigen_;
  MomentTable moments_;
  Mat tilted_;
};

// q~(x, y) = q(x, y) phi(y) / phi(x) off the diagonal, rows summing to zero.
// Throws when |lambda| > 1e-10 unless allow_noncritical is set (the spine then
// carries the exp(-lambda t) factor in its motion martingale).
Mat tilted_motion_rates(const BranchingModel& m, const EigenTriple& e, bool allow_noncritical = true);

struct MarkedTree {
  Tree tree;
  int k = 0;
  std::vector<double> s_times;  // s_1 >= s_2 >= ... >= s_k
  MarkConvention convention = MarkConvention::kRetire;
  // Node carrying mark i at s_i (psi^i_{s_i}), or -1 when the mark died first.
  std::vector<int> leaves;
};

// P^k: forward P tree with k marks following uniformly chosen children.
MarkedTree simulate_pk(const BranchingModel& m, int x0, int k, double horizon, RngStream& rng,
                       const SimOptions& opt = {});
void simulate_pk_into(MarkedTree& out, const BranchingModel& m, int x0, int k, double horizon, RngStream& rng,
                      const SimOptions& opt = {});

// Q^k from one particle at x0 carrying all marks; horizon s_1.
MarkedTree simulate_qk(const SpineModel& sm, int x0, int k, std::span<const double> s_times, RngStream& rng,
                       MarkConvention conv = MarkConvention::kRetire, const SimOptions& opt = {});
void simulate_qk_into(MarkedTree& out, const SpineModel& sm, int x0, int k, std::span<const double> s_times,
                      RngStream& rng, MarkConvention conv = MarkConvention::kRetire, const SimOptions& opt = {});

// Recomputes leaves for the given times (nodes carrying mark i alive at s_i).
std::vector<int> spine_leaves(const Tree& tree, int k, std::span<const double> s_times);
// Node indices psi^i_s for s in [0, s_i], root first.
std::vector<int> spine_path(const Tree& tree, int mark, double s);

struct SkeletonView {
  std::vector<int> nodes;   // S_k(s), sorted
  std::vector<int> leaves;  // dS_k(s), sorted
  std::vector<int> stubs;   // d^S_k(s), sorted
  std::vector<double> r;    // r_i per mark
  bool stubs_disjoint_from_leaves = true;
};

SkeletonView skeleton(const MarkedTree& mt, std::span<const double> s_times);

// Log-space factor groups of the spine martingale.
struct WeightParts {
  double log_zeta = 0.0;       // motion martingale ratios
  double log_rate = 0.0;       // -int beta (m_D - 1)
  double log_phi_birth = 0.0;  // sum log phi(X_v(sigma_v)) over non-root skeleton nodes
  double log_branch = 0.0;     // sum D_v log N_v - M_v log phi(X_v(tau_v-))
  bool vanished = false;       // some mark died: weight 0

  double log_total() const { return log_zeta + log_rate + log_phi_birth + log_branch; }
  double value() const;
};

// W_s^k for s_1 >= ... >= s_k, evaluated with the natural motion martingale.
WeightParts weight_W_s_k(const MarkedTree& mt, const SpineModel& sm, std::span<const double> s_times,
                         MarkConvention conv);
WeightParts weight_W_s_k(const MarkedTree& mt, const SpineModel& sm, std::span<const double> s_times);
// W_t^k (all marks observed at t).
WeightParts weight_W_t_k(const MarkedTree& mt, const SpineModel& sm, double t);
// log W_t^k through the closed natural-zeta form; -inf when a mark died.
double log_weight_natural(const MarkedTree& mt, const SpineModel& sm, double t);

struct SkeletonIntegrals {
  double rate_excess = 0.0;  // sum over marked nodes of int beta (m_D - m_1)
  double exposure = 0.0;     // sum over marked nodes of (min(tau_v, t) - sigma_v)
};
SkeletonIntegrals skeleton_integrals(const MarkedTree& mt, const SpineModel& sm, double t);

}  // namespace spinesim
