#pragma once

#include <cmath>
#include <cstdint>
#include <limits>
#include <string>
#include <utility>
#include <vector>

#include "spinesim/model.hpp"
#include "spinesim/moments.hpp"
#include "spinesim/rng.hpp"

namespace spinesim {

constexpr double kAlive = std::numeric_limits<double>::infinity();
constexpr std::size_t kDefaultNodeCap = 1'000'000;

struct TreeNode {
  std::int32_t parent = -1;
  std::int32_t first_child = -1;
  std::int32_t n_children = 0;  // N_v; 0 also when alive at the horizon
  std::int32_t ordinal = 0;     // 1-based position among siblings; 0 for the root
  std::int32_t depth = 0;
  double birth = 0.0;
  double death = kAlive;  // kAlive when still alive at the horizon
  std::uint32_t jump_begin = 0;  // trajectory [jump_begin, jump_end); first entry is (birth, birth state)
  std::uint32_t jump_end = 0;
  std::int32_t state0 = 0;  // X_v(sigma_v)
  MarkMask marks = 0;       // b_v
};

// Ulam-Harris genealogy in an arena. Nodes are stored in depth-first creation
// order: the children of a node are contiguous, and all strict descendants of v
// occupy [first_child(v), subtree_end(v)).
class Tree {
 public:
  std::vector<TreeNode> nodes;
  std::vector<double> jump_time;
  std::vector<std::int32_t> jump_state;
  std::vector<std::int32_t> subtree_end;
  double horizon = 0.0;
  int root_state = 0;

  void clear();
  std::size_t size() const { return nodes.size(); }

  bool alive_at(int v, double t) const { return nodes[v].birth <= t && t < nodes[v].death; }
  // X_v(t) for sigma_v <= t; the state in force at t (right-continuous).
  int state_at(int v, double t) const;
  // X_v(t-): left limit, used at death times.
  int state_before(int v, double t) const;
  int birth_state(int v) const { return nodes[v].state0; }
  int last_state(int v) const { return jump_state[nodes[v].jump_end - 1]; }

  std::vector<int> alive_indices(double t) const;
  std::size_t count_alive(double t) const;

  std::vector<int> label(int v) const;
  std::string label_string(int v) const;
  // -1 when absent.
  int find(const std::vector<int>& label) const;

  // w is an ancestor of v or equal to it.
  bool is_ancestor_or_self(int w, int v) const;
  int mrca(int v, int w) const;
  // tau of the longest common prefix of v and w.
  double mrca_split_time(int v, int w) const;

  // Fills subtree_end; called by the simulators.
  void finalize();
};

struct PopulationEntry {
  std::vector<int> label;
  int state = 0;
};

std::vector<PopulationEntry> population_at(const Tree& tree, double t);

struct SimOptions {
  std::size_t max_nodes = kDefaultNodeCap;
};

// Exact event-driven simulation under P from one particle at x0.
Tree simulate(const BranchingModel& m, int x0, double horizon, RngStream& rng, const SimOptions& opt = {});
void simulate_into(Tree& out, const BranchingModel& m, int x0, double horizon, RngStream& rng,
                   const SimOptions& opt = {});

struct ConditionedTree {
  Tree tree;
  std::uint64_t attempts = 0;
};

// Rejection sampling of P(. | N_t > 0) with t = horizon.
ConditionedTree sample_conditioned(const BranchingModel& m, int x0, double t, RngStream& rng,
                                   std::uint64_t max_attempts, const SimOptions& opt = {});

}  // namespace spinesim
