#include "spinesim/tree.hpp"

#include <algorithm>

#include "engine.hpp"
#include "spinesim/error.hpp"

namespace spinesim {

void Tree::clear() {
  nodes.clear();
  jump_time.clear();
  jump_state.clear();
  subtree_end.clear();
}

int Tree::state_at(int v, double t) const {
  const auto& n = nodes[v];
  const auto b = jump_time.begin() + n.jump_begin;
  const auto e = jump_time.begin() + n.jump_end;
  auto it = std::upper_bound(b + 1, e, t);
  return jump_state[static_cast<std::size_t>(it - jump_time.begin()) - 1];
}

int Tree::state_before(int v, double t) const {
  const auto& n = nodes[v];
  const auto b = jump_time.begin() + n.jump_begin;
  const auto e = jump_time.begin() + n.jump_end;
  auto it = std::lower_bound(b + 1, e, t);
  return jump_state[static_cast<std::size_t>(it - jump_time.begin()) - 1];
}

std::vector<int> Tree::alive_indices(double t) const {
  std::vector<int> out;
  for (int v = 0; v < static_cast<int>(nodes.size()); ++v)
    if (alive_at(v, t)) out.push_back(v);
  return out;
}

std::size_t Tree::count_alive(double t) const {
  std::size_t n = 0;
  for (int v = 0; v < static_cast<int>(nodes.size()); ++v) n += alive_at(v, t);
  return n;
}

std::vector<int> Tree::label(int v) const {
  std::vector<int> out(nodes[v].depth);
  for (int u = v; u != 0; u = nodes[u].parent) out[nodes[u].depth - 1] = nodes[u].ordinal;
  return out;
}

std::string Tree::label_string(int v) const {
  if (v == 0) return "()";
  std::string s;
  for (int x : label(v)) {
    s += s.empty() ? "(" : ",";
    s += std::to_string(x);
  }
  return s + ")";
}

int Tree::find(const std::vector<int>& lbl) const {
  if (nodes.empty()) return -1;
  int v = 0;
  for (int o : lbl) {
    const auto& n = nodes[v];
    if (o < 1 || o > n.n_children) return -1;
    v = n.first_child + o - 1;
  }
  return v;
}

bool Tree::is_ancestor_or_self(int w, int v) const {
  if (w == v) return true;
  const auto& n = nodes[w];
  return n.n_children > 0 && v >= n.first_child && v < subtree_end[w];
}

int Tree::mrca(int v, int w) const {
  while (nodes[v].depth > nodes[w].depth) v = nodes[v].parent;
  while (nodes[w].depth > nodes[v].depth) w = nodes[w].parent;
  while (v != w) {
    v = nodes[v].parent;
    w = nodes[w].parent;
  }
  return v;
}

double Tree::mrca_split_time(int v, int w) const {
  if (v < 0 || w < 0 || v >= static_cast<int>(nodes.size()) || w >= static_cast<int>(nodes.size()))
    throw std::out_of_range("mrca_split_time: label absent from tree");
  return nodes[mrca(v, w)].death;
}

void Tree::finalize() {
  const int n = static_cast<int>(nodes.size());
  subtree_end.assign(n, 0);
  for (int v = n - 1; v >= 0; --v) {
    const auto& nd = nodes[v];
    int e = v + 1;
    for (int c = 0; c < nd.n_children; ++c) e = std::max(e, subtree_end[nd.first_child + c]);
    subtree_end[v] = e;
  }
}

std::vector<PopulationEntry> population_at(const Tree& tree, double t) {
  if (t > tree.horizon || t < 0.0) throw std::out_of_range("population_at: t outside [0, horizon]");
  std::vector<PopulationEntry> out;
  for (int v : tree.alive_indices(t)) out.push_back({tree.label(v), tree.state_at(v, t)});
  return out;
}

void simulate_into(Tree& out, const BranchingModel& m, int x0, double horizon, RngStream& rng, const SimOptions& opt) {
  if (x0 < 0 || x0 >= m.d()) throw std::invalid_argument("simulate: bad initial state");
  const detail::PlainDynamics plain(m);
  detail::EngineConfig cfg;
  cfg.mode = detail::Mode::kPlain;
  cfg.horizon = horizon;
  cfg.max_nodes = opt.max_nodes;
  detail::run_engine(out, x0, 0, plain, nullptr, cfg, rng);
}

Tree simulate(const BranchingModel& m, int x0, double horizon, RngStream& rng, const SimOptions& opt) {
  Tree t;
  simulate_into(t, m, x0, horizon, rng, opt);
  return t;
}

ConditionedTree sample_conditioned(const BranchingModel& m, int x0, double t, RngStream& rng,
                                   std::uint64_t max_attempts, const SimOptions& opt) {
  const detail::PlainDynamics plain(m);
  detail::EngineConfig cfg;
  cfg.horizon = t;
  cfg.max_nodes = opt.max_nodes;
  ConditionedTree out;
  while (out.attempts < max_attempts) {
    ++out.attempts;
    detail::run_engine(out.tree, x0, 0, plain, nullptr, cfg, rng);
    // Nodes alive at the horizon have death = kAlive.
    for (const auto& n : out.tree.nodes)
      if (n.death == kAlive) return out;
  }
  throw SimulationError("sample_conditioned: no surviving tree after " + std::to_string(max_attempts) + " attempts");
}

}  // namespace spinesim
