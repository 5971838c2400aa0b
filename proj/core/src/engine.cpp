#include "engine.hpp"

#include <algorithm>
#include <bit>
#include <string>

#include "spinesim/error.hpp"

namespace spinesim::detail {

JumpTable::JumpTable(const Mat& q) {
  const int d = static_cast<int>(q.rows());
  out.assign(d, 0.0);
  cdf.resize(d);
  to.resize(d);
  for (int x = 0; x < d; ++x) {
    double acc = 0.0;
    for (int y = 0; y < d; ++y) {
      if (y == x || q(x, y) <= 0.0) continue;
      acc += q(x, y);
      cdf[x].push_back(acc);
      to[x].push_back(y);
    }
    out[x] = acc;
  }
}

int JumpTable::sample(int x, RngStream& rng) const { return to[x][sample_cdf(cdf[x], rng)]; }

PlainDynamics::PlainDynamics(const BranchingModel& m) : motion(m.Q), model(&m) {
  beta.assign(m.beta.data(), m.beta.data() + m.d());
  atom_cdf.resize(m.d());
  for (int x = 0; x < m.d(); ++x) {
    double acc = 0.0;
    for (const auto& a : m.offspring[x]) atom_cdf[x].push_back(acc += a.p);
  }
}

int PlainDynamics::sample_atom(int x, RngStream& rng) const {
  const auto& c = atom_cdf[x];
  if (c.size() == 1) return 0;
  return static_cast<int>(sample_cdf(c, rng));
}

SpineDynamics::SpineDynamics(const BranchingModel& m, const Mat& tilted, const MomentTable& mom)
    : motion(tilted), moments(&mom) {
  const int d = m.d();
  const int kmax = mom.k_max();
  rate.assign(d, std::vector<double>(kmax + 1, 0.0));
  n_cdf.assign(d, std::vector<std::vector<double>>(kmax + 1));
  for (int x = 0; x < d; ++x) {
    for (int j = 1; j <= kmax; ++j) {
      double acc = 0.0;
      for (int n = 1; n <= j; ++n) n_cdf[x][j].push_back(acc += m.beta[x] * mom.m_kn(x, j, n));
      rate[x][j] = acc;
    }
  }
}

namespace {

struct Frame {
  Tree& tree;
  const PlainDynamics& plain;
  const SpineDynamics* spine;
  const EngineConfig& cfg;
  RngStream& rng;
  std::vector<MarkMask> masks;
  std::vector<int> pending;

  void push_jump(double t, int x) {
    tree.jump_time.push_back(t);
    tree.jump_state.push_back(x);
  }

  MarkMask drop_retired(MarkMask active, double t) const {
    for (int b = 0; b < cfg.k; ++b)
      if ((active & (1u << b)) && cfg.s[b] <= t) active = static_cast<MarkMask>(active & ~(1u << b));
    return active;
  }

  double next_retirement(MarkMask active) const {
    double r = kAlive;
    for (int b = 0; b < cfg.k; ++b)
      if (active & (1u << b)) r = std::min(r, cfg.s[b]);
    return r;
  }

  void live(int v) {
    double t = tree.nodes[v].birth;
    int x = tree.nodes[v].state0;
    tree.nodes[v].jump_begin = static_cast<std::uint32_t>(tree.jump_time.size());
    push_jump(t, x);
    const MarkMask marks = tree.nodes[v].marks;
    MarkMask active = marks;
    const bool qk = cfg.mode == Mode::kQk;
    for (;;) {
      const bool spine_live = qk && active != 0;
      double rate_move, rate_branch;
      double ret = kAlive;
      int j = 0;
      if (spine_live) {
        j = std::popcount(static_cast<unsigned>(active));
        rate_move = spine->motion.out[x];
        rate_branch = spine->rate[x][j];
        if (cfg.retire) ret = next_retirement(active);
      } else {
        rate_move = plain.motion.out[x];
        rate_branch = plain.beta[x];
      }
      const double total = rate_move + rate_branch;
      const double tn = total > 0.0 ? t + rng.exponential(total) : kAlive;
      if (ret < cfg.horizon && ret <= tn) {
        t = ret;
        active = drop_retired(active, t);
        continue;
      }
      if (tn >= cfg.horizon) break;
      t = tn;
      if (rng.uniform() * total < rate_move) {
        x = spine_live ? spine->motion.sample(x, rng) : plain.motion.sample(x, rng);
        push_jump(t, x);
        continue;
      }
      branch(v, t, x, spine_live, j, active);
      return;
    }
    tree.nodes[v].jump_end = static_cast<std::uint32_t>(tree.jump_time.size());
  }

  void branch(int v, double t, int x, bool spine_live, int j, MarkMask active) {
    tree.nodes[v].death = t;
    tree.nodes[v].jump_end = static_cast<std::uint32_t>(tree.jump_time.size());
    int atom;
    if (spine_live) {
      const int n = 1 + static_cast<int>(sample_cdf(spine->n_cdf[x][j], rng));
      atom = spine->moments->sample_biased_atom(x, j, n, rng);
      spine->moments->sample_mark_partition(x, atom, active, n, rng, masks);
    } else {
      atom = plain.sample_atom(x, rng);
      const auto nc = plain.model->offspring[x][atom].children.size();
      masks.assign(nc, 0);
      const MarkMask carried = tree.nodes[v].marks;
      if (cfg.mode == Mode::kPk && carried != 0 && nc > 0) {
        for (int b = 0; b < cfg.k; ++b)
          if (carried & (1u << b)) masks[rng.below(nc)] |= static_cast<MarkMask>(1u << b);
      }
    }
    const auto& children = plain.model->offspring[x][atom].children;
    const int nc = static_cast<int>(children.size());
    tree.nodes[v].n_children = nc;
    if (nc == 0) return;
    if (tree.nodes.size() + nc > cfg.max_nodes)
      throw SimulationError("population cap exceeded: more than " + std::to_string(cfg.max_nodes) +
                            " nodes before t = " + std::to_string(cfg.horizon));
    const int first = static_cast<int>(tree.nodes.size());
    tree.nodes[v].first_child = first;
    const int depth = tree.nodes[v].depth + 1;
    for (int c = 0; c < nc; ++c) {
      TreeNode child;
      child.parent = v;
      child.ordinal = c + 1;
      child.depth = depth;
      child.birth = t;
      child.marks = masks[c];
      child.state0 = children[c];
      tree.nodes.push_back(child);
    }
    for (int c = nc - 1; c >= 0; --c) pending.push_back(first + c);
  }
};

}  // namespace

void run_engine(Tree& tree, int x0, MarkMask root_marks, const PlainDynamics& plain, const SpineDynamics* spine,
                const EngineConfig& cfg, RngStream& rng) {
  tree.clear();
  tree.horizon = cfg.horizon;
  tree.root_state = x0;
  TreeNode root;
  root.marks = root_marks;
  root.state0 = x0;
  tree.nodes.push_back(root);
  Frame f{tree, plain, spine, cfg, rng, {}, {0}};
  while (!f.pending.empty()) {
    const int v = f.pending.back();
    f.pending.pop_back();
    f.live(v);
  }
  tree.finalize();
}

}  // namespace spinesim::detail
