#include "spinesim/spine.hpp"

#include <algorithm>
#include <bit>
#include <cmath>

#include "engine.hpp"
#include "spinesim/error.hpp"

namespace spinesim {

Mat tilted_motion_rates(const BranchingModel& m, const EigenTriple& e, bool allow_noncritical) {
  if (!allow_noncritical && std::fabs(e.lambda) > 1e-10)
    throw NumericalError("tilted_motion_rates: lambda != 0 needs the exponential correction");
  const int d = m.d();
  Mat qt = Mat::Zero(d, d);
  for (int x = 0; x < d; ++x) {
    double row = 0.0;
    for (int y = 0; y < d; ++y) {
      if (y == x) continue;
      qt(x, y) = m.Q(x, y) * e.phi[y] / e.phi[x];
      row += qt(x, y);
    }
    qt(x, x) = -row;
  }
  return qt;
}

SpineModel::SpineModel(const BranchingModel& m, const EigenTriple& e, int k_max)
    : model_(m), eigen_(e), moments_(m, e.phi, k_max), tilted_(tilted_motion_rates(m, e)) {}

double WeightParts::value() const { return vanished ? 0.0 : std::exp(log_total()); }

namespace {

void check_times(int k, std::span<const double> s) {
  if (k < 1 || k > kMaxMarks) throw std::invalid_argument("number of marks out of range");
  if (static_cast<int>(s.size()) != k) throw std::invalid_argument("need one time per mark");
  for (int i = 0; i < k; ++i) {
    if (!(s[i] >= 0.0)) throw std::invalid_argument("negative time");
    if (i > 0 && s[i] > s[i - 1]) throw std::invalid_argument("times must satisfy s_k <= ... <= s_1");
  }
}

// Node carrying `mark` (0-based bit) alive at time s, or -1.
int carrier_at(const Tree& tree, int mark, double s) {
  const MarkMask bit = static_cast<MarkMask>(1u << mark);
  if (tree.nodes.empty() || !(tree.nodes[0].marks & bit)) return -1;
  int v = 0;
  for (;;) {
    const auto& n = tree.nodes[v];
    if (n.birth <= s && s < n.death) return v;
    if (n.death > s || n.n_children == 0) return -1;
    int next = -1;
    for (int c = 0; c < n.n_children; ++c) {
      if (tree.nodes[n.first_child + c].marks & bit) {
        next = n.first_child + c;
        break;
      }
    }
    if (next < 0) return -1;
    v = next;
  }
}

MarkMask active_after(MarkMask marks, std::span<const double> s, double t) {
  MarkMask a = 0;
  for (std::size_t b = 0; b < s.size(); ++b)
    if ((marks & (1u << b)) && s[b] > t) a = static_cast<MarkMask>(a | (1u << b));
  return a;
}

struct Integrals {
  double rate_mD = 0.0;  // int beta (m_D - 1)
  double rate_m1 = 0.0;  // int beta (m_1 - 1)
};

// Integrals over [a, b] of node v, with D(s) = |marks restricted to s_i > s|
// when retire is set and |marks| otherwise.
Integrals integrate_node(const Tree& tree, int v, double a, double b, MarkMask marks, std::span<const double> s,
                         bool retire, const BranchingModel& m, const MomentTable& mom) {
  Integrals out;
  if (!(b > a)) return out;
  const auto& n = tree.nodes[v];
  std::vector<double> cuts;
  for (std::uint32_t j = n.jump_begin + 1; j < n.jump_end; ++j) {
    const double tj = tree.jump_time[j];
    if (tj > a && tj < b) cuts.push_back(tj);
  }
  if (retire)
    for (std::size_t i = 0; i < s.size(); ++i)
      if ((marks & (1u << i)) && s[i] > a && s[i] < b) cuts.push_back(s[i]);
  cuts.push_back(b);
  std::sort(cuts.begin(), cuts.end());
  double lo = a;
  for (double hi : cuts) {
    if (hi <= lo) continue;
    const int x = tree.state_at(v, lo);
    const int D = std::popcount(static_cast<unsigned>(retire ? active_after(marks, s, lo) : marks));
    const double beta = m.beta[x];
    const double len = hi - lo;
    if (D > 0) out.rate_mD += beta * (mom.m_k(x, D) - 1.0) * len;
    out.rate_m1 += beta * (mom.m_k(x, 1) - 1.0) * len;
    lo = hi;
  }
  return out;
}

int count_marked_children(const Tree& tree, int v, std::span<const double> s, bool retire, double t) {
  const auto& n = tree.nodes[v];
  int M = 0;
  for (int c = 0; c < n.n_children; ++c) {
    const MarkMask bm = tree.nodes[n.first_child + c].marks;
    M += (retire ? active_after(bm, s, t) : bm) != 0;
  }
  return M;
}

}  // namespace

std::vector<int> spine_leaves(const Tree& tree, int k, std::span<const double> s) {
  std::vector<int> out(k, -1);
  for (int i = 0; i < k; ++i) out[i] = carrier_at(tree, i, s[i]);
  return out;
}

std::vector<int> spine_path(const Tree& tree, int mark, double s) {
  std::vector<int> path;
  int v = carrier_at(tree, mark, s);
  for (; v >= 0; v = tree.nodes[v].parent) path.push_back(v);
  std::reverse(path.begin(), path.end());
  return path;
}

void simulate_pk_into(MarkedTree& out, const BranchingModel& m, int x0, int k, double horizon, RngStream& rng,
                      const SimOptions& opt) {
  if (k < 1 || k > kMaxMarks) throw std::invalid_argument("simulate_pk: number of marks out of range");
  const detail::PlainDynamics plain(m);
  detail::EngineConfig cfg;
  cfg.mode = detail::Mode::kPk;
  cfg.horizon = horizon;
  cfg.k = k;
  cfg.max_nodes = opt.max_nodes;
  detail::run_engine(out.tree, x0, static_cast<MarkMask>((1u << k) - 1), plain, nullptr, cfg, rng);
  out.k = k;
  out.s_times.assign(k, horizon);
  out.convention = MarkConvention::kFollowThrough;
  out.leaves = spine_leaves(out.tree, k, out.s_times);
}

MarkedTree simulate_pk(const BranchingModel& m, int x0, int k, double horizon, RngStream& rng, const SimOptions& opt) {
  MarkedTree mt;
  simulate_pk_into(mt, m, x0, k, horizon, rng, opt);
  return mt;
}

void simulate_qk_into(MarkedTree& out, const SpineModel& sm, int x0, int k, std::span<const double> s, RngStream& rng,
                      MarkConvention conv, const SimOptions& opt) {
  check_times(k, s);
  if (k > sm.moments().k_max()) throw std::invalid_argument("simulate_qk: k exceeds the moment table");
  const auto& m = sm.model();
  const detail::PlainDynamics plain(m);
  const detail::SpineDynamics spine(m, sm.tilted_rates(), sm.moments());
  detail::EngineConfig cfg;
  cfg.mode = detail::Mode::kQk;
  cfg.horizon = s[0];
  cfg.k = k;
  for (int i = 0; i < k; ++i) cfg.s[i] = s[i];
  cfg.retire = conv == MarkConvention::kRetire;
  cfg.max_nodes = opt.max_nodes;
  detail::run_engine(out.tree, x0, static_cast<MarkMask>((1u << k) - 1), plain, &spine, cfg, rng);
  out.k = k;
  out.s_times.assign(s.begin(), s.end());
  out.convention = conv;
  out.leaves = spine_leaves(out.tree, k, s);
}

MarkedTree simulate_qk(const SpineModel& sm, int x0, int k, std::span<const double> s, RngStream& rng,
                       MarkConvention conv, const SimOptions& opt) {
  MarkedTree mt;
  simulate_qk_into(mt, sm, x0, k, s, rng, conv, opt);
  return mt;
}

SkeletonView skeleton(const MarkedTree& mt, std::span<const double> s) {
  const Tree& tree = mt.tree;
  const int k = mt.k;
  check_times(k, s);
  SkeletonView view;
  const auto leaves = spine_leaves(tree, k, s);
  std::vector<char> in_s(tree.size(), 0);
  for (int L : leaves)
    for (int v = L; v >= 0 && !in_s[v]; v = tree.nodes[v].parent) in_s[v] = 1;
  for (int v = 0; v < static_cast<int>(tree.size()); ++v) {
    if (!in_s[v]) continue;
    view.nodes.push_back(v);
    const auto& n = tree.nodes[v];
    bool has_child = false;
    for (int c = 0; c < n.n_children; ++c) has_child |= in_s[n.first_child + c] != 0;
    if (!has_child) view.leaves.push_back(v);
  }
  view.r.assign(k, 0.0);
  for (int i = 0; i < k; ++i) {
    double r = s[i];
    for (int j = 0; j < k; ++j) {
      if (j == i || !(s[j] > s[i])) continue;
      // Deepest node carrying both marks; the pair separates at its death.
      const MarkMask both = static_cast<MarkMask>((1u << i) | (1u << j));
      int u = (tree.nodes[0].marks & both) == both ? 0 : -1;
      while (u >= 0) {
        const auto& n = tree.nodes[u];
        int next = -1;
        for (int c = 0; c < n.n_children; ++c)
          if ((tree.nodes[n.first_child + c].marks & both) == both) next = n.first_child + c;
        if (next < 0) break;
        u = next;
      }
      if (u < 0) continue;
      r = std::max(r, std::min(tree.nodes[u].death, s[j]));
    }
    view.r[i] = r;
    if (r > s[i]) {
      const int stub = carrier_at(tree, i, r);
      if (stub >= 0) view.stubs.push_back(stub);
    }
  }
  std::sort(view.stubs.begin(), view.stubs.end());
  view.stubs.erase(std::unique(view.stubs.begin(), view.stubs.end()), view.stubs.end());
  for (int st : view.stubs)
    if (std::binary_search(view.leaves.begin(), view.leaves.end(), st)) view.stubs_disjoint_from_leaves = false;
  return view;
}

namespace {

void add_node_terms(WeightParts& w, const Tree& tree, int v, double e, MarkMask marks, std::span<const double> s,
                    bool retire, const SpineModel& sm) {
  const auto& n = tree.nodes[v];
  const Vec& phi = sm.eigen().phi;
  const Integrals in = integrate_node(tree, v, n.birth, e, marks, s, retire, sm.model(), sm.moments());
  const int x_end = e >= n.death ? tree.last_state(v) : tree.state_at(v, e);
  w.log_zeta += std::log(phi[x_end]) - std::log(phi[n.state0]) + in.rate_m1 - sm.eigen().lambda * (e - n.birth);
  w.log_rate -= in.rate_mD;
  if (v != 0) w.log_phi_birth += std::log(phi[n.state0]);
}

WeightParts weight_retire(const MarkedTree& mt, const SpineModel& sm, std::span<const double> s) {
  const Tree& tree = mt.tree;
  const Vec& phi = sm.eigen().phi;
  WeightParts w;
  for (int v = 0; v < static_cast<int>(tree.size()); ++v) {
    const auto& n = tree.nodes[v];
    const MarkMask a0 = active_after(n.marks, s, n.birth);
    if (a0 == 0) continue;
    double last = 0.0;
    for (int i = 0; i < mt.k; ++i)
      if (a0 & (1u << i)) last = std::max(last, s[i]);
    const double e = std::min(n.death, last);
    add_node_terms(w, tree, v, e, n.marks, s, true, sm);
    if (n.death < last) {
      const MarkMask at = active_after(n.marks, s, n.death);
      const int D = std::popcount(static_cast<unsigned>(at));
      if (n.n_children == 0) {
        w.vanished = true;
        continue;
      }
      const int M = count_marked_children(tree, v, s, true, n.death);
      w.log_branch += D * std::log(static_cast<double>(n.n_children)) - M * std::log(phi[tree.last_state(v)]);
    }
  }
  return w;
}

WeightParts weight_follow(const MarkedTree& mt, const SpineModel& sm, std::span<const double> s) {
  const Tree& tree = mt.tree;
  const Vec& phi = sm.eigen().phi;
  WeightParts w;
  const auto leaves = spine_leaves(tree, mt.k, s);
  std::vector<char> in_s(tree.size(), 0);
  std::vector<double> leaf_end(tree.size(), 0.0);
  for (int i = 0; i < mt.k; ++i) {
    if (leaves[i] < 0) {
      w.vanished = true;
      return w;
    }
    leaf_end[leaves[i]] = std::max(leaf_end[leaves[i]], s[i]);
    for (int v = leaves[i]; v >= 0 && !in_s[v]; v = tree.nodes[v].parent) in_s[v] = 1;
  }
  for (int v = 0; v < static_cast<int>(tree.size()); ++v) {
    if (!in_s[v]) continue;
    const auto& n = tree.nodes[v];
    bool interior = false;
    for (int c = 0; c < n.n_children; ++c) interior |= in_s[n.first_child + c] != 0;
    const double e = interior ? n.death : leaf_end[v];
    add_node_terms(w, tree, v, e, n.marks, s, false, sm);
    if (interior) {
      const int D = std::popcount(static_cast<unsigned>(n.marks));
      const int M = count_marked_children(tree, v, s, false, n.death);
      w.log_branch += D * std::log(static_cast<double>(n.n_children)) - M * std::log(phi[tree.last_state(v)]);
    }
  }
  return w;
}

}  // namespace

WeightParts weight_W_s_k(const MarkedTree& mt, const SpineModel& sm, std::span<const double> s, MarkConvention conv) {
  check_times(mt.k, s);
  return conv == MarkConvention::kRetire ? weight_retire(mt, sm, s) : weight_follow(mt, sm, s);
}

WeightParts weight_W_s_k(const MarkedTree& mt, const SpineModel& sm, std::span<const double> s) {
  return weight_W_s_k(mt, sm, s, mt.convention);
}

WeightParts weight_W_t_k(const MarkedTree& mt, const SpineModel& sm, double t) {
  const std::vector<double> s(mt.k, t);
  return weight_retire(mt, sm, s);
}

double log_weight_natural(const MarkedTree& mt, const SpineModel& sm, double t) {
  const Tree& tree = mt.tree;
  const Vec& phi = sm.eigen().phi;
  const std::vector<double> s(mt.k, t);
  double lw = -std::log(phi[tree.root_state]);
  for (int v = 0; v < static_cast<int>(tree.size()); ++v) {
    const auto& n = tree.nodes[v];
    if (n.marks == 0 || n.birth > t) continue;
    const double e = std::min(n.death, t);
    const Integrals in = integrate_node(tree, v, n.birth, e, n.marks, s, false, sm.model(), sm.moments());
    lw -= in.rate_mD - in.rate_m1;
    lw -= sm.eigen().lambda * (e - n.birth);
    if (n.death > t) {
      lw += std::log(phi[tree.state_at(v, t)]);
    } else {
      if (n.n_children == 0) return -INFINITY;
      const int D = std::popcount(static_cast<unsigned>(n.marks));
      const int M = count_marked_children(tree, v, s, false, n.death);
      lw += D * std::log(static_cast<double>(n.n_children)) - (M - 1) * std::log(phi[tree.last_state(v)]);
    }
  }
  return lw;
}

SkeletonIntegrals skeleton_integrals(const MarkedTree& mt, const SpineModel& sm, double t) {
  const Tree& tree = mt.tree;
  const std::vector<double> s(mt.k, t);
  SkeletonIntegrals out;
  for (int v = 0; v < static_cast<int>(tree.size()); ++v) {
    const auto& n = tree.nodes[v];
    if (n.marks == 0 || n.birth > t) continue;
    const double e = std::min(n.death, t);
    const Integrals in = integrate_node(tree, v, n.birth, e, n.marks, s, false, sm.model(), sm.moments());
    out.rate_excess += in.rate_mD - in.rate_m1;
    out.exposure += e - n.birth;
  }
  return out;
}

}  // namespace spinesim
