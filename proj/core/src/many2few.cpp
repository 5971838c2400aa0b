#include "spinesim/many2few.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>

#include "spinesim/error.hpp"
#include "spinesim/parallel.hpp"

namespace spinesim {

namespace {

constexpr std::uint64_t kTagLhs = 10ull << 48;
constexpr std::uint64_t kTagRhs = 11ull << 48;
constexpr std::uint64_t kTagSeparated = 12ull << 48;
constexpr std::uint64_t kTagMartingale = 13ull << 48;

std::vector<int> alive_capped(const Tree& tree, double t, std::size_t cap) {
  auto a = tree.alive_indices(t);
  if (a.size() > cap)
    throw SimulationError("tuple enumeration cap exceeded: " + std::to_string(a.size()) + " particles at t = " +
                          std::to_string(t));
  return a;
}

// Particles of `alive` (ascending node ids) descended from w, w included.
std::size_t count_descendants(const Tree& tree, const std::vector<int>& alive, int w) {
  std::size_t c = std::binary_search(alive.begin(), alive.end(), w) ? 1 : 0;
  const auto& n = tree.nodes[w];
  if (n.n_children == 0) return c;
  const auto lo = std::lower_bound(alive.begin(), alive.end(), n.first_child);
  const auto hi = std::lower_bound(alive.begin(), alive.end(), tree.subtree_end[w]);
  return c + static_cast<std::size_t>(hi - lo);
}

double genealogy_term(const Tree& tree, const FunctionalSpec& fs, int v, int w, const std::vector<int>& alive_s1,
                      std::size_t n_s2) {
  if (tree.is_ancestor_or_self(w, v)) return 0.0;
  double y = fs.F(tree.mrca_split_time(v, w) / fs.s_times[0]);
  if (fs.inverse_sizes) {
    const std::size_t nhat = alive_s1.size() - count_descendants(tree, alive_s1, w);
    y /= static_cast<double>(n_s2) * static_cast<double>(nhat);
  }
  return y;
}

Estimate merge_estimate(const std::vector<double>& vals) { return mc_mean(vals); }

}  // namespace

void FunctionalSpec::validate(const BranchingModel& m) const {
  if (k < 1 || k > 3) throw std::invalid_argument("functional arity must be 1, 2 or 3");
  if (static_cast<int>(s_times.size()) != k) throw std::invalid_argument("need one time per argument");
  for (int i = 0; i < k; ++i) {
    if (!(s_times[i] >= 0.0)) throw std::invalid_argument("negative time");
    if (i > 0 && s_times[i] > s_times[i - 1]) throw std::invalid_argument("times must satisfy s_k <= ... <= s_1");
  }
  if (kind == Kind::kProduct) {
    if (static_cast<int>(f.size()) != k) throw std::invalid_argument("need one state function per argument");
    for (const auto& fi : f)
      if (fi.size() != m.d()) throw std::invalid_argument("state function has the wrong length");
    if (distinct && k > 2) throw std::invalid_argument("distinct tuples supported for k <= 2");
  } else {
    if (k != 2) throw std::invalid_argument("genealogy functional needs k = 2");
    if (!F) throw std::invalid_argument("genealogy functional needs F");
  }
}

bool FunctionalSpec::equal_times() const {
  return std::all_of(s_times.begin(), s_times.end(), [&](double s) { return s == s_times[0]; });
}

FunctionalSpec product_functional(std::vector<Vec> f, std::vector<double> s_times, bool distinct) {
  FunctionalSpec fs;
  fs.kind = FunctionalSpec::Kind::kProduct;
  fs.k = static_cast<int>(f.size());
  fs.id = "product_k" + std::to_string(fs.k);
  fs.f = std::move(f);
  fs.s_times = std::move(s_times);
  fs.distinct = distinct;
  return fs;
}

FunctionalSpec genealogy_functional(std::function<double(double)> F, double s1, double s2, bool inverse_sizes) {
  FunctionalSpec fs;
  fs.kind = FunctionalSpec::Kind::kGenealogy;
  fs.id = inverse_sizes ? "genealogy_weighted" : "genealogy";
  fs.k = 2;
  fs.s_times = {s1, s2};
  fs.F = std::move(F);
  fs.inverse_sizes = inverse_sizes;
  return fs;
}

double lhs_sum(const Tree& tree, const FunctionalSpec& fs, std::size_t max_population) {
  if (fs.kind == FunctionalSpec::Kind::kProduct) {
    double prod = 1.0;
    std::vector<std::vector<int>> alive(fs.k);
    for (int i = 0; i < fs.k; ++i) {
      alive[i] = alive_capped(tree, fs.s_times[i], max_population);
      double sum = 0.0;
      for (int v : alive[i]) sum += fs.f[i][tree.state_at(v, fs.s_times[i])];
      prod *= sum;
    }
    if (fs.distinct) {
      if (fs.k == 2) {
        // Remove the diagonal: particles alive at both times.
        for (int v : alive[1])
          if (tree.alive_at(v, fs.s_times[0]))
            prod -= fs.f[0][tree.state_at(v, fs.s_times[0])] * fs.f[1][tree.state_at(v, fs.s_times[1])];
      }
    }
    return prod;
  }
  const auto alive_s1 = alive_capped(tree, fs.s_times[0], max_population);
  const auto alive_s2 = alive_capped(tree, fs.s_times[1], max_population);
  double sum = 0.0;
  for (int w : alive_s2)
    for (int v : alive_s1) sum += genealogy_term(tree, fs, v, w, alive_s1, alive_s2.size());
  return sum;
}

double functional_at_leaves(const Tree& tree, const FunctionalSpec& fs, std::span<const int> leaves) {
  for (int L : leaves)
    if (L < 0) return 0.0;
  if (fs.kind == FunctionalSpec::Kind::kProduct) {
    if (fs.distinct)
      for (int i = 0; i < fs.k; ++i)
        for (int j = i + 1; j < fs.k; ++j)
          if (leaves[i] == leaves[j]) return 0.0;
    double y = 1.0;
    for (int i = 0; i < fs.k; ++i) y *= fs.f[i][tree.state_at(leaves[i], fs.s_times[i])];
    return y;
  }
  const auto alive_s1 = tree.alive_indices(fs.s_times[0]);
  const std::size_t n_s2 = fs.inverse_sizes ? tree.count_alive(fs.s_times[1]) : 0;
  return genealogy_term(tree, fs, leaves[0], leaves[1], alive_s1, n_s2);
}

Estimate lhs_estimate(const BranchingModel& m, int x0, const FunctionalSpec& fs, std::uint64_t n,
                      const EstimatorOptions& opt) {
  fs.validate(m);
  SimOptions so;
  so.max_nodes = opt.max_nodes;
  std::vector<double> vals(n);
  const std::size_t chunk = 64;
  const std::size_t blocks = (n + chunk - 1) / chunk;
  parallel_for(blocks, opt.workers, [&](std::size_t b) {
    Tree tree;
    for (std::size_t i = b * chunk; i < std::min<std::size_t>(n, (b + 1) * chunk); ++i) {
      RngStream rng(opt.seed, kTagLhs | (opt.stream_offset + i));
      simulate_into(tree, m, x0, fs.s_times[0], rng, so);
      vals[i] = lhs_sum(tree, fs, opt.max_population);
    }
  }, 1);
  return merge_estimate(vals);
}

double conditional_weight(MarkedTree& mt, const SpineModel& sm, std::span<const double> s_times,
                          MarkConvention conv, std::size_t max_terms) {
  Tree& tree = mt.tree;
  const int k = mt.k;
  std::vector<int> terminals;
  std::vector<double> log_p;  // log prod 1/N_u over strict ancestors
  for (int v = 0; v < static_cast<int>(tree.size()); ++v) {
    if (tree.nodes[v].n_children != 0) continue;
    double lp = 0.0;
    for (int u = tree.nodes[v].parent; u >= 0; u = tree.nodes[u].parent) lp -= std::log(tree.nodes[u].n_children);
    terminals.push_back(v);
    log_p.push_back(lp);
  }
  double terms = 1.0;
  for (int i = 0; i < k; ++i) terms *= static_cast<double>(terminals.size());
  if (terms > static_cast<double>(max_terms))
    throw SimulationError("conditional_weight: " + std::to_string(terms) + " mark placements exceed the cap");
  std::vector<std::size_t> idx(k, 0);
  double total = 0.0;
  for (;;) {
    for (auto& nd : tree.nodes) nd.marks = 0;
    double lp = 0.0;
    for (int i = 0; i < k; ++i) {
      lp += log_p[idx[i]];
      for (int u = terminals[idx[i]]; u >= 0; u = tree.nodes[u].parent)
        tree.nodes[u].marks = static_cast<MarkMask>(tree.nodes[u].marks | (1u << i));
    }
    const WeightParts w = weight_W_s_k(mt, sm, s_times, conv);
    if (!w.vanished) total += std::exp(lp + w.log_total());
    int i = 0;
    while (i < k && ++idx[i] == terminals.size()) idx[i++] = 0;
    if (i == k) break;
  }
  return total;
}

Estimate martingale_mean(const SpineModel& sm, int x0, int k, std::span<const double> s_times, std::uint64_t n,
                         const EstimatorOptions& opt, MartingaleSampler sampler) {
  if (static_cast<int>(s_times.size()) != k) throw std::invalid_argument("need one time per mark");
  if (k > sm.moments().k_max()) throw std::invalid_argument("k exceeds the moment table");
  SimOptions so;
  so.max_nodes = opt.max_nodes;
  const std::vector<double> s(s_times.begin(), s_times.end());
  std::vector<double> vals(n);
  const std::size_t chunk = 64;
  const std::size_t blocks = (n + chunk - 1) / chunk;
  parallel_for(blocks, opt.workers, [&](std::size_t b) {
    MarkedTree mt;
    for (std::size_t i = b * chunk; i < std::min<std::size_t>(n, (b + 1) * chunk); ++i) {
      RngStream rng(opt.seed, kTagMartingale | (opt.stream_offset + i));
      simulate_pk_into(mt, sm.model(), x0, k, s[0], rng, so);
      vals[i] = sampler == MartingaleSampler::kPlain ? weight_W_s_k(mt, sm, s, opt.convention).value()
                                                     : conditional_weight(mt, sm, s, opt.convention);
    }
  }, 1);
  return mc_mean(vals);
}

namespace {

double sum_log_path_sizes(const Tree& tree, std::span<const int> leaves) {
  double s = 0.0;
  for (int L : leaves)
    for (int v = tree.nodes[L].parent; v >= 0; v = tree.nodes[v].parent) s += std::log(tree.nodes[v].n_children);
  return s;
}

}  // namespace

double rhs_factor_general(const MarkedTree& mt, const SpineModel& sm, std::span<const double> s) {
  const auto leaves = spine_leaves(mt.tree, mt.k, s);
  for (int L : leaves)
    if (L < 0) return 0.0;
  const WeightParts w = weight_W_s_k(mt, sm, s, mt.convention);
  if (w.vanished) return 0.0;
  return std::exp(-w.log_total() + sum_log_path_sizes(mt.tree, leaves));
}

double rhs_factor_equal_time(const MarkedTree& mt, const SpineModel& sm, double t) {
  const Tree& tree = mt.tree;
  const Vec& phi = sm.eigen().phi;
  const std::vector<double> s(mt.k, t);
  const auto leaves = spine_leaves(tree, mt.k, s);
  for (int L : leaves)
    if (L < 0) return 0.0;
  const WeightParts w = weight_W_t_k(mt, sm, t);
  double lf = -w.log_zeta - w.log_rate;
  for (int v = 0; v < static_cast<int>(tree.size()); ++v) {
    const auto& n = tree.nodes[v];
    if (n.marks == 0 || n.birth > t) continue;
    if (v != 0) lf -= std::log(phi[n.state0]);
    if (n.death <= t) {
      int M = 0;
      for (int c = 0; c < n.n_children; ++c) M += tree.nodes[n.first_child + c].marks != 0;
      lf += M * std::log(phi[tree.last_state(v)]);
    }
  }
  return std::exp(lf);
}

double separated_factor(const MarkedTree& mt, const SpineModel& sm, double t) {
  const Tree& tree = mt.tree;
  const Vec& phi = sm.eigen().phi;
  const std::vector<double> s(mt.k, t);
  const auto leaves = spine_leaves(tree, mt.k, s);
  for (std::size_t i = 0; i < leaves.size(); ++i) {
    if (leaves[i] < 0) return 0.0;
    for (std::size_t j = 0; j < i; ++j)
      if (leaves[i] == leaves[j]) return 0.0;
  }
  const SkeletonIntegrals in = skeleton_integrals(mt, sm, t);
  double lf = std::log(phi[tree.root_state]) + in.rate_excess + sm.eigen().lambda * in.exposure;
  for (int L : leaves) lf -= std::log(phi[tree.state_at(L, t)]);
  for (int v = 0; v < static_cast<int>(tree.size()); ++v) {
    const auto& n = tree.nodes[v];
    if (n.marks == 0 || n.death > t) continue;
    int M = 0;
    for (int c = 0; c < n.n_children; ++c) M += tree.nodes[n.first_child + c].marks != 0;
    lf += (M - 1) * std::log(phi[tree.last_state(v)]);
  }
  return std::exp(lf);
}

namespace {

struct RhsSample {
  double value = 0.0;
  double route_diff = 0.0;
  bool vanished = false;
};

RhsResult collect(const std::vector<RhsSample>& samples) {
  RhsResult r;
  std::vector<double> vals(samples.size());
  for (std::size_t i = 0; i < samples.size(); ++i) {
    vals[i] = samples[i].value;
    r.route_max_rel_diff = std::max(r.route_max_rel_diff, samples[i].route_diff);
    r.vanished += samples[i].vanished;
  }
  r.estimate = mc_mean(vals);
  return r;
}

template <class Fn>
std::vector<RhsSample> run_qk(const SpineModel& sm, int x0, const FunctionalSpec& fs, std::uint64_t n,
                              const EstimatorOptions& opt, std::uint64_t tag, Fn&& per_tree) {
  if (fs.k > sm.moments().k_max()) throw std::invalid_argument("k exceeds the moment table");
  SimOptions so;
  so.max_nodes = opt.max_nodes;
  std::vector<RhsSample> out(n);
  const std::size_t chunk = 64;
  const std::size_t blocks = (n + chunk - 1) / chunk;
  parallel_for(blocks, opt.workers, [&](std::size_t b) {
    MarkedTree mt;
    for (std::size_t i = b * chunk; i < std::min<std::size_t>(n, (b + 1) * chunk); ++i) {
      RngStream rng(opt.seed, tag | (opt.stream_offset + i));
      simulate_qk_into(mt, sm, x0, fs.k, fs.s_times, rng, opt.convention, so);
      out[i] = per_tree(mt);
    }
  }, 1);
  return out;
}

}  // namespace

RhsResult rhs_estimate(const SpineModel& sm, int x0, const FunctionalSpec& fs, std::uint64_t n,
                       const EstimatorOptions& opt) {
  fs.validate(sm.model());
  const bool equal = fs.equal_times();
  auto samples = run_qk(sm, x0, fs, n, opt, kTagRhs, [&](const MarkedTree& mt) {
    RhsSample s;
    const double y = functional_at_leaves(mt.tree, fs, mt.leaves);
    const double general = rhs_factor_general(mt, sm, fs.s_times);
    s.vanished = general == 0.0;
    if (equal) {
      const double closed = rhs_factor_equal_time(mt, sm, fs.s_times[0]);
      s.route_diff = general == closed ? 0.0 : std::fabs(closed - general) / std::max(std::fabs(general), 1e-300);
      s.value = y == 0.0 ? 0.0 : y * closed;
    } else {
      s.value = y == 0.0 ? 0.0 : y * general;
    }
    return s;
  });
  return collect(samples);
}

RhsResult rhs_separated_estimate(const SpineModel& sm, int x0, const FunctionalSpec& fs, std::uint64_t n,
                                 const EstimatorOptions& opt) {
  fs.validate(sm.model());
  if (!fs.equal_times()) throw std::invalid_argument("separated estimator needs equal times");
  auto samples = run_qk(sm, x0, fs, n, opt, kTagSeparated, [&](const MarkedTree& mt) {
    RhsSample s;
    const double y = functional_at_leaves(mt.tree, fs, mt.leaves);
    if (y != 0.0) s.value = y * separated_factor(mt, sm, fs.s_times[0]);
    return s;
  });
  return collect(samples);
}

}  // namespace spinesim
