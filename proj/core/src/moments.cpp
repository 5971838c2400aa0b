#include "spinesim/moments.hpp"

#include <algorithm>
#include <bit>
#include <cmath>

#include "spinesim/error.hpp"
#include "spinesim/quadrature.hpp"

namespace spinesim {

namespace {

double factorial(int n) {
  double f = 1.0;
  for (int i = 2; i <= n; ++i) f *= i;
  return f;
}

void enumerate(std::span<const int> children, const Vec& phi, int k, int n, std::size_t pos, int left, int positive,
               std::vector<std::uint8_t>& cur, std::vector<MarkTuple>& out) {
  const std::size_t N = children.size();
  if (pos == N) {
    if (left == 0 && positive == n) {
      double w = factorial(k);
      for (std::size_t i = 0; i < N; ++i) {
        if (cur[i] > 0) w *= phi[children[i]] / factorial(cur[i]);
      }
      out.push_back({cur, w});
    }
    return;
  }
  // Prune: remaining slots must be able to supply the missing positive entries.
  const int need = n - positive;
  if (need > static_cast<int>(N - pos) || need > left) return;
  for (int c = 0; c <= left; ++c) {
    if (c > 0 && positive == n) break;
    cur[pos] = static_cast<std::uint8_t>(c);
    enumerate(children, phi, k, n, pos + 1, left - c, positive + (c > 0), cur, out);
  }
  cur[pos] = 0;
}

}  // namespace

std::vector<MarkTuple> mark_tuples(std::span<const int> children, const Vec& phi, int k, int n) {
  std::vector<MarkTuple> out;
  if (k < 1 || n < 1 || n > k || n > static_cast<int>(children.size())) return out;
  std::vector<std::uint8_t> cur(children.size(), 0);
  enumerate(children, phi, k, n, 0, k, 0, cur, out);
  return out;
}

double bracket_kn(std::span<const int> children, const Vec& phi, int k, int n) {
  double s = 0.0;
  for (const auto& t : mark_tuples(children, phi, k, n)) s += t.weight;
  return s;
}

double bracket_k(std::span<const int> children, const Vec& phi, double phi_x, int k) {
  double s = 0.0;
  for (int n = 1; n <= k; ++n) s += std::pow(phi_x, -n) * bracket_kn(children, phi, k, n);
  return s;
}

double m_kn(const BranchingModel& m, const Vec& phi, int x, int k, int n) {
  double s = 0.0;
  for (const auto& atom : m.offspring[x]) s += atom.p * bracket_kn(atom.children, phi, k, n);
  return s * std::pow(phi[x], -n);
}

double m_k(const BranchingModel& m, const Vec& phi, int x, int k) {
  double s = 0.0;
  for (int n = 1; n <= k; ++n) s += m_kn(m, phi, x, k, n);
  return s;
}

std::size_t sample_cdf(const std::vector<double>& cdf, RngStream& rng) {
  const double u = rng.uniform() * cdf.back();
  const auto it = std::upper_bound(cdf.begin(), cdf.end(), u);
  return std::min<std::size_t>(static_cast<std::size_t>(it - cdf.begin()), cdf.size() - 1);
}

MomentTable::MomentTable(const BranchingModel& m, const Vec& phi, int k_max) : k_max_(k_max) {
  if (k_max < 1 || k_max > kMaxMarks) throw std::invalid_argument("MomentTable: k_max out of range");
  const int d = m.d();
  const std::size_t cells = static_cast<std::size_t>(d) * (k_max + 1) * (k_max + 1);
  mkn_.assign(cells, 0.0);
  mk_.assign(static_cast<std::size_t>(d) * (k_max + 1), 0.0);
  atom_cdf_.assign(cells, {});
  tuples_.resize(d);
  tuple_cdf_.resize(d);
  for (int x = 0; x < d; ++x) {
    const auto& atoms = m.offspring[x];
    tuples_[x].resize(atoms.size());
    tuple_cdf_[x].resize(atoms.size());
    for (std::size_t a = 0; a < atoms.size(); ++a) {
      tuples_[x][a].resize((k_max + 1) * (k_max + 1));
      tuple_cdf_[x][a].resize((k_max + 1) * (k_max + 1));
    }
    for (int k = 1; k <= k_max; ++k) {
      for (int n = 1; n <= k; ++n) {
        const std::size_t slot = static_cast<std::size_t>(k) * (k_max + 1) + n;
        std::vector<double> cdf;
        double acc = 0.0;
        for (std::size_t a = 0; a < atoms.size(); ++a) {
          auto tl = mark_tuples(atoms[a].children, phi, k, n);
          std::vector<double> tc;
          double s = 0.0;
          for (const auto& t : tl) {
            s += t.weight;
            tc.push_back(s);
          }
          acc += atoms[a].p * s;
          cdf.push_back(acc);
          tuples_[x][a][slot] = std::move(tl);
          tuple_cdf_[x][a][slot] = std::move(tc);
        }
        mkn_[index(x, k, n)] = acc * std::pow(phi[x], -n);
        if (acc > 0.0) atom_cdf_[index(x, k, n)] = std::move(cdf);
        mk_[x * (k_max + 1) + k] += mkn_[index(x, k, n)];
      }
    }
  }
  v_phi_ = variance_functional(m, phi);
}

const std::vector<MarkTuple>& MomentTable::tuples(int x, int atom, int j, int n) const {
  return tuples_[x][atom][static_cast<std::size_t>(j) * (k_max_ + 1) + n];
}

const std::vector<double>& MomentTable::tuple_cdf(int x, int atom, int j, int n) const {
  return tuple_cdf_[x][atom][static_cast<std::size_t>(j) * (k_max_ + 1) + n];
}

int MomentTable::sample_biased_atom(int x, int j, int n, RngStream& rng) const {
  const auto& cdf = atom_cdf_[index(x, j, n)];
  if (cdf.empty()) throw SimulationError("no valid offspring configuration");
  return static_cast<int>(sample_cdf(cdf, rng));
}

namespace {

// Hands the set bits of `marks` to children according to `counts`, in uniformly
// random order, so every labelled configuration with these counts is equally likely.
void assign_marks(const std::vector<std::uint8_t>& counts, MarkMask marks, RngStream& rng, std::vector<MarkMask>& out) {
  int ids[kMaxMarks];
  int j = 0;
  for (int b = 0; b < kMaxMarks; ++b)
    if (marks & (1u << b)) ids[j++] = b;
  for (int i = j - 1; i > 0; --i) std::swap(ids[i], ids[rng.below(static_cast<std::uint64_t>(i) + 1)]);
  out.assign(counts.size(), 0);
  int p = 0;
  for (std::size_t c = 0; c < counts.size(); ++c)
    for (int r = 0; r < counts[c]; ++r) out[c] |= static_cast<MarkMask>(1u << ids[p++]);
}

}  // namespace

void MomentTable::sample_mark_partition(int x, int atom, MarkMask marks, int n, RngStream& rng,
                                        std::vector<MarkMask>& out) const {
  const int j = std::popcount(static_cast<unsigned>(marks));
  const auto& cdf = tuple_cdf(x, atom, j, n);
  if (cdf.empty()) throw SimulationError("no valid mark allocation");
  const auto& t = tuples(x, atom, j, n)[sample_cdf(cdf, rng)];
  assign_marks(t.counts, marks, rng, out);
}

int biased_offspring_sample(const BranchingModel& m, const Vec& phi, int x, int j, int n, RngStream& rng) {
  std::vector<double> cdf;
  double acc = 0.0;
  for (const auto& atom : m.offspring[x]) {
    acc += atom.p * bracket_kn(atom.children, phi, j, n);
    cdf.push_back(acc);
  }
  if (!(acc > 0.0)) throw SimulationError("no valid offspring configuration");
  return static_cast<int>(sample_cdf(cdf, rng));
}

std::vector<MarkMask> mark_partition_sample(std::span<const int> children, const Vec& phi, MarkMask marks, int n,
                                            RngStream& rng) {
  const int j = std::popcount(static_cast<unsigned>(marks));
  if (n > static_cast<int>(children.size())) throw SimulationError("more mark groups than offspring");
  const auto tl = mark_tuples(children, phi, j, n);
  if (tl.empty()) throw SimulationError("no valid mark allocation");
  std::vector<double> cdf;
  double s = 0.0;
  for (const auto& t : tl) cdf.push_back(s += t.weight);
  std::vector<MarkMask> out;
  assign_marks(tl[sample_cdf(cdf, rng)].counts, marks, rng, out);
  return out;
}

Vec pair_functional(const BranchingModel& m, const Vec& h1, const Vec& h2) {
  Vec v = Vec::Zero(m.d());
  for (int x = 0; x < m.d(); ++x) {
    for (const auto& atom : m.offspring[x]) {
      double s1 = 0.0, s2 = 0.0, diag = 0.0;
      for (int c : atom.children) {
        s1 += h1[c];
        s2 += h2[c];
        diag += h1[c] * h2[c];
      }
      v[x] += atom.p * (s1 * s2 - diag);
    }
  }
  return v;
}

Vec second_moment_oracle(const BranchingModel& m, const Vec& f, const Vec& g, double t, double tol) {
  if (t < 0.0) throw std::invalid_argument("second_moment_oracle: negative time");
  const Mat A = mean_generator(m);
  const Vec fg = f.cwiseProduct(g);
  Vec u = expm(t * A) * fg;
  if (t == 0.0) return u;
  auto integrand = [&](double s) -> Vec {
    const Mat Tr = expm((t - s) * A);
    const Vec src = m.beta.cwiseProduct(pair_functional(m, Tr * f, Tr * g));
    return expm(s * A) * src;
  };
  u += adaptive_simpson(integrand, 0.0, t, tol);
  return u;
}

Vec two_time_moment_oracle(const BranchingModel& m, const Vec& f, const Vec& g, double s2, double s1, double tol) {
  if (s2 > s1) throw std::invalid_argument("two_time_moment_oracle: need s2 <= s1");
  const Vec g2 = semigroup_matrix(m, s1 - s2) * g;
  return second_moment_oracle(m, f, g2, s2, tol);
}

}  // namespace spinesim
