#include "spinesim/census.hpp"

#include <stdexcept>
#include <string>

#include "spinesim/error.hpp"

namespace spinesim {

namespace {

void jump_rows(const Mat& q, std::vector<double>& out, std::vector<std::vector<double>>& cdf,
               std::vector<std::vector<int>>& to) {
  const int d = static_cast<int>(q.rows());
  out.assign(d, 0.0);
  cdf.assign(d, {});
  to.assign(d, {});
  for (int x = 0; x < d; ++x) {
    double acc = 0.0;
    for (int y = 0; y < d; ++y) {
      if (y == x || q(x, y) <= 0.0) continue;
      cdf[x].push_back(acc += q(x, y));
      to[x].push_back(y);
    }
    out[x] = acc;
  }
}

}  // namespace

CensusSampler::CensusSampler(const BranchingModel& m, std::int64_t population_cap) : model_(&m), cap_(population_cap) {
  init_plain();
}

CensusSampler::CensusSampler(const SpineModel& sm, std::int64_t population_cap)
    : model_(&sm.model()), spine_(&sm), cap_(population_cap) {
  init_plain();
  jump_rows(sm.tilted_rates(), s_move_, s_move_cdf_, s_move_to_);
  const int d = model_->d();
  s_branch_.assign(d, 0.0);
  for (int x = 0; x < d; ++x) s_branch_[x] = model_->beta[x] * sm.moments().m_kn(x, 1, 1);
}

void CensusSampler::init_plain() {
  const auto& m = *model_;
  jump_rows(m.Q, move_, move_cdf_, move_to_);
  const int d = m.d();
  beta_.assign(m.beta.data(), m.beta.data() + d);
  total_.resize(d);
  atom_cdf_.assign(d, {});
  for (int x = 0; x < d; ++x) {
    total_[x] = move_[x] + beta_[x];
    double acc = 0.0;
    for (const auto& a : m.offspring[x]) atom_cdf_[x].push_back(acc += a.p);
  }
}

template <bool kSpine>
SpineCensusEnd CensusSampler::simulate(int x0, std::span<const double> times, RngStream& rng,
                                       std::span<std::int64_t> totals, bool* survived) const {
  const auto& m = *model_;
  const int d = m.d();
  if (x0 < 0 || x0 >= d) throw std::invalid_argument("initial state out of range");
  if (totals.size() != times.size()) throw std::invalid_argument("one total per observation time");
  std::vector<std::int64_t> n(d, 0);
  std::int64_t pop = 0;
  int xi = x0;  // spine state
  if (!kSpine) {
    n[x0] = 1;
    pop = 1;
  }
  std::vector<MarkMask> masks;
  double t = 0.0;
  std::size_t next_obs = 0;
  const std::size_t n_obs = times.size();
  double rate = kSpine ? 0.0 : total_[x0];
  SpineCensusEnd end;
  auto record = [&](double upto) {
    while (next_obs < n_obs && times[next_obs] < upto) totals[next_obs++] = pop + (kSpine ? 1 : 0);
  };
  while (next_obs < n_obs) {
    const double s_rate = kSpine ? s_move_[xi] + s_branch_[xi] : 0.0;
    const double all = rate + s_rate;
    if (!(all > 0.0)) break;
    t += rng.exponential(all);
    record(t);
    if (next_obs == n_obs) break;
    double r = rng.uniform() * all;
    if (kSpine && r < s_rate) {
      if (r < s_move_[xi]) {
        xi = s_move_to_[xi][sample_cdf(s_move_cdf_[xi], rng)];
        continue;
      }
      const auto& mom = spine_->moments();
      const int atom = mom.sample_biased_atom(xi, 1, 1, rng);
      mom.sample_mark_partition(xi, atom, MarkMask{1}, 1, rng, masks);
      const auto& ch = m.offspring[xi][atom].children;
      int next_xi = xi;
      for (std::size_t c = 0; c < ch.size(); ++c) {
        if (masks[c]) {
          next_xi = ch[c];
        } else {
          ++n[ch[c]];
          ++pop;
          rate += total_[ch[c]];
        }
      }
      xi = next_xi;
    } else {
      if (kSpine) r -= s_rate;
      int x = 0;
      for (; x < d - 1; ++x) {
        const double w = static_cast<double>(n[x]) * total_[x];
        if (r < w) break;
        r -= w;
      }
      while (n[x] == 0) --x;  // guards against rounding at the top of the scan
      if (rng.uniform() * total_[x] < move_[x]) {
        const int y = move_to_[x][sample_cdf(move_cdf_[x], rng)];
        --n[x];
        ++n[y];
        rate += total_[y] - total_[x];
        continue;
      }
      --n[x];
      --pop;
      rate -= total_[x];
      const auto& atoms = m.offspring[x];
      const auto& ch = atoms[atom_cdf_[x].size() == 1 ? 0 : sample_cdf(atom_cdf_[x], rng)].children;
      for (int y : ch) {
        ++n[y];
        rate += total_[y];
      }
      pop += static_cast<std::int64_t>(ch.size());
      if (pop > cap_)
        throw SimulationError("population cap exceeded: more than " + std::to_string(cap_) + " particles at t = " +
                              std::to_string(t));
      if (pop == 0) {
        rate = 0.0;
        if (!kSpine) break;
      }
      // Incremental rate updates drift; refresh occasionally.
      if ((pop & 1023) == 0) {
        rate = 0.0;
        for (int y = 0; y < d; ++y) rate += static_cast<double>(n[y]) * total_[y];
      }
    }
  }
  record(kAlive);
  for (std::size_t i = next_obs; i < n_obs; ++i) totals[i] = 0;
  if (survived) *survived = !totals.empty() && totals.back() > 0;
  if (kSpine) {
    const Vec& phi = spine_->eigen().phi;
    end.spine_state = xi;
    end.phi_sum = phi[xi];
    for (int y = 0; y < d; ++y) end.phi_sum += static_cast<double>(n[y]) * phi[y];
  }
  return end;
}

bool CensusSampler::run(int x0, std::span<const double> times, RngStream& rng, std::span<std::int64_t> totals) const {
  bool survived = false;
  simulate<false>(x0, times, rng, totals, &survived);
  return survived;
}

SpineCensusEnd CensusSampler::run_spine(int x0, std::span<const double> times, RngStream& rng,
                                        std::span<std::int64_t> totals) const {
  if (!spine_) throw std::logic_error("CensusSampler built without a spine model");
  return simulate<true>(x0, times, rng, totals, nullptr);
}

}  // namespace spinesim
