#include "spinesim/model.hpp"

#include <algorithm>
#include <cmath>
#include <complex>
#include <string>

#include <Eigen/Eigenvalues>
#include <unsupported/Eigen/MatrixFunctions>

#include "spinesim/error.hpp"

namespace spinesim {

namespace {

constexpr double kProbTol = 1e-12;
constexpr double kRowTol = 1e-12;
constexpr int kDenseLimit = 64;

std::string idx(const std::string& base, int i) { return base + "[" + std::to_string(i) + "]"; }

}  // namespace

int BranchingModel::max_offspring() const {
  std::size_t n = 0;
  for (const auto& atoms : offspring)
    for (const auto& a : atoms) n = std::max(n, a.children.size());
  return static_cast<int>(n);
}

BranchingModel build_model(std::vector<std::string> states, Mat Q, Vec beta,
                           std::vector<std::vector<OffspringAtom>> offspring, int n_max) {
  const int d = static_cast<int>(states.size());
  if (d == 0) throw ModelError("states", "empty state space");
  if (n_max < 0) throw ModelError("n_max", "negative n_max");
  if (Q.rows() != d || Q.cols() != d) throw ModelError("Q", "expected a " + std::to_string(d) + "x" + std::to_string(d) + " matrix");
  if (beta.size() != d) throw ModelError("beta", "expected " + std::to_string(d) + " entries");
  if (static_cast<int>(offspring.size()) != d) throw ModelError("offspring", "expected " + std::to_string(d) + " per-state lists");

  for (int x = 0; x < d; ++x) {
    double row = 0.0;
    for (int y = 0; y < d; ++y) {
      if (!std::isfinite(Q(x, y))) throw ModelError(idx(idx("Q", x), y), "non-finite rate");
      if (x != y && Q(x, y) < 0.0) throw ModelError(idx(idx("Q", x), y), "negative rate");
      row += Q(x, y);
    }
    if (std::fabs(row) > kRowTol) throw ModelError(idx("Q", x), "not a generator");
  }
  for (int x = 0; x < d; ++x) {
    if (!std::isfinite(beta[x]) || beta[x] < 0.0) throw ModelError(idx("beta", x), "negative rate");
  }
  for (int x = 0; x < d; ++x) {
    const std::string base = idx("offspring", x);
    if (offspring[x].empty()) throw ModelError(base, "no offspring atoms");
    double total = 0.0;
    for (int a = 0; a < static_cast<int>(offspring[x].size()); ++a) {
      const auto& atom = offspring[x][a];
      const std::string ap = idx(base, a);
      if (!std::isfinite(atom.p) || atom.p < 0.0) throw ModelError(ap + ".p", "negative probability");
      if (atom.children.size() == 1) throw ModelError(ap + ".children", "single-offspring atom forbidden");
      if (static_cast<int>(atom.children.size()) > n_max)
        throw ModelError(ap + ".children", "offspring count exceeds n_max = " + std::to_string(n_max));
      for (int c = 0; c < static_cast<int>(atom.children.size()); ++c) {
        if (atom.children[c] < 0 || atom.children[c] >= d) throw ModelError(idx(ap + ".children", c), "unknown state");
      }
      total += atom.p;
    }
    if (std::fabs(total - 1.0) > kProbTol) throw ModelError(base, "probabilities sum to " + std::to_string(total) + ", not 1");
  }
  BranchingModel m;
  m.states = std::move(states);
  m.Q = std::move(Q);
  m.beta = std::move(beta);
  m.offspring = std::move(offspring);
  m.n_max = n_max;
  return m;
}

BranchingModel binary_model(double p0, double beta) {
  return build_model({"1"}, Mat::Zero(1, 1), Vec::Constant(1, beta), {{{p0, {}}, {1.0 - p0, {0, 0}}}});
}

Mat offspring_mean_matrix(const BranchingModel& m) {
  const int d = m.d();
  Mat M = Mat::Zero(d, d);
  for (int x = 0; x < d; ++x)
    for (const auto& atom : m.offspring[x])
      for (int c : atom.children) M(x, c) += atom.p;
  return M;
}

Mat mean_generator(const BranchingModel& m) {
  const int d = m.d();
  return m.Q + m.beta.asDiagonal() * (offspring_mean_matrix(m) - Mat::Identity(d, d));
}

Mat expm(const Mat& a) { return a.exp(); }

Mat semigroup_matrix(const BranchingModel& m, double t) { return expm(t * mean_generator(m)); }

Vec variance_functional(const BranchingModel& m, const Vec& g) {
  Vec v = Vec::Zero(m.d());
  for (int x = 0; x < m.d(); ++x) {
    for (const auto& atom : m.offspring[x]) {
      double s = 0.0, s2 = 0.0;
      for (int c : atom.children) {
        s += g[c];
        s2 += g[c] * g[c];
      }
      v[x] += atom.p * (s * s - s2);
    }
  }
  return v;
}

double compute_sigma(const BranchingModel& m, const EigenTriple& e) {
  const Vec v = variance_functional(m, e.phi);
  return (e.phi_tilde.array() * m.beta.array() * v.array()).sum();
}

void require_positive_sigma(const EigenTriple& e) {
  if (!(e.sigma > 0.0)) throw ModelError("offspring", "sigma <= 0: degenerate model for critical asymptotics");
}

namespace {

void normalize_pair(Vec& phi, Vec& phit) {
  phi /= phi.maxCoeff();
  phit /= phi.dot(phit);
}

void check_positive(const Vec& phi, const Vec& phit) {
  const double scale = phi.cwiseAbs().maxCoeff();
  for (int i = 0; i < phi.size(); ++i) {
    if (!(phi[i] > 1e-14 * scale)) throw NumericalError("Perron eigenvector has non-positive entries");
    if (phit[i] < -1e-12) throw NumericalError("left Perron eigenvector has negative entries");
  }
}

EigenTriple dense_eigen(const Mat& A) {
  const int d = static_cast<int>(A.rows());
  Eigen::EigenSolver<Mat> right(A, true);
  Eigen::EigenSolver<Mat> left(A.transpose(), true);
  if (right.info() != Eigen::Success || left.info() != Eigen::Success) throw NumericalError("eigen decomposition failed");
  auto top = [](const Eigen::VectorXcd& ev) {
    int best = 0;
    for (int i = 1; i < ev.size(); ++i)
      if (ev[i].real() > ev[best].real()) best = i;
    return best;
  };
  const Eigen::VectorXcd evr = right.eigenvalues();
  const Eigen::VectorXcd evl = left.eigenvalues();
  const int ir = top(evr);
  const int il = top(evl);
  const double lam = evr[ir].real();
  const double scale = 1.0 + A.cwiseAbs().maxCoeff();
  if (std::fabs(evr[ir].imag()) > 1e-9 * scale) throw NumericalError("dominant eigenvalue is not real");
  for (int i = 0; i < d; ++i) {
    if (i != ir && std::abs(evr[i] - evr[ir]) < 1e-8 * scale) throw NumericalError("dominant eigenvalue is not simple");
  }
  Vec phi = right.eigenvectors().col(ir).real();
  Vec phit = left.eigenvectors().col(il).real();
  if (phi.sum() < 0) phi = -phi;
  if (phit.sum() < 0) phit = -phit;
  check_positive(phi, phit);
  phit = phit.cwiseMax(0.0);
  normalize_pair(phi, phit);
  EigenTriple e;
  e.lambda = lam;
  e.phi = phi;
  e.phi_tilde = phit;
  return e;
}

// Power iteration on the shifted nonnegative matrix B = A + sI.
Vec power_iterate(const Mat& B, double tol, double& rho) {
  const int d = static_cast<int>(B.rows());
  Vec v = Vec::Constant(d, 1.0 / std::sqrt(d));
  rho = 0.0;
  for (int it = 0; it < 200000; ++it) {
    Vec w = B * v;
    const double r = w.norm();
    if (r == 0.0) throw NumericalError("power iteration collapsed");
    w /= r;
    const double diff = (w - v).cwiseAbs().maxCoeff();
    v = w;
    rho = r;
    if (diff < tol) return v;
  }
  throw NumericalError("power iteration did not converge");
}

EigenTriple power_eigen(const Mat& A, double tol) {
  const int d = static_cast<int>(A.rows());
  const double s = std::max(0.0, -A.diagonal().minCoeff()) + 1.0;
  const Mat B = A + s * Mat::Identity(d, d);
  double rho = 0.0, rho_t = 0.0;
  Vec phi = power_iterate(B, tol, rho);
  Vec phit = power_iterate(B.transpose(), tol, rho_t);
  check_positive(phi, phit);
  normalize_pair(phi, phit);
  const double lam = phit.dot(A * phi) / phit.dot(phi);
  // Deflate and check that the next eigenvalue is strictly smaller in modulus.
  const Mat Bd = B - (lam + s) * phi * phit.transpose();
  double rho2 = 0.0;
  try {
    power_iterate(Bd, 1e-6, rho2);
  } catch (const NumericalError&) {
    rho2 = 0.0;  // oscillation means a complex pair, which is fine as long as it is dominated
  }
  if (rho2 >= (lam + s) * (1.0 - 1e-8)) throw NumericalError("dominant eigenvalue is not simple");
  EigenTriple e;
  e.lambda = lam;
  e.phi = phi;
  e.phi_tilde = phit;
  return e;
}

}  // namespace

EigenTriple compute_eigen(const BranchingModel& m, double tol) {
  const Mat A = mean_generator(m);
  EigenTriple e = m.d() <= kDenseLimit ? dense_eigen(A) : power_eigen(A, tol);
  if (m.d() == 1) {
    e.phi = Vec::Ones(1);
    e.phi_tilde = Vec::Ones(1);
    e.lambda = A(0, 0);
  }
  e.mass = e.phi_tilde.sum();
  e.sigma = compute_sigma(m, e);
  return e;
}

double mixing_defect(const BranchingModel& m, const EigenTriple& e, double t) {
  const Mat T = semigroup_matrix(m, t);
  double worst = 0.0;
  for (int x = 0; x < m.d(); ++x) {
    double s = 0.0;
    for (int y = 0; y < m.d(); ++y) s += std::fabs(T(x, y) - e.phi[x] * e.phi_tilde[y]);
    worst = std::max(worst, s / e.phi[x]);
  }
  return worst;
}

namespace {

BranchingModel scale_death(const BranchingModel& m, double c) {
  BranchingModel out = m;
  for (auto& atoms : out.offspring) {
    double p0 = 0.0;
    for (const auto& a : atoms)
      if (a.children.empty()) p0 += a.p;
    if (p0 <= 0.0 || p0 >= 1.0) continue;
    const double rest = (1.0 - c * p0) / (1.0 - p0);
    for (auto& a : atoms) a.p *= a.children.empty() ? c : rest;
  }
  return out;
}

double dominant_lambda(const BranchingModel& m) {
  const Mat A = mean_generator(m);
  if (m.d() <= kDenseLimit) {
    Eigen::EigenSolver<Mat> es(A, false);
    return es.eigenvalues().real().maxCoeff();
  }
  return compute_eigen(m).lambda;
}

}  // namespace

BranchingModel calibrate_critical(const BranchingModel& m, double tol) {
  double max_p0 = 0.0;
  for (const auto& atoms : m.offspring) {
    double p0 = 0.0;
    for (const auto& a : atoms)
      if (a.children.empty()) p0 += a.p;
    if (p0 < 1.0) max_p0 = std::max(max_p0, p0);
  }
  if (max_p0 <= 0.0) throw ModelError("offspring", "calibrate_critical needs a zero-offspring atom");
  double lo = 0.0, hi = 1.0 / max_p0;
  double lam_lo = dominant_lambda(scale_death(m, lo));
  double lam_hi = dominant_lambda(scale_death(m, hi));
  if (lam_lo < 0.0 || lam_hi > 0.0) throw ModelError("offspring", "calibrate_critical: no critical rescaling exists");
  for (int it = 0; it < 200; ++it) {
    const double mid = 0.5 * (lo + hi);
    const double lam = dominant_lambda(scale_death(m, mid));
    if (std::fabs(lam) <= tol) {
      BranchingModel out = scale_death(m, mid);
      return build_model(out.states, out.Q, out.beta, out.offspring, out.n_max);
    }
    if (lam > 0.0) lo = mid;
    else hi = mid;
  }
  throw NumericalError("calibrate_critical: bisection did not reach tolerance");
}

}  // namespace spinesim
