#pragma once

#include <string>
#include <vector>

#include <Eigen/Core>

namespace spinesim {

using Vec = Eigen::VectorXd;
using Mat = Eigen::MatrixXd;

constexpr int kDefaultNMax = 8;

struct OffspringAtom {
  double p = 0.0;
  std::vector<int> children;  // 0-based state indices
};

// Finite-state non-local branching Markov process: motion generator Q, branch rate
// beta and per-state offspring atoms.
struct BranchingModel {
  std::vector<std::string> states;
  Mat Q;
  Vec beta;
  std::vector<std::vector<OffspringAtom>> offspring;
  int n_max = kDefaultNMax;

  int d() const { return static_cast<int>(states.size()); }
  // Largest atom size actually present.
  int max_offspring() const;
};

// Validates and returns the model. Throws ModelError naming the first violation.
BranchingModel build_model(std::vector<std::string> states, Mat Q, Vec beta,
                           std::vector<std::vector<OffspringAtom>> offspring, int n_max = kDefaultNMax);

// Single-state model with beta = 1 and atoms {(p0, []), (1 - p0, [0, 0])}.
BranchingModel binary_model(double p0, double beta = 1.0);

// M(x, y): expected number of offspring placed at y by a branching at x.
Mat offspring_mean_matrix(const BranchingModel& m);
// A = Q + diag(beta) (M - I).
Mat mean_generator(const BranchingModel& m);

// e^{tA}.
Mat semigroup_matrix(const BranchingModel& m, double t);
Mat expm(const Mat& a);

struct EigenTriple {
  double lambda = 0.0;
  Vec phi;        // right eigenvector, max entry 1
  Vec phi_tilde;  // left eigenvector, <phi, phi_tilde> = 1
  double sigma = 0.0;
  double mass = 0.0;  // <1, phi_tilde>
};

// Perron triple of the mean generator. Dense decomposition for d <= 64, power
// iteration with deflation above. Also fills sigma and mass.
EigenTriple compute_eigen(const BranchingModel& m, double tol = 1e-12);

// V[g](x) = E_x[sum_{i != j} g(x_i) g(x_j)].
Vec variance_functional(const BranchingModel& m, const Vec& g);
double compute_sigma(const BranchingModel& m, const EigenTriple& e);
// Throws ModelError when sigma <= 0 (deterministic lineages).
void require_positive_sigma(const EigenTriple& e);

// max_x phi(x)^{-1} sum_y |e^{tA}(x,y) - phi(x) phi_tilde(y)|.
double mixing_defect(const BranchingModel& m, const EigenTriple& e, double t);

// Multiplies each zero-offspring probability by a common factor c, rescales the
// other atoms of that state to keep the total at 1, and bisects on c until
// |lambda| <= tol.
BranchingModel calibrate_critical(const BranchingModel& m, double tol = 1e-10);

}  // namespace spinesim
