#pragma once

#include <array>
#include <vector>

#include "spinesim/model.hpp"
#include "spinesim/moments.hpp"
#include "spinesim/rng.hpp"
#include "spinesim/tree.hpp"

namespace spinesim::detail {

// Jump table of a generator: total exit rate and cumulative targets per state.
struct JumpTable {
  std::vector<double> out;
  std::vector<std::vector<double>> cdf;
  std::vector<std::vector<int>> to;

  explicit JumpTable(const Mat& q);
  int sample(int x, RngStream& rng) const;
};

struct PlainDynamics {
  JumpTable motion;
  std::vector<double> beta;
  std::vector<std::vector<double>> atom_cdf;
  const BranchingModel* model;

  explicit PlainDynamics(const BranchingModel& m);
  int sample_atom(int x, RngStream& rng) const;
};

struct SpineDynamics {
  JumpTable motion;                             // tilted
  std::vector<std::vector<double>> rate;        // [x][j] beta m_j
  std::vector<std::vector<std::vector<double>>> n_cdf;  // [x][j] over n = 1..j
  const MomentTable* moments;

  SpineDynamics(const BranchingModel& m, const Mat& tilted, const MomentTable& mom);
};

enum class Mode { kPlain, kPk, kQk };

struct EngineConfig {
  Mode mode = Mode::kPlain;
  double horizon = 0.0;
  int k = 0;
  std::array<double, kMaxMarks> s{};  // s_i per mark bit
  bool retire = false;
  std::size_t max_nodes = kDefaultNodeCap;
};

void run_engine(Tree& tree, int x0, MarkMask root_marks, const PlainDynamics& plain, const SpineDynamics* spine,
                const EngineConfig& cfg, RngStream& rng);

}  // namespace spinesim::detail
