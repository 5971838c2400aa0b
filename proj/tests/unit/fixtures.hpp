#pragma once

#include <string>

#include "spinesim/model.hpp"
#include "spinesim/model_io.hpp"

namespace fixtures {

using spinesim::BranchingModel;
using spinesim::Mat;
using spinesim::OffspringAtom;
using spinesim::Vec;

inline std::string config_path(const std::string& rel) { return std::string(SPINESIM_CONFIG_DIR) + "/" + rel; }

inline BranchingModel m1() { return spinesim::binary_model(0.5); }
inline BranchingModel m2() { return spinesim::load_model(config_path("models/m2.json")); }

inline BranchingModel pure_death() {
  Mat q = Mat::Zero(1, 1);
  Vec b = Vec::Ones(1);
  return spinesim::build_model({"x"}, q, b, {{OffspringAtom{1.0, {}}}});
}

// Two states, unit flip rate, critical, children placed uniformly.
inline BranchingModel symmetric2() {
  Mat q(2, 2);
  q << -1, 1, 1, -1;
  Vec b = Vec::Ones(2);
  std::vector<OffspringAtom> atoms{{0.5, {}}, {0.25, {0, 1}}, {0.125, {0, 0}}, {0.125, {1, 1}}};
  return spinesim::build_model({"1", "2"}, q, b, {atoms, atoms});
}

// Two states with phi = (1, 2) shape for tilt checks: Q only matters.
inline BranchingModel two_state(double q12, double q21) {
  Mat q(2, 2);
  q << -q12, q12, q21, -q21;
  Vec b = Vec::Ones(2);
  std::vector<OffspringAtom> atoms{{0.5, {}}, {0.5, {0, 1}}};
  return spinesim::build_model({"1", "2"}, q, b, {atoms, atoms});
}

}  // namespace fixtures
