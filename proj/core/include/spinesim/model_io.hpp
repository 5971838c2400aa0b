#pragma once

#include <string>
#include <string_view>

#include "spinesim/model.hpp"

namespace spinesim {

// JSON model description:
//   states:   list of labels, or a state count d (labels "1".."d")
//   Q:        d x d motion generator
//   beta:     d branch rates
//   offspring: per-state list of {"p": prob, "children": [state, ...]}; a child is
//             a 1-based index or a state label
//   n_max:    optional, default 8
//   calibrate_critical: optional bool; rescales death probabilities to lambda = 0
// Throws ModelError with a JSON path for the first violation found.
BranchingModel parse_model(std::string_view json_text);
BranchingModel load_model(const std::string& path);

}  // namespace spinesim
