#include "spinesim/error.hpp"

#include <utility>

namespace spinesim {

ModelError::ModelError(std::string path, const std::string& msg)
    : std::runtime_error(path.empty() ? msg : path + ": " + msg), path_(std::move(path)) {}

}  // namespace spinesim
