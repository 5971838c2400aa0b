#pragma once

#include <stdexcept>
#include <string>

namespace spinesim {

// Invalid model data. path locates the offending entry, e.g. "offspring[1][0].children".
class ModelError : public std::runtime_error {
 public:
  ModelError(std::string path, const std::string& msg);
  const std::string& path() const noexcept { return path_; }

 private:
  std::string path_;
};

// Budget exhaustion or inconsistent simulation input.
class SimulationError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class NumericalError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace spinesim
