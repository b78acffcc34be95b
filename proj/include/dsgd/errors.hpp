#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>

namespace dsgd {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Invalid experiment, topology, problem or policy settings.
class ConfigError : public Error {
 public:
  using Error::Error;
};

class DimensionError : public Error {
 public:
  using Error::Error;
};

/// Raised when an operation needs a fixed symmetric mixing matrix.
class UnsupportedMatrixError : public Error {
 public:
  using Error::Error;
};

/// Parameters became non-finite or exceeded the divergence threshold.
class DivergenceError : public Error {
 public:
  DivergenceError(std::int64_t iteration, const std::string& what)
      : Error(what), iteration_(iteration) {}
  std::int64_t iteration() const noexcept { return iteration_; }

 private:
  std::int64_t iteration_;
};

/// Consensus control hit its gossip cap before reaching the target.
class UnreachableTargetError : public Error {
 public:
  UnreachableTargetError(std::int64_t iteration, double achieved_xi, double target,
                         const std::string& what)
      : Error(what), iteration_(iteration), achieved_xi_(achieved_xi), target_(target) {}
  std::int64_t iteration() const noexcept { return iteration_; }
  double achieved_xi() const noexcept { return achieved_xi_; }
  double target() const noexcept { return target_; }

 private:
  std::int64_t iteration_;
  double achieved_xi_;
  double target_;
};

}  // namespace dsgd
