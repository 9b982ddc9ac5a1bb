#pragma once

#include <stdexcept>
#include <string>

namespace patchtrack {

/// ICP normal matrix too ill-conditioned to determine all six degrees of freedom.
class DegenerateGeometryError : public std::runtime_error {
 public:
  explicit DegenerateGeometryError(double condition_number)
      : std::runtime_error("degenerate geometry: normal matrix condition number " +
                           std::to_string(condition_number)),
        condition_number_(condition_number) {}
  double condition_number() const { return condition_number_; }

 private:
  double condition_number_;
};

class InsufficientOverlapError : public std::runtime_error {
 public:
  InsufficientOverlapError(std::size_t found, std::size_t required)
      : std::runtime_error("insufficient overlap: " + std::to_string(found) +
                           " correspondences, need " + std::to_string(required)),
        found_(found) {}
  std::size_t correspondences() const { return found_; }

 private:
  std::size_t found_;
};

/// A variable without any factor touching it (its gauge is free).
class GaugeError : public std::runtime_error {
 public:
  explicit GaugeError(const std::string& key)
      : std::runtime_error("unconstrained variable " + key), key_(key) {}
  const std::string& key() const { return key_; }

 private:
  std::string key_;
};

class DivergenceError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class EpisodeGenerationError : public std::runtime_error {
 public:
  EpisodeGenerationError(int step, const std::string& what)
      : std::runtime_error("episode generation failed at step " + std::to_string(step) + ": " + what),
        step_(step) {}
  int step() const { return step_; }

 private:
  int step_;
};

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace patchtrack
