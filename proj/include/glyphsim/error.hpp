#pragma once

#include <stdexcept>
#include <string>

namespace glyphsim {

// Bad argument values (empty images, non-finite data, malformed ratios).
class InvalidInput : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// Tensor or matrix dimensions that do not fit the expected contract.
class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// Configuration that cannot be honored (unknown names, inconsistent fields).
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// A pipeline stage was asked to run before the stage producing its input.
class MissingArtifact : public std::runtime_error {
 public:
  MissingArtifact(const std::string& what, const std::string& producer)
      : std::runtime_error(what + " (run `glyphsim " + producer + "` first)"),
        producer_(producer) {}
  const std::string& producer() const { return producer_; }

 private:
  std::string producer_;
};

}  // namespace glyphsim
