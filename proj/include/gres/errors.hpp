#pragma once

#include <stdexcept>
#include <string>

namespace gres {

// Bad caller input: shapes, counts, ids, ranges.
class ArgumentError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// A SceneCloud (or similar) that violates its own invariants.
class StructuralError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// NaN / infinity where finite values are required.
class ComputationError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// On-disk artifacts: versions, missing fields, truncated files, bad shapes.
class FormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Semantically invalid data, e.g. an unknown category tag.
class DataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class GenerationError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class TrainingError : public std::runtime_error {
 public:
  TrainingError(const std::string& what, long step)
      : std::runtime_error(what + " (step " + std::to_string(step) + ")"), step_(step) {}
  long step() const { return step_; }

 private:
  long step_;
};

}  // namespace gres
