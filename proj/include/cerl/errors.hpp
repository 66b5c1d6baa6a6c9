#pragma once

#include <stdexcept>
#include <string>

namespace cerl {

// Input rejected at an API boundary: wrong shape, out-of-range argument.
class InvalidInput : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// A numerical procedure could not produce a usable result.
class NumericalError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Training loss became non-finite.
class DivergenceError : public NumericalError {
 public:
  DivergenceError(const std::string& what, int epoch, int step)
      : NumericalError(what), epoch(epoch), step(step) {}
  int epoch;
  int step;
};

}  // namespace cerl
