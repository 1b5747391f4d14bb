#pragma once

#include <stdexcept>
#include <string>

namespace excursionlab {

// Panel failed the structural rule checks; estimation must not proceed.
struct ValidationError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// File or stream level failure (missing column, unreadable path, bad number).
struct IoError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Newton solve did not reach the tolerance (singular bread, stalled halving).
struct SolveError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

}  // namespace excursionlab
