// Finite-difference gradient suites over the loss zoo and fusion blocks.
//
// Every suite probes its builder at `points` random double-precision inputs
// and records the worst relative error. Randomness flows through the seed,
// so a fixed (points, seed) reproduces identical errors. Inputs stay clear
// of subgradient kinks (absolute value at zero, coinciding box edges).
#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace affr {

struct GradCheckCase {
  std::string name;
  double max_err = 0;
  int points = 0;
  double seconds = 0;
};

// All registered suites, in a fixed order.
std::vector<GradCheckCase> run_gradcheck(int points, uint64_t seed);

}  // namespace affr
