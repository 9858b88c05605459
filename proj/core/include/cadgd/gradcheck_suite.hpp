#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

namespace cadgd {

// A named gradient check. `run` returns the max relative error for one
// (seed, shape variant) draw.
struct GradCase {
  std::string name;
  std::function<double(std::uint64_t seed, int variant)> run;
  int variants = 3;
};

struct GradSuiteLine {
  std::string name;
  double max_error = 0.0;
  bool pass = false;
};

inline constexpr double kGradTolerance = 1e-4;
inline constexpr double kGradEps = 1e-5;

// One case per differentiable primitive in ops.hpp.
std::vector<GradCase> operation_grad_cases();

// Runs every case over `seeds` seeds and all of its variants.
std::vector<GradSuiteLine> run_grad_suite(const std::vector<GradCase>& cases,
                                          int seeds = 5,
                                          double tolerance = kGradTolerance);

}  // namespace cadgd
