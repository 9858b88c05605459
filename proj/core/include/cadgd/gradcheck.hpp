#pragma once

#include <cstddef>
#include <functional>
#include <string>
#include <vector>

#include "cadgd/graph.hpp"
#include "cadgd/params.hpp"

namespace cadgd {

inline constexpr double kGradCheckMinEps = 1e-7;
inline constexpr double kGradCheckMaxEps = 1e-3;

// Builds a scalar on a fresh graph from the variable bound to the checked input.
using ScalarOfInput = std::function<Var(Graph&, Var)>;
// Builds a scalar on a fresh graph from parameters read out of the store.
using ScalarOfParams = std::function<Var(Graph&, const ParamStore&)>;

struct GradCheckReport {
  double max_relative_error = 0.0;
  std::string worst_location;  // "path[index]" or "[index]"
  std::size_t coordinates = 0;
  // Coordinates where x - eps and x + eps ran different branches of some
  // piecewise op; those are compared against the one-sided difference on the
  // side that matches x.
  std::size_t one_sided = 0;
};

// max over coordinates of |analytic - numeric| / max(1, |analytic|, |numeric|),
// numeric being the central difference unless the probe straddles a kink.
double grad_check(const ScalarOfInput& f, const Tensor& x, double eps);
GradCheckReport grad_check_report(const ScalarOfInput& f, const Tensor& x, double eps);

// Same metric over parameter coordinates. `paths` empty means every entry.
// With stride > 1 only every stride-th coordinate of each tensor is probed.
GradCheckReport grad_check_params(const ScalarOfParams& f, ParamStore& store,
                                  double eps,
                                  const std::vector<std::string>& paths = {},
                                  std::size_t stride = 1);

}  // namespace cadgd
