#include "cadgd/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <stdexcept>

namespace cadgd {
namespace {

void check_eps(double eps) {
  if (!(eps >= kGradCheckMinEps && eps <= kGradCheckMaxEps)) {
    throw std::invalid_argument("grad_check eps must lie in [1e-7, 1e-3]");
  }
}

double relative_error(double analytic, double numeric) {
  const double denom = std::max({1.0, std::fabs(analytic), std::fabs(numeric)});
  return std::fabs(analytic - numeric) / denom;
}

double finite(double v) {
  if (!std::isfinite(v)) throw std::domain_error("grad_check: non-finite loss");
  return v;
}

struct Sample {
  double value = 0.0;
  std::uint64_t branches = 0;
};

// Numeric derivative at x from samples at x and x +- eps. When the central
// stencil crosses a kink the second-order one-sided stencil on the smooth
// side is used instead, falling back to first order if x +- 2 eps crosses too.
double numeric_derivative(const Sample& center, const Sample& up, const Sample& down, double eps,
                          const std::function<Sample(double)>& at, bool& one_sided) {
  one_sided = false;
  if (up.branches == down.branches || (up.branches != center.branches && down.branches != center.branches)) {
    return (up.value - down.value) / (2 * eps);
  }
  one_sided = true;
  const double dir = up.branches == center.branches ? 1.0 : -1.0;
  const Sample& near = dir > 0 ? up : down;
  const Sample far = at(2 * dir * eps);
  if (far.branches == center.branches) {
    return dir * (-3 * center.value + 4 * near.value - far.value) / (2 * eps);
  }
  return dir * (near.value - center.value) / eps;
}

void record(GradCheckReport& report, double err, bool one_sided, const std::string& location) {
  if (err > report.max_relative_error || report.coordinates == 0) {
    report.max_relative_error = err;
    report.worst_location = location;
  }
  ++report.coordinates;
  if (one_sided) ++report.one_sided;
}

}  // namespace

GradCheckReport grad_check_report(const ScalarOfInput& f, const Tensor& x, double eps) {
  check_eps(eps);
  Tensor analytic;
  Sample center;
  {
    Graph g;
    Var xv = g.variable(x);
    Var loss = f(g, xv);
    center = {finite(loss.value().item()), g.branch_signature()};
    g.backward(loss);
    analytic = xv.grad();
  }
  Tensor probe = x;
  GradCheckReport report;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double orig = probe[i];
    auto at = [&](double delta) {
      probe[i] = orig + delta;
      Graph g;
      const double v = finite(f(g, g.variable(probe)).value().item());
      probe[i] = orig;
      return Sample{v, g.branch_signature()};
    };
    bool one_sided = false;
    const double numeric = numeric_derivative(center, at(eps), at(-eps), eps, at, one_sided);
    record(report, relative_error(analytic[i], numeric), one_sided, "[" + std::to_string(i) + "]");
  }
  return report;
}

double grad_check(const ScalarOfInput& f, const Tensor& x, double eps) {
  return grad_check_report(f, x, eps).max_relative_error;
}

GradCheckReport grad_check_params(const ScalarOfParams& f, ParamStore& store,
                                  double eps, const std::vector<std::string>& paths,
                                  std::size_t stride) {
  check_eps(eps);
  if (stride == 0) stride = 1;
  const std::vector<std::string> targets = paths.empty() ? store.paths() : paths;
  store.zero_grad();
  Sample center;
  {
    Graph g;
    Var loss = f(g, store);
    center = {finite(loss.value().item()), g.branch_signature()};
    g.backward(loss);
    g.accumulate_into(store);
  }
  GradCheckReport report;
  for (const auto& path : targets) {
    const Tensor analytic = store.grad(path);
    Tensor& value = store.value(path);
    for (std::size_t i = 0; i < value.size(); i += stride) {
      const double orig = value[i];
      auto at = [&](double delta) {
        value[i] = orig + delta;
        Graph g;
        const double v = finite(f(g, store).value().item());
        value[i] = orig;
        return Sample{v, g.branch_signature()};
      };
      bool one_sided = false;
      const double numeric = numeric_derivative(center, at(eps), at(-eps), eps, at, one_sided);
      record(report, relative_error(analytic[i], numeric), one_sided,
             path + "[" + std::to_string(i) + "]");
    }
  }
  store.zero_grad();
  return report;
}

}  // namespace cadgd
