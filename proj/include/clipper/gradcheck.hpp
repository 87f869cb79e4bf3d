#pragma once

#include <cstddef>
#include <functional>
#include <span>
#include <vector>

namespace clipper::ad {

struct GradCheckReport {
  double max_rel_err = 0.0;
  std::size_t worst_coord = 0;
  double analytic = 0.0;
  double numeric = 0.0;
};

// Scalar function of a flat parameter vector. When grad_out is non-null the
// callee must also fill the analytic gradient (same length as x).
using ScalarFn =
    std::function<double(std::span<const double> x, std::vector<double>* grad_out)>;

// Central differences (f(x+h) - f(x-h)) / 2h per coordinate against the
// analytic gradient; relative error |a-n| / max(|a|,|n|,1e-8). When coords is
// given only that subset is probed (the analytic gradient is still full).
GradCheckReport grad_check(const ScalarFn& f, std::vector<double> x, double step,
                           const std::vector<std::size_t>* coords = nullptr);

}  // namespace clipper::ad
