#include "clipper/gradcheck.hpp"

#include <algorithm>
#include <cmath>

#include "clipper/error.hpp"

namespace clipper::ad {

GradCheckReport grad_check(const ScalarFn& f, std::vector<double> x, double step,
                           const std::vector<std::size_t>* coords) {
  if (!(step > 0.0)) throw ContractError("grad_check: step must be > 0");
  std::vector<double> analytic;
  f(x, &analytic);
  if (analytic.size() != x.size())
    throw ContractError("grad_check: analytic gradient size mismatch");

  std::vector<std::size_t> all;
  if (!coords) {
    all.resize(x.size());
    for (std::size_t i = 0; i < x.size(); ++i) all[i] = i;
    coords = &all;
  }

  GradCheckReport rep;
  for (std::size_t c : *coords) {
    const double saved = x[c];
    x[c] = saved + step;
    const double fp = f(x, nullptr);
    x[c] = saved - step;
    const double fm = f(x, nullptr);
    x[c] = saved;
    const double numeric = (fp - fm) / (2.0 * step);
    const double a = analytic[c];
    const double denom = std::max({std::abs(a), std::abs(numeric), 1e-8});
    const double rel = std::abs(a - numeric) / denom;
    if (rel > rep.max_rel_err) {
      rep.max_rel_err = rel;
      rep.worst_coord = c;
      rep.analytic = a;
      rep.numeric = numeric;
    }
  }
  return rep;
}

}  // namespace clipper::ad
