#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <vector>

namespace testutil {

struct GradReport {
  double max_rel = 0.0;
  double max_abs = 0.0;  // over entries too small for a relative comparison
  std::size_t checked = 0;
};

// Central differences of f with respect to every entry of x, compared with
// `analytic`. Entries where both gradients are below `floor` are compared in
// absolute terms instead. With step > 1 only every step-th entry is checked.
inline void fd_check(std::vector<double>& x, const std::vector<double>& analytic, const std::function<double()>& f,
                     GradReport& r, double h = 1e-5, double floor = 1e-7, std::size_t step = 1) {
  for (std::size_t i = (x.size() - 1) % step; i < x.size(); i += step) {
    const double saved = x[i];
    x[i] = saved + h;
    const double up = f();
    x[i] = saved - h;
    const double down = f();
    x[i] = saved;
    const double numeric = (up - down) / (2.0 * h);
    const double scale = std::max(std::abs(numeric), std::abs(analytic[i]));
    if (scale > floor)
      r.max_rel = std::max(r.max_rel, std::abs(numeric - analytic[i]) / scale);
    else
      r.max_abs = std::max(r.max_abs, std::abs(numeric - analytic[i]));
    ++r.checked;
  }
}

}  // namespace testutil
