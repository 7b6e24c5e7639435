#pragma once

#include <algorithm>
#include <cmath>
#include <string>

namespace oracle {

struct GradCheckResult {
  double max_rel_error = 0.0;
  double max_abs_error = 0.0;
  std::string worst_tensor;
  std::size_t checked = 0;
};

// Relative error with an absolute floor so that entries whose true gradient is
// ~0 are judged on absolute error instead of amplified round-off.
inline double rel_error(double analytic, double numeric, double floor = 1e-6) {
  return std::abs(analytic - numeric) / std::max({std::abs(analytic), std::abs(numeric), floor});
}

// Central differences of loss() against every entry of params, compared with
// the matching entry of grads. Both containers expose visit(name, tensor) in
// the same order.
template <typename P, typename LossFn>
GradCheckResult check_gradients(P& params, const P& grads, LossFn&& loss, double step = 1e-4) {
  std::vector<const double*> g_ptrs;
  grads.visit([&](const std::string&, const auto& t) { g_ptrs.push_back(t.data()); });
  GradCheckResult r;
  std::size_t idx = 0;
  params.visit([&](const std::string& name, auto& t) {
    const double* g = g_ptrs[idx++];
    for (Eigen::Index i = 0; i < t.size(); ++i) {
      double& w = t.data()[i];
      const double saved = w;
      w = saved + step;
      const double up = loss();
      w = saved - step;
      const double down = loss();
      w = saved;
      const double numeric = (up - down) / (2.0 * step);
      const double e = rel_error(g[i], numeric);
      r.max_abs_error = std::max(r.max_abs_error, std::abs(g[i] - numeric));
      if (e > r.max_rel_error) {
        r.max_rel_error = e;
        r.worst_tensor = name + "[" + std::to_string(i) + "]";
      }
      ++r.checked;
    }
  });
  return r;
}

}  // namespace oracle
