#include "dkcnet/gradcheck.hpp"

#include <algorithm>
#include <cmath>

#include "dkcnet/errors.hpp"
#include "dkcnet/ops.hpp"
#include "dkcnet/rng.hpp"

namespace dkcnet {

GradCheckReport finite_diff_check(const std::function<Var()>& loss_fn, std::vector<Var> wrt,
                                  std::vector<std::string> labels, double step, double tolerance) {
  if (labels.size() != wrt.size()) labels.resize(wrt.size());
  for (auto& v : wrt) {
    if (!v.is_leaf() || !v.requires_grad()) {
      throw ArgumentError("finite_diff_check: differentiate only w.r.t. leaves requiring grad");
    }
    v.zero_grad();
  }
  backward(loss_fn());

  GradCheckReport report;
  for (std::size_t t = 0; t < wrt.size(); ++t) {
    Tensor4 analytic = wrt[t].has_grad() ? wrt[t].grad() : Tensor4(wrt[t].shape(), 0.0);
    Tensor4& value = wrt[t].mutable_value();
    for (std::size_t e = 0; e < value.size(); ++e) {
      const double saved = value[e];
      value[e] = saved + step;
      const double plus = loss_fn().value().item();
      value[e] = saved - step;
      const double minus = loss_fn().value().item();
      value[e] = saved;
      const double numeric = (plus - minus) / (2.0 * step);
      const double a = analytic[e];
      const double abs_err = std::abs(a - numeric);
      const double rel = abs_err / std::max({std::abs(a), std::abs(numeric), kGradCheckFloor});
      report.max_abs_error = std::max(report.max_abs_error, abs_err);
      if (rel > report.max_rel_error || report.checked == 0) {
        report.max_rel_error = rel;
        report.worst = labels[t] + "[" + std::to_string(e) + "]";
      }
      ++report.checked;
    }
  }
  report.passed = report.max_rel_error < tolerance;
  return report;
}

GradCheckReport finite_diff_check(const std::function<Var(const Var&)>& f, const Tensor4& x,
                                  double step, double tolerance) {
  Var input(x, true);
  Tensor4 projection = f(input).value();
  Rng rng(0x5eed);
  for (double& v : projection.data()) v = rng.uniform(-1.0, 1.0);
  return finite_diff_check([&] { return weighted_sum(f(input), projection); }, {input}, {"x"},
                           step, tolerance);
}

}  // namespace dkcnet
