#pragma once

#include <functional>
#include <string>
#include <vector>

#include "dkcnet/autograd.hpp"

namespace dkcnet {

struct GradCheckReport {
  double max_rel_error = 0.0;
  double max_abs_error = 0.0;
  std::size_t checked = 0;
  std::string worst;  // "<tensor label>[<flat index>]"
  bool passed = false;
};

/// Entry relative error |a - n| / max(|a|, |n|, floor). The floor keeps
/// entries whose true derivative is ~0 from dominating the report.
inline constexpr double kGradCheckFloor = 1e-6;

/// Compares the analytic gradient of a scalar loss against central differences
/// for every entry of every tensor in `wrt` (which must be leaves requiring
/// grad). `loss_fn` is re-evaluated for each perturbation and must be
/// deterministic. Existing gradients of `wrt` are overwritten.
GradCheckReport finite_diff_check(const std::function<Var()>& loss_fn, std::vector<Var> wrt,
                                  std::vector<std::string> labels, double step, double tolerance);

/// Single-input form: f maps x to any tensor; the check runs on a fixed random
/// projection sum(f(x) * r) so every output entry contributes.
GradCheckReport finite_diff_check(const std::function<Var(const Var&)>& f, const Tensor4& x,
                                  double step, double tolerance);

}  // namespace dkcnet
