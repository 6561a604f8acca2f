#include "qfuse/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "qfuse/errors.hpp"

namespace qfuse {

namespace {

double eval_scalar(const ScalarFn& f, const Tensor& x) {
  NoGradGuard no_grad;
  const Tensor y = f(x);
  if (y.numel() != 1) throw ContractError("finite_diff_check: function must return a scalar");
  const double v = y.item();
  if (!std::isfinite(v)) throw ValidityError("finite_diff_check: non-finite function value");
  return v;
}

}  // namespace

double finite_diff_check(const ScalarFn& f, Tensor x, double h, const std::optional<std::vector<std::size_t>>& indices) {
  if (!(h > 0.0)) throw ContractError("finite_diff_check: step must be positive");
  if (!x.defined()) throw ContractError("finite_diff_check: undefined input");

  const bool prev_flag = x.requires_grad();
  x.set_requires_grad(true);
  x.zero_grad();
  Graph::current().clear();
  const Tensor y = f(x);
  if (y.numel() != 1) throw ContractError("finite_diff_check: function must return a scalar");
  if (!std::isfinite(y.item())) throw ValidityError("finite_diff_check: non-finite function value");
  std::vector<double> analytic(x.numel(), 0.0);
  if (y.requires_grad()) {
    backward(y);
    if (x.has_grad()) std::copy(x.grad().begin(), x.grad().end(), analytic.begin());
  } else {
    Graph::current().clear();
  }
  x.zero_grad();

  std::vector<std::size_t> probe;
  if (indices) {
    probe = *indices;
  } else {
    probe.resize(x.numel());
    std::iota(probe.begin(), probe.end(), 0);
  }

  auto values = x.mutable_data();
  double worst = 0.0;
  for (std::size_t i : probe) {
    if (i >= values.size()) throw ContractError("finite_diff_check: probe index out of range");
    const double orig = values[i];
    values[i] = orig + h;
    const double fp = eval_scalar(f, x);
    values[i] = orig - h;
    const double fm = eval_scalar(f, x);
    values[i] = orig;
    const double g_fd = (fp - fm) / (2.0 * h);
    const double g_an = analytic[i];
    const double err = std::abs(g_fd - g_an) / std::max({1.0, std::abs(g_fd), std::abs(g_an)});
    worst = std::max(worst, err);
  }
  x.set_requires_grad(prev_flag);
  return worst;
}

}  // namespace qfuse
