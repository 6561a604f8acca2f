#pragma once

#include <cstddef>
#include <functional>
#include <optional>
#include <vector>

#include "qfuse/tensor.hpp"

namespace qfuse {

using ScalarFn = std::function<Tensor(const Tensor&)>;

/// Compares backward() against central differences of `f` around `x`.
///
/// `x` is probed in place, so closures may capture the same tensor handle
/// (e.g. a model parameter) and ignore the argument. Returns the maximum of
/// |g_fd - g_an| / max(1, |g_fd|, |g_an|) over the probed elements. When
/// `indices` is given only those flat positions are probed.
double finite_diff_check(const ScalarFn& f, Tensor x, double h = 1e-5,
                         const std::optional<std::vector<std::size_t>>& indices = std::nullopt);

}  // namespace qfuse
