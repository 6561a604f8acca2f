#pragma once

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <random>
#include <string>
#include <vector>

#include "qfuse/rng.hpp"
#include "qfuse/tensor.hpp"

namespace qtest {

inline qfuse::Tensor random_tensor(qfuse::Shape shape, std::uint64_t seed, double lo = -1.0, double hi = 1.0,
                                   bool requires_grad = false) {
  qfuse::Rng rng(seed);
  std::uniform_real_distribution<double> u(lo, hi);
  std::vector<double> v(qfuse::shape_numel(shape));
  for (double& x : v) x = u(rng);
  return qfuse::Tensor::from(std::move(shape), std::move(v), requires_grad);
}

inline double max_abs_diff(const qfuse::Tensor& a, const qfuse::Tensor& b) {
  double m = 0.0;
  for (std::size_t i = 0; i < a.numel(); ++i) m = std::max(m, std::abs(a.data()[i] - b.data()[i]));
  return m;
}

inline bool bitwise_equal(const qfuse::Tensor& a, const qfuse::Tensor& b) {
  if (a.shape() != b.shape()) return false;
  for (std::size_t i = 0; i < a.numel(); ++i) {
    if (a.data()[i] != b.data()[i]) return false;
  }
  return true;
}

// Fresh scratch directory under the system temp dir, removed on destruction.
struct TempDir {
  std::filesystem::path path;
  explicit TempDir(const std::string& tag) {
    path = std::filesystem::temp_directory_path() /
           ("qfuse-" + tag + "-" + std::to_string(std::random_device{}()));
    std::filesystem::create_directories(path);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path, ec);
  }
};

}  // namespace qtest
