#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "qfuse/tensor.hpp"

namespace qfuse {

using NamedParams = std::vector<std::pair<std::string, Tensor>>;

struct Conv1x1Layer {
  Tensor weight;  // [C_out, C_in]
  Tensor bias;    // [C_out]

  static Conv1x1Layer uniform(std::size_t c_in, std::size_t c_out, std::uint64_t seed);
  static Conv1x1Layer zero(std::size_t c_in, std::size_t c_out);

  Tensor operator()(const Tensor& x) const;
  std::size_t in_channels() const { return weight.dim(1); }
  std::size_t out_channels() const { return weight.dim(0); }
  void collect(const std::string& prefix, NamedParams& out) const;
};

struct Conv3x3Layer {
  Tensor weight;  // [C_out, C_in, 3, 3]
  Tensor bias;
  int stride = 1;

  static Conv3x3Layer uniform(std::size_t c_in, std::size_t c_out, int stride, std::uint64_t seed);

  Tensor operator()(const Tensor& x) const;
  void collect(const std::string& prefix, NamedParams& out) const;
};

// He-uniform fill of a fresh tensor: U(-b, b), b = sqrt(6 / fan_in).
Tensor he_uniform(Shape shape, std::size_t fan_in, std::uint64_t seed);

}  // namespace qfuse
