#include "qfuse/layers.hpp"

#include <cmath>
#include <random>

#include "qfuse/ops.hpp"
#include "qfuse/rng.hpp"

namespace qfuse {

Tensor he_uniform(Shape shape, std::size_t fan_in, std::uint64_t seed) {
  Rng rng(seed);
  const double bound = std::sqrt(6.0 / static_cast<double>(fan_in));
  std::uniform_real_distribution<double> dist(-bound, bound);
  std::vector<double> values(shape_numel(shape));
  for (double& v : values) v = dist(rng);
  return Tensor::from(std::move(shape), std::move(values), true);
}

Conv1x1Layer Conv1x1Layer::uniform(std::size_t c_in, std::size_t c_out, std::uint64_t seed) {
  return {he_uniform({c_out, c_in}, c_in, seed), Tensor::zeros({c_out}, true)};
}

Conv1x1Layer Conv1x1Layer::zero(std::size_t c_in, std::size_t c_out) {
  return {Tensor::zeros({c_out, c_in}, true), Tensor::zeros({c_out}, true)};
}

Tensor Conv1x1Layer::operator()(const Tensor& x) const { return conv1x1(x, weight, bias); }

void Conv1x1Layer::collect(const std::string& prefix, NamedParams& out) const {
  out.emplace_back(prefix + ".weight", weight);
  out.emplace_back(prefix + ".bias", bias);
}

Conv3x3Layer Conv3x3Layer::uniform(std::size_t c_in, std::size_t c_out, int stride, std::uint64_t seed) {
  return {he_uniform({c_out, c_in, 3, 3}, c_in * 9, seed), Tensor::zeros({c_out}, true), stride};
}

Tensor Conv3x3Layer::operator()(const Tensor& x) const { return conv3x3(x, weight, bias, stride); }

void Conv3x3Layer::collect(const std::string& prefix, NamedParams& out) const {
  out.emplace_back(prefix + ".weight", weight);
  out.emplace_back(prefix + ".bias", bias);
}

}  // namespace qfuse
