#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <string>

#include "qfuse/tensor.hpp"

namespace qfuse {

/// r + x i + y j + z k
struct Quaternion {
  double r = 0.0;
  double x = 0.0;
  double y = 0.0;
  double z = 0.0;

  static constexpr Quaternion one() { return {1.0, 0.0, 0.0, 0.0}; }
  static constexpr Quaternion i() { return {0.0, 1.0, 0.0, 0.0}; }
  static constexpr Quaternion j() { return {0.0, 0.0, 1.0, 0.0}; }
  static constexpr Quaternion k() { return {0.0, 0.0, 0.0, 1.0}; }

  double norm() const;
  Quaternion normalized() const;
  std::array<double, 4> as_array() const { return {r, x, y, z}; }

  friend bool operator==(const Quaternion&, const Quaternion&) = default;
};

Quaternion hamilton(const Quaternion& p, const Quaternion& q);

/// Left-multiplication matrix L(q), so that hamilton(q, p) == L(q) * p when
/// p is read as the column (r, x, y, z).
Tensor matrix_form(const Quaternion& q);

/// Tensor with a leading component axis of extent 4 in (r, i, j, k) order.
class QuaternionTensor {
 public:
  QuaternionTensor() = default;
  explicit QuaternionTensor(Tensor inner);

  static QuaternionTensor from_components(const Tensor& r, const Tensor& i, const Tensor& j, const Tensor& k);

  const Tensor& inner() const { return inner_; }
  // k-th component with the component axis removed.
  Tensor component(std::size_t k) const;
  Shape component_shape() const;

 private:
  Tensor inner_;
};

/// Hamilton-product channel mixing layer. Four real [C_out, C_in] weight
/// blocks shared across the quaternion axes; optional bias is one quaternion
/// per output channel, stored as [4, C_out].
struct QuaternionLinear {
  Tensor w_r, w_i, w_j, w_k;
  Tensor bias;

  std::size_t in_channels() const { return w_r.dim(1); }
  std::size_t out_channels() const { return w_r.dim(0); }
  // Weights only; biases are reported separately.
  std::size_t weight_count() const { return 4 * in_channels() * out_channels(); }
  std::size_t bias_count() const { return bias.defined() ? bias.numel() : 0; }
  // Weight count of a real dense layer mapping 4*C_in -> 4*C_out.
  std::size_t dense_equivalent_weight_count() const { return 16 * in_channels() * out_channels(); }

  std::array<Tensor*, 4> weights() { return {&w_r, &w_i, &w_j, &w_k}; }
};

struct SupraInit {
  // Magnitude bound s = gain / sqrt(2 * C_in).
  double gain = 1.0;
  bool bias = true;
};

/// Each weight quaternion is m * u with u uniform on the unit 3-sphere
/// (normalised 4-vector of standard normals) and m ~ Uniform(-s, s).
QuaternionLinear suprasphere_init(std::size_t c_in, std::size_t c_out, std::uint64_t seed, SupraInit opts = {});

/// The real [4*C_out, 4*C_in] matrix equivalent to the Hamilton product with
/// the layer weights, differentiable with respect to the four blocks.
Tensor hamilton_block_matrix(const QuaternionLinear& layer);

/// x: [4, C_in, H, W] -> [4, C_out, H, W]
QuaternionTensor qlinear_forward(const QuaternionLinear& layer, const QuaternionTensor& x);

enum class SplitFn { relu, sigmoid, identity };

QuaternionTensor split_activation(const QuaternionTensor& x, SplitFn f);

// Layer checkpoint: header line "qlinear <name> <c_in> <c_out> <bias 0|1>\n"
// then QFT1 snapshots of w_r, w_i, w_j, w_k (and the bias when present).
void write_qlinear(std::ostream& os, const std::string& name, const QuaternionLinear& layer);
QuaternionLinear read_qlinear(std::istream& is, std::string* name = nullptr);

}  // namespace qfuse
