#include "qfuse/quaternion.hpp"

#include <cmath>
#include <istream>
#include <ostream>
#include <random>
#include <sstream>

#include "qfuse/errors.hpp"
#include "qfuse/ops.hpp"
#include "qfuse/rng.hpp"
#include "qfuse/snapshot.hpp"

namespace qfuse {

double Quaternion::norm() const { return std::sqrt(r * r + x * x + y * y + z * z); }

Quaternion Quaternion::normalized() const {
  const double n = norm();
  if (n == 0.0) throw ContractError("cannot normalise the zero quaternion");
  return {r / n, x / n, y / n, z / n};
}

Quaternion hamilton(const Quaternion& p, const Quaternion& q) {
  return {
      p.r * q.r - p.x * q.x - p.y * q.y - p.z * q.z,
      p.r * q.x + p.x * q.r + p.y * q.z - p.z * q.y,
      p.r * q.y - p.x * q.z + p.y * q.r + p.z * q.x,
      p.r * q.z + p.x * q.y - p.y * q.x + p.z * q.r,
  };
}

Tensor matrix_form(const Quaternion& q) {
  return Tensor::from({4, 4}, {
                                  q.r, -q.x, -q.y, -q.z,  //
                                  q.x, q.r,  -q.z, q.y,   //
                                  q.y, q.z,  q.r,  -q.x,  //
                                  q.z, -q.y, q.x,  q.r,   //
                              });
}

QuaternionTensor::QuaternionTensor(Tensor inner) : inner_(std::move(inner)) {
  if (!inner_.defined() || inner_.rank() < 2 || inner_.dim(0) != 4) {
    throw DimensionError("quaternion tensor needs a leading component axis of 4, got " +
                         (inner_.defined() ? shape_str(inner_.shape()) : std::string("undefined")));
  }
}

QuaternionTensor QuaternionTensor::from_components(const Tensor& r, const Tensor& i, const Tensor& j, const Tensor& k) {
  return QuaternionTensor(stack0({r, i, j, k}));
}

Tensor QuaternionTensor::component(std::size_t k) const {
  if (k >= 4) throw DimensionError("quaternion component index " + std::to_string(k) + " out of range");
  return select0(inner_, k);
}

Shape QuaternionTensor::component_shape() const { return Shape(inner_.shape().begin() + 1, inner_.shape().end()); }

QuaternionLinear suprasphere_init(std::size_t c_in, std::size_t c_out, std::uint64_t seed, SupraInit opts) {
  if (c_in == 0 || c_out == 0) throw ContractError("suprasphere_init: channel counts must be positive");
  Rng rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  const double s = opts.gain / std::sqrt(2.0 * static_cast<double>(c_in));
  std::uniform_real_distribution<double> magnitude(-s, s);

  std::vector<double> wr(c_in * c_out), wi(wr.size()), wj(wr.size()), wk(wr.size());
  for (std::size_t n = 0; n < wr.size(); ++n) {
    Quaternion u;
    double len = 0.0;
    do {
      u = {normal(rng), normal(rng), normal(rng), normal(rng)};
      len = u.norm();
    } while (len < 1e-12);
    u = u.normalized();
    const double m = magnitude(rng);
    wr[n] = m * u.r;
    wi[n] = m * u.x;
    wj[n] = m * u.y;
    wk[n] = m * u.z;
  }
  QuaternionLinear layer;
  layer.w_r = Tensor::from({c_out, c_in}, std::move(wr), true);
  layer.w_i = Tensor::from({c_out, c_in}, std::move(wi), true);
  layer.w_j = Tensor::from({c_out, c_in}, std::move(wj), true);
  layer.w_k = Tensor::from({c_out, c_in}, std::move(wk), true);
  if (opts.bias) layer.bias = Tensor::zeros({4, c_out}, true);
  return layer;
}

Tensor hamilton_block_matrix(const QuaternionLinear& layer) {
  const Tensor& r = layer.w_r;
  const Tensor& i = layer.w_i;
  const Tensor& j = layer.w_j;
  const Tensor& k = layer.w_k;
  for (const Tensor* w : {&i, &j, &k}) {
    if (w->shape() != r.shape()) throw DimensionError("quaternion weight blocks differ in shape");
  }
  const Tensor ni = scale(i, -1.0), nj = scale(j, -1.0), nk = scale(k, -1.0);
  // Block rows follow the left-multiplication matrix of W = (r, i, j, k).
  const Tensor row_r = concat({r, ni, nj, nk}, 1);
  const Tensor row_i = concat({i, r, nk, j}, 1);
  const Tensor row_j = concat({j, k, r, ni}, 1);
  const Tensor row_k = concat({k, nj, i, r}, 1);
  return concat({row_r, row_i, row_j, row_k}, 0);
}

QuaternionTensor qlinear_forward(const QuaternionLinear& layer, const QuaternionTensor& x) {
  const Tensor& in = x.inner();
  if (in.rank() != 4) throw DimensionError("qlinear_forward expects [4,C,H,W], got " + shape_str(in.shape()));
  const std::size_t c_in = in.dim(1), h = in.dim(2), w = in.dim(3);
  if (c_in != layer.in_channels()) {
    throw DimensionError("qlinear_forward: input " + shape_str(in.shape()) + " vs layer expecting " +
                         std::to_string(layer.in_channels()) + " channels");
  }
  const std::size_t c_out = layer.out_channels();
  const Tensor flat = reshape(in, {4 * c_in, h, w});
  const Tensor bias = layer.bias.defined() ? reshape(layer.bias, {4 * c_out}) : Tensor();
  const Tensor out = conv1x1(flat, hamilton_block_matrix(layer), bias);
  return QuaternionTensor(reshape(out, {4, c_out, h, w}));
}

QuaternionTensor split_activation(const QuaternionTensor& x, SplitFn f) {
  switch (f) {
    case SplitFn::relu:
      return QuaternionTensor(relu(x.inner()));
    case SplitFn::sigmoid:
      return QuaternionTensor(sigmoid(x.inner()));
    case SplitFn::identity:
      return x;
  }
  return x;
}

void write_qlinear(std::ostream& os, const std::string& name, const QuaternionLinear& layer) {
  os << "qlinear " << name << ' ' << layer.in_channels() << ' ' << layer.out_channels() << ' '
     << (layer.bias.defined() ? 1 : 0) << '\n';
  write_tensor(os, layer.w_r);
  write_tensor(os, layer.w_i);
  write_tensor(os, layer.w_j);
  write_tensor(os, layer.w_k);
  if (layer.bias.defined()) write_tensor(os, layer.bias);
}

QuaternionLinear read_qlinear(std::istream& is, std::string* name) {
  std::string header;
  if (!std::getline(is, header)) throw IoError("missing qlinear header");
  std::istringstream hs(header);
  std::string tag, layer_name;
  std::size_t c_in = 0, c_out = 0;
  int has_bias = 0;
  if (!(hs >> tag >> layer_name >> c_in >> c_out >> has_bias) || tag != "qlinear") {
    throw IoError("malformed qlinear header: " + header);
  }
  QuaternionLinear layer;
  for (Tensor* w : layer.weights()) {
    *w = read_tensor(is);
    if (w->shape() != Shape{c_out, c_in}) throw IoError("qlinear weight shape disagrees with header");
    w->set_requires_grad(true);
  }
  if (has_bias) {
    layer.bias = read_tensor(is);
    layer.bias.set_requires_grad(true);
  }
  if (name) *name = layer_name;
  return layer;
}

}  // namespace qfuse
