#include <doctest.h>

#include <cmath>
#include <sstream>

#include "qfuse/errors.hpp"
#include "qfuse/gradcheck.hpp"
#include "qfuse/ops.hpp"
#include "qfuse/quaternion.hpp"
#include "support.hpp"

using namespace qfuse;
using qtest::random_tensor;

namespace {

Quaternion random_quat(Rng& rng) {
  std::uniform_real_distribution<double> u(-2.0, 2.0);
  return {u(rng), u(rng), u(rng), u(rng)};
}

double qdiff(const Quaternion& a, const Quaternion& b) {
  return std::max({std::abs(a.r - b.r), std::abs(a.x - b.x), std::abs(a.y - b.y), std::abs(a.z - b.z)});
}

// Gaussian elimination with partial pivoting.
double det4(std::array<double, 16> m) {
  double det = 1.0;
  for (int c = 0; c < 4; ++c) {
    int piv = c;
    for (int r = c + 1; r < 4; ++r) {
      if (std::abs(m[r * 4 + c]) > std::abs(m[piv * 4 + c])) piv = r;
    }
    if (m[piv * 4 + c] == 0.0) return 0.0;
    if (piv != c) {
      for (int k = 0; k < 4; ++k) std::swap(m[c * 4 + k], m[piv * 4 + k]);
      det = -det;
    }
    det *= m[c * 4 + c];
    for (int r = c + 1; r < 4; ++r) {
      const double f = m[r * 4 + c] / m[c * 4 + c];
      for (int k = c; k < 4; ++k) m[r * 4 + k] -= f * m[c * 4 + k];
    }
  }
  return det;
}

QuaternionLinear scalar_layer(const Quaternion& w) {
  QuaternionLinear l;
  l.w_r = Tensor::from({1, 1}, {w.r});
  l.w_i = Tensor::from({1, 1}, {w.x});
  l.w_j = Tensor::from({1, 1}, {w.y});
  l.w_k = Tensor::from({1, 1}, {w.z});
  return l;
}

}  // namespace

TEST_SUITE("quat") {

TEST_CASE("basis relations") {
  const auto i = Quaternion::i(), j = Quaternion::j(), k = Quaternion::k();
  CHECK(hamilton(i, j) == k);
  CHECK(hamilton(j, i) == Quaternion{0, 0, 0, -1});
  CHECK(hamilton(j, k) == i);
  CHECK(hamilton(k, i) == j);
  const Quaternion minus_one{-1, 0, 0, 0};
  CHECK(hamilton(i, i) == minus_one);
  CHECK(hamilton(j, j) == minus_one);
  CHECK(hamilton(k, k) == minus_one);
  CHECK(hamilton(hamilton(i, j), k) == minus_one);
  Rng rng(3);
  const Quaternion q = random_quat(rng);
  CHECK(hamilton(Quaternion::one(), q) == q);
  CHECK(hamilton(q, Quaternion::one()) == q);
}

TEST_CASE("norm multiplicativity and associativity") {
  Rng rng(11);
  for (int n = 0; n < 1000; ++n) {
    const Quaternion p = random_quat(rng), q = random_quat(rng), r = random_quat(rng);
    CHECK(std::abs(hamilton(p, q).norm() - p.norm() * q.norm()) < 1e-10);
    CHECK(qdiff(hamilton(hamilton(p, q), r), hamilton(p, hamilton(q, r))) < 1e-10);
  }
  CHECK(std::abs(Quaternion{3, -4, 12, 0.5}.normalized().norm() - 1.0) < 1e-12);
}

TEST_CASE("matrix form") {
  Tensor id = matrix_form(Quaternion::one());
  for (std::size_t r = 0; r < 4; ++r)
    for (std::size_t c = 0; c < 4; ++c) CHECK(id.at({r, c}) == (r == c ? 1.0 : 0.0));

  const std::array<double, 16> expected_i{0, -1, 0, 0, 1, 0, 0, 0, 0, 0, 0, -1, 0, 0, 1, 0};
  Tensor mi = matrix_form(Quaternion::i());
  for (std::size_t n = 0; n < 16; ++n) CHECK(mi.data()[n] == expected_i[n]);

  Rng rng(17);
  for (int n = 0; n < 200; ++n) {
    const Quaternion p = random_quat(rng), q = random_quat(rng);
    Tensor m = matrix_form(p);
    const auto v = q.as_array();
    std::array<double, 4> mv{};
    for (int r = 0; r < 4; ++r)
      for (int c = 0; c < 4; ++c) mv[r] += m.data()[r * 4 + c] * v[c];
    CHECK(qdiff(hamilton(p, q), {mv[0], mv[1], mv[2], mv[3]}) < 1e-14);

    std::array<double, 16> a{};
    std::copy(m.data().begin(), m.data().end(), a.begin());
    CHECK(std::abs(det4(a) - std::pow(p.norm(), 4)) < 1e-10 * std::max(1.0, std::pow(p.norm(), 4)));
  }
}

TEST_CASE("quaternion tensor components") {
  Tensor inner = random_tensor({4, 2, 3}, 5);
  QuaternionTensor q(inner);
  for (std::size_t k = 0; k < 4; ++k) {
    Tensor c = q.component(k);
    CHECK(c.shape() == Shape{2, 3});
    for (std::size_t n = 0; n < 6; ++n) CHECK(c.data()[n] == inner.data()[k * 6 + n]);
  }
  CHECK_THROWS_AS(QuaternionTensor(random_tensor({3, 2}, 1)), DimensionError);
}

TEST_CASE("qlinear forward") {
  // Identity weights leave the input untouched.
  QuaternionTensor x(random_tensor({4, 1, 3, 3}, 21));
  CHECK(qtest::bitwise_equal(qlinear_forward(scalar_layer(Quaternion::one()), x).inner(), x.inner()));

  // One channel, one pixel: equals the scalar Hamilton product w (x) x.
  Rng rng(23);
  for (int n = 0; n < 100; ++n) {
    const Quaternion w = random_quat(rng), v = random_quat(rng);
    QuaternionTensor xv(Tensor::from({4, 1, 1, 1}, {v.r, v.x, v.y, v.z}));
    Tensor out = qlinear_forward(scalar_layer(w), xv).inner();
    CHECK(qdiff(hamilton(w, v), {out.data()[0], out.data()[1], out.data()[2], out.data()[3]}) < 1e-14);
  }

  // Every pixel of a map agrees with the matrix-vector product.
  const Quaternion w = random_quat(rng);
  Tensor m = matrix_form(w);
  QuaternionTensor xm(random_tensor({4, 1, 4, 5}, 25));
  Tensor out = qlinear_forward(scalar_layer(w), xm).inner();
  double worst = 0.0;
  for (std::size_t p = 0; p < 20; ++p) {
    for (int r = 0; r < 4; ++r) {
      double acc = 0.0;
      for (int c = 0; c < 4; ++c) acc += m.data()[r * 4 + c] * xm.inner().data()[c * 20 + p];
      worst = std::max(worst, std::abs(acc - out.data()[r * 20 + p]));
    }
  }
  CHECK(worst < 1e-12);

  CHECK_THROWS_AS(qlinear_forward(suprasphere_init(3, 2, 1), QuaternionTensor(random_tensor({4, 2, 2, 2}, 1))),
                  DimensionError);
}

TEST_CASE("qlinear equals its real block matrix") {
  QuaternionLinear layer = suprasphere_init(3, 2, 7, {1.0, false});
  Tensor big = hamilton_block_matrix(layer);
  CHECK(big.shape() == Shape{8, 12});
  QuaternionTensor x(random_tensor({4, 3, 2, 2}, 8));
  Tensor direct = qlinear_forward(layer, x).inner();
  Tensor via = conv1x1(reshape(x.inner(), {12, 2, 2}), big);
  CHECK(qtest::max_abs_diff(direct, reshape(via, {4, 2, 2, 2})) < 1e-14);
}

TEST_CASE("parameter ratio is exactly one quarter") {
  const std::pair<std::size_t, std::size_t> dims[] = {{8, 8}, {1, 1}, {3, 17}, {64, 5}, {12, 40}};
  for (auto [ci, co] : dims) {
    QuaternionLinear l = suprasphere_init(ci, co, ci * 100 + co);
    CHECK(l.weight_count() == 4 * ci * co);
    CHECK(l.w_r.numel() + l.w_i.numel() + l.w_j.numel() + l.w_k.numel() == l.weight_count());
    CHECK(static_cast<double>(l.weight_count()) / static_cast<double>(l.dense_equivalent_weight_count()) == 0.25);
  }
  QuaternionLinear l8 = suprasphere_init(8, 8, 0);
  CHECK(l8.weight_count() == 256);
  CHECK(l8.dense_equivalent_weight_count() == 1024);
}

TEST_CASE("split activation") {
  QuaternionTensor q(Tensor::from({4, 1}, {-1, 2, -3, 4}));
  Tensor r = split_activation(q, SplitFn::relu).inner();
  CHECK(r.data()[0] == 0.0);
  CHECK(r.data()[1] == 2.0);
  CHECK(r.data()[2] == 0.0);
  CHECK(r.data()[3] == 4.0);

  QuaternionTensor x(random_tensor({4, 3, 2, 2}, 31));
  CHECK(qtest::bitwise_equal(split_activation(x, SplitFn::identity).inner(), x.inner()));
  Tensor s = split_activation(x, SplitFn::sigmoid).inner();
  for (std::size_t k = 0; k < 4; ++k) {
    Tensor expect = sigmoid(x.component(k));
    for (std::size_t n = 0; n < 12; ++n) CHECK(s.data()[k * 12 + n] == expect.data()[n]);
  }
}

TEST_CASE("hamilton mixing populates j and k from an (r, i) packing") {
  QuaternionLinear layer = suprasphere_init(4, 4, 41);
  Tensor rr = random_tensor({4, 3, 3}, 42), ii = random_tensor({4, 3, 3}, 43), zero = Tensor::zeros({4, 3, 3});
  Tensor out = qlinear_forward(layer, QuaternionTensor::from_components(rr, ii, zero, zero)).inner();
  double max_j = 0.0;
  for (std::size_t n = 0; n < 36; ++n) max_j = std::max(max_j, std::abs(out.data()[2 * 36 + n]));
  CHECK(max_j > 0.0);
}

TEST_CASE("suprasphere init") {
  QuaternionLinear a = suprasphere_init(5, 3, 99), b = suprasphere_init(5, 3, 99);
  for (std::size_t n = 0; n < 4; ++n) CHECK(qtest::bitwise_equal(*a.weights()[n], *b.weights()[n]));
  CHECK(a.bias.shape() == Shape{4, 3});

  // 10^4 weight quaternions. Components have zero mean; |w| = |m| is
  // Uniform(0, s), so |w| / s has mean 1/2 and variance 1/12.
  const std::size_t ci = 100, co = 100;
  QuaternionLinear l = suprasphere_init(ci, co, 12345);
  const double s = 1.0 / std::sqrt(2.0 * ci);
  const std::size_t n = ci * co;
  std::array<double, 4> sum{}, sq{};
  double mag_sum = 0.0;
  for (std::size_t e = 0; e < n; ++e) {
    const Quaternion w{l.w_r.data()[e], l.w_i.data()[e], l.w_j.data()[e], l.w_k.data()[e]};
    CHECK(w.norm() <= s * (1.0 + 1e-12));
    const auto v = w.as_array();
    for (int c = 0; c < 4; ++c) {
      sum[c] += v[c];
      sq[c] += v[c] * v[c];
    }
    mag_sum += w.norm() / s;
  }
  for (int c = 0; c < 4; ++c) {
    const double mean = sum[c] / n;
    const double stderr_ = std::sqrt((sq[c] / n - mean * mean) / n);
    CHECK(std::abs(mean) < 3.0 * stderr_);
  }
  CHECK(std::abs(mag_sum / n - 0.5) < 3.0 * std::sqrt(1.0 / 12.0 / n));
}

TEST_CASE("gradients through qlinear and split activation") {
  QuaternionLinear layer = suprasphere_init(3, 2, 51);
  Tensor probe = random_tensor({4, 2, 3, 3}, 52);
  auto f = [&](const Tensor&) {
    QuaternionTensor x(random_tensor({4, 3, 3, 3}, 53));
    return sum(mul(split_activation(qlinear_forward(layer, x), SplitFn::sigmoid).inner(), probe));
  };
  for (Tensor* w : layer.weights()) CHECK(finite_diff_check(f, *w) < 1e-6);
  CHECK(finite_diff_check(f, layer.bias) < 1e-6);
}

TEST_CASE("layer checkpoint round trip") {
  QuaternionLinear l = suprasphere_init(3, 5, 61);
  std::stringstream ss;
  write_qlinear(ss, "dae0.qua_fa", l);
  CHECK(ss.str().rfind("qlinear dae0.qua_fa 3 5 1\n", 0) == 0);
  std::string name;
  QuaternionLinear back = read_qlinear(ss, &name);
  CHECK(name == "dae0.qua_fa");
  for (std::size_t n = 0; n < 4; ++n) CHECK(qtest::bitwise_equal(*back.weights()[n], *l.weights()[n]));
  CHECK(qtest::bitwise_equal(back.bias, l.bias));
}

}
