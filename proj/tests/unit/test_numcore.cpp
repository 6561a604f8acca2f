#include <doctest.h>

#include <cmath>
#include <cstring>
#include <sstream>

#include "qfuse/errors.hpp"
#include "qfuse/gradcheck.hpp"
#include "qfuse/ops.hpp"
#include "qfuse/snapshot.hpp"
#include "support.hpp"

using namespace qfuse;
using qtest::max_abs_diff;
using qtest::random_tensor;

namespace {

// out[c,p] = b[c] + sum_k w[c,k] x[k,p], pixel by pixel.
Tensor conv1x1_oracle(const Tensor& x, const Tensor& w, const Tensor& b) {
  const std::size_t ci = x.dim(0), h = x.dim(1), wd = x.dim(2), co = w.dim(0);
  Tensor out = Tensor::zeros({co, h, wd});
  auto o = out.mutable_data();
  for (std::size_t p = 0; p < h * wd; ++p) {
    for (std::size_t c = 0; c < co; ++c) {
      double acc = b.data()[c];
      for (std::size_t k = 0; k < ci; ++k) acc += w.data()[c * ci + k] * x.data()[k * h * wd + p];
      o[c * h * wd + p] = acc;
    }
  }
  return out;
}

Tensor conv3x3_oracle(const Tensor& x, const Tensor& w, const Tensor& b, int stride) {
  const std::size_t ci = x.dim(0), h = x.dim(1), wd = x.dim(2), co = w.dim(0);
  const std::size_t oh = (h - 1) / stride + 1, ow = (wd - 1) / stride + 1;
  Tensor out = Tensor::zeros({co, oh, ow});
  auto o = out.mutable_data();
  for (std::size_t c = 0; c < co; ++c)
    for (std::size_t y = 0; y < oh; ++y)
      for (std::size_t xx = 0; xx < ow; ++xx) {
        double acc = b.data()[c];
        for (std::size_t k = 0; k < ci; ++k)
          for (int dy = 0; dy < 3; ++dy)
            for (int dx = 0; dx < 3; ++dx) {
              const long iy = static_cast<long>(y) * stride + dy - 1;
              const long ix = static_cast<long>(xx) * stride + dx - 1;
              if (iy < 0 || ix < 0 || iy >= static_cast<long>(h) || ix >= static_cast<long>(wd)) continue;
              acc += w.data()[((c * ci + k) * 3 + dy) * 3 + dx] * x.data()[(k * h + iy) * wd + ix];
            }
        o[(c * oh + y) * ow + xx] = acc;
      }
  return out;
}

}  // namespace

TEST_SUITE("numcore") {

TEST_CASE("tensor construction and invariants") {
  Tensor t = Tensor::zeros({2, 3});
  CHECK(t.numel() == 6);
  CHECK(t.rank() == 2);
  CHECK_FALSE(t.has_grad());
  CHECK_THROWS_AS(Tensor::from({2, 2}, {1.0, 2.0, 3.0}), DimensionError);
  CHECK_THROWS_AS(Tensor::zeros({2, 0}), DimensionError);
  CHECK(Tensor::from({2, 2}, {1, 2, 3, 4}).at({1, 0}) == 3.0);
  Tensor copy = t;
  CHECK(copy.same_storage(t));
  CHECK_FALSE(t.detach().same_storage(t));
}

TEST_CASE("conv1x1 examples and per-pixel oracle") {
  Tensor ones = Tensor::full({2, 1, 1}, 1.0);
  CHECK(conv1x1(ones, Tensor::from({1, 2}, {1, 1}), Tensor::zeros({1})).item() == 2.0);

  Tensor x = random_tensor({3, 4, 4}, 1);
  Tensor eye = Tensor::from({3, 3}, {1, 0, 0, 0, 1, 0, 0, 0, 1});
  CHECK(qtest::bitwise_equal(conv1x1(x, eye, Tensor::zeros({3})), x));

  Tensor w = random_tensor({5, 3}, 2), b = random_tensor({5}, 3);
  CHECK(max_abs_diff(conv1x1(x, w, b), conv1x1_oracle(x, w, b)) < 1e-12);

  CHECK_THROWS_AS(conv1x1(x, random_tensor({5, 2}, 4), b), DimensionError);
  try {
    conv1x1(x, random_tensor({5, 2}, 4), b);
  } catch (const DimensionError& e) {
    const std::string msg = e.what();
    CHECK(msg.find("[3,4,4]") != std::string::npos);
    CHECK(msg.find("[5,2]") != std::string::npos);
  }
}

TEST_CASE("conv1x1 is linear in its input") {
  Tensor x = random_tensor({3, 5, 5}, 10), y = random_tensor({3, 5, 5}, 11), w = random_tensor({4, 3}, 12);
  const double a = 0.7, c = -1.3;
  Tensor lhs = conv1x1(add(scale(x, a), scale(y, c)), w);
  Tensor rhs = add(scale(conv1x1(x, w), a), scale(conv1x1(y, w), c));
  CHECK(max_abs_diff(lhs, rhs) < 1e-10);
}

TEST_CASE("conv3x3 size rule, delta kernel and six-loop oracle") {
  Tensor x5 = random_tensor({1, 5, 5}, 20);
  Tensor w = Tensor::zeros({1, 1, 3, 3});
  w.mutable_data()[4] = 1.0;
  CHECK(conv3x3(x5, w, Tensor::zeros({1}), 2).shape() == Shape{1, 3, 3});
  CHECK(qtest::bitwise_equal(conv3x3(x5, w, Tensor::zeros({1}), 1), x5));

  // Kernel tap at (0,0) picks the up-left neighbour.
  Tensor shift = Tensor::zeros({1, 1, 3, 3});
  shift.mutable_data()[0] = 1.0;
  Tensor shifted = conv3x3(x5, shift, Tensor::zeros({1}), 1);
  CHECK(shifted.at({0, 0, 0}) == 0.0);
  CHECK(shifted.at({0, 3, 2}) == x5.at({0, 2, 1}));

  for (int stride : {1, 2}) {
    Tensor x = random_tensor({3, 7, 6}, 30 + stride);
    Tensor k = random_tensor({4, 3, 3, 3}, 40 + stride), b = random_tensor({4}, 50);
    CHECK(max_abs_diff(conv3x3(x, k, b, stride), conv3x3_oracle(x, k, b, stride)) < 1e-12);
  }
  CHECK_THROWS_AS(conv3x3(x5, w, Tensor::zeros({1}), 3), ConfigError);
  CHECK_THROWS_AS(conv3x3(random_tensor({1, 2, 5}, 1), w, Tensor::zeros({1}), 1), DimensionError);
}

TEST_CASE("resize_bilinear") {
  Tensor x = random_tensor({2, 3, 4}, 60);
  CHECK(qtest::bitwise_equal(resize_bilinear(x, 3, 4), x));

  Tensor r = resize_bilinear(Tensor::from({1, 1, 2}, {0.0, 2.0}), 1, 4);
  CHECK(r.shape() == Shape{1, 1, 4});
  CHECK(r.data()[0] == 0.0);
  CHECK(std::abs(r.data()[1] - 0.5) < 1e-15);
  CHECK(std::abs(r.data()[2] - 1.5) < 1e-15);
  CHECK(std::abs(r.data()[3] - 2.0) < 1e-15);

  Tensor c = resize_bilinear(Tensor::full({2, 3, 5}, 1.25), 7, 2);
  for (double v : c.data()) CHECK(std::abs(v - 1.25) < 1e-15);
}

TEST_CASE("global_avg_pool") {
  CHECK(global_avg_pool(Tensor::from({1, 2, 2}, {1, 2, 3, 4})).item() == 2.5);
  Tensor g = global_avg_pool(Tensor::full({3, 4, 5}, -0.75));
  for (double v : g.data()) CHECK(v == -0.75);
  Tensor x = random_tensor({4, 6, 3}, 70);
  Tensor p = global_avg_pool(x);
  for (std::size_t c = 0; c < 4; ++c) {
    double s = 0.0;
    for (std::size_t i = 0; i < 18; ++i) s += x.data()[c * 18 + i];
    CHECK(std::abs(p.data()[c] - s / 18.0) < 1e-12);
  }
}

TEST_CASE("elementwise family") {
  CHECK(sigmoid(Tensor::scalar(0.0)).item() == 0.5);
  Tensor r = relu(Tensor::from({2}, {-3.0, 3.0}));
  CHECK(r.data()[0] == 0.0);
  CHECK(r.data()[1] == 3.0);
  CHECK(concat({Tensor::zeros({2, 3, 4}), Tensor::zeros({3, 3, 4})}, 0).shape() == Shape{5, 3, 4});
  CHECK_THROWS_AS(concat({Tensor::zeros({2, 3, 4}), Tensor::zeros({3, 2, 4})}, 0), DimensionError);
  CHECK_THROWS_AS(add(Tensor::zeros({2}), Tensor::zeros({3})), DimensionError);
  CHECK(mul(Tensor::from({2}, {2, 3}), Tensor::from({2}, {4, 5})).data()[1] == 15.0);
  CHECK(scale(Tensor::from({1}, {2}), -1.5).item() == -3.0);
}

TEST_CASE("backward analytic cases") {
  Tensor x = random_tensor({2, 3}, 80, -1, 1, true);
  backward(sum(x));
  for (double g : x.grad()) CHECK(g == 1.0);

  Tensor y = random_tensor({3, 2, 2}, 81, -1, 1, true);
  backward(sum(mul(y, y)));
  for (std::size_t i = 0; i < y.numel(); ++i) CHECK(std::abs(y.grad()[i] - 2.0 * y.data()[i]) < 1e-15);
  CHECK(Graph::current().size() == 0);

  Tensor z = random_tensor({2, 2}, 82, -1, 1, true);
  CHECK_THROWS_AS(backward(z), ContractError);
  Graph::current().clear();
}

TEST_CASE("tape records nothing without grad and respects NoGradGuard") {
  Graph::current().clear();
  Tensor a = random_tensor({3}, 90);
  sum(mul(a, a));
  CHECK(Graph::current().size() == 0);
  Tensor b = random_tensor({3}, 91, -1, 1, true);
  {
    NoGradGuard guard;
    sum(mul(b, b));
    CHECK(Graph::current().size() == 0);
  }
  Tensor s = sum(mul(b, b));
  CHECK(Graph::current().size() == 2);
  // Inputs precede outputs on the tape.
  CHECK(Graph::current().nodes()[1].inputs[0] == Graph::current().nodes()[0].output);
  backward(s);
}

TEST_CASE("finite check guard names the op") {
  FiniteCheckGuard guard;
  Tensor big = Tensor::full({2}, 1e308);
  try {
    scale(big, 10.0);
    FAIL("expected ValidityError");
  } catch (const ValidityError& e) {
    CHECK(std::string(e.what()).find("scale") != std::string::npos);
  }
}

TEST_CASE("finite_diff_check examples") {
  Tensor x = random_tensor({3, 4}, 100);
  CHECK(finite_diff_check([](const Tensor& t) { return sum(t); }, x) < 1e-9);
  CHECK(finite_diff_check([](const Tensor& t) { return sum(sigmoid(t)); }, random_tensor({3, 4}, 101)) < 1e-6);
  Tensor nan_in = Tensor::full({2}, std::nan(""));
  CHECK_THROWS_AS(finite_diff_check([](const Tensor& t) { return sum(t); }, nan_in), ValidityError);
  CHECK_THROWS_AS(finite_diff_check([](const Tensor& t) { return sum(t); }, x, 0.0), ContractError);
}

TEST_CASE("per-op gradients on several seeds") {
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    Tensor w = random_tensor({4, 3}, 200 + seed), k = random_tensor({2, 3, 3, 3}, 300 + seed);
    Tensor cw = random_tensor({4, 5, 5}, 400 + seed);
    CHECK(finite_diff_check([&](const Tensor& t) { return sum(mul(conv1x1(t, w), cw)); },
                            random_tensor({3, 5, 5}, seed)) < 1e-7);
    Tensor c3 = random_tensor({2, 3, 3}, 500 + seed);
    CHECK(finite_diff_check([&](const Tensor& t) { return sum(mul(conv3x3(t, k, Tensor::zeros({2}), 2), c3)); },
                            random_tensor({3, 6, 5}, seed + 10)) < 1e-7);
    Tensor cr = random_tensor({2, 5, 7}, 600 + seed);
    CHECK(finite_diff_check([&](const Tensor& t) { return sum(mul(resize_bilinear(t, 5, 7), cr)); },
                            random_tensor({2, 3, 4}, seed + 20)) < 1e-7);
    Tensor cg = random_tensor({4}, 700 + seed);
    CHECK(finite_diff_check([&](const Tensor& t) { return sum(mul(global_avg_pool(t), cg)); },
                            random_tensor({4, 3, 3}, seed + 30)) < 1e-7);
  }
}

TEST_CASE("snapshot round trip is bit exact") {
  Tensor t = random_tensor({2, 3, 5}, 700, -1e3, 1e3);
  t.mutable_data()[3] = -0.0;
  t.mutable_data()[4] = 5e-324;
  std::stringstream ss;
  write_tensor(ss, t);
  CHECK(ss.str().size() == 4 + 4 + 3 * 4 + 30 * 8);
  CHECK(ss.str().substr(0, 4) == "QFT1");
  Tensor back = read_tensor(ss);
  CHECK(back.shape() == t.shape());
  CHECK(std::memcmp(back.data().data(), t.data().data(), 30 * sizeof(double)) == 0);

  std::stringstream bad("QFT0");
  CHECK_THROWS_AS(read_tensor(bad), IoError);
  std::stringstream truncated(ss.str().substr(0, 20));
  CHECK_THROWS_AS(read_tensor(truncated), IoError);

  qtest::TempDir dir("snap");
  save_tensor(dir.path / "t.qft", t);
  CHECK(qtest::bitwise_equal(load_tensor(dir.path / "t.qft"), t));
  CHECK_THROWS_AS(load_tensor(dir.path / "missing.qft"), IoError);
}

}
