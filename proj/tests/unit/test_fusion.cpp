#include <doctest.h>

#include <cmath>

#include "qfuse/errors.hpp"
#include "qfuse/fusion.hpp"
#include "qfuse/gradcheck.hpp"
#include "qfuse/ops.hpp"
#include "support.hpp"

using namespace qfuse;
using qtest::bitwise_equal;
using qtest::random_tensor;

namespace {

void randomize(Tensor t, std::uint64_t seed, double scale = 0.5) {
  Rng rng(seed);
  std::uniform_real_distribution<double> u(-scale, scale);
  for (double& v : t.mutable_data()) v = u(rng);
}

void randomize_ups(IntegratorChain& chain, std::uint64_t seed) {
  for (auto& b : chain.dae_blocks()) {
    randomize(b.up_img.weight, seed++);
    randomize(b.up_depth.weight, seed++);
    randomize(b.up_depth.bias, seed++);
  }
  for (const auto* blocks : {&chain.gae_encoder_blocks(), &chain.gae_decoder_blocks()}) {
    for (const auto& b : *blocks) randomize(b.up.weight, seed++);
  }
}

bool all_finite(const Tensor& t) { return t.all_finite(); }

ChainConfig small_chain(FusionMode mode) {
  ChainConfig c;
  c.mode = mode;
  c.stage_channels = {4, 6, 8};
  c.query_channels = 6;
  c.bev_channels = 3;
  c.dae_hidden = 4;
  c.gae_hidden = 5;
  c.qua_fa_stages = {true, false, false};
  return c;
}

struct ChainInputs {
  std::vector<Tensor> stages{random_tensor({4, 8, 12}, 1), random_tensor({6, 4, 6}, 2), random_tensor({8, 2, 3}, 3)};
  Tensor depth = random_tensor({1, 16, 24}, 4, 0.0, 1.0);
  Tensor bev = random_tensor({3, 5, 5}, 5, 0.0, 2.0);
  std::vector<Tensor> bev_states{random_tensor({6, 5, 5}, 6), random_tensor({6, 5, 5}, 7), random_tensor({6, 5, 5}, 8)};
};

}  // namespace

TEST_SUITE("fusion") {

TEST_CASE("align_spatial pads the short side by edge replication, then resizes") {
  Tensor x = Tensor::from({1, 2, 3}, {1, 2, 3, 4, 5, 6});
  Tensor padded = Tensor::from({1, 3, 3}, {1, 2, 3, 4, 5, 6, 4, 5, 6});
  CHECK(bitwise_equal(align_spatial(x, 4, 4), resize_bilinear(padded, 4, 4)));
  Tensor tall = Tensor::from({1, 3, 1}, {1, 2, 3});
  Tensor tall_padded = Tensor::from({1, 3, 2}, {1, 1, 2, 2, 3, 3});
  CHECK(bitwise_equal(align_spatial(tall, 6, 4), resize_bilinear(tall_padded, 6, 4)));
  // Matching aspect ratio: plain resize.
  Tensor y = random_tensor({2, 4, 6}, 9);
  CHECK(bitwise_equal(align_spatial(y, 2, 3), resize_bilinear(y, 2, 3)));
  CHECK(align_spatial(y, 4, 6).same_storage(y));
}

TEST_CASE("DAE at zero-initialised up-projections is the identity on image features") {
  DaeConfig cfg;
  cfg.image_channels = 4;
  cfg.hidden = 8;
  for (MixingKind mixing : {MixingKind::quaternion, MixingKind::concat, MixingKind::mlp}) {
    cfg.mixing = mixing;
    DAEBlock b = DAEBlock::create(cfg, 3);
    Tensor img = random_tensor({4, 6, 6}, 10);
    for (Tensor depth : {Tensor::zeros({1, 12, 12}), random_tensor({1, 12, 12}, 11, 0.0, 1.0)}) {
      DaeOutput out = dae_forward(b, img, depth);
      CHECK(bitwise_equal(out.enhanced, img));
      CHECK(out.depth_state.shape() == Shape{1, 6, 6});
      for (double v : out.depth_state.data()) CHECK(v == 0.0);
    }
  }
  CHECK_THROWS_AS(dae_forward(DAEBlock::create(cfg, 3), random_tensor({5, 6, 6}, 1), Tensor::zeros({1, 6, 6})),
                  DimensionError);
}

TEST_CASE("DAE quaternion step matches a hand-built pipeline") {
  DaeConfig cfg;
  cfg.image_channels = 3;
  cfg.hidden = 4;
  DAEBlock b = DAEBlock::create(cfg, 21);
  randomize(b.up_img.weight, 22);
  randomize(b.up_depth.weight, 23);
  Tensor img = random_tensor({3, 4, 6}, 24), depth = random_tensor({1, 8, 12}, 25, 0.0, 1.0);
  DaeOutput out = dae_forward(b, img, depth);

  // Reference: resize, reduce, Hamilton mix per pixel by hand, relu, route r/i.
  Tensor d = resize_bilinear(depth, 4, 6);
  Tensor fh = conv1x1(img, b.g1.weight, b.g1.bias), ch = conv1x1(d, b.g2.weight, b.g2.bias);
  const auto& q = *b.qua_fa;
  const std::size_t c = 4, p = 24;
  std::vector<double> r(c * p), i(c * p);
  for (std::size_t o = 0; o < c; ++o) {
    for (std::size_t px = 0; px < p; ++px) {
      double sr = q.bias.data()[o], si = q.bias.data()[c + o];
      for (std::size_t k = 0; k < c; ++k) {
        const Quaternion w{q.w_r.data()[o * c + k], q.w_i.data()[o * c + k], q.w_j.data()[o * c + k],
                           q.w_k.data()[o * c + k]};
        const Quaternion x{fh.data()[k * p + px], ch.data()[k * p + px], 0.0, 0.0};
        const Quaternion h = hamilton(w, x);
        sr += h.r;
        si += h.x;
      }
      r[o * p + px] = std::max(0.0, sr);
      i[o * p + px] = std::max(0.0, si);
    }
  }
  Tensor rt = Tensor::from({c, 4, 6}, r), it = Tensor::from({c, 4, 6}, i);
  CHECK(qtest::max_abs_diff(out.enhanced, add(img, conv1x1(rt, b.up_img.weight, b.up_img.bias))) < 1e-12);
  CHECK(qtest::max_abs_diff(out.depth_state, conv1x1(it, b.up_depth.weight, b.up_depth.bias)) < 1e-12);
}

TEST_CASE("axis assignment") {
  CHECK(axis_assignment(AxisAssignment::lidar_on_i).image_slot == 0);
  CHECK(axis_assignment(AxisAssignment::lidar_on_i).lidar_slot == 1);
  Tensor f = random_tensor({2, 3, 3}, 30), c = random_tensor({2, 3, 3}, 31);
  QuaternionTensor a = pack_quaternion(f, c, AxisAssignment::lidar_on_i);
  QuaternionTensor b = pack_quaternion(f, c, AxisAssignment::lidar_on_r);
  CHECK(bitwise_equal(a.component(0), b.component(1)));
  CHECK(bitwise_equal(a.component(1), b.component(0)));
  for (std::size_t k : {2u, 3u}) {
    CHECK(bitwise_equal(a.component(k), b.component(k)));
    const Tensor zk = a.component(k);
    for (double v : zk.data()) CHECK(v == 0.0);
  }

  // W_r = W_i = A, W_j = W_k = 0: out = (A(F - C), A(F + C), 0, 0) for lidar_on_i and
  // (A(C - F), A(C + F), 0, 0) for lidar_on_r, so r flips sign and i is unchanged.
  QuaternionLinear l;
  l.w_r = random_tensor({2, 2}, 32);
  l.w_i = l.w_r;
  l.w_j = Tensor::zeros({2, 2});
  l.w_k = Tensor::zeros({2, 2});
  Tensor oa = qlinear_forward(l, a).inner(), ob = qlinear_forward(l, b).inner();
  const std::size_t n = 18;
  for (std::size_t e = 0; e < n; ++e) {
    CHECK(std::abs(oa.data()[e] + ob.data()[e]) < 1e-14);
    CHECK(std::abs(oa.data()[n + e] - ob.data()[n + e]) < 1e-14);
    CHECK(oa.data()[2 * n + e] == 0.0);
    CHECK(ob.data()[3 * n + e] == 0.0);
  }
}

TEST_CASE("Qua-FA uses a quarter of the dense mixing weights") {
  DaeConfig cfg;
  for (std::size_t hidden : {4u, 8u, 16u}) {
    cfg.hidden = hidden;
    cfg.mixing = MixingKind::quaternion;
    const auto q = DAEBlock::create(cfg, 1).mixing_weight_count();
    cfg.mixing = MixingKind::mlp;
    const auto m = DAEBlock::create(cfg, 1).mixing_weight_count();
    CHECK(static_cast<double>(q) / static_cast<double>(m) == 0.25);
    cfg.mixing = MixingKind::concat;
    CHECK(DAEBlock::create(cfg, 1).mixing_weight_count() == 4 * hidden * hidden);
  }
}

TEST_CASE("GAE gate") {
  GaeConfig cfg;
  cfg.query_channels = 6;
  cfg.geo_channels = 4;
  cfg.hidden = 5;
  GAEBlock b = GAEBlock::create(cfg, 40);
  Tensor q = random_tensor({6, 7, 7}, 41), g = random_tensor({4, 7, 7}, 42);

  GaeOutput out = gae_forward(b, q, g);
  CHECK(bitwise_equal(out.query, q));
  for (double v : out.gate.data()) {
    CHECK(v > 0.0);
    CHECK(v < 1.0);
  }

  for (double& v : b.w_t.mutable_data()) v = 0.0;
  out = gae_forward(b, q, g);
  for (double v : out.gate.data()) CHECK(v == 0.5);
  Tensor aligned = relu(conv1x1(concat({q, g}, 0), b.proj.weight, b.proj.bias));
  for (std::size_t e = 0; e < aligned.numel(); ++e) CHECK(out.geo_state.data()[e] == 0.5 * aligned.data()[e]);

  CHECK_THROWS_AS(gae_forward(b, q, random_tensor({4, 6, 7}, 1)), DimensionError);
}

TEST_CASE("block gradients") {
  DaeConfig dc;
  dc.image_channels = 4;
  dc.hidden = 8;
  for (MixingKind mixing : {MixingKind::quaternion, MixingKind::concat}) {
    dc.mixing = mixing;
    DAEBlock b = DAEBlock::create(dc, 50);
    randomize(b.up_img.weight, 51);
    randomize(b.up_depth.weight, 52);
    Tensor img = random_tensor({4, 6, 6}, 53), depth = random_tensor({1, 9, 9}, 54, 0.0, 1.0);
    Tensor p1 = random_tensor({4, 6, 6}, 55), p2 = random_tensor({1, 6, 6}, 56);
    auto f = [&](const Tensor&) {
      DaeOutput o = dae_forward(b, img, depth);
      return add(sum(mul(o.enhanced, p1)), sum(mul(o.depth_state, p2)));
    };
    CHECK(finite_diff_check(f, img) < 1e-5);
    CHECK(finite_diff_check(f, depth) < 1e-5);
    CHECK(finite_diff_check(f, b.g1.weight) < 1e-5);
    if (b.qua_fa) CHECK(finite_diff_check(f, b.qua_fa->w_j) < 1e-5);
  }

  GaeConfig gc;
  gc.query_channels = 8;
  gc.geo_channels = 8;
  gc.hidden = 6;
  GAEBlock g = GAEBlock::create(gc, 60);
  randomize(g.up.weight, 61);
  Tensor q = random_tensor({8, 10, 10}, 62), geo = random_tensor({8, 10, 10}, 63);
  Tensor pq = random_tensor({8, 10, 10}, 64), pg = random_tensor({6, 10, 10}, 65);
  auto f = [&](const Tensor&) {
    GaeOutput o = gae_forward(g, q, geo);
    return add(sum(mul(o.query, pq)), sum(mul(o.geo_state, pg)));
  };
  CHECK(finite_diff_check(f, q) < 1e-5);
  CHECK(finite_diff_check(f, geo) < 1e-5);
  CHECK(finite_diff_check(f, g.w_t) < 1e-5);
}

TEST_CASE("progressive chain threads the depth state") {
  IntegratorChain chain = IntegratorChain::create(small_chain(FusionMode::progressive), 70);
  CHECK(chain.dae_blocks().size() == 3);
  ChainInputs in;
  ChainOutput out = chain_forward(chain, in.stages, in.depth, in.bev, in.bev_states);
  REQUIRE(out.state.dae_inputs.size() == 3);
  CHECK(out.state.dae_inputs[0].same_storage(in.depth));
  CHECK(out.state.dae_inputs[1].same_storage(out.state.depth_outputs[0]));
  CHECK(out.state.dae_inputs[2].same_storage(out.state.depth_outputs[1]));
  REQUIRE(out.state.gae_inputs.size() == 3);
  CHECK(out.state.gae_inputs[0].same_storage(out.state.bev_embedded));
  CHECK_FALSE(out.state.gae_inputs[1].same_storage(out.state.bev_embedded));

  // Zero-initialised ups: every hook returns its input.
  for (std::size_t s = 0; s < 3; ++s) CHECK(bitwise_equal(out.enhanced_stages[s], in.stages[s]));
  for (std::size_t l = 0; l < 3; ++l) CHECK(bitwise_equal(out.bev_layers[l], in.bev_states[l]));
}

TEST_CASE("separate chain feeds the raw maps to every block") {
  IntegratorChain chain = IntegratorChain::create(small_chain(FusionMode::separate), 71);
  randomize_ups(chain, 72);
  ChainInputs in;
  ChainOutput out = chain_forward(chain, in.stages, in.depth, in.bev, in.bev_states);
  for (const auto& t : out.state.dae_inputs) CHECK(t.same_storage(in.depth));
  for (const auto& t : out.state.gae_inputs) CHECK(t.same_storage(out.state.bev_embedded));
}

TEST_CASE("perturbing the depth map reaches every stage") {
  IntegratorChain chain = IntegratorChain::create(small_chain(FusionMode::progressive), 80);
  randomize_ups(chain, 81);
  ChainInputs in;
  ChainOutput a = chain_forward(chain, in.stages, in.depth, in.bev, in.bev_states);
  Tensor bumped = in.depth.detach();
  for (double& v : bumped.mutable_data()) v += 0.3;
  ChainOutput b = chain_forward(chain, in.stages, bumped, in.bev, in.bev_states);
  for (std::size_t s = 0; s < 3; ++s) {
    CHECK(qtest::max_abs_diff(a.state.depth_outputs[s], b.state.depth_outputs[s]) > 0.0);
    CHECK(qtest::max_abs_diff(a.enhanced_stages[s], b.enhanced_stages[s]) > 0.0);
  }
}

TEST_CASE("every mode completes with finite outputs of the same shapes") {
  ChainInputs in;
  struct {
    Tensor depth = Tensor::zeros({1, 16, 24});
    Tensor bev = Tensor::zeros({3, 5, 5});
  } zero;
  std::vector<Shape> shapes;
  for (FusionMode mode : {FusionMode::camera_only, FusionMode::progressive, FusionMode::input_summation,
                          FusionMode::deep_summation, FusionMode::separate}) {
    IntegratorChain chain = IntegratorChain::create(small_chain(mode), 90);
    randomize_ups(chain, 91);
    for (bool lidar : {true, false}) {
      ChainOutput out = chain_forward(chain, in.stages, lidar ? in.depth : zero.depth, lidar ? in.bev : zero.bev,
                                      in.bev_states);
      REQUIRE(out.enhanced_stages.size() == 3);
      REQUIRE(out.bev_layers.size() == 3);
      for (std::size_t s = 0; s < 3; ++s) {
        CHECK(out.enhanced_stages[s].shape() == in.stages[s].shape());
        CHECK(all_finite(out.enhanced_stages[s]));
      }
      for (const auto& t : out.bev_layers) {
        CHECK(t.shape() == Shape{6, 5, 5});
        CHECK(all_finite(t));
      }
    }
    CHECK(chain.has_hooks() == (mode != FusionMode::camera_only));
  }
}

TEST_CASE("chain structure per mode") {
  auto build = [](FusionMode m) { return IntegratorChain::create(small_chain(m), 1); };
  CHECK(build(FusionMode::camera_only).dae_blocks().empty());
  CHECK(build(FusionMode::input_summation).dae_blocks().empty());
  CHECK(build(FusionMode::deep_summation).gae_encoder_blocks().empty());
  CHECK(build(FusionMode::separate).gae_decoder_blocks().size() == 1);

  ChainConfig cfg = small_chain(FusionMode::progressive);
  cfg.dae = false;
  cfg.gae_dec = false;
  IntegratorChain partial = IntegratorChain::create(cfg, 2);
  CHECK(partial.dae_blocks().empty());
  CHECK(partial.gae_encoder_blocks().size() == 2);
  CHECK(partial.gae_decoder_blocks().empty());

  const auto lines = build(FusionMode::progressive).manifest();
  REQUIRE(lines.size() == 6);
  CHECK(lines[0] == "dae 0 4 quaternion");
  CHECK(lines[1] == "dae 1 4 concat");
  CHECK(lines[3] == "gae_enc 0 5 concat");
  CHECK(lines[5] == "gae_dec 0 5 concat");

  cfg.qua_fa_stages = {true};
  CHECK_THROWS_AS(IntegratorChain::create(cfg, 3), ConfigError);
}

TEST_CASE("mode names round trip") {
  for (FusionMode m : {FusionMode::camera_only, FusionMode::progressive, FusionMode::input_summation,
                       FusionMode::deep_summation, FusionMode::separate}) {
    CHECK(fusion_mode_from_string(to_string(m)) == m);
  }
  CHECK(axis_from_string("lidar_on_r") == AxisAssignment::lidar_on_r);
  CHECK_THROWS_AS(fusion_mode_from_string("late"), ConfigError);
}

}
