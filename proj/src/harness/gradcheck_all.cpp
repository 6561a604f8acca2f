#include <algorithm>
#include <chrono>
#include <cmath>
#include <iomanip>
#include <random>
#include <sstream>

#include "qfuse/checks.hpp"
#include "qfuse/errors.hpp"
#include "qfuse/fusion.hpp"
#include "qfuse/gradcheck.hpp"
#include "qfuse/ops.hpp"
#include "qfuse/quaternion.hpp"
#include "qfuse/rng.hpp"
#include "qfuse/toydet.hpp"

namespace qfuse {

namespace {

Tensor random_tensor(const Shape& shape, Rng& rng, double lo = -1.0, double hi = 1.0) {
  std::uniform_real_distribution<double> d(lo, hi);
  std::vector<double> v(shape_numel(shape));
  for (double& x : v) x = d(rng);
  return Tensor::from(shape, std::move(v), true);
}

// Magnitudes in [0.1, 1] with random sign, keeping clear of relu's kink.
Tensor nonzero_tensor(const Shape& shape, Rng& rng) {
  Tensor t = random_tensor(shape, rng, 0.1, 1.0);
  std::bernoulli_distribution flip(0.5);
  for (double& x : t.mutable_data()) x = flip(rng) ? -x : x;
  return t;
}

void randomize(const Tensor& t, Rng& rng, double scale) {
  std::uniform_real_distribution<double> d(-scale, scale);
  Tensor h = t;
  for (double& x : h.mutable_data()) x = d(rng);
}

// Scalar probe of an arbitrary-shaped output: sum(y * R) with a fixed random R.
Tensor weighted_sum(const Tensor& y, const Tensor& r) { return sum(mul(y, r)); }

std::vector<std::size_t> sample_indices(std::size_t n, std::size_t count, Rng& rng) {
  std::vector<std::size_t> all(n);
  for (std::size_t i = 0; i < n; ++i) all[i] = i;
  if (n <= count) return all;
  std::shuffle(all.begin(), all.end(), rng);
  all.resize(count);
  std::sort(all.begin(), all.end());
  return all;
}

// Max error over every input, probing at most `per_tensor` entries of each
// (0 = all entries).
double probe(const std::function<Tensor()>& loss, const std::vector<Tensor>& inputs, Rng& rng,
             std::size_t per_tensor = 0) {
  double worst = 0.0;
  for (const Tensor& x : inputs) {
    std::optional<std::vector<std::size_t>> idx;
    if (per_tensor) idx = sample_indices(x.numel(), per_tensor, rng);
    worst = std::max(worst, finite_diff_check([&](const Tensor&) { return loss(); }, x, 1e-5, idx));
  }
  return worst;
}

using UnaryOp = std::function<Tensor(const Tensor&)>;

GradcheckItem unary(const std::string& name, Shape shape, UnaryOp op, bool avoid_zero = false) {
  return {name, kOpTolerance, [=](std::uint64_t seed) {
            Rng rng(derive_seed(seed, name));
            Tensor x = avoid_zero ? nonzero_tensor(shape, rng) : random_tensor(shape, rng);
            const Tensor probe_y = [&] {
              NoGradGuard g;
              return op(x);
            }();
            const Tensor r = random_tensor(probe_y.shape(), rng).detach();
            return probe([&] { return weighted_sum(op(x), r); }, {x}, rng);
          }};
}

std::vector<GradcheckItem> op_items() {
  std::vector<GradcheckItem> items;
  items.push_back({"conv1x1", kOpTolerance, [](std::uint64_t seed) {
                     Rng rng(derive_seed(seed, "conv1x1"));
                     Tensor x = random_tensor({3, 4, 5}, rng), w = random_tensor({2, 3}, rng), b = random_tensor({2}, rng);
                     const Tensor r = random_tensor({2, 4, 5}, rng).detach();
                     return probe([&] { return weighted_sum(conv1x1(x, w, b), r); }, {x, w, b}, rng);
                   }});
  for (int stride : {1, 2}) {
    const std::string name = "conv3x3_s" + std::to_string(stride);
    items.push_back({name, kOpTolerance, [=](std::uint64_t seed) {
                       Rng rng(derive_seed(seed, name));
                       Tensor x = random_tensor({2, 7, 6}, rng), w = random_tensor({3, 2, 3, 3}, rng);
                       Tensor b = random_tensor({3}, rng);
                       const Tensor y0 = [&] {
                         NoGradGuard g;
                         return conv3x3(x, w, b, stride);
                       }();
                       const Tensor r = random_tensor(y0.shape(), rng).detach();
                       return probe([&] { return weighted_sum(conv3x3(x, w, b, stride), r); }, {x, w, b}, rng);
                     }});
  }
  items.push_back(unary("resize_bilinear_up", {2, 3, 4}, [](const Tensor& x) { return resize_bilinear(x, 5, 7); }));
  items.push_back(unary("resize_bilinear_down", {2, 6, 7}, [](const Tensor& x) { return resize_bilinear(x, 2, 3); }));
  items.push_back(unary("pad_edge", {2, 3, 4}, [](const Tensor& x) { return pad_edge(x, 2, 1); }));
  items.push_back(unary("global_avg_pool", {3, 4, 5}, [](const Tensor& x) { return global_avg_pool(x); }));
  items.push_back(unary("relu", {2, 3, 4}, [](const Tensor& x) { return relu(x); }, true));
  items.push_back(unary("sigmoid", {2, 3, 4}, [](const Tensor& x) { return sigmoid(scale(x, 4.0)); }));
  items.push_back(unary("scale", {5}, [](const Tensor& x) { return scale(x, -1.7); }));
  items.push_back(unary("mul_self", {2, 3}, [](const Tensor& x) { return mul(x, x); }));
  items.push_back(unary("narrow", {4, 3, 2}, [](const Tensor& x) { return narrow(x, 1, 1, 2); }));
  items.push_back(unary("select0", {4, 3, 2}, [](const Tensor& x) { return select0(x, 2); }));
  items.push_back(unary("reshape", {4, 3, 2}, [](const Tensor& x) { return reshape(x, {2, 12}); }));
  items.push_back(unary("sum", {3, 4}, [](const Tensor& x) { return sum(x); }));
  items.push_back(unary("mean", {3, 4}, [](const Tensor& x) { return mean(x); }));
  for (const char* which : {"add", "sub", "mul"}) {
    const std::string name = which;
    items.push_back({name, kOpTolerance, [=](std::uint64_t seed) {
                       Rng rng(derive_seed(seed, name));
                       Tensor a = random_tensor({3, 4}, rng), b = random_tensor({3, 4}, rng);
                       const Tensor r = random_tensor({3, 4}, rng).detach();
                       auto f = [&] {
                         const Tensor y = name == "add" ? add(a, b) : name == "sub" ? sub(a, b) : mul(a, b);
                         return weighted_sum(y, r);
                       };
                       return probe(f, {a, b}, rng);
                     }});
  }
  for (std::size_t axis : {0u, 1u}) {
    const std::string name = "concat_axis" + std::to_string(axis);
    items.push_back({name, kOpTolerance, [=](std::uint64_t seed) {
                       Rng rng(derive_seed(seed, name));
                       Tensor a = random_tensor({2, 3, 2}, rng), b = random_tensor({2, 3, 2}, rng);
                       Shape out{2, 3, 2};
                       out[axis] *= 2;
                       const Tensor r = random_tensor(out, rng).detach();
                       return probe([&] { return weighted_sum(concat({a, b}, axis), r); }, {a, b}, rng);
                     }});
  }
  items.push_back({"stack0", kOpTolerance, [](std::uint64_t seed) {
                     Rng rng(derive_seed(seed, "stack0"));
                     Tensor a = random_tensor({2, 3}, rng), b = random_tensor({2, 3}, rng);
                     const Tensor r = random_tensor({2, 2, 3}, rng).detach();
                     return probe([&] { return weighted_sum(stack0({a, b}), r); }, {a, b}, rng);
                   }});
  items.push_back({"mul_channel", kOpTolerance, [](std::uint64_t seed) {
                     Rng rng(derive_seed(seed, "mul_channel"));
                     Tensor x = random_tensor({3, 4, 5}, rng), g = random_tensor({3}, rng);
                     const Tensor r = random_tensor({3, 4, 5}, rng).detach();
                     return probe([&] { return weighted_sum(mul_channel(x, g), r); }, {x, g}, rng);
                   }});
  items.push_back({"matvec", kOpTolerance, [](std::uint64_t seed) {
                     Rng rng(derive_seed(seed, "matvec"));
                     Tensor w = random_tensor({3, 4}, rng), v = random_tensor({4}, rng);
                     const Tensor r = random_tensor({3}, rng).detach();
                     return probe([&] { return weighted_sum(matvec(w, v), r); }, {w, v}, rng);
                   }});
  items.push_back({"grid_sample", kOpTolerance, [](std::uint64_t seed) {
                     Rng rng(derive_seed(seed, "grid_sample"));
                     Tensor x = random_tensor({2, 5, 6}, rng);
                     SampleGrid grid;
                     grid.out_h = 3;
                     grid.out_w = 4;
                     std::uniform_int_distribution<int> cell(-1, 6);
                     std::uniform_real_distribution<double> frac(0.2, 0.8);
                     for (std::size_t k = 0; k < 12; ++k) {
                       // Fractional offsets stay clear of the integer kinks.
                       grid.u.push_back(cell(rng) + frac(rng));
                       grid.v.push_back(cell(rng) + frac(rng));
                       grid.valid.push_back(k % 5 != 3);
                     }
                     const Tensor r = random_tensor({2, 3, 4}, rng).detach();
                     return probe([&] { return weighted_sum(grid_sample(x, grid), r); }, {x}, rng);
                   }});
  items.push_back({"focal_loss", kOpTolerance, [](std::uint64_t seed) {
                     Rng rng(derive_seed(seed, "focal_loss"));
                     Tensor logits = random_tensor({1, 4, 5}, rng, -3.0, 3.0);
                     Tensor target = random_tensor({1, 4, 5}, rng, 0.0, 0.9).detach();
                     target.mutable_data()[3] = 1.0;
                     target.mutable_data()[11] = 1.0;
                     return probe([&] { return focal_loss(logits, target, 2.0, 4.0); }, {logits}, rng);
                   }});
  items.push_back({"masked_l1", kOpTolerance, [](std::uint64_t seed) {
                     Rng rng(derive_seed(seed, "masked_l1"));
                     Tensor pred = random_tensor({2, 3, 4}, rng);
                     Tensor target = random_tensor({2, 3, 4}, rng).detach();
                     std::vector<double> m(12, 0.0);
                     m[1] = m[5] = m[10] = 1.0;
                     const Tensor mask = Tensor::from({3, 4}, m);
                     return probe([&] { return masked_l1(pred, target, mask, 3.0); }, {pred}, rng);
                   }});
  return items;
}

std::vector<Tensor> params_of(const NamedParams& named) {
  std::vector<Tensor> out;
  for (const auto& [n, t] : named) out.push_back(t);
  return out;
}

GradcheckItem dae_item(const std::string& name, MixingKind mixing, AxisAssignment axis) {
  return {name, kBlockTolerance, [=](std::uint64_t seed) {
            Rng rng(derive_seed(seed, name));
            DaeConfig dc;
            dc.image_channels = 4;
            dc.depth_channels = 1;
            dc.hidden = 2;
            dc.mixing = mixing;
            dc.axis = axis;
            DAEBlock block = DAEBlock::create(dc, derive_seed(seed, name + "/init"));
            // Zero-initialised up-projections would hide every upstream gradient.
            randomize(block.up_img.weight, rng, 0.5);
            randomize(block.up_depth.weight, rng, 0.5);
            Tensor f = random_tensor({4, 5, 5}, rng), d = random_tensor({1, 9, 11}, rng, 0.0, 1.0);
            const Tensor r1 = random_tensor({4, 5, 5}, rng).detach(), r2 = random_tensor({1, 5, 5}, rng).detach();
            auto loss = [&] {
              const DaeOutput o = dae_forward(block, f, d);
              return add(weighted_sum(o.enhanced, r1), weighted_sum(o.depth_state, r2));
            };
            NamedParams named;
            block.collect("dae", named);
            std::vector<Tensor> inputs = params_of(named);
            inputs.push_back(f);
            inputs.push_back(d);
            return probe(loss, inputs, rng, 12);
          }};
}

GradcheckItem gae_item(const std::string& name, bool quaternion) {
  return {name, kBlockTolerance, [=](std::uint64_t seed) {
            Rng rng(derive_seed(seed, name));
            GaeConfig gc;
            gc.query_channels = 4;
            gc.geo_channels = 3;
            gc.hidden = 4;
            gc.quaternion = quaternion;
            GAEBlock block = GAEBlock::create(gc, derive_seed(seed, name + "/init"));
            randomize(block.up.weight, rng, 0.5);
            Tensor q = random_tensor({4, 5, 5}, rng), g = random_tensor({3, 5, 5}, rng);
            const Tensor r1 = random_tensor({4, 5, 5}, rng).detach(), r2 = random_tensor({4, 5, 5}, rng).detach();
            auto loss = [&] {
              const GaeOutput o = gae_forward(block, q, g);
              return add(weighted_sum(o.query, r1), weighted_sum(o.geo_state, r2));
            };
            NamedParams named;
            block.collect("gae", named);
            std::vector<Tensor> inputs = params_of(named);
            inputs.push_back(q);
            inputs.push_back(g);
            return probe(loss, inputs, rng, 12);
          }};
}

std::vector<GradcheckItem> block_items() {
  std::vector<GradcheckItem> items;
  items.push_back({"qlinear", kBlockTolerance, [](std::uint64_t seed) {
                     Rng rng(derive_seed(seed, "qlinear"));
                     QuaternionLinear layer = suprasphere_init(3, 2, derive_seed(seed, "qlinear/init"));
                     randomize(layer.bias, rng, 0.3);
                     Tensor x = random_tensor({4, 3, 2, 3}, rng);
                     const Tensor r = random_tensor({4, 2, 2, 3}, rng).detach();
                     auto loss = [&] {
                       const QuaternionTensor y = qlinear_forward(layer, QuaternionTensor(x));
                       return weighted_sum(split_activation(y, SplitFn::sigmoid).inner(), r);
                     };
                     return probe(loss, {layer.w_r, layer.w_i, layer.w_j, layer.w_k, layer.bias, x}, rng);
                   }});
  items.push_back({"hamilton_block_matrix", kBlockTolerance, [](std::uint64_t seed) {
                     Rng rng(derive_seed(seed, "hamilton_block_matrix"));
                     QuaternionLinear layer = suprasphere_init(2, 3, derive_seed(seed, "hbm/init"));
                     const Tensor r = random_tensor({12, 8}, rng).detach();
                     return probe([&] { return weighted_sum(hamilton_block_matrix(layer), r); },
                                  {layer.w_r, layer.w_i, layer.w_j, layer.w_k}, rng);
                   }});
  items.push_back(dae_item("dae_quaternion", MixingKind::quaternion, AxisAssignment::lidar_on_i));
  items.push_back(dae_item("dae_quaternion_lidar_on_r", MixingKind::quaternion, AxisAssignment::lidar_on_r));
  items.push_back(dae_item("dae_concat", MixingKind::concat, AxisAssignment::lidar_on_i));
  items.push_back(dae_item("dae_mlp", MixingKind::mlp, AxisAssignment::lidar_on_i));
  items.push_back(gae_item("gae", false));
  items.push_back(gae_item("gae_quaternion", true));
  items.push_back({"chain_progressive", kBlockTolerance, [](std::uint64_t seed) {
                     Rng rng(derive_seed(seed, "chain_progressive"));
                     ChainConfig cc;
                     cc.stage_channels = {4, 6};
                     cc.qua_fa_stages = {true, false};
                     cc.query_channels = 4;
                     cc.bev_channels = 3;
                     cc.dae_hidden = 2;
                     cc.gae_hidden = 4;
                     IntegratorChain chain = IntegratorChain::create(cc, derive_seed(seed, "chain/init"));
                     NamedParams named;
                     chain.collect("chain", named);
                     for (auto& [n, t] : named) randomize(t, rng, 0.5);
                     std::vector<Tensor> feats{random_tensor({4, 6, 8}, rng), random_tensor({6, 3, 4}, rng)};
                     Tensor depth = random_tensor({1, 12, 16}, rng, 0.0, 1.0), bev = random_tensor({3, 5, 5}, rng);
                     std::vector<Tensor> states{random_tensor({4, 5, 5}, rng), random_tensor({4, 5, 5}, rng),
                                                random_tensor({4, 5, 5}, rng)};
                     std::vector<Tensor> weights;
                     for (const auto& f : feats) weights.push_back(random_tensor(f.shape(), rng).detach());
                     for (const auto& s : states) weights.push_back(random_tensor(s.shape(), rng).detach());
                     auto loss = [&] {
                       const ChainOutput o = chain_forward(chain, feats, depth, bev, states);
                       Tensor total = Tensor::scalar(0.0);
                       std::size_t w = 0;
                       for (const auto& t : o.enhanced_stages) total = add(total, weighted_sum(t, weights[w++]));
                       for (const auto& t : o.bev_layers) total = add(total, weighted_sum(t, weights[w++]));
                       return total;
                     };
                     std::vector<Tensor> inputs = params_of(named);
                     for (const auto& t : feats) inputs.push_back(t);
                     inputs.push_back(depth);
                     inputs.push_back(bev);
                     return probe(loss, inputs, rng, 6);
                   }});
  items.push_back({"detection_head", kBlockTolerance, [](std::uint64_t seed) {
                     Rng rng(derive_seed(seed, "detection_head"));
                     Conv3x3Layer heat = Conv3x3Layer::uniform(4, 1, 1, derive_seed(seed, "head/heat"));
                     Conv1x1Layer size = Conv1x1Layer::uniform(4, 2, derive_seed(seed, "head/size"));
                     Tensor q = random_tensor({4, 6, 6}, rng);
                     const VoxelSpec bev{{-12.0, 12.0}, {-12.0, 12.0}, {-1.0, 4.0}, 4.0, 4.0, 5.0};
                     SceneGT gt;
                     gt.boxes = {{2.0, -3.0, 1.8, 4.2, 0.3}, {-6.5, 5.0, 2.0, 4.0, -1.0}};
                     const DetectionTargets targets = build_targets(gt, bev);
                     auto loss = [&] {
                       DetectorOutput out;
                       out.logits = heat(q);
                       out.heatmap = sigmoid(out.logits);
                       out.sizes = size(q);
                       return detection_loss(out, targets);
                     };
                     return probe(loss, {heat.weight, heat.bias, size.weight, size.bias, q}, rng);
                   }});
  return items;
}

GradcheckItem full_loss_item() {
  return {"detector_loss", kLossTolerance, [](std::uint64_t seed) {
            Rng rng(derive_seed(seed, "detector_loss"));
            DetectorConfig dc;
            dc.image_h = 12;
            dc.image_w = 24;
            dc.backbone_channels = {3, 4, 5};
            dc.query_channels = 4;
            dc.bev = VoxelSpec{{-12.0, 12.0}, {-12.0, 12.0}, {-1.0, 4.0}, 4.0, 4.0, 5.0};
            dc.chain.dae_hidden = 2;
            dc.chain.gae_hidden = 4;
            SceneSpec spec;
            spec.seed = derive_seed(seed, "detector_loss/scene");
            spec.forward = {4.0, 10.0};
            spec.lidar.n_azimuth = 90;
            spec.lidar.n_elevation = 6;
            spec.cameras = {CameraModel::forward_facing(24, 12, 90.0, 1.6)};
            const Scene scene = generate_scene(spec);
            const ToyDetector model(dc, scene.cameras, derive_seed(seed, "detector_loss/model"));
            NamedParams named = model.named_parameters();
            // Zero up-projections hide upstream gradients, and zero biases put
            // pixels with all-zero inputs exactly on a relu kink.
            for (auto& [n, t] : named) {
              const bool bias = n.size() >= 4 && n.compare(n.size() - 4, 4, "bias") == 0;
              if (n.find(".up") != std::string::npos || (bias && n != "heat_head.bias")) randomize(t, rng, 0.3);
            }
            const DetectorInputs in = prepare_inputs(scene, dc, true);
            const DetectionTargets targets = build_targets(scene.gt, dc.bev);
            auto loss = [&] { return detection_loss(model.forward(in), targets, &in); };
            return probe(loss, params_of(named), rng, 2);
          }};
}

}  // namespace

std::vector<GradcheckItem> default_gradcheck_items() {
  std::vector<GradcheckItem> items = op_items();
  for (auto& b : block_items()) items.push_back(std::move(b));
  items.push_back(full_loss_item());
  return items;
}

bool GradcheckReport::passed() const {
  return std::all_of(entries.begin(), entries.end(), [](const Entry& e) { return e.passed; });
}

std::vector<std::string> GradcheckReport::failures() const {
  std::vector<std::string> out;
  for (const auto& e : entries) {
    if (!e.passed) out.push_back(e.name);
  }
  return out;
}

std::string GradcheckReport::text() const {
  std::ostringstream os;
  for (const auto& e : entries) {
    os << std::left << std::setw(28) << e.name << ' ' << std::scientific << std::setprecision(3) << e.max_rel_err
       << ' ' << e.threshold << ' ' << (e.passed ? "PASS" : "FAIL");
    if (!e.error.empty()) os << "  (" << e.error << ")";
    os << "\n";
  }
  return os.str();
}

GradcheckReport gradcheck_all(std::uint64_t seed, const std::vector<GradcheckItem>& items) {
  const auto t0 = std::chrono::steady_clock::now();
  GradcheckReport report;
  for (const auto& item : items) {
    GradcheckReport::Entry e;
    e.name = item.name;
    e.threshold = item.threshold;
    try {
      e.max_rel_err = item.run(seed);
      e.passed = std::isfinite(e.max_rel_err) && e.max_rel_err < item.threshold;
    } catch (const std::exception& ex) {
      Graph::current().clear();
      e.max_rel_err = std::numeric_limits<double>::infinity();
      e.error = ex.what();
    }
    report.entries.push_back(std::move(e));
  }
  report.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return report;
}

}  // namespace qfuse
