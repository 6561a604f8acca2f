#include <cmath>
#include <random>

#include "qfuse/errors.hpp"
#include "qfuse/fusion.hpp"
#include "qfuse/ops.hpp"
#include "qfuse/rng.hpp"

namespace qfuse {

PackRule axis_assignment(AxisAssignment variant) {
  switch (variant) {
    case AxisAssignment::lidar_on_i:
      return {0, 1};
    case AxisAssignment::lidar_on_r:
      return {1, 0};
  }
  return {0, 1};
}

QuaternionTensor pack_quaternion(const Tensor& image_hat, const Tensor& depth_hat, AxisAssignment variant) {
  if (image_hat.shape() != depth_hat.shape()) {
    throw DimensionError("pack_quaternion: " + shape_str(image_hat.shape()) + " vs " + shape_str(depth_hat.shape()));
  }
  const PackRule rule = axis_assignment(variant);
  const Tensor zero = Tensor::zeros(image_hat.shape());
  Tensor slots[4] = {zero, zero, zero, zero};
  slots[rule.image_slot] = image_hat;
  slots[rule.lidar_slot] = depth_hat;
  return QuaternionTensor::from_components(slots[0], slots[1], slots[2], slots[3]);
}

Tensor align_spatial(const Tensor& x, std::size_t h, std::size_t w) {
  if (x.rank() != 3) throw DimensionError("align_spatial expects [C,H,W], got " + shape_str(x.shape()));
  const std::size_t h0 = x.dim(1), w0 = x.dim(2);
  if (h0 == h && w0 == w) return x;
  std::size_t hp = h0, wp = w0;
  if (h0 * w >= w0 * h) {
    wp = (h0 * w + h - 1) / h;
  } else {
    hp = (w0 * h + w - 1) / w;
  }
  const Tensor padded = (hp > h0 || wp > w0) ? pad_edge(x, hp - h0, wp - w0) : x;
  return resize_bilinear(padded, h, w);
}

DAEBlock DAEBlock::create(const DaeConfig& config, std::uint64_t seed) {
  if (config.hidden == 0 || config.image_channels == 0 || config.depth_channels == 0) {
    throw ConfigError("DAE block: channel counts must be positive");
  }
  DAEBlock b;
  b.config = config;
  const std::size_t c = config.hidden;
  b.g1 = Conv1x1Layer::uniform(config.image_channels, c, derive_seed(seed, "g1"));
  b.g2 = Conv1x1Layer::uniform(config.depth_channels, c, derive_seed(seed, "g2"));
  switch (config.mixing) {
    case MixingKind::quaternion:
      b.qua_fa = suprasphere_init(c, c, derive_seed(seed, "qua_fa"), config.supra);
      break;
    case MixingKind::concat:
      b.mix = Conv1x1Layer::uniform(2 * c, 2 * c, derive_seed(seed, "mix"));
      break;
    case MixingKind::mlp:
      b.mix = Conv1x1Layer::uniform(4 * c, 4 * c, derive_seed(seed, "mix"));
      break;
  }
  b.up_img = Conv1x1Layer::zero(c, config.image_channels);
  b.up_depth = Conv1x1Layer::zero(c, config.depth_channels);
  return b;
}

std::size_t DAEBlock::mixing_weight_count() const {
  if (qua_fa) return qua_fa->weight_count();
  return mix.weight.numel();
}

void DAEBlock::collect(const std::string& prefix, NamedParams& out) const {
  g1.collect(prefix + ".g1", out);
  g2.collect(prefix + ".g2", out);
  if (qua_fa) {
    out.emplace_back(prefix + ".qua_fa.w_r", qua_fa->w_r);
    out.emplace_back(prefix + ".qua_fa.w_i", qua_fa->w_i);
    out.emplace_back(prefix + ".qua_fa.w_j", qua_fa->w_j);
    out.emplace_back(prefix + ".qua_fa.w_k", qua_fa->w_k);
    if (qua_fa->bias.defined()) out.emplace_back(prefix + ".qua_fa.bias", qua_fa->bias);
  } else {
    mix.collect(prefix + ".mix", out);
  }
  up_img.collect(prefix + ".up_img", out);
  up_depth.collect(prefix + ".up_depth", out);
}

DaeOutput dae_forward(const DAEBlock& block, const Tensor& image_features, const Tensor& depth_prev) {
  const auto& cfg = block.config;
  if (image_features.rank() != 3 || image_features.dim(0) != cfg.image_channels) {
    throw DimensionError("dae_forward: image features " + shape_str(image_features.shape()) + " vs block expecting " +
                         std::to_string(cfg.image_channels) + " channels");
  }
  if (depth_prev.rank() != 3 || depth_prev.dim(0) != cfg.depth_channels) {
    throw DimensionError("dae_forward: depth state " + shape_str(depth_prev.shape()) + " vs block expecting " +
                         std::to_string(cfg.depth_channels) + " channels");
  }
  const std::size_t h = image_features.dim(1), w = image_features.dim(2), c = cfg.hidden;
  const Tensor depth_aligned = align_spatial(depth_prev, h, w);
  const Tensor image_hat = block.g1(image_features);
  const Tensor depth_hat = block.g2(depth_aligned);

  Tensor out_r, out_i;
  switch (cfg.mixing) {
    case MixingKind::quaternion: {
      const QuaternionTensor q_h = pack_quaternion(image_hat, depth_hat, cfg.axis);
      const QuaternionTensor mixed = split_activation(qlinear_forward(*block.qua_fa, q_h), SplitFn::relu);
      out_r = mixed.component(0);
      out_i = mixed.component(1);
      break;
    }
    case MixingKind::mlp: {
      const QuaternionTensor q_h = pack_quaternion(image_hat, depth_hat, cfg.axis);
      const Tensor mixed = relu(block.mix(reshape(q_h.inner(), {4 * c, h, w})));
      out_r = narrow(mixed, 0, 0, c);
      out_i = narrow(mixed, 0, c, c);
      break;
    }
    case MixingKind::concat: {
      const PackRule rule = axis_assignment(cfg.axis);
      const Tensor joined = rule.image_slot == 0 ? concat({image_hat, depth_hat}, 0) : concat({depth_hat, image_hat}, 0);
      const Tensor mixed = relu(block.mix(joined));
      out_r = narrow(mixed, 0, 0, c);
      out_i = narrow(mixed, 0, c, c);
      break;
    }
  }
  return {add(image_features, block.up_img(out_r)), block.up_depth(out_i)};
}

GAEBlock GAEBlock::create(const GaeConfig& config, std::uint64_t seed) {
  if (config.hidden == 0 || config.query_channels == 0 || config.geo_channels == 0) {
    throw ConfigError("GAE block: channel counts must be positive");
  }
  GAEBlock b;
  b.config = config;
  const std::size_t c = config.hidden;
  if (config.quaternion) {
    b.proj_query = Conv1x1Layer::uniform(config.query_channels, c, derive_seed(seed, "proj_query"));
    b.proj_geo = Conv1x1Layer::uniform(config.geo_channels, c, derive_seed(seed, "proj_geo"));
    b.qlayer = suprasphere_init(c, c, derive_seed(seed, "qlayer"), config.supra);
  } else {
    b.proj = Conv1x1Layer::uniform(config.query_channels + config.geo_channels, c, derive_seed(seed, "proj"));
  }
  Rng rng(derive_seed(seed, "w_t"));
  const double bound = 1.0 / std::sqrt(static_cast<double>(c));
  std::uniform_real_distribution<double> dist(-bound, bound);
  std::vector<double> wt(c * c);
  for (double& v : wt) v = dist(rng);
  b.w_t = Tensor::from({c, c}, std::move(wt), true);
  b.up = Conv1x1Layer::zero(c, config.query_channels);
  return b;
}

void GAEBlock::collect(const std::string& prefix, NamedParams& out) const {
  if (qlayer) {
    proj_query.collect(prefix + ".proj_query", out);
    proj_geo.collect(prefix + ".proj_geo", out);
    out.emplace_back(prefix + ".qlayer.w_r", qlayer->w_r);
    out.emplace_back(prefix + ".qlayer.w_i", qlayer->w_i);
    out.emplace_back(prefix + ".qlayer.w_j", qlayer->w_j);
    out.emplace_back(prefix + ".qlayer.w_k", qlayer->w_k);
    if (qlayer->bias.defined()) out.emplace_back(prefix + ".qlayer.bias", qlayer->bias);
  } else {
    proj.collect(prefix + ".proj", out);
  }
  out.emplace_back(prefix + ".w_t", w_t);
  up.collect(prefix + ".up", out);
}

GaeOutput gae_forward(const GAEBlock& block, const Tensor& query, const Tensor& geo_prev) {
  const auto& cfg = block.config;
  if (query.rank() != 3 || geo_prev.rank() != 3 || query.dim(1) != geo_prev.dim(1) || query.dim(2) != geo_prev.dim(2)) {
    throw DimensionError("gae_forward: spatial mismatch between query " + shape_str(query.shape()) + " and geometry " +
                         shape_str(geo_prev.shape()));
  }
  if (query.dim(0) != cfg.query_channels || geo_prev.dim(0) != cfg.geo_channels) {
    throw DimensionError("gae_forward: channels " + shape_str(query.shape()) + " / " + shape_str(geo_prev.shape()) +
                         " do not match block configuration");
  }
  Tensor aligned;
  if (block.qlayer) {
    const QuaternionTensor packed =
        pack_quaternion(block.proj_query(query), block.proj_geo(geo_prev), AxisAssignment::lidar_on_i);
    aligned = split_activation(qlinear_forward(*block.qlayer, packed), SplitFn::relu).component(0);
  } else {
    aligned = relu(block.proj(concat({query, geo_prev}, 0)));
  }
  const Tensor gate = sigmoid(matvec(block.w_t, global_avg_pool(aligned)));
  const Tensor geo = mul_channel(aligned, gate);
  return {add(query, block.up(geo)), geo, gate};
}

}  // namespace qfuse
