#include <cmath>
#include <random>

#include "qfuse/errors.hpp"
#include "qfuse/rng.hpp"
#include "qfuse/toydet.hpp"

namespace qfuse {

SampleGrid lift_grid(const CameraModel& cam, std::size_t feat_h, std::size_t feat_w, const VoxelSpec& bev) {
  cam.validate();
  SampleGrid grid;
  grid.out_h = bev.bins_x();
  grid.out_w = bev.bins_y();
  const std::size_t cells = grid.out_h * grid.out_w;
  grid.u.assign(cells, 0.0);
  grid.v.assign(cells, 0.0);
  grid.valid.assign(cells, 0);
  const double w = static_cast<double>(cam.width), h = static_cast<double>(cam.height);
  for (std::size_t ix = 0; ix < grid.out_h; ++ix) {
    const double x = bev.x.min + (static_cast<double>(ix) + 0.5) * bev.dx;
    for (std::size_t iy = 0; iy < grid.out_w; ++iy) {
      const double y = bev.y.min + (static_cast<double>(iy) + 0.5) * bev.dy;
      const auto p = cam.ego_to_cam(x, y, 0.0);
      if (!(p[2] > kMinCameraDepth)) continue;
      const double u = cam.fx * p[0] / p[2] + cam.cx;
      const double v = cam.fy * p[1] / p[2] + cam.cy;
      if (u < -0.5 || v < -0.5 || u >= w - 0.5 || v >= h - 0.5) continue;
      const std::size_t cell = ix * grid.out_w + iy;
      // Image pixel centres -> feature pixel centres (align-corners=false).
      grid.u[cell] = (u + 0.5) * static_cast<double>(feat_w) / w - 0.5;
      grid.v[cell] = (v + 0.5) * static_cast<double>(feat_h) / h - 0.5;
      grid.valid[cell] = 1;
    }
  }
  return grid;
}

Tensor geometric_lift(const Tensor& features, const CameraModel& cam, const VoxelSpec& bev) {
  if (features.rank() != 3) throw DimensionError("geometric_lift expects [C,H,W], got " + shape_str(features.shape()));
  return grid_sample(features, lift_grid(cam, features.dim(1), features.dim(2), bev));
}

namespace {

std::size_t stage_extent(std::size_t n, std::size_t stages) {
  for (std::size_t s = 0; s < stages; ++s) n = (n - 1) / 2 + 1;
  return n;
}

}  // namespace

ToyDetector::ToyDetector(const DetectorConfig& config, std::vector<CameraModel> cameras, std::uint64_t seed)
    : config_(config), cameras_(std::move(cameras)) {
  if (cameras_.empty()) throw ConfigError("detector needs at least one camera");
  if (config_.backbone_channels.empty()) throw ConfigError("detector needs at least one backbone stage");
  config_.bev.validate();
  ChainConfig& cc = config_.chain;
  cc.image_channels = 3;
  cc.stage_channels = config_.backbone_channels;
  cc.depth_channels = 1;
  cc.query_channels = config_.query_channels;
  cc.bev_channels = config_.bev.channels();
  cc.encoder_layers = config_.encoder_layers;
  cc.decoder_layers = config_.decoder_layers;
  if (cc.qua_fa_stages.size() != cc.stage_channels.size()) cc.qua_fa_stages.resize(cc.stage_channels.size(), false);

  std::size_t c_in = 3;
  for (std::size_t s = 0; s < config_.backbone_channels.size(); ++s) {
    const std::size_t c = config_.backbone_channels[s];
    backbone_.push_back(Conv3x3Layer::uniform(c_in, c, 2, derive_seed(seed, "backbone" + std::to_string(s))));
    c_in = c;
  }
  const std::size_t stages = config_.backbone_channels.size();
  const std::size_t fh = stage_extent(config_.image_h, stages), fw = stage_extent(config_.image_w, stages);
  for (const auto& cam : cameras_) lift_grids_.push_back(lift_grid(cam, fh, fw, config_.bev));

  const std::size_t g_x = config_.bev.bins_x(), g_y = config_.bev.bins_y(), cq = config_.query_channels;
  {
    Rng rng(derive_seed(seed, "bev_query"));
    std::uniform_real_distribution<double> dist(-config_.query_init, config_.query_init);
    std::vector<double> q(cq * g_x * g_y);
    for (double& v : q) v = dist(rng);
    bev_query_ = Tensor::from({cq, g_x, g_y}, std::move(q), true);
  }
  for (std::size_t l = 0; l < config_.encoder_layers; ++l) {
    lift_proj_.push_back(Conv1x1Layer::uniform(c_in, cq, derive_seed(seed, "lift_proj" + std::to_string(l))));
    encoder_.push_back(Conv3x3Layer::uniform(cq, cq, 1, derive_seed(seed, "encoder" + std::to_string(l))));
  }
  for (std::size_t l = 0; l < config_.decoder_layers; ++l) {
    decoder_.push_back(Conv3x3Layer::uniform(cq, cq, 1, derive_seed(seed, "decoder" + std::to_string(l))));
  }
  heat_head_ = Conv3x3Layer::uniform(cq, 1, 1, derive_seed(seed, "heat_head"));
  heat_head_.bias.mutable_data()[0] = config_.heat_bias_init;
  size_head_ = Conv1x1Layer::uniform(cq, 2, derive_seed(seed, "size_head"));
  if (config_.depth_aux) {
    depth_head_ = Conv1x1Layer::uniform(config_.backbone_channels.front(), 1, derive_seed(seed, "depth_head"));
  }
  chain_ = IntegratorChain::create(cc, derive_seed(seed, "chain"));
}

DetectorOutput ToyDetector::forward(const DetectorInputs& in) const {
  if (in.images.size() != cameras_.size() || in.depths.size() != cameras_.size()) {
    throw ConfigError("detector: expected one image and one depth map per camera (" + std::to_string(cameras_.size()) +
                      ")");
  }
  DetectorOutput out;
  out.chain_state = chain_.begin(in.depths, in.bev);
  auto& st = out.chain_state;

  Tensor lifted;
  for (std::size_t cam = 0; cam < cameras_.size(); ++cam) {
    const Tensor& image = in.images[cam];
    if (image.rank() != 3 || image.dim(0) != 3 || image.dim(1) != config_.image_h || image.dim(2) != config_.image_w) {
      throw DimensionError("detector: image " + shape_str(image.shape()) + " does not match configured size");
    }
    Tensor x = chain_.image_input(st, cam, image);
    for (std::size_t s = 0; s < backbone_.size(); ++s) {
      x = relu(backbone_[s](x));
      x = chain_.backbone_stage(st, cam, s, x);
      if (s == 0 && depth_head_) out.depth_preds.push_back((*depth_head_)(x));
    }
    const Tensor view = grid_sample(x, lift_grids_[cam]);
    lifted = lifted.defined() ? add(lifted, view) : view;
  }

  Tensor q = chain_.bev_input(st, bev_query_);
  for (std::size_t l = 0; l < encoder_.size(); ++l) {
    q = relu(encoder_[l](add(q, lift_proj_[l](lifted))));
    q = chain_.encoder_layer(st, l, q);
  }
  for (std::size_t l = 0; l < decoder_.size(); ++l) {
    q = relu(decoder_[l](q));
    q = chain_.decoder_layer(st, l, q);
  }
  q = chain_.head_input(st, q);
  out.logits = heat_head_(q);
  out.heatmap = sigmoid(out.logits);
  out.sizes = size_head_(q);
  return out;
}

NamedParams ToyDetector::named_parameters() const {
  NamedParams p;
  for (std::size_t s = 0; s < backbone_.size(); ++s) backbone_[s].collect("backbone" + std::to_string(s), p);
  p.emplace_back("bev_query", bev_query_);
  for (std::size_t l = 0; l < encoder_.size(); ++l) {
    lift_proj_[l].collect("lift_proj" + std::to_string(l), p);
    encoder_[l].collect("encoder" + std::to_string(l), p);
  }
  for (std::size_t l = 0; l < decoder_.size(); ++l) decoder_[l].collect("decoder" + std::to_string(l), p);
  heat_head_.collect("heat_head", p);
  size_head_.collect("size_head", p);
  if (depth_head_) depth_head_->collect("depth_head", p);
  chain_.collect("chain", p);
  return p;
}

std::vector<Tensor> ToyDetector::parameters() const {
  std::vector<Tensor> out;
  for (auto& [name, t] : named_parameters()) out.push_back(t);
  return out;
}

DetectorInputs prepare_inputs(const Scene& scene, const DetectorConfig& config, bool lidar_present) {
  NoGradGuard no_grad;
  DetectorInputs in;
  const std::size_t h = config.image_h, w = config.image_w;
  for (const auto& img : scene.images) {
    in.images.push_back(img.dim(1) == h && img.dim(2) == w ? img : resize_bilinear(img, h, w));
  }
  BEVMap bev;
  std::vector<DepthMap> depths;
  if (lidar_present) {
    bev = voxelize_bev(scene.cloud, config.bev);
    for (const auto& cam : scene.cameras) depths.push_back(project_depth(scene.cloud, cam, h, w));
  } else {
    auto zero = zero_lidar(config.bev, scene.cameras, h, w);
    bev = std::move(zero.bev);
    depths = std::move(zero.depths);
  }
  for (const auto& d : depths) in.depths.push_back(scale(d.depth, 1.0 / config.depth_scale));

  const std::size_t occ = bev.occupancy_channels();
  const std::size_t plane = config.bev.bins_x() * config.bev.bins_y();
  std::vector<double> g(bev.grid.data().begin(), bev.grid.data().end());
  for (std::size_t i = 0; i < occ * plane; ++i) g[i] = std::log1p(g[i]);
  for (std::size_t i = 0; i < plane; ++i) g[occ * plane + i] *= 0.5;  // max-z, metres -> roughly unit scale
  in.bev = Tensor::from(bev.grid.shape(), std::move(g));

  if (config.depth_aux) {
    const std::size_t sh = (h - 1) / 2 + 1, sw = (w - 1) / 2 + 1;
    for (const auto& d : in.depths) {
      std::vector<double> t(sh * sw);
      for (std::size_t y = 0; y < sh; ++y) {
        for (std::size_t x = 0; x < sw; ++x) t[y * sw + x] = d.data()[(2 * y) * w + 2 * x];
      }
      in.depth_targets.push_back(Tensor::from({1, sh, sw}, std::move(t)));
    }
  }
  return in;
}

}  // namespace qfuse
