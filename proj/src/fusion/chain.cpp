#include <sstream>

#include "qfuse/errors.hpp"
#include "qfuse/fusion.hpp"
#include "qfuse/ops.hpp"
#include "qfuse/rng.hpp"

namespace qfuse {

const char* to_string(FusionMode mode) {
  switch (mode) {
    case FusionMode::camera_only:
      return "camera_only";
    case FusionMode::progressive:
      return "progressive";
    case FusionMode::input_summation:
      return "input_summation";
    case FusionMode::deep_summation:
      return "deep_summation";
    case FusionMode::separate:
      return "separate";
  }
  return "?";
}

FusionMode fusion_mode_from_string(const std::string& s) {
  for (auto m : {FusionMode::camera_only, FusionMode::progressive, FusionMode::input_summation,
                 FusionMode::deep_summation, FusionMode::separate}) {
    if (s == to_string(m)) return m;
  }
  throw ConfigError("unknown fusion mode '" + s +
                    "' (expected camera_only|progressive|input_summation|deep_summation|separate)");
}

const char* to_string(AxisAssignment axis) {
  return axis == AxisAssignment::lidar_on_i ? "lidar_on_i" : "lidar_on_r";
}

AxisAssignment axis_from_string(const std::string& s) {
  if (s == "lidar_on_i") return AxisAssignment::lidar_on_i;
  if (s == "lidar_on_r") return AxisAssignment::lidar_on_r;
  throw ConfigError("unknown quaternion axis '" + s + "' (expected lidar_on_i|lidar_on_r)");
}

namespace {

const char* mixing_name(MixingKind k) {
  switch (k) {
    case MixingKind::quaternion:
      return "quaternion";
    case MixingKind::concat:
      return "concat";
    case MixingKind::mlp:
      return "mlp";
  }
  return "?";
}

bool per_stage_blocks(FusionMode m) { return m == FusionMode::progressive || m == FusionMode::separate; }

}  // namespace

IntegratorChain IntegratorChain::create(const ChainConfig& config, std::uint64_t seed) {
  if (config.stage_channels.empty()) throw ConfigError("integrator chain: no backbone stages");
  if (config.qua_fa_stages.size() != config.stage_channels.size()) {
    throw ConfigError("integrator chain: qua_fa_stages must have one flag per backbone stage");
  }
  IntegratorChain chain;
  chain.config_ = config;
  const bool blocks = per_stage_blocks(config.mode);

  if (blocks && config.dae) {
    for (std::size_t s = 0; s < config.stage_channels.size(); ++s) {
      DaeConfig dc;
      dc.image_channels = config.stage_channels[s];
      dc.depth_channels = config.depth_channels;
      dc.hidden = config.dae_hidden;
      dc.mixing = config.qua_fa_stages[s] ? MixingKind::quaternion : config.fallback_mixing;
      dc.axis = config.axis;
      dc.supra = config.supra;
      chain.dae_.push_back(DAEBlock::create(dc, derive_seed(seed, "dae" + std::to_string(s))));
    }
  }
  if (blocks && (config.gae_enc || config.gae_dec)) {
    chain.bev_embed_ = Conv1x1Layer::uniform(config.bev_channels, config.query_channels, derive_seed(seed, "bev_embed"));
    // In progressive mode only the first block sees the embedded map; later
    // blocks consume the previous block's hidden-width state.
    bool first = true;
    auto geo_in = [&]() {
      const std::size_t c = (config.mode == FusionMode::separate || first) ? config.query_channels : config.gae_hidden;
      first = false;
      return c;
    };
    auto make = [&](const std::string& tag) {
      GaeConfig gc;
      gc.query_channels = config.query_channels;
      gc.geo_channels = geo_in();
      gc.hidden = config.gae_hidden;
      gc.quaternion = config.gae_quaternion;
      gc.supra = config.supra;
      return GAEBlock::create(gc, derive_seed(seed, tag));
    };
    if (config.gae_enc) {
      for (std::size_t l = 0; l < config.encoder_layers; ++l) chain.gae_enc_.push_back(make("gae_enc" + std::to_string(l)));
    }
    if (config.gae_dec) {
      for (std::size_t l = 0; l < config.decoder_layers; ++l) chain.gae_dec_.push_back(make("gae_dec" + std::to_string(l)));
    }
  }
  if (config.mode == FusionMode::input_summation) {
    chain.sum_image_embed_ = Conv1x1Layer::zero(config.depth_channels, config.image_channels);
    chain.sum_bev_embed_ = Conv1x1Layer::zero(config.bev_channels, config.query_channels);
  }
  if (config.mode == FusionMode::deep_summation) {
    chain.deep_depth_embed_ = Conv1x1Layer::zero(config.depth_channels, config.stage_channels.back());
    chain.sum_bev_embed_ = Conv1x1Layer::zero(config.bev_channels, config.query_channels);
  }
  return chain;
}

IntegratorChain::State IntegratorChain::begin(std::span<const Tensor> m_depth, const Tensor& m_bev) const {
  State st;
  st.raw_depth.assign(m_depth.begin(), m_depth.end());
  st.depth_state = st.raw_depth;
  st.raw_bev = m_bev;
  if (bev_embed_) {
    st.bev_embedded = (*bev_embed_)(m_bev);
    st.geo_state = st.bev_embedded;
  }
  return st;
}

Tensor IntegratorChain::image_input(State& state, std::size_t cam, const Tensor& image) const {
  if (!sum_image_embed_) return image;
  const Tensor depth = align_spatial(state.raw_depth.at(cam), image.dim(1), image.dim(2));
  return add(image, (*sum_image_embed_)(depth));
}

Tensor IntegratorChain::backbone_stage(State& state, std::size_t cam, std::size_t stage, const Tensor& features) const {
  if (config_.mode == FusionMode::deep_summation && stage + 1 == config_.stage_channels.size()) {
    const Tensor depth = align_spatial(state.raw_depth.at(cam), features.dim(1), features.dim(2));
    return add(features, (*deep_depth_embed_)(depth));
  }
  if (dae_.empty()) return features;
  const Tensor& prev = config_.mode == FusionMode::progressive ? state.depth_state.at(cam) : state.raw_depth.at(cam);
  state.dae_inputs.push_back(prev);
  DaeOutput out = dae_forward(dae_.at(stage), features, prev);
  state.depth_outputs.push_back(out.depth_state);
  if (config_.mode == FusionMode::progressive) state.depth_state.at(cam) = out.depth_state;
  return out.enhanced;
}

Tensor IntegratorChain::bev_input(State& state, const Tensor& query) const {
  if (config_.mode != FusionMode::input_summation) return query;
  return add(query, (*sum_bev_embed_)(state.raw_bev));
}

Tensor IntegratorChain::gae_step(State& state, const GAEBlock& block, const Tensor& query) const {
  const Tensor& prev = config_.mode == FusionMode::progressive ? state.geo_state : state.bev_embedded;
  state.gae_inputs.push_back(prev);
  GaeOutput out = gae_forward(block, query, prev);
  if (config_.mode == FusionMode::progressive) state.geo_state = out.geo_state;
  return out.query;
}

Tensor IntegratorChain::encoder_layer(State& state, std::size_t layer, const Tensor& query) const {
  if (gae_enc_.empty()) return query;
  return gae_step(state, gae_enc_.at(layer), query);
}

Tensor IntegratorChain::decoder_layer(State& state, std::size_t layer, const Tensor& query) const {
  if (gae_dec_.empty()) return query;
  return gae_step(state, gae_dec_.at(layer), query);
}

Tensor IntegratorChain::head_input(State& state, const Tensor& query) const {
  if (config_.mode != FusionMode::deep_summation) return query;
  return add(query, (*sum_bev_embed_)(state.raw_bev));
}

void IntegratorChain::collect(const std::string& prefix, NamedParams& out) const {
  for (std::size_t s = 0; s < dae_.size(); ++s) dae_[s].collect(prefix + ".dae" + std::to_string(s), out);
  for (std::size_t l = 0; l < gae_enc_.size(); ++l) gae_enc_[l].collect(prefix + ".gae_enc" + std::to_string(l), out);
  for (std::size_t l = 0; l < gae_dec_.size(); ++l) gae_dec_[l].collect(prefix + ".gae_dec" + std::to_string(l), out);
  if (bev_embed_) bev_embed_->collect(prefix + ".bev_embed", out);
  if (sum_image_embed_) sum_image_embed_->collect(prefix + ".sum_image_embed", out);
  if (sum_bev_embed_) sum_bev_embed_->collect(prefix + ".sum_bev_embed", out);
  if (deep_depth_embed_) deep_depth_embed_->collect(prefix + ".deep_depth_embed", out);
}

std::vector<std::string> IntegratorChain::manifest() const {
  std::vector<std::string> lines;
  for (std::size_t s = 0; s < dae_.size(); ++s) {
    std::ostringstream os;
    os << "dae " << s << ' ' << dae_[s].config.hidden << ' ' << mixing_name(dae_[s].config.mixing);
    lines.push_back(os.str());
  }
  auto gae_line = [&](const char* kind, std::size_t l, const GAEBlock& b) {
    std::ostringstream os;
    os << kind << ' ' << l << ' ' << b.config.hidden << ' ' << (b.config.quaternion ? "quaternion" : "concat");
    lines.push_back(os.str());
  };
  for (std::size_t l = 0; l < gae_enc_.size(); ++l) gae_line("gae_enc", l, gae_enc_[l]);
  for (std::size_t l = 0; l < gae_dec_.size(); ++l) gae_line("gae_dec", l, gae_dec_[l]);
  return lines;
}

ChainOutput chain_forward(const IntegratorChain& chain, std::span<const Tensor> stage_features, const Tensor& m_depth,
                          const Tensor& m_bev, std::span<const Tensor> bev_states) {
  const auto& cfg = chain.config();
  if (stage_features.size() != cfg.stage_channels.size()) {
    throw ConfigError("chain_forward: expected " + std::to_string(cfg.stage_channels.size()) + " stage features");
  }
  if (bev_states.size() != cfg.encoder_layers + cfg.decoder_layers) {
    throw ConfigError("chain_forward: expected one BEV state per encoder and decoder layer");
  }
  ChainOutput out;
  const Tensor depths[1] = {m_depth};
  out.state = chain.begin(depths, m_bev);
  for (std::size_t s = 0; s < stage_features.size(); ++s) {
    out.enhanced_stages.push_back(chain.backbone_stage(out.state, 0, s, stage_features[s]));
  }
  for (std::size_t l = 0; l < cfg.encoder_layers; ++l) {
    out.bev_layers.push_back(chain.encoder_layer(out.state, l, bev_states[l]));
  }
  for (std::size_t l = 0; l < cfg.decoder_layers; ++l) {
    out.bev_layers.push_back(chain.decoder_layer(out.state, l, bev_states[cfg.encoder_layers + l]));
  }
  return out;
}

}  // namespace qfuse
