#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "qfuse/layers.hpp"
#include "qfuse/quaternion.hpp"
#include "qfuse/tensor.hpp"

namespace qfuse {

// How the reduced image and depth features are mixed inside a DAE block.
enum class MixingKind {
  quaternion,  // Hamilton-product layer on the (r, i, 0, 0) packing
  concat,      // plain 1x1 conv over the 2*hidden concatenation
  mlp,         // real dense 1x1 conv over the full 4*hidden packing
};

enum class AxisAssignment { lidar_on_i, lidar_on_r };

/// Which quaternion slot receives each modality.
struct PackRule {
  std::size_t image_slot;
  std::size_t lidar_slot;
};

PackRule axis_assignment(AxisAssignment variant);

/// Packs reduced image and depth features into [4, hidden, H, W] with zeros on
/// the two unused axes.
QuaternionTensor pack_quaternion(const Tensor& image_hat, const Tensor& depth_hat, AxisAssignment variant);

/// Edge-replicate padding (bottom/right) to the target aspect ratio followed by
/// bilinear resize to (h, w).
Tensor align_spatial(const Tensor& x, std::size_t h, std::size_t w);

struct DaeConfig {
  std::size_t image_channels = 16;
  std::size_t depth_channels = 1;
  std::size_t hidden = 8;
  MixingKind mixing = MixingKind::quaternion;
  AxisAssignment axis = AxisAssignment::lidar_on_i;
  SupraInit supra{};
};

struct DAEBlock {
  DaeConfig config;
  Conv1x1Layer g1;  // image -> hidden
  Conv1x1Layer g2;  // depth -> hidden
  std::optional<QuaternionLinear> qua_fa;
  Conv1x1Layer mix;       // concat / mlp variants
  Conv1x1Layer up_img;    // hidden -> image channels, zero-initialised
  Conv1x1Layer up_depth;  // hidden -> depth channels, zero-initialised

  static DAEBlock create(const DaeConfig& config, std::uint64_t seed);
  std::size_t mixing_weight_count() const;
  void collect(const std::string& prefix, NamedParams& out) const;
};

struct DaeOutput {
  Tensor enhanced;     // [C_s, H_s, W_s]
  Tensor depth_state;  // [C'_s, H_s, W_s]
};

DaeOutput dae_forward(const DAEBlock& block, const Tensor& image_features, const Tensor& depth_prev);

struct GaeConfig {
  std::size_t query_channels = 64;
  std::size_t geo_channels = 64;
  std::size_t hidden = 128;
  bool quaternion = false;
  SupraInit supra{};
};

struct GAEBlock {
  GaeConfig config;
  Conv1x1Layer proj;  // concat(query, geo) -> hidden
  // Quaternion variant: query and geo reduced separately, then mixed.
  Conv1x1Layer proj_query, proj_geo;
  std::optional<QuaternionLinear> qlayer;
  Tensor w_t;        // [hidden, hidden] gate transform
  Conv1x1Layer up;   // hidden -> query channels, zero-initialised

  static GAEBlock create(const GaeConfig& config, std::uint64_t seed);
  void collect(const std::string& prefix, NamedParams& out) const;
};

struct GaeOutput {
  Tensor query;      // [C_q, H_b, W_b]
  Tensor geo_state;  // [hidden, H_b, W_b]
  Tensor gate;       // [hidden]
};

GaeOutput gae_forward(const GAEBlock& block, const Tensor& query, const Tensor& geo_prev);

enum class FusionMode { camera_only, progressive, input_summation, deep_summation, separate };

const char* to_string(FusionMode mode);
FusionMode fusion_mode_from_string(const std::string& s);
const char* to_string(AxisAssignment axis);
AxisAssignment axis_from_string(const std::string& s);

struct ChainConfig {
  FusionMode mode = FusionMode::progressive;
  bool dae = true;
  bool gae_enc = true;
  bool gae_dec = true;
  std::size_t image_channels = 3;
  std::vector<std::size_t> stage_channels{16, 32, 64};
  std::size_t depth_channels = 1;
  std::size_t query_channels = 64;
  std::size_t bev_channels = 3;
  std::size_t encoder_layers = 2;
  std::size_t decoder_layers = 1;
  std::size_t dae_hidden = 8;
  std::size_t gae_hidden = 128;
  // Stages (0-based) whose DAE mixes with the quaternion layer; the rest use `fallback_mixing`.
  std::vector<bool> qua_fa_stages{true, false, false};
  MixingKind fallback_mixing = MixingKind::concat;
  AxisAssignment axis = AxisAssignment::lidar_on_i;
  bool gae_quaternion = false;
  SupraInit supra{};
};

/// The per-stage integrators and the LiDAR state they thread through the
/// detector. The detector calls the hooks in forward order; the chain decides
/// from its mode which LiDAR tensor each hook consumes.
class IntegratorChain {
 public:
  struct State {
    std::vector<Tensor> raw_depth;    // per camera, C_depth^0
    std::vector<Tensor> depth_state;  // per camera, latest C_depth^s
    Tensor raw_bev;
    Tensor bev_embedded;  // C_geo^0
    Tensor geo_state;
    // Every LiDAR tensor handed to a DAE / GAE block, in call order.
    std::vector<Tensor> dae_inputs;
    std::vector<Tensor> gae_inputs;
    std::vector<Tensor> depth_outputs;
  };

  static IntegratorChain create(const ChainConfig& config, std::uint64_t seed);

  const ChainConfig& config() const { return config_; }
  bool has_hooks() const { return config_.mode != FusionMode::camera_only; }

  State begin(std::span<const Tensor> m_depth, const Tensor& m_bev) const;
  Tensor image_input(State& state, std::size_t cam, const Tensor& image) const;
  Tensor backbone_stage(State& state, std::size_t cam, std::size_t stage, const Tensor& features) const;
  Tensor bev_input(State& state, const Tensor& query) const;
  Tensor encoder_layer(State& state, std::size_t layer, const Tensor& query) const;
  Tensor decoder_layer(State& state, std::size_t layer, const Tensor& query) const;
  Tensor head_input(State& state, const Tensor& query) const;

  const std::vector<DAEBlock>& dae_blocks() const { return dae_; }
  const std::vector<GAEBlock>& gae_encoder_blocks() const { return gae_enc_; }
  const std::vector<GAEBlock>& gae_decoder_blocks() const { return gae_dec_; }
  std::vector<DAEBlock>& dae_blocks() { return dae_; }

  void collect(const std::string& prefix, NamedParams& out) const;

  /// One manifest line per block: "<kind> <stage> <hidden> <mixing>".
  std::vector<std::string> manifest() const;

 private:
  Tensor gae_step(State& state, const GAEBlock& block, const Tensor& query) const;

  ChainConfig config_;
  std::vector<DAEBlock> dae_;
  std::vector<GAEBlock> gae_enc_;
  std::vector<GAEBlock> gae_dec_;
  std::optional<Conv1x1Layer> bev_embed_;          // M_BEV -> query channels (GAE input)
  std::optional<Conv1x1Layer> sum_image_embed_;    // input summation, depth -> image channels
  std::optional<Conv1x1Layer> sum_bev_embed_;      // input / deep summation, M_BEV -> query channels
  std::optional<Conv1x1Layer> deep_depth_embed_;   // deep summation, depth -> last-stage channels
};

/// Runs the chain over precomputed per-stage features (not interleaved with a
/// backbone): image stages first, then the BEV states for each encoder and
/// decoder layer.
struct ChainOutput {
  std::vector<Tensor> enhanced_stages;
  std::vector<Tensor> bev_layers;
  IntegratorChain::State state;
};

ChainOutput chain_forward(const IntegratorChain& chain, std::span<const Tensor> stage_features, const Tensor& m_depth,
                          const Tensor& m_bev, std::span<const Tensor> bev_states);

}  // namespace qfuse
