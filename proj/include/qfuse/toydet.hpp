#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <vector>

#include "qfuse/fusion.hpp"
#include "qfuse/layers.hpp"
#include "qfuse/lidar.hpp"
#include "qfuse/ops.hpp"
#include "qfuse/synth.hpp"

namespace qfuse {

/// Sampling grid mapping each BEV cell centre (at ground height) to a
/// continuous position in a feature map of the given size. Cells behind the
/// camera or projecting outside the image are invalid.
SampleGrid lift_grid(const CameraModel& cam, std::size_t feat_h, std::size_t feat_w, const VoxelSpec& bev);

/// Bilinear lift of image features onto the BEV plane: [C, Hf, Wf] -> [C, bins_x, bins_y].
Tensor geometric_lift(const Tensor& features, const CameraModel& cam, const VoxelSpec& bev);

struct DetectorConfig {
  std::size_t image_h = 48;
  std::size_t image_w = 96;
  std::vector<std::size_t> backbone_channels{16, 32, 64};
  std::size_t query_channels = 64;
  std::size_t encoder_layers = 2;
  std::size_t decoder_layers = 1;
  VoxelSpec bev{{-24.0, 24.0}, {-24.0, 24.0}, {-1.0, 4.0}, 1.0, 1.0, 5.0};
  ChainConfig chain{};
  bool depth_aux = false;
  double depth_scale = 50.0;      // metres mapped to 1.0 in the depth input
  double heat_bias_init = -2.19;  // sigmoid prior of roughly 0.1
  double query_init = 0.1;
};

/// Model inputs after normalisation; LiDAR tensors are all-zero when absent.
struct DetectorInputs {
  std::vector<Tensor> images;  // [3, H, W] per camera
  std::vector<Tensor> depths;  // [1, H, W] per camera, depth / depth_scale
  Tensor bev;                  // [C_bev, G, G]
  std::vector<Tensor> depth_targets;  // optional aux targets at stage-1 resolution
};

struct DetectorOutput {
  Tensor logits;   // [1, G, G]
  Tensor heatmap;  // sigmoid(logits)
  Tensor sizes;    // [2, G, G]: log w, log l
  std::vector<Tensor> depth_preds;
  IntegratorChain::State chain_state;
};

class ToyDetector {
 public:
  ToyDetector(const DetectorConfig& config, std::vector<CameraModel> cameras, std::uint64_t seed);

  DetectorOutput forward(const DetectorInputs& inputs) const;

  const DetectorConfig& config() const { return config_; }
  const IntegratorChain& chain() const { return chain_; }
  IntegratorChain& chain() { return chain_; }
  std::size_t grid_size() const { return config_.bev.bins_x(); }

  NamedParams named_parameters() const;
  std::vector<Tensor> parameters() const;

 private:
  DetectorConfig config_;
  std::vector<CameraModel> cameras_;
  std::vector<Conv3x3Layer> backbone_;
  std::vector<SampleGrid> lift_grids_;  // per camera
  Tensor bev_query_;
  std::vector<Conv1x1Layer> lift_proj_;
  std::vector<Conv3x3Layer> encoder_;
  std::vector<Conv3x3Layer> decoder_;
  Conv3x3Layer heat_head_;
  Conv1x1Layer size_head_;
  std::optional<Conv1x1Layer> depth_head_;
  IntegratorChain chain_;
};

/// Normalises a scene's sensor data for the detector. With lidar_present
/// false the LiDAR products are replaced by zero_lidar().
DetectorInputs prepare_inputs(const Scene& scene, const DetectorConfig& config, bool lidar_present);

struct DetectionTargets {
  Tensor heatmap;  // [1, G, G], 1 exactly at box-centre cells
  Tensor sizes;    // [2, G, G]
  Tensor mask;     // [G, G], 1 at positive cells
  std::size_t positives = 0;
};

DetectionTargets build_targets(const SceneGT& gt, const VoxelSpec& bev);

struct LossWeights {
  double focal = 1.0;
  double size = 0.5;
  double depth = 1.0;
};

/// Penalty-reduced focal loss (alpha 2, beta 4) plus L1 on log-sizes at
/// positive cells; adds the auxiliary depth term when predictions exist.
Tensor detection_loss(const DetectorOutput& pred, const DetectionTargets& targets, const DetectorInputs* inputs = nullptr,
                      const LossWeights& weights = {});

struct Detection {
  double x = 0.0, y = 0.0, score = 0.0;
};

/// 3x3 local maxima above `threshold`, converted to ego-frame cell centres.
std::vector<Detection> extract_peaks(const Tensor& heatmap, const VoxelSpec& bev, double threshold = 0.1);

/// Centre-distance AP for one scene.
double toy_ap(const std::vector<Detection>& preds, const SceneGT& gt, double match_radius = 2.0);

/// Pooled AP over a set of scenes (detections ranked globally, matched within their scene).
double toy_ap(const std::vector<std::vector<Detection>>& preds, const std::vector<SceneGT>& gts,
              double match_radius = 2.0);

}  // namespace qfuse
