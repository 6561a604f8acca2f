#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "qfuse/fusion.hpp"
#include "qfuse/toydet.hpp"

namespace qfuse {

enum class RunMode { train, eval, ablate, gradcheck, datagen };

const char* to_string(RunMode mode);
RunMode run_mode_from_string(const std::string& s);

/// Which backbone stages mix with the quaternion layer: none, the first k, or all.
struct QuaFaDepth {
  std::size_t stages = 1;  // 0 = off; values >= the stage count mean all
  bool all = false;
};

std::string to_string(const QuaFaDepth& q);
QuaFaDepth qua_fa_from_string(const std::string& s);

/// Everything a run needs. Defaults give the full configuration: progressive
/// chain, all three integrator kinds, quaternion mixing on the first stage,
/// LiDAR on the i axis, hidden widths 8 / 128.
struct RunConfig {
  // [run]
  RunMode mode = RunMode::train;
  std::vector<std::uint64_t> seeds{0};
  std::size_t steps = 1000;
  std::size_t train_scenes = 128;
  std::size_t eval_scenes = 64;
  bool lidar_present = true;
  std::size_t log_every = 100;
  std::size_t loss_window = 16;  // training-loss average reported in rows
  std::string out = "runs";      // not part of the hash
  std::size_t threads = 0;       // 0 = hardware concurrency; not part of the hash
  std::string checkpoint;        // eval: directory written by train

  // [fusion]
  FusionMode fusion_mode = FusionMode::progressive;
  bool dae = true;
  bool gae_enc = true;
  bool gae_dec = true;
  QuaFaDepth qua_fa{};
  MixingKind fallback_mixing = MixingKind::concat;
  AxisAssignment axis = AxisAssignment::lidar_on_i;
  std::size_t dae_hidden = 8;
  std::size_t gae_hidden = 128;
  bool gae_quaternion = false;
  double supra_gain = 1.0;

  // [model]
  std::size_t image_h = 48;
  std::size_t image_w = 96;
  std::vector<std::size_t> backbone{16, 32, 64};
  std::size_t query_channels = 64;
  std::size_t grid = 48;
  double bev_range = 24.0;  // grid covers [-range, range] in x and y
  std::size_t encoder_layers = 2;
  std::size_t decoder_layers = 1;
  bool depth_aux = false;

  // [data]
  std::size_t cameras = 1;
  std::size_t boxes_min = 1;
  std::size_t boxes_max = 4;
  double camera_hfov = 90.0;
  double camera_height = 1.6;
  std::size_t lidar_azimuth = 360;
  std::size_t lidar_elevation = 16;
  double lidar_dropout = 0.05;

  // [optim]
  double lr = 1e-2;
  double momentum = 0.9;
  double clip = 5.0;

  // [eval]
  double match_radius = 2.0;
  double peak_threshold = 0.1;
};

/// Sets one field from its textual value. `key` is either "section.name" or
/// a bare name. Unknown keys raise ConfigError naming the closest valid key.
void set_config_value(RunConfig& cfg, const std::string& key, const std::string& value);
std::string get_config_value(const RunConfig& cfg, const std::string& key);

/// Fully qualified keys ("section.name") in declaration order.
std::vector<std::string> config_keys();

/// Parses "key = value" lines with '#' comments and "[section]" headers.
void apply_config_text(RunConfig& cfg, const std::string& text, const std::string& origin = "<config>");
RunConfig load_config_file(const std::filesystem::path& path);

/// Canonical "section.key = value" dump of every field, sorted by key.
std::string config_to_text(const RunConfig& cfg);

/// FNV-1a over the sorted semantic fields (out, threads, checkpoint and mode
/// excluded), as 16 hex digits.
std::string config_hash(const RunConfig& cfg);

/// Throws ConfigError on inconsistent settings.
void validate(const RunConfig& cfg);

DetectorConfig detector_config(const RunConfig& cfg);
std::vector<CameraModel> camera_rig(const RunConfig& cfg);

}  // namespace qfuse
