#pragma once

#include <array>
#include <cstddef>
#include <filesystem>
#include <optional>
#include <vector>

#include "qfuse/tensor.hpp"

namespace qfuse {

struct LidarPoint {
  double x = 0.0, y = 0.0, z = 0.0;  // ego frame, metres
  double intensity = 0.0;           // [0, 1]
};

struct PointCloud {
  std::vector<LidarPoint> points;

  std::size_t size() const { return points.size(); }
  bool empty() const { return points.empty(); }
  bool all_finite() const;
};

struct AxisRange {
  double min = 0.0;
  double max = 0.0;
};

struct VoxelSpec {
  AxisRange x{-51.2, 51.2};
  AxisRange y{-51.2, 51.2};
  AxisRange z{-5.0, 3.0};
  double dx = 0.23, dy = 0.23, dz = 8.0;

  void validate() const;
  std::size_t bins_x() const;
  std::size_t bins_y() const;
  std::size_t bins_z() const;
  // One occupancy channel per z slice, then max-z and mean intensity.
  std::size_t channels() const { return bins_z() + 2; }
  bool contains(const LidarPoint& p) const;
};

/// grid: [channels, bins_x, bins_y]. With a single z slice the channels are
/// (occupancy count, max z, mean intensity).
struct BEVMap {
  Tensor grid;
  VoxelSpec spec;

  std::size_t occupancy_channels() const { return spec.bins_z(); }
  double occupancy_sum() const;
};

/// Pinhole camera. `extrinsic` is the top 3x4 block of T_ego_to_cam, row-major;
/// camera frame is x right, y down, z forward.
struct CameraModel {
  double fx = 0.0, fy = 0.0, cx = 0.0, cy = 0.0;
  std::size_t width = 0, height = 0;
  std::array<double, 12> extrinsic{1, 0, 0, 0, 0, 1, 0, 0, 0, 0, 1, 0};

  void validate() const;
  std::array<double, 3> ego_to_cam(double x, double y, double z) const;
  std::array<double, 3> cam_to_ego(double x, double y, double z) const;

  /// Forward-looking camera at `mount_height` above the ego origin, optical
  /// axis along ego +x (ego frame: x forward, y left, z up). `yaw` rotates the
  /// viewing direction about ego z.
  static CameraModel forward_facing(std::size_t width, std::size_t height, double hfov_deg, double mount_height,
                                    double yaw = 0.0);
};

/// depth: [1, H, W]; 0 = no return, otherwise camera-frame metric depth.
struct DepthMap {
  Tensor depth;
  double max_depth = 0.0;
};

constexpr double kMinCameraDepth = 0.1;

BEVMap voxelize_bev(const PointCloud& pc, const VoxelSpec& spec);

DepthMap project_depth(const PointCloud& pc, const CameraModel& cam, std::size_t out_h, std::size_t out_w,
                       double max_depth = 80.0);

/// Pixel (col, row) a camera-frame point lands on at the given raster size,
/// or nothing when it is behind the cutoff or off-raster.
std::optional<std::array<std::size_t, 2>> project_pixel(const CameraModel& cam, const std::array<double, 3>& p_cam,
                                                        std::size_t out_h, std::size_t out_w);

struct ZeroLidar {
  BEVMap bev;
  std::vector<DepthMap> depths;
};

/// All-zero LiDAR products with the shapes the model expects.
ZeroLidar zero_lidar(const VoxelSpec& spec, const std::vector<CameraModel>& cams, std::size_t out_h,
                     std::size_t out_w, double max_depth = 80.0);

// File formats.
void write_point_cloud(const std::filesystem::path& path, const PointCloud& pc);
PointCloud read_point_cloud(const std::filesystem::path& path);
void write_camera(const std::filesystem::path& path, const CameraModel& cam);
CameraModel read_camera(const std::filesystem::path& path);
// 16-bit binary PGM, millimetre quantisation.
void write_depth_pgm(const std::filesystem::path& path, const DepthMap& depth);

}  // namespace qfuse
