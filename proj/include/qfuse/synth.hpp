#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <vector>

#include "qfuse/lidar.hpp"
#include "qfuse/tensor.hpp"

namespace qfuse {

using Vec3 = std::array<double, 3>;

/// Ground-truth box in the ego frame: centre (cx, cy), width w (lateral),
/// length l (along heading), heading yaw.
struct BoxGT {
  double cx = 0.0, cy = 0.0, w = 0.0, l = 0.0, yaw = 0.0;
};

struct SceneGT {
  std::vector<BoxGT> boxes;
};

/// Solid box standing on the ground plane (z in [0, h]).
struct Box3D {
  double cx = 0.0, cy = 0.0, w = 0.0, l = 0.0, h = 0.0, yaw = 0.0;
  std::array<double, 3> albedo{};
};

/// Slab intersection against the yaw-rotated box. Returns the entry distance
/// along a unit-length `dir`; origins inside the box report no hit.
std::optional<double> raycast_box(const Vec3& origin, const Vec3& dir, const Box3D& box);

struct LidarRig {
  std::size_t n_azimuth = 360;
  std::size_t n_elevation = 16;
  double elevation_min_deg = -24.0;
  double elevation_max_deg = 2.0;
  double mount_height = 1.8;
  double max_range = 40.0;
  double dropout = 0.05;
  double range_noise = 0.02;
};

struct SceneSpec {
  std::uint64_t seed = 0;
  std::size_t n_boxes_min = 1;
  std::size_t n_boxes_max = 4;
  AxisRange width{1.6, 2.2};
  AxisRange length{3.6, 4.8};
  AxisRange height{1.4, 2.0};
  // Box centres: forward distance range and a half-angle wedge about ego +x.
  AxisRange forward{5.0, 22.0};
  double half_angle_deg = 45.0;
  double min_gap = 0.5;
  std::size_t max_attempts = 1000;
  LidarRig lidar{};
  std::vector<CameraModel> cameras;
};

struct Scene {
  std::vector<Tensor> images;  // one [3, H, W] image per camera, values in [0, 1]
  PointCloud cloud;
  SceneGT gt;
  std::vector<CameraModel> cameras;
  std::vector<Box3D> boxes;
  bool placement_shortfall = false;  // fewer boxes than requested after max_attempts
};

Scene generate_scene(const SceneSpec& spec);

/// Writes image.ppm (plus image<k>.ppm for extra cameras), cloud.qfpc,
/// cam.txt (cam<k>.txt) and gt.csv into `dir`.
void save_scene(const std::filesystem::path& dir, const Scene& scene);
SceneGT read_gt_csv(const std::filesystem::path& path);
void write_ppm(const std::filesystem::path& path, const Tensor& image);

}  // namespace qfuse
