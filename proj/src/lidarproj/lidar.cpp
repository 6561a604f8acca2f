#include "qfuse/lidar.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "qfuse/errors.hpp"

namespace qfuse {

namespace {

std::size_t bin_count(const AxisRange& r, double d) {
  // Guard against 48.0/2.0 landing on 24.000000000004.
  return static_cast<std::size_t>(std::ceil((r.max - r.min) / d - 1e-9));
}

std::size_t bin_index(double v, const AxisRange& r, double d, std::size_t bins) {
  const auto idx = static_cast<std::size_t>(std::floor((v - r.min) / d));
  return std::min(idx, bins - 1);
}

}  // namespace

bool PointCloud::all_finite() const {
  return std::all_of(points.begin(), points.end(), [](const LidarPoint& p) {
    return std::isfinite(p.x) && std::isfinite(p.y) && std::isfinite(p.z) && std::isfinite(p.intensity);
  });
}

void VoxelSpec::validate() const {
  if (!(x.max > x.min) || !(y.max > y.min) || !(z.max > z.min)) throw ConfigError("voxel spec: empty axis range");
  if (!(dx > 0.0) || !(dy > 0.0) || !(dz > 0.0)) throw ConfigError("voxel spec: voxel extents must be positive");
}

std::size_t VoxelSpec::bins_x() const { return bin_count(x, dx); }
std::size_t VoxelSpec::bins_y() const { return bin_count(y, dy); }
std::size_t VoxelSpec::bins_z() const { return bin_count(z, dz); }

bool VoxelSpec::contains(const LidarPoint& p) const {
  return p.x >= x.min && p.x <= x.max && p.y >= y.min && p.y <= y.max && p.z >= z.min && p.z <= z.max;
}

double BEVMap::occupancy_sum() const {
  const std::size_t plane = spec.bins_x() * spec.bins_y();
  const auto d = grid.data();
  double total = 0.0;
  for (std::size_t i = 0; i < occupancy_channels() * plane; ++i) total += d[i];
  return total;
}

BEVMap voxelize_bev(const PointCloud& pc, const VoxelSpec& spec) {
  spec.validate();
  const std::size_t bx = spec.bins_x(), by = spec.bins_y(), bz = spec.bins_z();
  const std::size_t plane = bx * by;
  std::vector<double> grid((bz + 2) * plane, 0.0);
  std::vector<double> intensity_sum(plane, 0.0);
  std::vector<std::size_t> count(plane, 0);
  double* max_z = grid.data() + bz * plane;
  double* mean_i = grid.data() + (bz + 1) * plane;

  for (const auto& p : pc.points) {
    if (!spec.contains(p)) continue;
    const std::size_t ix = bin_index(p.x, spec.x, spec.dx, bx);
    const std::size_t iy = bin_index(p.y, spec.y, spec.dy, by);
    const std::size_t iz = bin_index(p.z, spec.z, spec.dz, bz);
    const std::size_t cell = ix * by + iy;
    grid[iz * plane + cell] += 1.0;
    max_z[cell] = count[cell] == 0 ? p.z : std::max(max_z[cell], p.z);
    intensity_sum[cell] += p.intensity;
    ++count[cell];
  }
  for (std::size_t c = 0; c < plane; ++c) {
    if (count[c]) mean_i[c] = intensity_sum[c] / static_cast<double>(count[c]);
  }
  return {Tensor::from({bz + 2, bx, by}, std::move(grid)), spec};
}

void CameraModel::validate() const {
  if (!(fx > 0.0) || !(fy > 0.0)) throw ConfigError("camera: focal lengths must be positive");
  if (width == 0 || height == 0) throw ConfigError("camera: image size must be positive");
  const auto& e = extrinsic;
  // R R^T == I and det(R) == +1
  for (int a = 0; a < 3; ++a) {
    for (int b = 0; b < 3; ++b) {
      double dot = 0.0;
      for (int k = 0; k < 3; ++k) dot += e[a * 4 + k] * e[b * 4 + k];
      if (std::abs(dot - (a == b ? 1.0 : 0.0)) > 1e-9) throw ConfigError("camera: rotation block is not orthonormal");
    }
  }
  const double det = e[0] * (e[5] * e[10] - e[6] * e[9]) - e[1] * (e[4] * e[10] - e[6] * e[8]) +
                     e[2] * (e[4] * e[9] - e[5] * e[8]);
  if (std::abs(det - 1.0) > 1e-9) throw ConfigError("camera: rotation determinant is not +1");
}

std::array<double, 3> CameraModel::ego_to_cam(double x, double y, double z) const {
  const auto& e = extrinsic;
  return {e[0] * x + e[1] * y + e[2] * z + e[3], e[4] * x + e[5] * y + e[6] * z + e[7],
          e[8] * x + e[9] * y + e[10] * z + e[11]};
}

std::array<double, 3> CameraModel::cam_to_ego(double x, double y, double z) const {
  const auto& e = extrinsic;
  const double px = x - e[3], py = y - e[7], pz = z - e[11];
  // R^T (p - t)
  return {e[0] * px + e[4] * py + e[8] * pz, e[1] * px + e[5] * py + e[9] * pz, e[2] * px + e[6] * py + e[10] * pz};
}

CameraModel CameraModel::forward_facing(std::size_t width, std::size_t height, double hfov_deg, double mount_height,
                                        double yaw) {
  CameraModel cam;
  cam.width = width;
  cam.height = height;
  const double half = hfov_deg * std::numbers::pi / 360.0;
  cam.fx = (static_cast<double>(width) / 2.0) / std::tan(half);
  cam.fy = cam.fx;
  cam.cx = static_cast<double>(width) / 2.0;
  cam.cy = static_cast<double>(height) / 2.0;
  // Camera axes in ego coordinates for a camera looking along (cos yaw, sin yaw, 0).
  const double c = std::cos(yaw), s = std::sin(yaw);
  const std::array<double, 3> right{s, -c, 0.0};
  const std::array<double, 3> down{0.0, 0.0, -1.0};
  const std::array<double, 3> fwd{c, s, 0.0};
  const std::array<double, 3> origin{0.0, 0.0, mount_height};
  const std::array<const std::array<double, 3>*, 3> rows{&right, &down, &fwd};
  for (int r = 0; r < 3; ++r) {
    const auto& row = *rows[r];
    cam.extrinsic[r * 4 + 0] = row[0];
    cam.extrinsic[r * 4 + 1] = row[1];
    cam.extrinsic[r * 4 + 2] = row[2];
    cam.extrinsic[r * 4 + 3] = -(row[0] * origin[0] + row[1] * origin[1] + row[2] * origin[2]);
  }
  return cam;
}

std::optional<std::array<std::size_t, 2>> project_pixel(const CameraModel& cam, const std::array<double, 3>& p,
                                                        std::size_t out_h, std::size_t out_w) {
  if (!(p[2] > kMinCameraDepth)) return std::nullopt;
  const double u = (cam.fx * p[0] / p[2] + cam.cx) * static_cast<double>(out_w) / static_cast<double>(cam.width);
  const double v = (cam.fy * p[1] / p[2] + cam.cy) * static_cast<double>(out_h) / static_cast<double>(cam.height);
  const double col = std::floor(u + 0.5), row = std::floor(v + 0.5);
  if (col < 0.0 || row < 0.0 || col >= static_cast<double>(out_w) || row >= static_cast<double>(out_h)) {
    return std::nullopt;
  }
  return std::array<std::size_t, 2>{static_cast<std::size_t>(col), static_cast<std::size_t>(row)};
}

DepthMap project_depth(const PointCloud& pc, const CameraModel& cam, std::size_t out_h, std::size_t out_w,
                       double max_depth) {
  cam.validate();
  if (out_h == 0 || out_w == 0) throw DimensionError("project_depth: raster size must be positive");
  std::vector<double> depth(out_h * out_w, 0.0);
  for (const auto& pt : pc.points) {
    const auto p = cam.ego_to_cam(pt.x, pt.y, pt.z);
    if (p[2] > max_depth) continue;
    const auto px = project_pixel(cam, p, out_h, out_w);
    if (!px) continue;
    double& cell = depth[(*px)[1] * out_w + (*px)[0]];
    if (cell == 0.0 || p[2] < cell) cell = p[2];
  }
  return {Tensor::from({1, out_h, out_w}, std::move(depth)), max_depth};
}

ZeroLidar zero_lidar(const VoxelSpec& spec, const std::vector<CameraModel>& cams, std::size_t out_h,
                     std::size_t out_w, double max_depth) {
  spec.validate();
  ZeroLidar z;
  z.bev = {Tensor::zeros({spec.channels(), spec.bins_x(), spec.bins_y()}), spec};
  for (std::size_t i = 0; i < cams.size(); ++i) z.depths.push_back({Tensor::zeros({1, out_h, out_w}), max_depth});
  return z;
}

}  // namespace qfuse
