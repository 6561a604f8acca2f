#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <random>

#include "qfuse/errors.hpp"
#include "qfuse/rng.hpp"
#include "qfuse/synth.hpp"

namespace qfuse {

namespace {

constexpr double kDegToRad = std::numbers::pi / 180.0;
constexpr std::array<double, 3> kGroundColor{0.34, 0.33, 0.30};

double uniform(Rng& rng, const AxisRange& r) { return std::uniform_real_distribution<double>(r.min, r.max)(rng); }

struct Hit {
  double t = std::numeric_limits<double>::infinity();
  int box = -1;  // -1 ground, -2 nothing
};

Hit first_hit(const Vec3& origin, const Vec3& dir, const std::vector<Box3D>& boxes) {
  Hit hit;
  hit.box = -2;
  for (std::size_t b = 0; b < boxes.size(); ++b) {
    if (auto t = raycast_box(origin, dir, boxes[b]); t && *t < hit.t) {
      hit.t = *t;
      hit.box = static_cast<int>(b);
    }
  }
  if (dir[2] < 0.0) {
    const double tg = -origin[2] / dir[2];
    if (tg < hit.t) {
      hit.t = tg;
      hit.box = -1;
    }
  }
  return hit;
}

Tensor render_image(const CameraModel& cam, const std::vector<Box3D>& boxes) {
  const std::size_t h = cam.height, w = cam.width;
  std::vector<double> img(3 * h * w);
  const auto c0 = cam.cam_to_ego(0.0, 0.0, 0.0);
  const Vec3 origin{c0[0], c0[1], c0[2]};
  for (std::size_t row = 0; row < h; ++row) {
    for (std::size_t col = 0; col < w; ++col) {
      const double xc = (static_cast<double>(col) - cam.cx) / cam.fx;
      const double yc = (static_cast<double>(row) - cam.cy) / cam.fy;
      const double n = std::sqrt(xc * xc + yc * yc + 1.0);
      const auto p = cam.cam_to_ego(xc / n, yc / n, 1.0 / n);
      const Vec3 dir{p[0] - origin[0], p[1] - origin[1], p[2] - origin[2]};
      const Hit hit = first_hit(origin, dir, boxes);
      std::array<double, 3> color;
      if (hit.box >= 0) {
        color = boxes[static_cast<std::size_t>(hit.box)].albedo;
      } else if (hit.box == -1) {
        // Ground darkens with distance.
        const double fade = std::exp(-hit.t / 60.0);
        for (int k = 0; k < 3; ++k) color[k] = kGroundColor[k] * (0.6 + 0.4 * fade);
      } else {
        const double up = std::clamp(dir[2], 0.0, 1.0);
        color = {0.55 - 0.2 * up, 0.65 - 0.15 * up, 0.85};
      }
      for (int k = 0; k < 3; ++k) img[(static_cast<std::size_t>(k) * h + row) * w + col] = color[k];
    }
  }
  return Tensor::from({3, h, w}, std::move(img));
}

}  // namespace

std::optional<double> raycast_box(const Vec3& origin, const Vec3& dir, const Box3D& box) {
  const double c = std::cos(box.yaw), s = std::sin(box.yaw);
  // Into the box frame: translate, then rotate by -yaw.
  const double ox = origin[0] - box.cx, oy = origin[1] - box.cy;
  const Vec3 o{c * ox + s * oy, -s * ox + c * oy, origin[2]};
  const Vec3 d{c * dir[0] + s * dir[1], -s * dir[0] + c * dir[1], dir[2]};
  const double lo[3] = {-box.l / 2.0, -box.w / 2.0, 0.0};
  const double hi[3] = {box.l / 2.0, box.w / 2.0, box.h};
  double t_near = -std::numeric_limits<double>::infinity();
  double t_far = std::numeric_limits<double>::infinity();
  for (int a = 0; a < 3; ++a) {
    if (d[a] == 0.0) {
      if (o[a] < lo[a] || o[a] > hi[a]) return std::nullopt;
      continue;
    }
    double t0 = (lo[a] - o[a]) / d[a];
    double t1 = (hi[a] - o[a]) / d[a];
    if (t0 > t1) std::swap(t0, t1);
    t_near = std::max(t_near, t0);
    t_far = std::min(t_far, t1);
    if (t_near > t_far) return std::nullopt;
  }
  if (t_near < 0.0) return std::nullopt;
  return t_near;
}

Scene generate_scene(const SceneSpec& spec) {
  if (spec.n_boxes_min > spec.n_boxes_max) throw ConfigError("scene spec: n_boxes_min > n_boxes_max");
  if (spec.cameras.empty()) throw ConfigError("scene spec: at least one camera required");
  for (const auto& cam : spec.cameras) cam.validate();

  Scene scene;
  scene.cameras = spec.cameras;
  Rng rng(derive_seed(spec.seed, "boxes"));
  const std::size_t wanted =
      std::uniform_int_distribution<std::size_t>(spec.n_boxes_min, spec.n_boxes_max)(rng);
  std::size_t attempts = 0;
  while (scene.boxes.size() < wanted && attempts < spec.max_attempts) {
    ++attempts;
    Box3D b;
    b.cx = uniform(rng, spec.forward);
    const double half = b.cx * std::tan(spec.half_angle_deg * kDegToRad);
    b.cy = std::uniform_real_distribution<double>(-half, half)(rng);
    b.w = uniform(rng, spec.width);
    b.l = uniform(rng, spec.length);
    b.h = uniform(rng, spec.height);
    b.yaw = std::uniform_real_distribution<double>(-std::numbers::pi, std::numbers::pi)(rng);
    for (auto& a : b.albedo) a = std::uniform_real_distribution<double>(0.1, 1.0)(rng);
    const double rb = 0.5 * std::hypot(b.w, b.l);
    const bool clear = std::none_of(scene.boxes.begin(), scene.boxes.end(), [&](const Box3D& o) {
      return std::hypot(o.cx - b.cx, o.cy - b.cy) < rb + 0.5 * std::hypot(o.w, o.l) + spec.min_gap;
    });
    if (clear) scene.boxes.push_back(b);
  }
  scene.placement_shortfall = scene.boxes.size() < wanted;
  for (const auto& b : scene.boxes) scene.gt.boxes.push_back({b.cx, b.cy, b.w, b.l, b.yaw});

  const auto& rig = spec.lidar;
  Rng lidar_rng(derive_seed(spec.seed, "lidar"));
  std::uniform_real_distribution<double> drop(0.0, 1.0);
  std::normal_distribution<double> noise(0.0, rig.range_noise > 0.0 ? rig.range_noise : 1.0);
  const Vec3 origin{0.0, 0.0, rig.mount_height};
  for (std::size_t j = 0; j < rig.n_elevation; ++j) {
    const double el = rig.n_elevation == 1
                          ? rig.elevation_min_deg * kDegToRad
                          : (rig.elevation_min_deg + (rig.elevation_max_deg - rig.elevation_min_deg) *
                                                         static_cast<double>(j) /
                                                         static_cast<double>(rig.n_elevation - 1)) *
                                kDegToRad;
    for (std::size_t i = 0; i < rig.n_azimuth; ++i) {
      const double az = 2.0 * std::numbers::pi * static_cast<double>(i) / static_cast<double>(rig.n_azimuth);
      const Vec3 dir{std::cos(el) * std::cos(az), std::cos(el) * std::sin(az), std::sin(el)};
      const double u = drop(lidar_rng);
      // Range noise is truncated at 3 sigma so every return stays within that
      // band of a true surface.
      double eps = 0.0;
      if (rig.range_noise > 0.0) {
        do {
          eps = noise(lidar_rng);
        } while (std::abs(eps) > 3.0 * rig.range_noise);
      }
      if (u < rig.dropout) continue;
      const Hit hit = first_hit(origin, dir, scene.boxes);
      if (hit.box == -2 || hit.t > rig.max_range) continue;
      const double t = hit.t + eps;
      LidarPoint p{origin[0] + t * dir[0], origin[1] + t * dir[1], origin[2] + t * dir[2], 0.1};
      if (hit.box >= 0) {
        const auto& a = scene.boxes[static_cast<std::size_t>(hit.box)].albedo;
        p.intensity = 0.2 + 0.8 * (a[0] + a[1] + a[2]) / 3.0;
      }
      scene.cloud.points.push_back(p);
    }
  }

  for (const auto& cam : spec.cameras) scene.images.push_back(render_image(cam, scene.boxes));
  return scene;
}

}  // namespace qfuse
