#include <doctest.h>

#include <cmath>
#include <fstream>

#include "../common/lidar_oracles.hpp"
#include "qfuse/errors.hpp"
#include "qfuse/lidar.hpp"
#include "support.hpp"

using namespace qfuse;

namespace {

VoxelSpec small_spec() { return {{-10.0, 10.0}, {-8.0, 8.0}, {-1.0, 3.0}, 1.0, 0.5, 4.0}; }

CameraModel test_camera() { return CameraModel::forward_facing(96, 48, 90.0, 1.6); }

std::size_t count_in_range(const PointCloud& pc, const VoxelSpec& s) {
  return static_cast<std::size_t>(
      std::count_if(pc.points.begin(), pc.points.end(), [&](const LidarPoint& p) { return s.contains(p); }));
}

}  // namespace

TEST_SUITE("lidarproj") {

TEST_CASE("bin counts use ceil") {
  VoxelSpec full;
  CHECK(full.bins_x() == 446);
  CHECK(full.bins_y() == 446);
  CHECK(full.bins_z() == 1);
  CHECK(full.channels() == 3);
  VoxelSpec bad = small_spec();
  bad.dx = 0.0;
  CHECK_THROWS_AS(bad.validate(), ConfigError);
}

TEST_CASE("single point at the origin") {
  VoxelSpec spec;
  spec.z = {-5.0, 3.0};
  PointCloud pc;
  pc.points.push_back({0.0, 0.0, 0.0, 0.5});
  BEVMap m = voxelize_bev(pc, spec);
  const std::size_t plane = spec.bins_x() * spec.bins_y();
  std::size_t occupied = 0, cell = 0;
  for (std::size_t i = 0; i < plane; ++i) {
    if (m.grid.data()[i] != 0.0) {
      ++occupied;
      cell = i;
    }
  }
  CHECK(occupied == 1);
  CHECK(m.grid.data()[cell] == 1.0);
  CHECK(m.grid.data()[plane + cell] == 0.0);
  CHECK(m.grid.data()[2 * plane + cell] == 0.5);
  CHECK(cell == 222 * spec.bins_y() + 222);
}

TEST_CASE("random clouds match the brute-force binning oracle") {
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    VoxelSpec spec = small_spec();
    if (seed % 2) spec.dz = 1.0;  // multi-slice occupancy
    const PointCloud pc = qtest::random_cloud(seed, 1000, 12.0, -2.0, 4.0);
    BEVMap m = voxelize_bev(pc, spec);
    const auto oracle = qtest::brute_force_bev(pc, spec);
    REQUIRE(oracle.size() == m.grid.numel());
    CHECK(std::equal(oracle.begin(), oracle.end(), m.grid.data().begin()));
    CHECK(m.occupancy_sum() == static_cast<double>(count_in_range(pc, spec)));
  }
}

TEST_CASE("boundary points land in the outer cells") {
  VoxelSpec spec = small_spec();
  PointCloud pc;
  pc.points.push_back({10.0, 8.0, 3.0, 1.0});    // on every max face
  pc.points.push_back({-10.0, -8.0, -1.0, 0.0});  // on every min face
  pc.points.push_back({10.0001, 0.0, 0.0, 0.0});  // just outside
  BEVMap m = voxelize_bev(pc, spec);
  const std::size_t by = spec.bins_y();
  CHECK(m.grid.at({0, spec.bins_x() - 1, by - 1}) == 1.0);
  CHECK(m.grid.at({0, 0, 0}) == 1.0);
  CHECK(m.occupancy_sum() == 2.0);
}

TEST_CASE("cell-centre points index to their own cell") {
  VoxelSpec spec = small_spec();
  PointCloud pc;
  for (std::size_t ix = 0; ix < spec.bins_x(); ++ix)
    for (std::size_t iy = 0; iy < spec.bins_y(); ++iy)
      pc.points.push_back({spec.x.min + (ix + 0.5) * spec.dx, spec.y.min + (iy + 0.5) * spec.dy, 0.5, 0.25});
  BEVMap m = voxelize_bev(pc, spec);
  for (std::size_t i = 0; i < spec.bins_x() * spec.bins_y(); ++i) CHECK(m.grid.data()[i] == 1.0);
}

TEST_CASE("project_depth examples") {
  CameraModel cam = test_camera();
  cam.validate();
  PointCloud pc;
  // Optical axis: ego +x at camera height.
  pc.points.push_back({10.0, 0.0, 1.6, 0.0});
  DepthMap d = project_depth(pc, cam, 48, 96);
  CHECK(d.depth.at({0, 24, 48}) == doctest::Approx(10.0).epsilon(1e-15));
  double nonzero = 0;
  for (double v : d.depth.data()) nonzero += v != 0.0;
  CHECK(nonzero == 1);

  // Two points on one ray: nearest wins in either order.
  PointCloud two;
  two.points.push_back({9.0, 1.8, 1.0, 0.0});
  two.points.push_back({5.0, 1.0, 1.6 - 0.6 * 5.0 / 9.0, 0.0});
  PointCloud reversed{{two.points[1], two.points[0]}};
  const auto a = project_depth(two, cam, 48, 96), b = project_depth(reversed, cam, 48, 96);
  CHECK(qtest::bitwise_equal(a.depth, b.depth));
  const auto px = project_pixel(cam, cam.ego_to_cam(5.0, 1.0, 1.6 - 0.6 * 5.0 / 9.0), 48, 96);
  REQUIRE(px);
  CHECK(a.depth.at({0, (*px)[1], (*px)[0]}) == doctest::Approx(5.0));

  // Behind the camera or inside the cutoff.
  PointCloud behind;
  behind.points.push_back({-5.0, 0.0, 1.6, 0.0});
  behind.points.push_back({0.05, 0.0, 1.6, 0.0});
  const DepthMap behind_depth = project_depth(behind, cam, 48, 96);
  for (double v : behind_depth.depth.data()) CHECK(v == 0.0);
}

TEST_CASE("random clouds match the per-pixel sort oracle") {
  const CameraModel cam = test_camera();
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    const PointCloud pc = qtest::random_cloud(100 + seed, 1000, 30.0, -1.0, 4.0);
    for (auto [h, w] : {std::pair<std::size_t, std::size_t>{48, 96}, {24, 48}}) {
      const DepthMap d = project_depth(pc, cam, h, w, 80.0);
      const auto oracle = qtest::sorted_depth_raster(pc, cam, h, w, 80.0);
      CHECK(std::equal(oracle.begin(), oracle.end(), d.depth.data().begin()));
    }
  }
}

TEST_CASE("back-projection recovers visible points") {
  const CameraModel cam = test_camera();
  const PointCloud pc = qtest::random_cloud(7, 500, 30.0, -1.0, 4.0);
  std::size_t visible = 0;
  for (const auto& p : pc.points) {
    const auto pc_cam = cam.ego_to_cam(p.x, p.y, p.z);
    const auto px = project_pixel(cam, pc_cam, 48, 96);
    if (!px) continue;
    ++visible;
    const double Z = pc_cam[2];
    const double X = ((*px)[0] - cam.cx) * Z / cam.fx, Y = ((*px)[1] - cam.cy) * Z / cam.fy;
    const auto back = cam.cam_to_ego(X, Y, Z);
    // Half a pixel of rounding in each direction at depth Z.
    const double tol = Z * std::sqrt(2.0) * 0.5 / cam.fx + 1e-9;
    CHECK(std::hypot(back[0] - p.x, back[1] - p.y, back[2] - p.z) <= tol);
  }
  CHECK(visible > 50);
}

TEST_CASE("z-buffer is monotone under adding points") {
  const CameraModel cam = test_camera();
  PointCloud pc = qtest::random_cloud(9, 800, 30.0, -1.0, 4.0);
  const DepthMap before = project_depth(pc, cam, 48, 96);
  const PointCloud more = qtest::random_cloud(10, 800, 30.0, -1.0, 4.0);
  pc.points.insert(pc.points.end(), more.points.begin(), more.points.end());
  const DepthMap after = project_depth(pc, cam, 48, 96);
  for (std::size_t i = 0; i < before.depth.numel(); ++i) {
    if (before.depth.data()[i] > 0.0) CHECK(after.depth.data()[i] <= before.depth.data()[i]);
  }
}

TEST_CASE("zero lidar shapes") {
  const VoxelSpec spec = small_spec();
  const ZeroLidar z = zero_lidar(spec, {test_camera(), test_camera()}, 48, 96);
  CHECK(z.bev.occupancy_sum() == 0.0);
  CHECK(z.bev.grid.shape() == voxelize_bev(qtest::random_cloud(1, 10, 5, 0, 1), spec).grid.shape());
  CHECK(z.depths.size() == 2);
  CHECK(z.depths[0].depth.shape() == Shape{1, 48, 96});
  CHECK(voxelize_bev(PointCloud{}, spec).occupancy_sum() == 0.0);
}

TEST_CASE("camera validation") {
  CameraModel cam = test_camera();
  cam.extrinsic[0] = 2.0;
  CHECK_THROWS_AS(cam.validate(), ConfigError);
  CameraModel flipped = test_camera();
  for (int k = 0; k < 4; ++k) flipped.extrinsic[k] = -flipped.extrinsic[k];
  CHECK_THROWS_AS(flipped.validate(), ConfigError);
}

TEST_CASE("file formats") {
  qtest::TempDir dir("lidar");
  PointCloud pc = qtest::random_cloud(3, 100, 20.0, -1.0, 3.0);
  for (auto& p : pc.points) {
    // Exactly representable in f32.
    p.x = static_cast<float>(p.x);
    p.y = static_cast<float>(p.y);
    p.z = static_cast<float>(p.z);
    p.intensity = static_cast<float>(p.intensity);
  }
  write_point_cloud(dir.path / "c.qfpc", pc);
  CHECK(std::filesystem::file_size(dir.path / "c.qfpc") == 8 + 100 * 16);
  const PointCloud back = read_point_cloud(dir.path / "c.qfpc");
  REQUIRE(back.size() == 100);
  for (std::size_t i = 0; i < 100; ++i) {
    CHECK(back.points[i].x == pc.points[i].x);
    CHECK(back.points[i].intensity == pc.points[i].intensity);
  }
  CHECK(read_point_cloud(dir.path / "c.qfpc").empty() == false);
  std::ofstream(dir.path / "bad.qfpc") << "nope";
  CHECK_THROWS_AS(read_point_cloud(dir.path / "bad.qfpc"), IoError);

  const CameraModel cam = CameraModel::forward_facing(96, 48, 90.0, 1.6, 0.3);
  write_camera(dir.path / "cam.txt", cam);
  const CameraModel cb = read_camera(dir.path / "cam.txt");
  CHECK(cb.width == 96);
  CHECK(cb.fx == cam.fx);
  for (int k = 0; k < 12; ++k) CHECK(cb.extrinsic[k] == cam.extrinsic[k]);

  write_depth_pgm(dir.path / "d.pgm", project_depth(pc, test_camera(), 48, 96));
  std::ifstream pgm(dir.path / "d.pgm", std::ios::binary);
  std::string magic;
  pgm >> magic;
  CHECK(magic == "P5");
}

}
