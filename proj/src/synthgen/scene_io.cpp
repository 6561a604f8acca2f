#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <sstream>

#include "qfuse/errors.hpp"
#include "qfuse/synth.hpp"

namespace qfuse {

namespace {

std::string indexed(const std::string& stem, std::size_t k, const std::string& ext) {
  return k == 0 ? stem + ext : stem + std::to_string(k) + ext;
}

}  // namespace

void write_ppm(const std::filesystem::path& path, const Tensor& image) {
  if (image.rank() != 3 || image.dim(0) != 3) throw DimensionError("write_ppm expects [3,H,W]");
  const std::size_t h = image.dim(1), w = image.dim(2);
  std::ofstream os(path, std::ios::binary);
  if (!os) throw IoError("cannot open " + path.string() + " for writing");
  os << "P6\n" << w << ' ' << h << "\n255\n";
  const auto d = image.data();
  for (std::size_t y = 0; y < h; ++y) {
    for (std::size_t x = 0; x < w; ++x) {
      for (std::size_t c = 0; c < 3; ++c) {
        const double v = std::clamp(d[(c * h + y) * w + x], 0.0, 1.0);
        os.put(static_cast<char>(static_cast<unsigned char>(std::lround(v * 255.0))));
      }
    }
  }
  if (!os) throw IoError("failed writing " + path.string());
}

void save_scene(const std::filesystem::path& dir, const Scene& scene) {
  std::filesystem::create_directories(dir);
  for (std::size_t k = 0; k < scene.images.size(); ++k) write_ppm(dir / indexed("image", k, ".ppm"), scene.images[k]);
  for (std::size_t k = 0; k < scene.cameras.size(); ++k) write_camera(dir / indexed("cam", k, ".txt"), scene.cameras[k]);
  write_point_cloud(dir / "cloud.qfpc", scene.cloud);
  std::ofstream gt(dir / "gt.csv");
  if (!gt) throw IoError("cannot write gt.csv in " + dir.string());
  gt << std::setprecision(17);
  for (const auto& b : scene.gt.boxes) gt << b.cx << ',' << b.cy << ',' << b.w << ',' << b.l << ',' << b.yaw << '\n';
}

SceneGT read_gt_csv(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw IoError("cannot open " + path.string());
  SceneGT gt;
  std::string line;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    std::replace(line.begin(), line.end(), ',', ' ');
    std::istringstream ls(line);
    BoxGT b;
    if (!(ls >> b.cx >> b.cy >> b.w >> b.l >> b.yaw)) throw IoError("malformed gt row in " + path.string() + ": " + line);
    gt.boxes.push_back(b);
  }
  return gt;
}

}  // namespace qfuse
