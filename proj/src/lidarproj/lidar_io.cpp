#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <iomanip>
#include <map>
#include <sstream>

#include "qfuse/errors.hpp"
#include "qfuse/lidar.hpp"

namespace qfuse {

namespace {

constexpr char kCloudMagic[4] = {'Q', 'F', 'P', 'C'};

const char* const kExtrinsicKeys[12] = {"t00", "t01", "t02", "t03", "t10", "t11",
                                        "t12", "t13", "t20", "t21", "t22", "t23"};

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

}  // namespace

void write_point_cloud(const std::filesystem::path& path, const PointCloud& pc) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw IoError("cannot open " + path.string() + " for writing");
  os.write(kCloudMagic, 4);
  const auto n = static_cast<std::uint32_t>(pc.size());
  os.write(reinterpret_cast<const char*>(&n), sizeof n);
  for (const auto& p : pc.points) {
    const float quad[4] = {static_cast<float>(p.x), static_cast<float>(p.y), static_cast<float>(p.z),
                           static_cast<float>(p.intensity)};
    os.write(reinterpret_cast<const char*>(quad), sizeof quad);
  }
  if (!os) throw IoError("failed writing " + path.string());
}

PointCloud read_point_cloud(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open " + path.string());
  char magic[4];
  is.read(magic, 4);
  if (!is || std::memcmp(magic, kCloudMagic, 4) != 0) throw IoError(path.string() + " is not a QFPC point cloud");
  std::uint32_t n = 0;
  is.read(reinterpret_cast<char*>(&n), sizeof n);
  if (!is) throw IoError("truncated point cloud header in " + path.string());
  PointCloud pc;
  pc.points.resize(n);
  for (auto& p : pc.points) {
    float quad[4];
    is.read(reinterpret_cast<char*>(quad), sizeof quad);
    if (!is) throw IoError("truncated point cloud body in " + path.string());
    p = {quad[0], quad[1], quad[2], quad[3]};
  }
  if (!pc.all_finite()) throw ValidityError("point cloud " + path.string() + " contains non-finite values");
  return pc;
}

void write_camera(const std::filesystem::path& path, const CameraModel& cam) {
  std::ofstream os(path);
  if (!os) throw IoError("cannot open " + path.string() + " for writing");
  os << std::setprecision(17);
  os << "fx = " << cam.fx << "\nfy = " << cam.fy << "\ncx = " << cam.cx << "\ncy = " << cam.cy << "\n";
  os << "width = " << cam.width << "\nheight = " << cam.height << "\n";
  for (int i = 0; i < 12; ++i) os << kExtrinsicKeys[i] << " = " << cam.extrinsic[i] << "\n";
}

CameraModel read_camera(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw IoError("cannot open " + path.string());
  std::map<std::string, double> kv;
  std::string line;
  int lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.resize(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw IoError(path.string() + ":" + std::to_string(lineno) + ": expected key = value");
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    try {
      kv[key] = std::stod(value);
    } catch (const std::exception&) {
      throw IoError(path.string() + ":" + std::to_string(lineno) + ": bad number for " + key);
    }
  }
  auto need = [&](const std::string& key) {
    auto it = kv.find(key);
    if (it == kv.end()) throw IoError(path.string() + ": missing key " + key);
    return it->second;
  };
  CameraModel cam;
  cam.fx = need("fx");
  cam.fy = need("fy");
  cam.cx = need("cx");
  cam.cy = need("cy");
  cam.width = static_cast<std::size_t>(need("width"));
  cam.height = static_cast<std::size_t>(need("height"));
  for (int i = 0; i < 12; ++i) cam.extrinsic[i] = need(kExtrinsicKeys[i]);
  cam.validate();
  return cam;
}

void write_depth_pgm(const std::filesystem::path& path, const DepthMap& depth) {
  const auto& t = depth.depth;
  const std::size_t h = t.dim(1), w = t.dim(2);
  std::ofstream os(path, std::ios::binary);
  if (!os) throw IoError("cannot open " + path.string() + " for writing");
  os << "P5\n" << w << ' ' << h << "\n65535\n";
  for (double d : t.data()) {
    const double mm = std::clamp(std::round(d * 1000.0), 0.0, 65535.0);
    const auto v = static_cast<std::uint16_t>(mm);
    const unsigned char be[2] = {static_cast<unsigned char>(v >> 8), static_cast<unsigned char>(v & 0xFF)};
    os.write(reinterpret_cast<const char*>(be), 2);
  }
}

}  // namespace qfuse
