#include "qfuse/snapshot.hpp"

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <istream>
#include <ostream>

#include "qfuse/errors.hpp"

namespace qfuse {

static_assert(std::endian::native == std::endian::little, "snapshot I/O assumes a little-endian host");

namespace {

constexpr char kMagic[4] = {'Q', 'F', 'T', '1'};

template <typename T>
void put(std::ostream& os, T v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T get(std::istream& is) {
  T v{};
  is.read(reinterpret_cast<char*>(&v), sizeof(T));
  if (!is) throw IoError("tensor snapshot truncated");
  return v;
}

}  // namespace

void write_tensor(std::ostream& os, const Tensor& t) {
  os.write(kMagic, 4);
  put<std::uint32_t>(os, static_cast<std::uint32_t>(t.rank()));
  for (auto e : t.shape()) put<std::uint32_t>(os, static_cast<std::uint32_t>(e));
  const auto d = t.data();
  os.write(reinterpret_cast<const char*>(d.data()), static_cast<std::streamsize>(d.size() * sizeof(double)));
  if (!os) throw IoError("failed writing tensor snapshot");
}

Tensor read_tensor(std::istream& is) {
  char magic[4];
  is.read(magic, 4);
  if (!is || std::memcmp(magic, kMagic, 4) != 0) throw IoError("not a QFT1 tensor snapshot");
  const auto rank = get<std::uint32_t>(is);
  if (rank == 0 || rank > 16) throw IoError("tensor snapshot has unsupported rank " + std::to_string(rank));
  Shape shape(rank);
  for (auto& e : shape) e = get<std::uint32_t>(is);
  std::vector<double> data(shape_numel(shape));
  is.read(reinterpret_cast<char*>(data.data()), static_cast<std::streamsize>(data.size() * sizeof(double)));
  if (!is) throw IoError("tensor snapshot truncated");
  return Tensor::from(std::move(shape), std::move(data));
}

void save_tensor(const std::filesystem::path& path, const Tensor& t) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw IoError("cannot open " + path.string() + " for writing");
  write_tensor(os, t);
}

Tensor load_tensor(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open " + path.string());
  return read_tensor(is);
}

}  // namespace qfuse
