#pragma once

#include <filesystem>
#include <iosfwd>

#include "qfuse/tensor.hpp"

namespace qfuse {

// Binary tensor snapshot: "QFT1", u32 rank, u32 extents[rank], f64 data[numel],
// all little-endian.
void write_tensor(std::ostream& os, const Tensor& t);
Tensor read_tensor(std::istream& is);

void save_tensor(const std::filesystem::path& path, const Tensor& t);
Tensor load_tensor(const std::filesystem::path& path);

}  // namespace qfuse
