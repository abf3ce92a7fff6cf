#pragma once

#include <filesystem>
#include <iosfwd>
#include <string>

#include "ivf/tensor.hpp"

namespace ivf {

// "IVT1" tensor record: magic "IVT1", u32 rank, rank u32 extents, then the
// raw little-endian f32 payload in row-major order. Shared by dataset files
// and checkpoint parameter records. The payload is always f32; f64 tensors
// are narrowed on write.

void write_tensor(std::ostream& out, const Tensor& t);
Tensor read_tensor(std::istream& in, DType dt, const std::string& context);

void save_tensor(const std::filesystem::path& path, const Tensor& t);
Tensor load_tensor(const std::filesystem::path& path, DType dt = DType::f32);

/// Reads just the header and returns the shape, leaving the stream at the
/// start of the payload.
Shape read_tensor_header(std::istream& in, const std::string& context);
Shape peek_tensor_shape(const std::filesystem::path& path);

}  // namespace ivf
