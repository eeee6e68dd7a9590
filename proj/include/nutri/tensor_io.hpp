#pragma once

// NTSR binary tensor files.
//
//   bytes 0..3   magic "NTSR"
//   u32          version word: low 16 bits = format version (1),
//                bit 16 set = float64 payload, clear = float32
//   u32          rank
//   u64 x rank   extents
//   payload      row-major values
//
// All integers and floats little-endian.

#include <cstdint>
#include <filesystem>
#include <iosfwd>

#include "nutri/tensor.hpp"

namespace nutri {

enum class Precision { kFloat32, kFloat64 };

inline constexpr std::uint32_t kNtsrFormatVersion = 1;
inline constexpr std::uint32_t kNtsrFloat64Flag = 1u << 16;

void write_tensor(std::ostream& os, const Tensor& t, Precision precision);
// Throws DataError on bad magic, unknown version or truncated payload.
Tensor read_tensor(std::istream& is);

void save_tensor(const std::filesystem::path& path, const Tensor& t, Precision precision = Precision::kFloat32);
Tensor load_tensor(const std::filesystem::path& path);

}  // namespace nutri
