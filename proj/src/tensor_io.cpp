#include "nutri/tensor_io.hpp"

#include <array>
#include <bit>
#include <cstring>
#include <fstream>
#include <istream>
#include <ostream>

#include "nutri/errors.hpp"

namespace nutri {

namespace {

static_assert(std::endian::native == std::endian::little, "NTSR I/O assumes a little-endian host");

constexpr std::array<char, 4> kMagic{'N', 'T', 'S', 'R'};

template <class T>
void put(std::ostream& os, T v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <class T>
T get(std::istream& is, const char* what) {
  T v{};
  if (!is.read(reinterpret_cast<char*>(&v), sizeof(T))) throw DataError(std::string("NTSR: truncated ") + what);
  return v;
}

}  // namespace

void write_tensor(std::ostream& os, const Tensor& t, Precision precision) {
  os.write(kMagic.data(), kMagic.size());
  const bool f64 = precision == Precision::kFloat64;
  put<std::uint32_t>(os, kNtsrFormatVersion | (f64 ? kNtsrFloat64Flag : 0u));
  put<std::uint32_t>(os, static_cast<std::uint32_t>(t.rank()));
  for (auto e : t.shape()) put<std::uint64_t>(os, static_cast<std::uint64_t>(e));
  const auto d = t.data();
  if (f64) {
    os.write(reinterpret_cast<const char*>(d.data()), static_cast<std::streamsize>(d.size() * sizeof(double)));
  } else {
    std::vector<float> buf(d.begin(), d.end());
    os.write(reinterpret_cast<const char*>(buf.data()), static_cast<std::streamsize>(buf.size() * sizeof(float)));
  }
}

Tensor read_tensor(std::istream& is) {
  std::array<char, 4> magic{};
  if (!is.read(magic.data(), magic.size()) || magic != kMagic) throw DataError("NTSR: bad magic");
  const auto version = get<std::uint32_t>(is, "version");
  if ((version & 0xFFFFu) != kNtsrFormatVersion || (version & ~(0xFFFFu | kNtsrFloat64Flag)) != 0) {
    throw DataError("NTSR: unsupported version word " + std::to_string(version));
  }
  const bool f64 = (version & kNtsrFloat64Flag) != 0;
  const auto rank = get<std::uint32_t>(is, "rank");
  if (rank > 16) throw DataError("NTSR: implausible rank " + std::to_string(rank));
  Shape shape(rank);
  for (auto& e : shape) {
    const auto v = get<std::uint64_t>(is, "extent");
    if (v > (1ull << 40)) throw DataError("NTSR: implausible extent");
    e = static_cast<std::int64_t>(v);
  }
  const auto n = shape_numel(shape);
  std::vector<double> values(n);
  if (f64) {
    if (!is.read(reinterpret_cast<char*>(values.data()), static_cast<std::streamsize>(n * sizeof(double)))) {
      throw DataError("NTSR: truncated payload");
    }
  } else {
    std::vector<float> buf(n);
    if (!is.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(n * sizeof(float)))) {
      throw DataError("NTSR: truncated payload");
    }
    std::copy(buf.begin(), buf.end(), values.begin());
  }
  return Tensor::from(std::move(shape), std::move(values));
}

void save_tensor(const std::filesystem::path& path, const Tensor& t, Precision precision) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw DataError("cannot open " + path.string() + " for writing");
  write_tensor(os, t, precision);
  if (!os) throw DataError("write failed: " + path.string());
}

Tensor load_tensor(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw DataError("cannot open " + path.string());
  try {
    return read_tensor(is);
  } catch (const DataError& e) {
    throw DataError(path.string() + ": " + e.what());
  }
}

}  // namespace nutri
