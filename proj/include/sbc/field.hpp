#pragma once

// Field data model: 2-D floating-point planes stacked along a component axis,
// with an optional validity mask, plus FLD1 raw I/O.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include "sbc/bytes.hpp"
#include "sbc/error.hpp"

namespace sbc {

struct Field {
  std::string name;
  std::string units;
  std::size_t nx = 0;  // columns
  std::size_t ny = 0;  // rows
  std::size_t ncomp = 1;
  std::vector<float> samples;       // row-major within a plane, planes component-major
  std::vector<std::uint8_t> mask;   // empty means every sample is valid

  Field() = default;
  Field(std::size_t nx_, std::size_t ny_, std::size_t ncomp_ = 1)
      : nx(nx_), ny(ny_), ncomp(ncomp_), samples(nx_ * ny_ * ncomp_, 0.0f) {}

  std::size_t plane_size() const { return nx * ny; }
  std::size_t size() const { return nx * ny * ncomp; }
  bool has_mask() const { return !mask.empty(); }
  bool valid(std::size_t i) const { return mask.empty() || mask[i] != 0; }

  std::size_t index(std::size_t x, std::size_t y, std::size_t c = 0) const { return (c * ny + y) * nx + x; }
  float& at(std::size_t x, std::size_t y, std::size_t c = 0) { return samples[index(x, y, c)]; }
  float at(std::size_t x, std::size_t y, std::size_t c = 0) const { return samples[index(x, y, c)]; }

  std::span<float> plane(std::size_t c) { return std::span(samples).subspan(c * plane_size(), plane_size()); }
  std::span<const float> plane(std::size_t c) const {
    return std::span(samples).subspan(c * plane_size(), plane_size());
  }

  std::size_t valid_count() const {
    if (mask.empty()) return samples.size();
    return static_cast<std::size_t>(std::count_if(mask.begin(), mask.end(), [](auto m) { return m != 0; }));
  }
};

/// Throws unless dims, sample count, mask length and finiteness of valid samples agree.
inline void validate(const Field& f) {
  if (f.nx == 0 || f.ny == 0 || f.ncomp == 0) throw Error(ErrorCode::bad_dims, "field dimensions must be positive");
  if (f.samples.size() != f.size()) throw Error(ErrorCode::bad_dims, "sample count does not match dimensions");
  if (!f.mask.empty() && f.mask.size() != f.samples.size())
    throw Error(ErrorCode::bad_dims, "mask length does not match sample count");
  for (std::size_t i = 0; i < f.samples.size(); ++i)
    if (f.valid(i) && !std::isfinite(f.samples[i]))
      throw Error(ErrorCode::non_finite, "non-finite valid sample at index " + std::to_string(i));
}

struct FieldStats {
  double vmin = 0.0;
  double vmax = 0.0;
  std::size_t valid_count = 0;
  double mean = 0.0;
  double variance = 0.0;
};

inline FieldStats compute_stats(const Field& f, std::size_t first = 0, std::size_t count = std::size_t(-1)) {
  FieldStats s;
  s.vmin = std::numeric_limits<double>::infinity();
  s.vmax = -std::numeric_limits<double>::infinity();
  const std::size_t end = std::min(f.samples.size(), count == std::size_t(-1) ? f.samples.size() : first + count);
  // Welford keeps the variance stable for fields with a large DC offset.
  double m2 = 0.0;
  for (std::size_t i = first; i < end; ++i) {
    if (!f.valid(i)) continue;
    const double v = f.samples[i];
    ++s.valid_count;
    s.vmin = std::min(s.vmin, v);
    s.vmax = std::max(s.vmax, v);
    const double d = v - s.mean;
    s.mean += d / static_cast<double>(s.valid_count);
    m2 += d * (v - s.mean);
  }
  if (s.valid_count == 0) {
    s.vmin = s.vmax = 0.0;
    return s;
  }
  s.variance = m2 / static_cast<double>(s.valid_count);
  s.mean = std::clamp(s.mean, s.vmin, s.vmax);
  return s;
}

// ---------------------------------------------------------------------------
// FLD1 raw format

inline constexpr std::size_t kFld1HeaderBytes = 32;

inline std::vector<std::uint8_t> serialize_raw(const Field& f) {
  validate(f);
  ByteWriter w;
  w.put_bytes(std::span<const std::uint8_t>(reinterpret_cast<const std::uint8_t*>("FLD1"), 4));
  w.put<std::uint32_t>(1);
  w.put<std::uint32_t>(static_cast<std::uint32_t>(f.nx));
  w.put<std::uint32_t>(static_cast<std::uint32_t>(f.ny));
  w.put<std::uint32_t>(static_cast<std::uint32_t>(f.ncomp));
  w.put<std::uint8_t>(f.has_mask() ? 1 : 0);
  w.put<std::uint8_t>(0);
  for (int i = 0; i < 10; ++i) w.put<std::uint8_t>(0);
  for (float v : f.samples) w.put<float>(v);
  if (f.has_mask())
    for (auto m : f.mask) w.put<std::uint8_t>(m ? 1 : 0);
  return w.take();
}

inline Field parse_raw(std::span<const std::uint8_t> bytes) {
  if (bytes.size() < 4 || std::memcmp(bytes.data(), "FLD1", 4) != 0)
    throw Error(ErrorCode::bad_magic, "not an FLD1 file");
  if (bytes.size() < kFld1HeaderBytes) throw Error(ErrorCode::truncated, "FLD1 header truncated");
  ByteReader r(bytes);
  r.skip(4);
  if (r.get<std::uint32_t>() != 1) throw Error(ErrorCode::bad_version, "unsupported FLD1 version");
  Field f;
  f.nx = r.get<std::uint32_t>();
  f.ny = r.get<std::uint32_t>();
  f.ncomp = r.get<std::uint32_t>();
  const auto mask_flag = r.get<std::uint8_t>();
  const auto dtype = r.get<std::uint8_t>();
  r.skip(10);
  if (dtype != 0) throw Error(ErrorCode::bad_dims, "unsupported FLD1 sample type");
  if (mask_flag > 1) throw Error(ErrorCode::bad_dims, "bad FLD1 mask flag");
  if (f.nx == 0 || f.ny == 0 || f.ncomp == 0) throw Error(ErrorCode::bad_dims, "zero FLD1 dimension");
  const std::size_t n = f.size();
  const std::size_t payload = n * sizeof(float) + (mask_flag ? n : 0);
  if (r.remaining() < payload) throw Error(ErrorCode::truncated, "FLD1 payload truncated");
  f.samples.resize(n);
  for (auto& v : f.samples) v = r.get<float>();
  if (mask_flag) {
    f.mask.resize(n);
    for (auto& m : f.mask) m = r.get<std::uint8_t>() ? 1 : 0;
  }
  validate(f);
  return f;
}

inline std::vector<std::uint8_t> read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::io, "cannot open " + path.string());
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  if (in.bad()) throw Error(ErrorCode::io, "read failed: " + path.string());
  return bytes;
}

/// Writes through a sibling temporary and renames, so a failed write leaves no partial file.
inline void write_file_atomic(const std::filesystem::path& path, std::span<const std::uint8_t> bytes) {
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw Error(ErrorCode::io, "cannot create " + tmp.string());
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    out.flush();
    if (!out) {
      std::error_code ec;
      std::filesystem::remove(tmp, ec);
      throw Error(ErrorCode::io, "write failed: " + tmp.string());
    }
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) {
    std::filesystem::remove(tmp, ec);
    throw Error(ErrorCode::io, "rename failed: " + path.string());
  }
}

inline Field load_raw(const std::filesystem::path& path) { return parse_raw(read_file(path)); }

inline std::size_t write_raw(const Field& f, const std::filesystem::path& path) {
  auto bytes = serialize_raw(f);
  write_file_atomic(path, bytes);
  return bytes.size();
}

}  // namespace sbc
