#pragma once

// Affine normalization of floating-point samples to a B-bit fixed-point
// range, per-subband deadzone quantization, and input entropy estimation.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include "sbc/dwt.hpp"
#include "sbc/error.hpp"
#include "sbc/field.hpp"

namespace sbc {

inline constexpr int kDefaultBits = 26;

// Step sizes are stored as 2^(R - e) (1 + m / 2^11) with a 5-bit e and an
// 11-bit m; R = 4 covers steps in [2^-27, 32).
inline constexpr int kStepRangeExponent = 4;

inline std::uint16_t encode_step(double step) {
  if (!(step > 0.0) || !std::isfinite(step)) throw Error(ErrorCode::bad_argument, "step must be positive");
  int e = kStepRangeExponent - static_cast<int>(std::floor(std::log2(step)));
  e = std::clamp(e, 0, 31);
  double m = std::round((step / std::ldexp(1.0, kStepRangeExponent - e) - 1.0) * 2048.0);
  if (m >= 2048.0) {
    if (e > 0) {
      --e;
      m = 0.0;
    } else {
      m = 2047.0;
    }
  }
  m = std::clamp(m, 0.0, 2047.0);
  return static_cast<std::uint16_t>((e << 11) | static_cast<int>(m));
}

inline double decode_step(std::uint16_t code) {
  const int e = code >> 11;
  const int m = code & 0x7ff;
  return std::ldexp(1.0 + m / 2048.0, kStepRangeExponent - e);
}

struct QuantSpec {
  int bits = kDefaultBits;
  double offset = 0.0;
  double scale = 1.0;
  std::uint8_t recon_bias_num = 128;  // reconstruction offset = num / 256
  std::vector<std::uint16_t> step_codes;
  std::vector<double> steps;  // decode_step(step_codes[b])

  double recon_bias() const { return recon_bias_num / 256.0; }
  double normalize(double x) const { return (x - offset) * scale; }
  double denormalize(double v) const { return v / scale + offset; }
};

/// offset = mid-range, scale = (2^B - 1) / range, step[b] = 1 / sqrt(gain[b])
/// rounded to the stored step precision. Throws degenerate_range when the
/// field is constant.
inline QuantSpec derive_spec(const FieldStats& stats, int bits, std::span<const double> gains) {
  if (bits < 8 || bits > 30) throw Error(ErrorCode::bad_argument, "precision must be in [8, 30] bits");
  if (!(stats.vmax > stats.vmin)) throw Error(ErrorCode::degenerate_range, "field has zero dynamic range");
  QuantSpec spec;
  spec.bits = bits;
  spec.offset = (stats.vmax + stats.vmin) / 2.0;
  spec.scale = (std::ldexp(1.0, bits) - 1.0) / (stats.vmax - stats.vmin);
  for (double g : gains) {
    if (!(g > 0.0)) throw Error(ErrorCode::bad_argument, "subband gains must be positive");
    spec.step_codes.push_back(encode_step(1.0 / std::sqrt(g)));
    spec.steps.push_back(decode_step(spec.step_codes.back()));
  }
  return spec;
}

struct QuantizedPyramid {
  std::size_t width = 0;
  std::size_t height = 0;
  int levels = 0;
  std::vector<BandInfo> info;
  std::vector<std::vector<std::int32_t>> bands;
};

inline std::string band_name(const BandInfo& b) {
  static constexpr const char* names[] = {"LL", "HL", "LH", "HH"};
  return names[static_cast<int>(b.orient)] + std::to_string(b.level);
}

/// Deadzone rule q = sign(c) floor(|c| / step).
inline std::int32_t quantize_value(double c, double step) {
  const double m = std::floor(std::abs(c) / step);
  if (!(m < 2147483648.0)) throw Error(ErrorCode::overflow, "quantized magnitude does not fit 31 bits");
  const auto q = static_cast<std::int32_t>(m);
  return c < 0.0 ? -q : q;
}

/// Midpoint-style reconstruction of a coefficient whose magnitude bits are
/// known down to bit plane `known_plane` (0 = full precision).
inline double dequantize_value(std::int32_t q, int known_plane, double step, double bias) {
  const std::uint32_t mag = q < 0 ? static_cast<std::uint32_t>(-static_cast<std::int64_t>(q)) : q;
  const std::uint32_t partial = mag >> known_plane;
  if (partial == 0) return 0.0;
  const double v = (static_cast<double>(partial) + bias) * std::ldexp(step, known_plane);
  return q < 0 ? -v : v;
}

inline QuantizedPyramid quantize(const SubbandPyramid& pyr, const QuantSpec& spec) {
  if (spec.steps.size() != pyr.bands.size()) throw Error(ErrorCode::bad_argument, "step table size mismatch");
  QuantizedPyramid q;
  q.width = pyr.width;
  q.height = pyr.height;
  q.levels = pyr.levels;
  q.info = pyr.info;
  q.bands.resize(pyr.bands.size());
  for (std::size_t b = 0; b < pyr.bands.size(); ++b) {
    const double step = spec.steps[b];
    auto& out = q.bands[b];
    out.resize(pyr.bands[b].data.size());
    try {
      for (std::size_t i = 0; i < out.size(); ++i) out[i] = quantize_value(pyr.bands[b].data[i], step);
    } catch (const Error&) {
      throw Error(ErrorCode::overflow, "subband " + band_name(pyr.info[b]) +
                                           " overflows 31-bit magnitudes; reduce the precision in bits");
    }
  }
  return q;
}

/// Reconstructs coefficients. `known_planes`, when non-empty, holds per band
/// and per sample the lowest magnitude bit plane actually decoded.
inline SubbandPyramid dequantize(const QuantizedPyramid& q, const QuantSpec& spec,
                                 const std::vector<std::vector<std::uint8_t>>& known_planes = {}) {
  SubbandPyramid pyr;
  pyr.width = q.width;
  pyr.height = q.height;
  pyr.levels = q.levels;
  pyr.info = q.info;
  pyr.gains = compute_gains(q.width, q.height, q.levels);
  const double bias = spec.recon_bias();
  for (std::size_t b = 0; b < q.bands.size(); ++b) {
    Plane p(q.info[b].width, q.info[b].height);
    const bool partial = !known_planes.empty() && !known_planes[b].empty();
    for (std::size_t i = 0; i < p.data.size(); ++i)
      p.data[i] = dequantize_value(q.bands[b][i], partial ? known_planes[b][i] : 0, spec.steps[b], bias);
    pyr.bands.push_back(std::move(p));
  }
  return pyr;
}

/// Upper bound on the first-order entropy (bits/sample) of the B-bit uniform
/// quantization of the valid samples. A 2^16-bin histogram gives the coarse
/// entropy; each occupied bin adds log2 of the number of quantizer levels
/// spanned by the samples that fall in it.
inline double estimate_entropy(const Field& field, int bits) {
  if (bits < 1 || bits > 52) throw Error(ErrorCode::bad_argument, "precision must be in [1, 52] bits");
  const auto stats = compute_stats(field);
  if (stats.valid_count == 0 || !(stats.vmax > stats.vmin)) return 0.0;
  const int coarse_bits = std::min(bits, 16);
  const int shift = bits - coarse_bits;
  const std::size_t nbins = std::size_t{1} << coarse_bits;
  const double top = std::ldexp(1.0, bits) - 1.0;
  const double scale = top / (stats.vmax - stats.vmin);
  std::vector<std::uint64_t> count(nbins, 0), lo(nbins, std::numeric_limits<std::uint64_t>::max()), hi(nbins, 0);
  for (std::size_t i = 0; i < field.samples.size(); ++i) {
    if (!field.valid(i)) continue;
    const double v = std::clamp(std::floor((field.samples[i] - stats.vmin) * scale), 0.0, top);
    const auto k = static_cast<std::uint64_t>(v);
    const std::size_t bin = static_cast<std::size_t>(k >> shift);
    ++count[bin];
    lo[bin] = std::min(lo[bin], k);
    hi[bin] = std::max(hi[bin], k);
  }
  const double n = static_cast<double>(stats.valid_count);
  double h = 0.0;
  for (std::size_t b = 0; b < nbins; ++b) {
    if (!count[b]) continue;
    const double p = static_cast<double>(count[b]) / n;
    h += -p * std::log2(p) + p * std::log2(static_cast<double>(hi[b] - lo[b] + 1));
  }
  return h;
}

}  // namespace sbc
