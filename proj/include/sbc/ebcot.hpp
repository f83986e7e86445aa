#pragma once

// Embedded block coding: code blocks are coded bit plane by bit plane with
// three passes per plane (significance propagation, refinement, cleanup)
// through an adaptive binary arithmetic coder. The coder is terminated at
// every pass end, so each pass boundary is a valid truncation point.

#include <array>
#include <cassert>
#include <cstdint>
#include <span>
#include <vector>

#include "sbc/dwt.hpp"
#include "sbc/error.hpp"
#include "sbc/quant.hpp"

namespace sbc {

// ---------------------------------------------------------------------------
// Adaptive binary arithmetic coder

inline constexpr std::size_t kMaxContexts = 16;
inline constexpr std::uint32_t kCountLimit = 1024;

/// Count-based probability state: P(0) = (zeros + 1) / (total + 2).
struct BitContext {
  std::uint16_t zeros = 0;
  std::uint16_t ones = 0;

  std::uint32_t split(std::uint32_t range) const {
    return (range / (static_cast<std::uint32_t>(zeros) + ones + 2)) * (static_cast<std::uint32_t>(zeros) + 1);
  }
  void update(int bit) {
    if (bit)
      ++ones;
    else
      ++zeros;
    if (static_cast<std::uint32_t>(zeros) + ones >= kCountLimit) {
      zeros = static_cast<std::uint16_t>((zeros + 1) / 2);
      ones = static_cast<std::uint16_t>((ones + 1) / 2);
    }
  }
};

using ContextTable = std::array<BitContext, kMaxContexts>;

inline constexpr std::uint32_t kRangeTop = 1u << 24;

class ArithEncoder {
 public:
  explicit ArithEncoder(std::vector<std::uint8_t>& out) : out_(out), segment_start_(out.size()) {}

  void encode(BitContext& ctx, int bit) {
    const std::uint32_t bound = ctx.split(range_);
    if (bit) {
      low_ += bound;
      range_ -= bound;
      if (low_ >> 32) carry();
    } else {
      range_ = bound;
    }
    ctx.update(bit);
    while (range_ < kRangeTop) {
      out_.push_back(static_cast<std::uint8_t>(low_ >> 24));
      low_ = (low_ << 8) & 0xffffffffu;
      range_ <<= 8;
    }
  }

  /// Emits the single byte that pins a code value inside the current
  /// interval (the decoder pads with zeros) and restarts for a new segment.
  void terminate() {
    std::uint64_t v = (low_ + 0xffffffu) & ~std::uint64_t{0xffffff};
    if (v >> 32) {
      carry();
      v &= 0xffffffffu;
    }
    out_.push_back(static_cast<std::uint8_t>(v >> 24));
    low_ = 0;
    range_ = 0xffffffffu;
    segment_start_ = out_.size();
  }

 private:
  void carry() {
    low_ &= 0xffffffffu;
    std::size_t i = out_.size();
    while (i > segment_start_ && out_[i - 1] == 0xff) out_[--i] = 0;
    assert(i > segment_start_);
    ++out_[i - 1];
  }

  std::vector<std::uint8_t>& out_;
  std::size_t segment_start_;
  std::uint64_t low_ = 0;
  std::uint32_t range_ = 0xffffffffu;
};

class ArithDecoder {
 public:
  explicit ArithDecoder(std::span<const std::uint8_t> segment) : seg_(segment) {
    for (int i = 0; i < 4; ++i) code_ = (code_ << 8) | next();
  }

  int decode(BitContext& ctx) {
    const std::uint32_t bound = ctx.split(range_);
    int bit;
    if (code_ < bound) {
      range_ = bound;
      bit = 0;
    } else {
      code_ -= bound;
      range_ -= bound;
      bit = 1;
    }
    ctx.update(bit);
    while (range_ < kRangeTop) {
      code_ = (code_ << 8) | next();
      range_ <<= 8;
    }
    return bit;
  }

 private:
  std::uint32_t next() { return pos_ < seg_.size() ? seg_[pos_++] : 0u; }

  std::span<const std::uint8_t> seg_;
  std::size_t pos_ = 0;
  std::uint32_t code_ = 0;
  std::uint32_t range_ = 0xffffffffu;
};

// ---------------------------------------------------------------------------
// Code blocks

struct CodeBlock {
  std::uint32_t component = 0;
  std::uint32_t band = 0;
  Orientation orient = Orientation::LL;
  std::size_t x0 = 0, y0 = 0;  // origin inside the subband
  std::size_t width = 0, height = 0;
  std::vector<std::int32_t> coeffs;  // row-major, signed
  int msb_planes = 0;
};

inline int magnitude_planes(std::span<const std::int32_t> coeffs) {
  std::uint32_t m = 0;
  for (auto q : coeffs) m = std::max(m, q < 0 ? static_cast<std::uint32_t>(-static_cast<std::int64_t>(q)) : q);
  int planes = 0;
  while (m) {
    m >>= 1;
    ++planes;
  }
  return planes;
}

/// Tiles every subband with block_size x block_size blocks (clipped at the
/// right and bottom edges), bands coarse to fine, blocks in raster order.
inline std::vector<CodeBlock> partition(const QuantizedPyramid& q, std::size_t block_size = 64,
                                        std::uint32_t component = 0) {
  if (block_size < 16 || block_size > 64 || (block_size & (block_size - 1)))
    throw Error(ErrorCode::bad_argument, "block size must be a power of two in [16, 64]");
  std::vector<CodeBlock> blocks;
  for (std::size_t b = 0; b < q.bands.size(); ++b) {
    const auto& info = q.info[b];
    for (std::size_t y0 = 0; y0 < info.height; y0 += block_size)
      for (std::size_t x0 = 0; x0 < info.width; x0 += block_size) {
        CodeBlock blk;
        blk.component = component;
        blk.band = static_cast<std::uint32_t>(b);
        blk.orient = info.orient;
        blk.x0 = x0;
        blk.y0 = y0;
        blk.width = std::min(block_size, info.width - x0);
        blk.height = std::min(block_size, info.height - y0);
        blk.coeffs.resize(blk.width * blk.height);
        for (std::size_t y = 0; y < blk.height; ++y)
          for (std::size_t x = 0; x < blk.width; ++x)
            blk.coeffs[y * blk.width + x] = q.bands[b][(y0 + y) * info.width + x0 + x];
        blk.msb_planes = magnitude_planes(blk.coeffs);
        blocks.push_back(std::move(blk));
      }
  }
  return blocks;
}

struct PassRecord {
  int pass_index = 0;
  std::size_t cum_bytes = 0;
  double delta_d = 0.0;      // weighted distortion decrease, clamped at zero
  double raw_delta_d = 0.0;  // unclamped; a refinement pass may slightly increase error
  bool feasible_truncation = true;
};

struct EncodedBlock {
  std::vector<std::uint8_t> bytes;
  std::vector<PassRecord> passes;
  int msb_planes = 0;
};

inline constexpr std::uint8_t kBlockSentinel = 0xA5;

namespace ctx {
inline constexpr int sign = 9;
inline constexpr int refine_first = 10;
inline constexpr int refine_later = 11;

inline int orientation_class(Orientation o) {
  switch (o) {
    case Orientation::LL:
    case Orientation::LH: return 0;
    case Orientation::HL: return 1;
    case Orientation::HH: return 2;
  }
  return 0;
}
}  // namespace ctx

/// Reconstructed magnitude, in step units, from the bits at or above `plane`.
inline double midpoint_magnitude(std::uint32_t mag, int plane, double bias = 0.5) {
  const std::uint32_t partial = plane >= 32 ? 0 : mag >> plane;
  if (partial == 0) return 0.0;
  return std::ldexp(static_cast<double>(partial) + bias, plane);
}

/// Value the coder aims at: the finest quantization cell's reconstruction.
inline double target_magnitude(std::uint32_t mag, double bias = 0.5) { return midpoint_magnitude(mag, 0, bias); }

/// Weighted squared-error decrease when the samples flagged in `coded` learn
/// their bit at `plane`.
inline double pass_distortion(const CodeBlock& block, int plane, std::span<const std::uint8_t> coded,
                              double weight = 1.0, double bias = 0.5) {
  double sum = 0.0;
  for (std::size_t i = 0; i < block.coeffs.size(); ++i) {
    if (!coded[i]) continue;
    const std::int32_t q = block.coeffs[i];
    const std::uint32_t mag = q < 0 ? static_cast<std::uint32_t>(-static_cast<std::int64_t>(q)) : q;
    const double t = target_magnitude(mag, bias);
    const double before = t - midpoint_magnitude(mag, plane + 1, bias);
    const double after = t - midpoint_magnitude(mag, plane, bias);
    sum += before * before - after * after;
  }
  return weight * sum;
}

namespace detail {

// Shared scan state for encoder and decoder.
struct BlockScan {
  std::size_t w, h;
  std::vector<std::uint8_t> sig, visited, refined;

  BlockScan(std::size_t w_, std::size_t h_) : w(w_), h(h_), sig(w_ * h_, 0), visited(w_ * h_, 0), refined(w_ * h_, 0) {}

  int neighbours(std::size_t i) const {
    const std::size_t x = i % w, y = i / w;
    int n = 0;
    for (int dy = -1; dy <= 1; ++dy)
      for (int dx = -1; dx <= 1; ++dx) {
        if (!dx && !dy) continue;
        const auto xx = static_cast<std::ptrdiff_t>(x) + dx, yy = static_cast<std::ptrdiff_t>(y) + dy;
        if (xx < 0 || yy < 0 || xx >= static_cast<std::ptrdiff_t>(w) || yy >= static_cast<std::ptrdiff_t>(h)) continue;
        n += sig[static_cast<std::size_t>(yy) * w + static_cast<std::size_t>(xx)];
      }
    return n;
  }

  int sig_context(std::size_t i, int cls) const {
    const int n = neighbours(i);
    return cls * 3 + (n >= 2 ? 2 : n);
  }
};

}  // namespace detail

/// Codes the block's magnitude planes MSB first, three passes per plane.
/// `weight` scales distortion (subband gain * step^2 * component gain).
inline EncodedBlock encode_block(const CodeBlock& block, double weight = 1.0, double bias = 0.5) {
  EncodedBlock out;
  const int planes = magnitude_planes(block.coeffs);
  out.msb_planes = planes;
  if (planes == 0) return out;

  const std::size_t n = block.coeffs.size();
  std::vector<std::uint32_t> mag(n);
  std::vector<std::uint8_t> neg(n);
  for (std::size_t i = 0; i < n; ++i) {
    const std::int32_t q = block.coeffs[i];
    mag[i] = q < 0 ? static_cast<std::uint32_t>(-static_cast<std::int64_t>(q)) : q;
    neg[i] = q < 0;
  }

  detail::BlockScan scan(block.width, block.height);
  std::vector<int> sig_plane(n, -1);
  ContextTable contexts{};
  ArithEncoder enc(out.bytes);
  const int cls = ctx::orientation_class(block.orient);
  std::vector<std::uint8_t> coded(n);
  int pass_index = 0;

  auto finish_pass = [&](int plane) {
    enc.terminate();
    PassRecord rec;
    rec.pass_index = pass_index++;
    rec.raw_delta_d = pass_distortion(block, plane, coded, weight, bias);
    rec.delta_d = std::max(0.0, rec.raw_delta_d);
    rec.cum_bytes = out.bytes.size();
    out.passes.push_back(rec);
    std::fill(coded.begin(), coded.end(), 0);
  };

  auto code_significance = [&](std::size_t i, int plane) {
    const int bit = (mag[i] >> plane) & 1;
    enc.encode(contexts[scan.sig_context(i, cls)], bit);
    coded[i] = 1;
    if (bit) {
      enc.encode(contexts[ctx::sign], neg[i]);
      scan.sig[i] = 1;
      sig_plane[i] = plane;
    }
  };

  for (int p = planes - 1; p >= 0; --p) {
    // Significance propagation.
    for (std::size_t i = 0; i < n; ++i) {
      if (scan.sig[i] || scan.neighbours(i) == 0) continue;
      scan.visited[i] = 1;
      code_significance(i, p);
    }
    finish_pass(p);
    // Magnitude refinement of samples significant before this plane.
    for (std::size_t i = 0; i < n; ++i) {
      if (!scan.sig[i] || sig_plane[i] <= p) continue;
      enc.encode(contexts[scan.refined[i] ? ctx::refine_later : ctx::refine_first], (mag[i] >> p) & 1);
      scan.refined[i] = 1;
      coded[i] = 1;
    }
    finish_pass(p);
    // Cleanup.
    for (std::size_t i = 0; i < n; ++i) {
      if (scan.sig[i] || scan.visited[i]) continue;
      code_significance(i, p);
    }
    finish_pass(p);
    std::fill(scan.visited.begin(), scan.visited.end(), 0);
  }
  out.bytes.push_back(kBlockSentinel);
  out.passes.back().cum_bytes = out.bytes.size();
  return out;
}

struct DecodedBlock {
  std::vector<std::int32_t> coeffs;    // only decoded magnitude bits are set
  std::vector<std::uint8_t> known_plane;  // lowest decoded plane per sample
  int planes_decoded = 0;              // fully decoded bit planes
};

/// Decodes the first pass_ends.size() passes. pass_ends[k] is the cumulative
/// byte count through pass k (the encoder's cum_bytes). The sentinel is
/// checked when every pass is present.
inline DecodedBlock decode_block(std::span<const std::uint8_t> bytes, std::span<const std::size_t> pass_ends,
                                 std::size_t width, std::size_t height, Orientation orient, int msb_planes) {
  const std::size_t n = width * height;
  DecodedBlock out;
  out.coeffs.assign(n, 0);
  out.known_plane.assign(n, static_cast<std::uint8_t>(msb_planes));
  const std::size_t total_passes = static_cast<std::size_t>(msb_planes) * 3;
  if (msb_planes < 0 || msb_planes > 31) throw Error(ErrorCode::corrupt_stream, "bad magnitude plane count");
  if (pass_ends.size() > total_passes) throw Error(ErrorCode::corrupt_stream, "more passes than coded planes");
  if (pass_ends.empty()) return out;
  for (std::size_t k = 0; k < pass_ends.size(); ++k)
    if ((k > 0 && pass_ends[k] < pass_ends[k - 1]) || pass_ends[k] > bytes.size())
      throw Error(ErrorCode::corrupt_stream, "pass lengths exceed block data");

  std::size_t last_end = pass_ends.back();
  if (pass_ends.size() == total_passes) {
    const std::size_t prev = pass_ends.size() > 1 ? pass_ends[pass_ends.size() - 2] : 0;
    if (last_end <= prev || bytes[last_end - 1] != kBlockSentinel)
      throw Error(ErrorCode::corrupt_stream, "block sentinel mismatch");
    --last_end;
  }
  auto segment = [&](std::size_t k) {
    const std::size_t start = k == 0 ? 0 : pass_ends[k - 1];
    const std::size_t end = k + 1 == pass_ends.size() ? last_end : pass_ends[k];
    return bytes.subspan(start, end - start);
  };

  std::vector<std::uint32_t> mag(n, 0);
  std::vector<std::uint8_t> neg(n, 0);
  std::vector<int> sig_plane(n, -1);
  detail::BlockScan scan(width, height);
  ContextTable contexts{};
  const int cls = ctx::orientation_class(orient);

  std::size_t pass = 0;
  auto decode_significance = [&](ArithDecoder& dec, std::size_t i, int plane) {
    out.known_plane[i] = static_cast<std::uint8_t>(plane);
    if (dec.decode(contexts[scan.sig_context(i, cls)])) {
      neg[i] = static_cast<std::uint8_t>(dec.decode(contexts[ctx::sign]));
      mag[i] |= 1u << plane;
      scan.sig[i] = 1;
      sig_plane[i] = plane;
    }
  };

  for (int p = msb_planes - 1; p >= 0 && pass < pass_ends.size(); --p) {
    {
      ArithDecoder dec(segment(pass++));
      for (std::size_t i = 0; i < n; ++i) {
        if (scan.sig[i] || scan.neighbours(i) == 0) continue;
        scan.visited[i] = 1;
        decode_significance(dec, i, p);
      }
    }
    if (pass == pass_ends.size()) break;
    {
      ArithDecoder dec(segment(pass++));
      for (std::size_t i = 0; i < n; ++i) {
        if (!scan.sig[i] || sig_plane[i] <= p) continue;
        if (dec.decode(contexts[scan.refined[i] ? ctx::refine_later : ctx::refine_first])) mag[i] |= 1u << p;
        scan.refined[i] = 1;
        out.known_plane[i] = static_cast<std::uint8_t>(p);
      }
    }
    if (pass == pass_ends.size()) break;
    {
      ArithDecoder dec(segment(pass++));
      for (std::size_t i = 0; i < n; ++i) {
        if (scan.sig[i] || scan.visited[i]) continue;
        decode_significance(dec, i, p);
      }
    }
    std::fill(scan.visited.begin(), scan.visited.end(), 0);
  }
  out.planes_decoded = static_cast<int>(pass / 3);
  for (std::size_t i = 0; i < n; ++i) {
    const auto m = static_cast<std::int32_t>(mag[i]);
    out.coeffs[i] = neg[i] ? -m : m;
  }
  return out;
}

}  // namespace sbc
