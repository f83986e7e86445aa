#pragma once

// SBC1 codestream: header, packet index and packets. A packet carries one
// quality layer's contribution for one (resolution, component) pair; inside
// it every code block of the group has a pass count, pass lengths and data.
// See FORMAT.md for the byte layout.

#include <algorithm>
#include <cstdint>
#include <cstring>
#include <map>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "sbc/bytes.hpp"
#include "sbc/dwt.hpp"
#include "sbc/ebcot.hpp"
#include "sbc/error.hpp"
#include "sbc/quant.hpp"

namespace sbc {

inline constexpr std::uint16_t kCodestreamVersion = 1;

struct LayerInfo {
  double target_rate = 0.0;          // bits per sample
  std::uint64_t achieved_bytes = 0;  // size of the stream truncated after this layer
};

struct CodestreamHeader {
  std::uint32_t nx = 0, ny = 0, ncomp = 1;
  bool constant = false;
  double constant_value = 0.0;
  std::string name, units;
  int levels = 0;
  ComponentTransform component_transform = ComponentTransform::none;
  std::uint32_t block_size = 64;
  QuantSpec quant;
  std::vector<LayerInfo> layers;       // ascending rate
  std::vector<std::uint8_t> mask;      // empty: all valid
  std::vector<std::uint8_t> block_msb; // per block, in geometry order

  std::size_t samples() const { return std::size_t{nx} * ny * ncomp; }
  int resolutions() const { return levels + 1; }
};

/// Rectangle in full-resolution sample coordinates.
struct Region {
  std::size_t x = 0, y = 0, w = 0, h = 0;
  bool operator==(const Region&) const = default;
};

struct PacketKey {
  std::uint8_t layer = 0;  // 0-based
  std::uint8_t resolution = 0;
  std::uint16_t component = 0;
  auto operator<=>(const PacketKey&) const = default;
};

struct IndexEntry {
  PacketKey key;
  std::uint32_t offset = 0;  // relative to the packet data area
  std::uint32_t length = 0;
};

// ---------------------------------------------------------------------------
// Block geometry

struct BlockRef {
  std::uint32_t component = 0;
  std::uint32_t band = 0;
  int resolution = 0;
  int level = 0;
  Orientation orient = Orientation::LL;
  std::size_t x0 = 0, y0 = 0, width = 0, height = 0;
};

struct BlockGeometry {
  std::vector<BandInfo> bands;
  std::vector<BlockRef> blocks;  // component-major, bands coarse to fine, raster order
  std::vector<std::vector<std::vector<std::uint32_t>>> groups;  // [resolution][component] -> block ids
};

inline BlockGeometry block_geometry(std::size_t nx, std::size_t ny, std::size_t ncomp, int levels,
                                    std::size_t block_size) {
  BlockGeometry g;
  g.bands = band_layout(nx, ny, levels);
  g.groups.assign(levels + 1, std::vector<std::vector<std::uint32_t>>(ncomp));
  for (std::size_t c = 0; c < ncomp; ++c)
    for (std::size_t b = 0; b < g.bands.size(); ++b) {
      const auto& info = g.bands[b];
      for (std::size_t y0 = 0; y0 < info.height; y0 += block_size)
        for (std::size_t x0 = 0; x0 < info.width; x0 += block_size) {
          BlockRef r;
          r.component = static_cast<std::uint32_t>(c);
          r.band = static_cast<std::uint32_t>(b);
          r.resolution = band_resolution(b);
          r.level = info.level;
          r.orient = info.orient;
          r.x0 = x0;
          r.y0 = y0;
          r.width = std::min(block_size, info.width - x0);
          r.height = std::min(block_size, info.height - y0);
          g.groups[r.resolution][c].push_back(static_cast<std::uint32_t>(g.blocks.size()));
          g.blocks.push_back(r);
        }
    }
  return g;
}

inline BlockGeometry block_geometry(const CodestreamHeader& h) {
  if (h.constant) return BlockGeometry{};
  return block_geometry(h.nx, h.ny, h.ncomp, h.levels, h.block_size);
}

// ---------------------------------------------------------------------------
// Region footprint

/// Inclusive index range along one axis.
struct Span1 {
  std::ptrdiff_t lo = 0, hi = -1;
  bool empty() const { return hi < lo; }
};

/// Ranges, per level 0..levels, of coefficients needed to reconstruct the
/// region [lo, hi] of LL_start. Each level dilates by the 4-sample 9/7
/// synthesis half-support before halving.
inline std::vector<Span1> footprint_1d(std::size_t n, int levels, int start_level, Span1 region) {
  std::vector<Span1> out(levels + 1);
  std::vector<std::ptrdiff_t> len(levels + 1);
  len[0] = static_cast<std::ptrdiff_t>(n);
  for (int l = 1; l <= levels; ++l) len[l] = (len[l - 1] + 1) / 2;
  auto floor_div2 = [](std::ptrdiff_t v) { return v >= 0 ? v / 2 : -((-v + 1) / 2); };
  out[start_level] = {std::max<std::ptrdiff_t>(0, region.lo), std::min(len[start_level] - 1, region.hi)};
  for (int l = start_level + 1; l <= levels; ++l) {
    const auto& prev = out[l - 1];
    if (prev.empty()) {
      out[l] = {};
      continue;
    }
    out[l] = {std::max<std::ptrdiff_t>(0, floor_div2(prev.lo - 5)), std::min(len[l] - 1, floor_div2(prev.hi + 4))};
  }
  return out;
}

/// Region mapped to the sample grid of LL_r (inclusive bounds).
inline std::pair<Span1, Span1> region_at_resolution(const Region& r, int drop) {
  if (r.w == 0 || r.h == 0) return {Span1{}, Span1{}};
  const auto sx = static_cast<std::ptrdiff_t>(r.x), sy = static_cast<std::ptrdiff_t>(r.y);
  return {Span1{sx >> drop, (sx + static_cast<std::ptrdiff_t>(r.w) - 1) >> drop},
          Span1{sy >> drop, (sy + static_cast<std::ptrdiff_t>(r.h) - 1) >> drop}};
}

/// Marks the blocks whose coefficients feed the region when reconstructing
/// at resolution index max_resolution. Blocks of finer resolutions are never
/// selected. No region selects every block up to max_resolution.
inline std::vector<std::uint8_t> select_blocks(const CodestreamHeader& h, const BlockGeometry& g,
                                               int max_resolution, const std::optional<Region>& region) {
  std::vector<std::uint8_t> keep(g.blocks.size(), 0);
  const int drop = h.levels - max_resolution;
  std::vector<Span1> fx, fy;
  if (region) {
    auto [rx, ry] = region_at_resolution(*region, drop);
    fx = footprint_1d(h.nx, h.levels, drop, rx);
    fy = footprint_1d(h.ny, h.levels, drop, ry);
  }
  for (std::size_t i = 0; i < g.blocks.size(); ++i) {
    const auto& b = g.blocks[i];
    if (b.resolution > max_resolution) continue;
    if (!region) {
      keep[i] = 1;
      continue;
    }
    const auto& sx = fx[b.level];
    const auto& sy = fy[b.level];
    if (sx.empty() || sy.empty()) continue;
    const auto bx0 = static_cast<std::ptrdiff_t>(b.x0), by0 = static_cast<std::ptrdiff_t>(b.y0);
    const auto bx1 = bx0 + static_cast<std::ptrdiff_t>(b.width) - 1, by1 = by0 + static_cast<std::ptrdiff_t>(b.height) - 1;
    if (bx1 >= sx.lo && bx0 <= sx.hi && by1 >= sy.lo && by0 <= sy.hi) keep[i] = 1;
  }
  return keep;
}

// ---------------------------------------------------------------------------
// Contributions: what one layer adds to one block

struct Contribution {
  std::vector<std::uint32_t> pass_lengths;
  std::vector<std::uint8_t> data;
  bool empty() const { return pass_lengths.empty(); }
};

/// [layer][block]
using ContributionTable = std::vector<std::vector<Contribution>>;

// ---------------------------------------------------------------------------
// Header serialization

namespace detail {

inline void write_mask_rle(ByteWriter& w, const std::vector<std::uint8_t>& mask) {
  std::vector<std::uint64_t> runs;
  std::uint8_t state = 1;
  std::uint64_t run = 0;
  for (auto m : mask) {
    const std::uint8_t v = m ? 1 : 0;
    if (v == state) {
      ++run;
    } else {
      runs.push_back(run);
      state = v;
      run = 1;
    }
  }
  runs.push_back(run);
  w.put_varint(runs.size());
  for (auto r : runs) w.put_varint(r);
}

inline std::vector<std::uint8_t> read_mask_rle(ByteReader& r, std::size_t n) {
  const auto count = r.get_varint();
  std::vector<std::uint8_t> mask;
  mask.reserve(n);
  std::uint8_t state = 1;
  for (std::uint64_t i = 0; i < count; ++i) {
    const auto run = r.get_varint();
    if (run > n - mask.size()) throw Error(ErrorCode::corrupt_stream, "mask runs exceed sample count");
    mask.insert(mask.end(), run, state);
    state ^= 1;
  }
  if (mask.size() != n) throw Error(ErrorCode::corrupt_stream, "mask runs do not cover the field");
  return mask;
}

}  // namespace detail

inline std::vector<std::uint8_t> serialize_header(const CodestreamHeader& h) {
  ByteWriter w;
  w.put_bytes(std::span<const std::uint8_t>(reinterpret_cast<const std::uint8_t*>("SBC1"), 4));
  w.put<std::uint16_t>(kCodestreamVersion);
  w.put<std::uint32_t>(h.nx);
  w.put<std::uint32_t>(h.ny);
  w.put<std::uint32_t>(h.ncomp);
  w.put<std::uint8_t>(static_cast<std::uint8_t>((h.constant ? 1 : 0) | (h.mask.empty() ? 0 : 2)));
  w.put<double>(h.constant_value);
  w.put_string(h.name);
  w.put_string(h.units);
  w.put<std::uint8_t>(static_cast<std::uint8_t>(h.levels));
  w.put<std::uint8_t>(static_cast<std::uint8_t>(h.component_transform));
  w.put<std::uint8_t>(static_cast<std::uint8_t>(h.block_size));
  w.put<std::uint8_t>(static_cast<std::uint8_t>(h.quant.bits));
  w.put<double>(h.quant.offset);
  w.put<double>(h.quant.scale);
  w.put<std::uint8_t>(h.quant.recon_bias_num);
  w.put<std::uint16_t>(static_cast<std::uint16_t>(h.quant.step_codes.size()));
  for (auto c : h.quant.step_codes) w.put<std::uint16_t>(c);
  w.put<std::uint8_t>(static_cast<std::uint8_t>(h.layers.size()));
  for (const auto& l : h.layers) {
    w.put<double>(l.target_rate);
    w.put<std::uint64_t>(l.achieved_bytes);
  }
  if (!h.mask.empty()) detail::write_mask_rle(w, h.mask);
  w.put<std::uint32_t>(static_cast<std::uint32_t>(h.block_msb.size()));
  for (auto m : h.block_msb) w.put<std::uint8_t>(m);
  return w.take();
}

inline CodestreamHeader parse_header(ByteReader& r) {
  if (r.remaining() < 4) throw Error(ErrorCode::bad_magic, "not an SBC1 codestream");
  auto magic = r.get_bytes(4);
  if (std::memcmp(magic.data(), "SBC1", 4) != 0) throw Error(ErrorCode::bad_magic, "not an SBC1 codestream");
  if (r.get<std::uint16_t>() != kCodestreamVersion) throw Error(ErrorCode::bad_version, "unsupported SBC1 version");
  CodestreamHeader h;
  h.nx = r.get<std::uint32_t>();
  h.ny = r.get<std::uint32_t>();
  h.ncomp = r.get<std::uint32_t>();
  if (h.nx == 0 || h.ny == 0 || h.ncomp == 0) throw Error(ErrorCode::corrupt_stream, "zero dimension in header");
  const auto flags = r.get<std::uint8_t>();
  h.constant = flags & 1;
  h.constant_value = r.get<double>();
  h.name = r.get_string();
  h.units = r.get_string();
  h.levels = r.get<std::uint8_t>();
  const auto ct = r.get<std::uint8_t>();
  if (ct > 2) throw Error(ErrorCode::corrupt_stream, "unknown component transform");
  h.component_transform = static_cast<ComponentTransform>(ct);
  h.block_size = r.get<std::uint8_t>();
  h.quant.bits = r.get<std::uint8_t>();
  h.quant.offset = r.get<double>();
  h.quant.scale = r.get<double>();
  h.quant.recon_bias_num = r.get<std::uint8_t>();
  const auto nsteps = r.get<std::uint16_t>();
  for (std::uint16_t i = 0; i < nsteps; ++i) {
    h.quant.step_codes.push_back(r.get<std::uint16_t>());
    h.quant.steps.push_back(decode_step(h.quant.step_codes.back()));
  }
  const auto nlayers = r.get<std::uint8_t>();
  for (std::uint8_t i = 0; i < nlayers; ++i) {
    LayerInfo l;
    l.target_rate = r.get<double>();
    l.achieved_bytes = r.get<std::uint64_t>();
    h.layers.push_back(l);
  }
  if (flags & 2) h.mask = detail::read_mask_rle(r, h.samples());
  const auto nblocks = r.get<std::uint32_t>();
  auto msb = r.get_bytes(nblocks);
  h.block_msb.assign(msb.begin(), msb.end());
  if (!h.constant) {
    if (h.levels > max_levels(h.nx, h.ny)) throw Error(ErrorCode::corrupt_stream, "decomposition depth too large");
    if (h.block_size < 16 || h.block_size > 64 || (h.block_size & (h.block_size - 1)))
      throw Error(ErrorCode::corrupt_stream, "bad block size");
    if (h.quant.steps.size() != static_cast<std::size_t>(3 * h.levels + 1))
      throw Error(ErrorCode::corrupt_stream, "step table does not match decomposition");
    if (!(h.quant.scale > 0.0)) throw Error(ErrorCode::corrupt_stream, "bad normalization scale");
    if (h.block_msb.size() != block_geometry(h).blocks.size())
      throw Error(ErrorCode::corrupt_stream, "block table does not match geometry");
    for (auto m : h.block_msb)
      if (m > 31) throw Error(ErrorCode::corrupt_stream, "bad block plane count");
  }
  return h;
}

/// Bytes occupied by the header plus an index of `npackets` entries.
inline std::size_t header_and_index_size(const CodestreamHeader& h, std::size_t npackets) {
  return serialize_header(h).size() + 4 + 12 * npackets;
}

// ---------------------------------------------------------------------------
// Codestream

class Codestream {
 public:
  Codestream() = default;

  /// Parses header and index; packet bodies are read on demand.
  static Codestream parse(std::vector<std::uint8_t> bytes) {
    Codestream cs;
    cs.bytes_ = std::make_shared<const std::vector<std::uint8_t>>(std::move(bytes));
    ByteReader r(*cs.bytes_);
    cs.header_ = parse_header(r);
    const auto npackets = r.get<std::uint32_t>();
    if (npackets > r.remaining() / 12) throw Error(ErrorCode::truncated, "packet index truncated");
    std::uint64_t expected = 0;
    for (std::uint32_t i = 0; i < npackets; ++i) {
      IndexEntry e;
      e.key.layer = r.get<std::uint8_t>();
      e.key.resolution = r.get<std::uint8_t>();
      e.key.component = r.get<std::uint16_t>();
      e.offset = r.get<std::uint32_t>();
      e.length = r.get<std::uint32_t>();
      if (e.offset != expected) throw Error(ErrorCode::corrupt_stream, "packet index offsets not contiguous");
      if (e.key.layer >= cs.header_.layers.size() || e.key.resolution > cs.header_.levels ||
          e.key.component >= cs.header_.ncomp)
        throw Error(ErrorCode::out_of_bounds, "packet key outside header bounds");
      if (!cs.index_.empty() && !(cs.index_.back().key < e.key))
        throw Error(ErrorCode::corrupt_stream, "packet index not in progression order");
      expected += e.length;
      cs.index_.push_back(e);
    }
    cs.data_offset_ = r.position();
    if (expected > r.remaining()) throw Error(ErrorCode::truncated, "packet data truncated");
    return cs;
  }

  const CodestreamHeader& header() const { return header_; }
  const std::vector<IndexEntry>& index() const { return index_; }
  std::span<const std::uint8_t> bytes() const { return bytes_ ? std::span(*bytes_) : std::span<const std::uint8_t>{}; }
  std::size_t size() const { return bytes_ ? bytes_->size() : 0; }
  std::size_t data_offset() const { return data_offset_; }

  std::span<const std::uint8_t> packet_body(std::size_t i) const {
    return bytes().subspan(data_offset_ + index_[i].offset, index_[i].length);
  }

  const IndexEntry* find(PacketKey key) const {
    auto it = std::lower_bound(index_.begin(), index_.end(), key,
                               [](const IndexEntry& e, const PacketKey& k) { return e.key < k; });
    if (it == index_.end() || it->key != key) return nullptr;
    return &*it;
  }

  std::span<const std::uint8_t> packet_body(const IndexEntry& e) const {
    return bytes().subspan(data_offset_ + e.offset, e.length);
  }

 private:
  std::shared_ptr<const std::vector<std::uint8_t>> bytes_;
  CodestreamHeader header_;
  std::vector<IndexEntry> index_;
  std::size_t data_offset_ = 0;
};

// ---------------------------------------------------------------------------
// Packets

/// Packet body: for each block of the group a varint pass count followed by
/// varint pass lengths, then the pass data of all blocks in group order. A
/// packet with no contributions has an empty body.
inline std::vector<std::uint8_t> write_packet(std::span<const std::uint32_t> group,
                                              const std::vector<Contribution>& layer) {
  if (std::all_of(group.begin(), group.end(), [&](auto id) { return layer[id].empty(); })) return {};
  ByteWriter w;
  for (auto id : group) {
    const auto& c = layer[id];
    w.put_varint(c.pass_lengths.size());
    for (auto len : c.pass_lengths) w.put_varint(len);
  }
  for (auto id : group) w.put_bytes(layer[id].data);
  return w.take();
}

inline void read_packet(std::span<const std::uint8_t> body, std::span<const std::uint32_t> group,
                        std::vector<Contribution>& layer) {
  if (body.empty()) return;
  ByteReader r(body);
  std::vector<std::size_t> data_len(group.size(), 0);
  for (std::size_t k = 0; k < group.size(); ++k) {
    auto& c = layer[group[k]];
    const auto n = r.get_varint();
    if (n > 93) throw Error(ErrorCode::corrupt_stream, "pass count out of range");
    c.pass_lengths.resize(n);
    for (auto& len : c.pass_lengths) {
      len = static_cast<std::uint32_t>(r.get_varint());
      data_len[k] += len;
    }
  }
  for (std::size_t k = 0; k < group.size(); ++k) {
    auto d = r.get_bytes(data_len[k]);
    layer[group[k]].data.assign(d.begin(), d.end());
  }
  if (r.remaining() != 0) throw Error(ErrorCode::corrupt_stream, "trailing bytes in packet");
}

/// Reads every indexed packet of layers < max_layers into a contribution
/// table. Missing packets leave empty contributions.
inline ContributionTable read_contributions(const Codestream& cs, const BlockGeometry& g,
                                            std::size_t max_layers = std::size_t(-1)) {
  const auto& h = cs.header();
  const std::size_t nl = std::min(max_layers, h.layers.size());
  ContributionTable table(nl, std::vector<Contribution>(g.blocks.size()));
  for (const auto& e : cs.index()) {
    if (e.key.layer >= nl) continue;
    try {
      read_packet(cs.packet_body(e), g.groups[e.key.resolution][e.key.component], table[e.key.layer]);
    } catch (const Error& err) {
      if (err.code() == ErrorCode::truncated) throw Error(ErrorCode::truncated, "packet truncated");
      throw;
    }
  }
  return table;
}

struct AssembleOptions {
  bool omit_empty_packets = false;
};

/// Writes header, index and packets in layer / resolution / component order.
inline std::vector<std::uint8_t> assemble(const CodestreamHeader& h, const BlockGeometry& g,
                                          const ContributionTable& table, AssembleOptions opt = {}) {
  std::vector<IndexEntry> index;
  std::vector<std::uint8_t> data;
  for (std::size_t l = 0; l < table.size(); ++l)
    for (int r = 0; r <= h.levels && !h.constant; ++r)
      for (std::uint32_t c = 0; c < h.ncomp; ++c) {
        const auto& group = g.groups[r][c];
        if (opt.omit_empty_packets &&
            std::all_of(group.begin(), group.end(), [&](auto id) { return table[l][id].empty(); }))
          continue;
        auto body = write_packet(group, table[l]);
        index.push_back({{static_cast<std::uint8_t>(l), static_cast<std::uint8_t>(r), static_cast<std::uint16_t>(c)},
                         static_cast<std::uint32_t>(data.size()), static_cast<std::uint32_t>(body.size())});
        data.insert(data.end(), body.begin(), body.end());
      }
  ByteWriter w;
  w.put_bytes(serialize_header(h));
  w.put<std::uint32_t>(static_cast<std::uint32_t>(index.size()));
  for (const auto& e : index) {
    w.put<std::uint8_t>(e.key.layer);
    w.put<std::uint8_t>(e.key.resolution);
    w.put<std::uint16_t>(e.key.component);
    w.put<std::uint32_t>(e.offset);
    w.put<std::uint32_t>(e.length);
  }
  w.put_bytes(data);
  return w.take();
}

/// Transcodes by dropping packets: keeps layers < max_layers, resolutions
/// <= max_resolution and, with a region, only blocks in its footprint.
inline Codestream extract(const Codestream& cs, std::size_t max_layers, int max_resolution,
                          const std::optional<Region>& region = {}) {
  const auto& h = cs.header();
  if (max_layers > h.layers.size()) throw Error(ErrorCode::out_of_bounds, "layer limit exceeds available layers");
  if (max_resolution < 0 || max_resolution > h.levels)
    throw Error(ErrorCode::out_of_bounds, "resolution limit out of range");
  if (region && (region->x + region->w > h.nx || region->y + region->h > h.ny))
    throw Error(ErrorCode::out_of_bounds, "region outside the field");

  CodestreamHeader out_header = h;
  out_header.layers.resize(max_layers);
  const auto g = block_geometry(h);

  if (!region) {
    ByteWriter w;
    w.put_bytes(serialize_header(out_header));
    std::vector<IndexEntry> kept;
    std::uint32_t offset = 0;
    for (const auto& e : cs.index())
      if (e.key.layer < max_layers && e.key.resolution <= max_resolution) {
        kept.push_back({e.key, offset, e.length});
        offset += e.length;
      }
    w.put<std::uint32_t>(static_cast<std::uint32_t>(kept.size()));
    for (const auto& e : kept) {
      w.put<std::uint8_t>(e.key.layer);
      w.put<std::uint8_t>(e.key.resolution);
      w.put<std::uint16_t>(e.key.component);
      w.put<std::uint32_t>(e.offset);
      w.put<std::uint32_t>(e.length);
    }
    for (const auto& e : cs.index())
      if (e.key.layer < max_layers && e.key.resolution <= max_resolution) w.put_bytes(cs.packet_body(e));
    return Codestream::parse(w.take());
  }

  auto table = read_contributions(cs, g, max_layers);
  const auto keep = select_blocks(h, g, max_resolution, region);
  for (auto& layer : table)
    for (std::size_t b = 0; b < layer.size(); ++b)
      if (!keep[b]) layer[b] = Contribution{};
  return Codestream::parse(assemble(out_header, g, table, {.omit_empty_packets = true}));
}

}  // namespace sbc
