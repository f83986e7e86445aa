#pragma once

// Encode: fill masked cells, decorrelate components, transform, quantize,
// block-code, form quality layers and assemble. Decode: by layer or rate,
// resolution and region.

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdint>
#include <exception>
#include <mutex>
#include <optional>
#include <thread>
#include <vector>

#include "sbc/codestream.hpp"
#include "sbc/dwt.hpp"
#include "sbc/ebcot.hpp"
#include "sbc/field.hpp"
#include "sbc/grid.hpp"
#include "sbc/pcrd.hpp"
#include "sbc/quant.hpp"

namespace sbc {

inline const std::vector<double>& default_rates() {
  static const std::vector<double> rates{8, 4, 2, 1, 0.5, 0.25};
  return rates;
}

struct EncodeConfig {
  int bits = kDefaultBits;
  int levels = 5;
  ComponentTransform component_transform = ComponentTransform::none;
  std::size_t block_size = 64;
  std::vector<double> target_rates = default_rates();  // strictly descending, bits per sample
  std::optional<double> fill_tolerance;
  std::optional<int> fill_iterations;
  unsigned threads = 0;  // 0: hardware concurrency
};

inline void validate(const EncodeConfig& cfg) {
  if (cfg.bits < 8 || cfg.bits > 30) throw Error(ErrorCode::bad_argument, "precision must be in [8, 30] bits");
  if (cfg.levels < 0) throw Error(ErrorCode::bad_argument, "levels must be nonnegative");
  if (cfg.block_size < 16 || cfg.block_size > 64 || (cfg.block_size & (cfg.block_size - 1)))
    throw Error(ErrorCode::bad_argument, "block size must be a power of two in [16, 64]");
  if (cfg.target_rates.empty() || cfg.target_rates.size() > 255)
    throw Error(ErrorCode::bad_argument, "need between 1 and 255 target rates");
  for (std::size_t i = 0; i < cfg.target_rates.size(); ++i) {
    if (!(cfg.target_rates[i] > 0.0) || !std::isfinite(cfg.target_rates[i]))
      throw Error(ErrorCode::bad_argument, "target rates must be positive");
    if (i > 0 && !(cfg.target_rates[i] < cfg.target_rates[i - 1]))
      throw Error(ErrorCode::bad_argument, "target rates must be strictly descending");
  }
}

namespace detail {

template <class Fn>
void parallel_for(std::size_t n, unsigned threads, Fn&& fn) {
  if (threads == 0) threads = std::max(1u, std::thread::hardware_concurrency());
  threads = static_cast<unsigned>(std::min<std::size_t>(threads, n));
  if (threads <= 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::exception_ptr failure;
  std::mutex mu;
  std::vector<std::thread> pool;
  for (unsigned t = 0; t < threads; ++t)
    pool.emplace_back([&] {
      for (std::size_t i; (i = next.fetch_add(1)) < n;) {
        try {
          fn(i);
        } catch (...) {
          std::lock_guard lock(mu);
          if (!failure) failure = std::current_exception();
          next = n;
        }
      }
    });
  for (auto& th : pool) th.join();
  if (failure) std::rethrow_exception(failure);
}

// Pass records with cum_bytes replaced by what the passes cost inside packets:
// each pass adds its length varint to the packet header.
inline std::vector<PassRecord> packet_costs(const EncodedBlock& blk) {
  std::vector<PassRecord> out = blk.passes;
  std::size_t prev = 0, cost = 0;
  for (auto& p : out) {
    const std::size_t len = p.cum_bytes - prev;
    prev = p.cum_bytes;
    cost += len + varint_size(len);
    p.cum_bytes = cost;
  }
  return out;
}

inline std::vector<std::uint8_t> downsample_mask(const std::vector<std::uint8_t>& mask, std::size_t nx, std::size_t ny,
                                                 std::size_t ncomp, int drop) {
  if (mask.empty() || drop == 0) return mask;
  const std::size_t f = std::size_t{1} << drop;
  const std::size_t ox = (nx + f - 1) / f, oy = (ny + f - 1) / f;
  std::vector<std::uint8_t> out(ox * oy * ncomp, 0);
  for (std::size_t c = 0; c < ncomp; ++c)
    for (std::size_t y = 0; y < oy; ++y)
      for (std::size_t x = 0; x < ox; ++x) {
        std::size_t valid = 0, total = 0;
        for (std::size_t yy = y * f; yy < std::min(ny, (y + 1) * f); ++yy)
          for (std::size_t xx = x * f; xx < std::min(nx, (x + 1) * f); ++xx) {
            valid += mask[(c * ny + yy) * nx + xx] != 0;
            ++total;
          }
        out[(c * oy + y) * ox + x] = 2 * valid >= total;
      }
  return out;
}

}  // namespace detail

struct EncodeResult {
  Codestream codestream;
  std::vector<bool> starved_layers;  // layer could not add data within its budget
};

inline EncodeResult encode_detailed(const Field& field, const EncodeConfig& cfg) {
  validate(field);
  validate(cfg);
  const auto stats = compute_stats(field);

  CodestreamHeader h;
  h.nx = static_cast<std::uint32_t>(field.nx);
  h.ny = static_cast<std::uint32_t>(field.ny);
  h.ncomp = static_cast<std::uint32_t>(field.ncomp);
  h.name = field.name;
  h.units = field.units;
  h.block_size = static_cast<std::uint32_t>(cfg.block_size);
  h.component_transform = cfg.component_transform;
  h.quant.bits = cfg.bits;
  h.mask = field.mask;
  if (std::all_of(h.mask.begin(), h.mask.end(), [](auto m) { return m != 0; })) h.mask.clear();
  std::vector<double> ascending(cfg.target_rates.rbegin(), cfg.target_rates.rend());
  for (double r : ascending) h.layers.push_back({r, 0});
  const std::size_t nl = ascending.size();

  if (!(stats.vmax > stats.vmin)) {
    h.constant = true;
    h.constant_value = stats.vmin;
    h.levels = 0;
    const auto size = serialize_header(h).size() + 4;
    for (auto& l : h.layers) l.achieved_bytes = size;
    return {Codestream::parse(assemble(h, BlockGeometry{}, {})), std::vector<bool>(nl, true)};
  }

  if (cfg.levels > max_levels(field.nx, field.ny))
    throw Error(ErrorCode::bad_argument, "levels exceed the maximum of " +
                                             std::to_string(max_levels(field.nx, field.ny)) + " for this grid");
  h.levels = cfg.levels;

  const auto gains = compute_gains(field.nx, field.ny, cfg.levels);
  h.quant = derive_spec(stats, cfg.bits, gains);

  const Field filled = field.has_mask() ? fill_masked(field, cfg.fill_iterations, cfg.fill_tolerance) : field;
  std::vector<std::vector<double>> comps(field.ncomp);
  for (std::size_t c = 0; c < field.ncomp; ++c) {
    auto src = filled.plane(c);
    comps[c].resize(src.size());
    for (std::size_t i = 0; i < src.size(); ++i) comps[c][i] = h.quant.normalize(src[i]);
  }
  component_decorrelate(comps, cfg.component_transform);
  const auto cgains = component_gains(field.ncomp, cfg.component_transform);

  std::vector<CodeBlock> blocks;
  for (std::size_t c = 0; c < field.ncomp; ++c) {
    const auto pyr = dwt2d_forward(comps[c], field.nx, field.ny, cfg.levels);
    const auto q = quantize(pyr, h.quant);
    auto part = partition(q, cfg.block_size, static_cast<std::uint32_t>(c));
    std::move(part.begin(), part.end(), std::back_inserter(blocks));
  }

  std::vector<EncodedBlock> coded(blocks.size());
  const double bias = h.quant.recon_bias();
  detail::parallel_for(blocks.size(), cfg.threads, [&](std::size_t i) {
    const auto& b = blocks[i];
    const double step = h.quant.steps[b.band];
    coded[i] = encode_block(b, gains[b.band] * step * step * cgains[b.component], bias);
  });

  const auto geometry = block_geometry(h);
  h.block_msb.resize(blocks.size());
  std::vector<std::vector<PassRecord>> costs(blocks.size());
  for (std::size_t i = 0; i < blocks.size(); ++i) {
    h.block_msb[i] = static_cast<std::uint8_t>(coded[i].msb_planes);
    costs[i] = detail::packet_costs(coded[i]);
  }

  // Everything outside pass data and pass-length varints: header, index and
  // one pass-count byte per block per packet.
  const std::size_t packets_per_layer = static_cast<std::size_t>(h.resolutions()) * h.ncomp;
  const std::size_t base_header = serialize_header(h).size() - 16 * nl;
  std::vector<double> budgets(nl);
  for (std::size_t k = 0; k < nl; ++k) {
    const std::size_t fixed = base_header + 16 * (k + 1) + 4 + 12 * packets_per_layer * (k + 1) + blocks.size() * (k + 1);
    budgets[k] = ascending[k] * static_cast<double>(h.samples()) / 8.0 - static_cast<double>(fixed);
  }
  const auto alloc = allocate_layers(costs, budgets);

  ContributionTable table(nl, std::vector<Contribution>(blocks.size()));
  for (std::size_t b = 0; b < blocks.size(); ++b) {
    const auto& enc = coded[b];
    int prev = 0;
    for (std::size_t k = 0; k < nl; ++k) {
      const int upto = alloc.truncation[b][k];
      auto& c = table[k][b];
      const std::size_t start = prev == 0 ? 0 : enc.passes[prev - 1].cum_bytes;
      for (int p = prev; p < upto; ++p) {
        const std::size_t s = p == 0 ? 0 : enc.passes[p - 1].cum_bytes;
        c.pass_lengths.push_back(static_cast<std::uint32_t>(enc.passes[p].cum_bytes - s));
      }
      const std::size_t end = upto == 0 ? 0 : enc.passes[upto - 1].cum_bytes;
      c.data.assign(enc.bytes.begin() + static_cast<std::ptrdiff_t>(start),
                    enc.bytes.begin() + static_cast<std::ptrdiff_t>(end));
      prev = upto;
    }
  }

  // Achieved sizes: stream truncated after each layer, header included.
  auto bytes = assemble(h, geometry, table);
  {
    const auto draft = Codestream::parse(bytes);
    std::vector<std::uint64_t> body(nl, 0), count(nl, 0);
    for (const auto& e : draft.index()) {
      body[e.key.layer] += e.length;
      ++count[e.key.layer];
    }
    std::uint64_t packet_bytes = 0, packets = 0;
    for (std::size_t k = 0; k < nl; ++k) {
      packet_bytes += body[k];
      packets += count[k];
      h.layers[k].achieved_bytes = base_header + 16 * (k + 1) + 4 + 12 * packets + packet_bytes;
    }
  }
  bytes = assemble(h, geometry, table);
  return {Codestream::parse(std::move(bytes)), alloc.starved};
}

inline Codestream encode(const Field& field, const EncodeConfig& cfg = {}) {
  return encode_detailed(field, cfg).codestream;
}

// ---------------------------------------------------------------------------
// Decode

struct DecodeRequest {
  std::optional<std::size_t> max_layer;  // 1-based count of layers; default all
  std::optional<double> max_rate;        // bits per sample; picks the largest layer within it
  int resolution_drop = 0;
  std::optional<Region> region;  // full-resolution coordinates
  std::optional<std::pair<std::size_t, std::size_t>> components;  // first, count
  unsigned threads = 0;
};

struct DecodeReport {
  std::size_t layers = 0;
  std::uint64_t bytes = 0;  // codestream bytes the request depends on
  double bits_per_sample = 0.0;
  int planes_decoded = 0;      // most complete bit planes over decoded blocks
  std::size_t passes_decoded = 0;
  std::size_t blocks_decoded = 0;
};

struct DecodeResult {
  Field field;
  DecodeReport report;
};

/// Number of layers selected by a request against a header.
inline std::size_t resolve_layers(const CodestreamHeader& h, const DecodeRequest& req) {
  const std::size_t available = h.layers.size();
  if (req.max_layer && req.max_rate) throw Error(ErrorCode::bad_argument, "give either a layer or a rate, not both");
  if (req.max_layer) {
    if (*req.max_layer > available) throw Error(ErrorCode::out_of_bounds, "layer exceeds the layers in the stream");
    return *req.max_layer;
  }
  if (req.max_rate) {
    if (!(*req.max_rate >= 0.0)) throw Error(ErrorCode::bad_argument, "rate must be nonnegative");
    std::size_t k = 0;
    for (std::size_t i = 0; i < available; ++i)
      if (static_cast<double>(h.layers[i].achieved_bytes) * 8.0 / static_cast<double>(h.samples()) <= *req.max_rate)
        k = i + 1;
    return k;
  }
  return available;
}

inline DecodeResult decode(const Codestream& cs, const DecodeRequest& req = {}) {
  const auto& h = cs.header();
  const std::size_t nl = resolve_layers(h, req);
  const int r = req.resolution_drop;
  const int max_drop = h.constant ? max_levels(h.nx, h.ny) : h.levels;
  if (r < 0 || r > max_drop) throw Error(ErrorCode::out_of_bounds, "resolution drop exceeds the decomposition depth");
  if (req.region && (req.region->w == 0 || req.region->h == 0 || req.region->x + req.region->w > h.nx ||
                     req.region->y + req.region->h > h.ny))
    throw Error(ErrorCode::out_of_bounds, "region outside the field");
  std::size_t c0 = 0, nc = h.ncomp;
  if (req.components) {
    std::tie(c0, nc) = *req.components;
    if (nc == 0 || c0 + nc > h.ncomp) throw Error(ErrorCode::out_of_bounds, "component range outside the field");
  }

  const std::size_t f = std::size_t{1} << r;
  const std::size_t rw = (h.nx + f - 1) / f, rh = (h.ny + f - 1) / f;
  std::size_t ox = 0, oy = 0, ow = rw, oh = rh;
  if (req.region) {
    const auto [sx, sy] = region_at_resolution(*req.region, r);
    ox = static_cast<std::size_t>(sx.lo);
    oy = static_cast<std::size_t>(sy.lo);
    ow = static_cast<std::size_t>(sx.hi - sx.lo + 1);
    oh = static_cast<std::size_t>(sy.hi - sy.lo + 1);
  }

  DecodeResult result;
  auto& out = result.field;
  out.name = h.name;
  out.units = h.units;
  out.nx = ow;
  out.ny = oh;
  out.ncomp = nc;
  out.samples.assign(ow * oh * nc, 0.0f);
  result.report.layers = nl;
  result.report.bytes = extract(cs, nl, h.constant ? 0 : h.levels - r, req.region).size();
  result.report.bits_per_sample = static_cast<double>(result.report.bytes) * 8.0 / static_cast<double>(h.samples());

  if (!h.mask.empty()) {
    const auto m = detail::downsample_mask(h.mask, h.nx, h.ny, h.ncomp, r);
    out.mask.resize(out.samples.size());
    for (std::size_t c = 0; c < nc; ++c)
      for (std::size_t y = 0; y < oh; ++y)
        for (std::size_t x = 0; x < ow; ++x) out.mask[(c * oh + y) * ow + x] = m[((c0 + c) * rh + oy + y) * rw + ox + x];
  }
  if (h.constant) {
    std::fill(out.samples.begin(), out.samples.end(), static_cast<float>(h.constant_value));
    return result;
  }

  const auto g = block_geometry(h);
  const auto table = read_contributions(cs, g, nl);
  auto keep = select_blocks(h, g, h.levels - r, req.region);
  const bool all_components = h.component_transform != ComponentTransform::none;
  if (!all_components)
    for (std::size_t b = 0; b < g.blocks.size(); ++b)
      if (g.blocks[b].component < c0 || g.blocks[b].component >= c0 + nc) keep[b] = 0;

  std::vector<QuantizedPyramid> q(h.ncomp);
  std::vector<std::vector<std::vector<std::uint8_t>>> known(h.ncomp);
  for (std::size_t c = 0; c < h.ncomp; ++c) {
    q[c].width = h.nx;
    q[c].height = h.ny;
    q[c].levels = h.levels;
    q[c].info = g.bands;
    for (const auto& b : g.bands) {
      q[c].bands.emplace_back(b.width * b.height, 0);
      known[c].emplace_back(b.width * b.height, 0);
    }
  }

  std::vector<int> planes(g.blocks.size(), 0);
  std::vector<std::size_t> passes(g.blocks.size(), 0);
  detail::parallel_for(g.blocks.size(), req.threads, [&](std::size_t i) {
    if (!keep[i]) return;
    const auto& ref = g.blocks[i];
    std::vector<std::uint8_t> data;
    std::vector<std::size_t> ends;
    std::size_t total = 0;
    for (std::size_t k = 0; k < nl; ++k) {
      const auto& c = table[k][i];
      for (auto len : c.pass_lengths) ends.push_back(total += len);
      data.insert(data.end(), c.data.begin(), c.data.end());
    }
    if (total != data.size()) throw Error(ErrorCode::corrupt_stream, "pass lengths disagree with block data");
    const auto dec = decode_block(data, ends, ref.width, ref.height, ref.orient, h.block_msb[i]);
    auto& band = q[ref.component].bands[ref.band];
    auto& kp = known[ref.component][ref.band];
    const std::size_t bw = g.bands[ref.band].width;
    for (std::size_t y = 0; y < ref.height; ++y)
      for (std::size_t x = 0; x < ref.width; ++x) {
        const std::size_t dst = (ref.y0 + y) * bw + ref.x0 + x, src = y * ref.width + x;
        band[dst] = dec.coeffs[src];
        kp[dst] = dec.known_plane[src];
      }
    planes[i] = dec.planes_decoded;
    passes[i] = ends.size();
  });
  for (std::size_t i = 0; i < g.blocks.size(); ++i) {
    if (!keep[i]) continue;
    ++result.report.blocks_decoded;
    result.report.passes_decoded += passes[i];
    result.report.planes_decoded = std::max(result.report.planes_decoded, planes[i]);
  }

  std::vector<std::vector<double>> comps(h.ncomp);
  for (std::size_t c = 0; c < h.ncomp; ++c) {
    if (!all_components && (c < c0 || c >= c0 + nc)) continue;
    const auto pyr = dequantize(q[c], h.quant, known[c]);
    comps[c] = dwt2d_inverse(pyr, r).data;
  }
  if (all_components) component_recorrelate(comps, h.component_transform);
  for (std::size_t c = 0; c < nc; ++c) {
    const auto& plane = comps[c0 + c];
    for (std::size_t y = 0; y < oh; ++y)
      for (std::size_t x = 0; x < ow; ++x)
        out.samples[(c * oh + y) * ow + x] = static_cast<float>(h.quant.denormalize(plane[(oy + y) * rw + ox + x]));
  }
  return result;
}

inline DecodeResult decode(std::vector<std::uint8_t> bytes, const DecodeRequest& req = {}) {
  return decode(Codestream::parse(std::move(bytes)), req);
}

/// One field per requested layer count (ascending).
inline std::vector<DecodeResult> decode_progressive(const Codestream& cs, std::span<const std::size_t> layers,
                                                    DecodeRequest base = {}) {
  for (std::size_t i = 1; i < layers.size(); ++i)
    if (layers[i] < layers[i - 1]) throw Error(ErrorCode::bad_argument, "layers must be ascending");
  std::vector<DecodeResult> out;
  base.max_rate.reset();
  for (auto k : layers) {
    base.max_layer = k;
    out.push_back(decode(cs, base));
  }
  return out;
}

}  // namespace sbc
