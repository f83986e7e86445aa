#pragma once

// Irreversible CDF 9/7 wavelet transform by lifting, with whole-sample
// symmetric extension. Low-pass analysis has unit DC gain and the high-pass
// has Nyquist gain 2, so the LL band of a constant plane equals the constant.

#include <cmath>
#include <cstdint>
#include <map>
#include <mutex>
#include <numbers>
#include <shared_mutex>
#include <span>
#include <string>
#include <tuple>
#include <utility>
#include <vector>

#include "sbc/error.hpp"

namespace sbc {

namespace lifting {
inline constexpr double alpha = -1.586134342059924;
inline constexpr double beta = -0.052980118572961;
inline constexpr double gamma = 0.882911075530934;
inline constexpr double delta = 0.443506852043971;
inline constexpr double K = 1.230174104914001;
}  // namespace lifting

namespace detail {

// One lifting step over samples of parity `par` using mirrored neighbours.
inline void lift_step(std::span<double> y, std::size_t par, double coeff) {
  const std::size_t n = y.size();
  for (std::size_t i = par; i < n; i += 2) {
    const double left = i > 0 ? y[i - 1] : y[1];
    const double right = i + 1 < n ? y[i + 1] : y[n - 2];
    y[i] += coeff * (left + right);
  }
}

// In-place analysis on an interleaved signal: even = low, odd = high.
inline void lift_forward(std::span<double> y) {
  if (y.size() < 2) return;
  lift_step(y, 1, lifting::alpha);
  lift_step(y, 0, lifting::beta);
  lift_step(y, 1, lifting::gamma);
  lift_step(y, 0, lifting::delta);
  for (std::size_t i = 0; i < y.size(); i += 2) y[i] /= lifting::K;
  for (std::size_t i = 1; i < y.size(); i += 2) y[i] *= lifting::K;
}

inline void lift_inverse(std::span<double> y) {
  if (y.size() < 2) return;
  for (std::size_t i = 0; i < y.size(); i += 2) y[i] *= lifting::K;
  for (std::size_t i = 1; i < y.size(); i += 2) y[i] /= lifting::K;
  lift_step(y, 0, -lifting::delta);
  lift_step(y, 1, -lifting::gamma);
  lift_step(y, 0, -lifting::beta);
  lift_step(y, 1, -lifting::alpha);
}

// Forward over a strided line; writes [low | high] back into the same line.
inline void analyze_line(double* base, std::size_t n, std::size_t stride, std::vector<double>& tmp) {
  tmp.resize(n);
  for (std::size_t i = 0; i < n; ++i) tmp[i] = base[i * stride];
  lift_forward(tmp);
  const std::size_t nl = (n + 1) / 2;
  for (std::size_t i = 0; i < nl; ++i) base[i * stride] = tmp[2 * i];
  for (std::size_t i = 0; i + nl < n; ++i) base[(nl + i) * stride] = tmp[2 * i + 1];
}

inline void synthesize_line(double* base, std::size_t n, std::size_t stride, std::vector<double>& tmp) {
  tmp.resize(n);
  const std::size_t nl = (n + 1) / 2;
  for (std::size_t i = 0; i < nl; ++i) tmp[2 * i] = base[i * stride];
  for (std::size_t i = 0; i + nl < n; ++i) tmp[2 * i + 1] = base[(nl + i) * stride];
  lift_inverse(tmp);
  for (std::size_t i = 0; i < n; ++i) base[i * stride] = tmp[i];
}

}  // namespace detail

/// Single-level 1-D analysis. |low| = ceil(n/2), |high| = floor(n/2).
inline std::pair<std::vector<double>, std::vector<double>> dwt97_forward_1d(std::span<const double> signal) {
  if (signal.size() < 2) throw Error(ErrorCode::bad_dims, "1-D transform needs at least 2 samples");
  std::vector<double> y(signal.begin(), signal.end());
  detail::lift_forward(y);
  std::vector<double> low, high;
  for (std::size_t i = 0; i < y.size(); ++i) (i % 2 ? high : low).push_back(y[i]);
  return {std::move(low), std::move(high)};
}

inline std::vector<double> dwt97_inverse_1d(std::span<const double> low, std::span<const double> high) {
  const std::size_t n = low.size() + high.size();
  if (n < 2 || low.size() != (n + 1) / 2) throw Error(ErrorCode::bad_dims, "inconsistent 1-D subband lengths");
  std::vector<double> y(n);
  for (std::size_t i = 0; i < low.size(); ++i) y[2 * i] = low[i];
  for (std::size_t i = 0; i < high.size(); ++i) y[2 * i + 1] = high[i];
  detail::lift_inverse(y);
  return y;
}

// ---------------------------------------------------------------------------
// 2-D dyadic pyramid

enum class Orientation : std::uint8_t { LL, HL, LH, HH };

struct BandInfo {
  int level = 0;  // 1 = finest
  Orientation orient = Orientation::LL;
  std::size_t width = 0;
  std::size_t height = 0;
};

/// Largest admissible decomposition depth for a plane.
inline int max_levels(std::size_t width, std::size_t height) {
  std::size_t m = std::min(width, height);
  int lg = 0;
  while (m > 1) {
    m >>= 1;
    ++lg;
  }
  return std::max(0, lg - 2);
}

/// Bands ordered coarse to fine: LL_L, then HL, LH, HH for levels L..1.
inline std::vector<BandInfo> band_layout(std::size_t width, std::size_t height, int levels) {
  std::vector<std::size_t> w(levels + 1), h(levels + 1);
  w[0] = width;
  h[0] = height;
  for (int l = 1; l <= levels; ++l) {
    w[l] = (w[l - 1] + 1) / 2;
    h[l] = (h[l - 1] + 1) / 2;
  }
  std::vector<BandInfo> bands;
  bands.push_back({levels, Orientation::LL, w[levels], h[levels]});
  for (int l = levels; l >= 1; --l) {
    const std::size_t wl = w[l], hl = h[l];
    const std::size_t wh = w[l - 1] - wl, hh = h[l - 1] - hl;
    bands.push_back({l, Orientation::HL, wh, hl});
    bands.push_back({l, Orientation::LH, wl, hh});
    bands.push_back({l, Orientation::HH, wh, hh});
  }
  return bands;
}

/// Resolution index of a band: 0 for LL_L, r for the level L-r+1 detail bands.
inline int band_resolution(std::size_t band) { return band == 0 ? 0 : static_cast<int>((band - 1) / 3) + 1; }

struct Plane {
  std::size_t width = 0;
  std::size_t height = 0;
  std::vector<double> data;

  Plane() = default;
  Plane(std::size_t w, std::size_t h) : width(w), height(h), data(w * h, 0.0) {}
  double& at(std::size_t x, std::size_t y) { return data[y * width + x]; }
  double at(std::size_t x, std::size_t y) const { return data[y * width + x]; }
};

struct SubbandPyramid {
  std::size_t width = 0;
  std::size_t height = 0;
  int levels = 0;
  std::vector<BandInfo> info;
  std::vector<Plane> bands;
  std::vector<double> gains;
};

namespace detail {

// Squared norm of the 1-D synthesis vector for coefficient `index` of the
// low band at depth `level` (high = false) or the high band at `level`.
inline double synthesis_norm_1d(std::size_t n, int level, bool high, std::size_t index) {
  std::vector<std::size_t> len(level + 1);
  len[0] = n;
  for (int l = 1; l <= level; ++l) len[l] = (len[l - 1] + 1) / 2;
  std::vector<double> buf(n, 0.0), tmp;
  buf[high ? len[level] + index : index] = 1.0;
  for (int l = level; l >= 1; --l) synthesize_line(buf.data(), len[l - 1], 1, tmp);
  double s = 0.0;
  for (double v : buf) s += v * v;
  return s;
}

}  // namespace detail

/// Per-band synthesis energy gains for a plane of the given size: squared norm
/// of the synthesis basis vector of the band's centre coefficient. Separable,
/// so each gain is a product of two 1-D norms. Results are cached.
inline std::vector<double> compute_gains(std::size_t width, std::size_t height, int levels) {
  using Key = std::tuple<std::size_t, std::size_t, int>;
  static std::shared_mutex mu;
  static std::map<Key, std::vector<double>> cache;
  const Key key{width, height, levels};
  {
    std::shared_lock lock(mu);
    if (auto it = cache.find(key); it != cache.end()) return it->second;
  }
  std::vector<double> gains;
  for (const auto& b : band_layout(width, height, levels)) {
    if (levels == 0) {
      gains.push_back(1.0);
      continue;
    }
    const bool hx = b.orient == Orientation::HL || b.orient == Orientation::HH;
    const bool hy = b.orient == Orientation::LH || b.orient == Orientation::HH;
    gains.push_back(detail::synthesis_norm_1d(width, b.level, hx, b.width / 2) *
                    detail::synthesis_norm_1d(height, b.level, hy, b.height / 2));
  }
  std::unique_lock lock(mu);
  cache.emplace(key, gains);
  return gains;
}

/// Separable multilevel analysis: rows then columns, recursing on LL.
inline SubbandPyramid dwt2d_forward(std::span<const double> plane, std::size_t width, std::size_t height,
                                   int levels) {
  if (plane.size() != width * height) throw Error(ErrorCode::bad_dims, "plane size does not match dimensions");
  if (levels < 0 || levels > max_levels(width, height))
    throw Error(ErrorCode::bad_argument, "decomposition levels " + std::to_string(levels) + " out of range for " +
                                             std::to_string(width) + "x" + std::to_string(height));
  std::vector<double> work(plane.begin(), plane.end());
  std::vector<double> tmp;
  std::size_t w = width, h = height;
  for (int l = 0; l < levels; ++l) {
    for (std::size_t y = 0; y < h; ++y) detail::analyze_line(work.data() + y * width, w, 1, tmp);
    for (std::size_t x = 0; x < w; ++x) detail::analyze_line(work.data() + x, h, width, tmp);
    w = (w + 1) / 2;
    h = (h + 1) / 2;
  }

  SubbandPyramid pyr;
  pyr.width = width;
  pyr.height = height;
  pyr.levels = levels;
  pyr.info = band_layout(width, height, levels);
  pyr.gains = compute_gains(width, height, levels);
  // Band origins in the Mallat layout.
  std::vector<std::size_t> lw(levels + 1), lh(levels + 1);
  lw[0] = width;
  lh[0] = height;
  for (int l = 1; l <= levels; ++l) {
    lw[l] = (lw[l - 1] + 1) / 2;
    lh[l] = (lh[l - 1] + 1) / 2;
  }
  for (const auto& b : pyr.info) {
    std::size_t ox = 0, oy = 0;
    if (b.orient == Orientation::HL || b.orient == Orientation::HH) ox = lw[b.level];
    if (b.orient == Orientation::LH || b.orient == Orientation::HH) oy = lh[b.level];
    Plane p(b.width, b.height);
    for (std::size_t y = 0; y < b.height; ++y)
      for (std::size_t x = 0; x < b.width; ++x) p.at(x, y) = work[(oy + y) * width + ox + x];
    pyr.bands.push_back(std::move(p));
  }
  return pyr;
}

/// Inverts the finest `levels - stop_level` levels, returning LL_{stop_level}
/// (the full plane when stop_level is 0).
inline Plane dwt2d_inverse(const SubbandPyramid& pyr, int stop_level = 0) {
  const int levels = pyr.levels;
  if (stop_level < 0 || stop_level > levels) throw Error(ErrorCode::bad_argument, "stop level out of range");
  const auto layout = band_layout(pyr.width, pyr.height, levels);
  if (pyr.bands.size() != layout.size()) throw Error(ErrorCode::bad_dims, "pyramid band count mismatch");
  for (std::size_t b = 0; b < layout.size(); ++b)
    if (pyr.bands[b].width != layout[b].width || pyr.bands[b].height != layout[b].height ||
        pyr.bands[b].data.size() != layout[b].width * layout[b].height)
      throw Error(ErrorCode::bad_dims, "subband " + std::to_string(b) + " has malformed dimensions");

  std::vector<std::size_t> lw(levels + 1), lh(levels + 1);
  lw[0] = pyr.width;
  lh[0] = pyr.height;
  for (int l = 1; l <= levels; ++l) {
    lw[l] = (lw[l - 1] + 1) / 2;
    lh[l] = (lh[l - 1] + 1) / 2;
  }
  const std::size_t stride = pyr.width;
  std::vector<double> work(pyr.width * pyr.height, 0.0);
  for (std::size_t b = 0; b < layout.size(); ++b) {
    const auto& info = layout[b];
    if (info.orient != Orientation::LL && info.level <= stop_level) continue;
    std::size_t ox = 0, oy = 0;
    if (info.orient == Orientation::HL || info.orient == Orientation::HH) ox = lw[info.level];
    if (info.orient == Orientation::LH || info.orient == Orientation::HH) oy = lh[info.level];
    const auto& p = pyr.bands[b];
    for (std::size_t y = 0; y < p.height; ++y)
      for (std::size_t x = 0; x < p.width; ++x) work[(oy + y) * stride + ox + x] = p.at(x, y);
  }
  std::vector<double> tmp;
  for (int l = levels; l > stop_level; --l) {
    const std::size_t w = lw[l - 1], h = lh[l - 1];
    for (std::size_t x = 0; x < w; ++x) detail::synthesize_line(work.data() + x, h, stride, tmp);
    for (std::size_t y = 0; y < h; ++y) detail::synthesize_line(work.data() + y * stride, w, 1, tmp);
  }
  Plane out(lw[stop_level], lh[stop_level]);
  for (std::size_t y = 0; y < out.height; ++y)
    for (std::size_t x = 0; x < out.width; ++x) out.at(x, y) = work[y * stride + x];
  return out;
}

/// A zero pyramid with the layout of a width x height plane.
inline SubbandPyramid make_pyramid(std::size_t width, std::size_t height, int levels) {
  SubbandPyramid pyr;
  pyr.width = width;
  pyr.height = height;
  pyr.levels = levels;
  pyr.info = band_layout(width, height, levels);
  pyr.gains = compute_gains(width, height, levels);
  for (const auto& b : pyr.info) pyr.bands.emplace_back(b.width, b.height);
  return pyr;
}

// ---------------------------------------------------------------------------
// Cross-component decorrelation

enum class ComponentTransform : std::uint8_t { none = 0, haar_pairs = 1, dwt97_z = 2 };

inline const char* to_string(ComponentTransform ct) {
  switch (ct) {
    case ComponentTransform::none: return "none";
    case ComponentTransform::haar_pairs: return "haar";
    case ComponentTransform::dwt97_z: return "dwt97";
  }
  return "?";
}

inline ComponentTransform parse_component_transform(const std::string& s) {
  if (s == "none") return ComponentTransform::none;
  if (s == "haar" || s == "haar_pairs") return ComponentTransform::haar_pairs;
  if (s == "dwt97" || s == "dwt97_z") return ComponentTransform::dwt97_z;
  throw Error(ErrorCode::bad_argument, "unknown component transform '" + s + "'");
}

namespace detail {

inline void check_components(const std::vector<std::vector<double>>& comps, ComponentTransform mode) {
  if (mode != ComponentTransform::none && comps.size() < 2)
    throw Error(ErrorCode::bad_argument, "component transform needs at least 2 components");
  for (const auto& c : comps)
    if (c.size() != comps.front().size()) throw Error(ErrorCode::bad_dims, "components differ in size");
}

}  // namespace detail

/// Forward cross-component transform, in place. haar_pairs maps each adjacent
/// pair (a, b) to ((a+b)/sqrt2, (a-b)/sqrt2); dwt97_z runs one 9/7 level along
/// the component axis, low bands first.
inline void component_decorrelate(std::vector<std::vector<double>>& comps, ComponentTransform mode) {
  detail::check_components(comps, mode);
  if (mode == ComponentTransform::none) return;
  const std::size_t n = comps.front().size(), nc = comps.size();
  if (mode == ComponentTransform::haar_pairs) {
    for (std::size_t k = 0; k + 1 < nc; k += 2)
      for (std::size_t i = 0; i < n; ++i) {
        const double a = comps[k][i], b = comps[k + 1][i];
        comps[k][i] = (a + b) * std::numbers::sqrt2 / 2.0;
        comps[k + 1][i] = (a - b) * std::numbers::sqrt2 / 2.0;
      }
    return;
  }
  std::vector<double> line(nc), tmp;
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t c = 0; c < nc; ++c) line[c] = comps[c][i];
    detail::analyze_line(line.data(), nc, 1, tmp);
    for (std::size_t c = 0; c < nc; ++c) comps[c][i] = line[c];
  }
}

inline void component_recorrelate(std::vector<std::vector<double>>& comps, ComponentTransform mode) {
  detail::check_components(comps, mode);
  if (mode == ComponentTransform::none) return;
  const std::size_t n = comps.front().size(), nc = comps.size();
  if (mode == ComponentTransform::haar_pairs) {
    for (std::size_t k = 0; k + 1 < nc; k += 2)
      for (std::size_t i = 0; i < n; ++i) {
        const double s = comps[k][i], d = comps[k + 1][i];
        comps[k][i] = (s + d) * std::numbers::sqrt2 / 2.0;
        comps[k + 1][i] = (s - d) * std::numbers::sqrt2 / 2.0;
      }
    return;
  }
  std::vector<double> line(nc), tmp;
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t c = 0; c < nc; ++c) line[c] = comps[c][i];
    detail::synthesize_line(line.data(), nc, 1, tmp);
    for (std::size_t c = 0; c < nc; ++c) comps[c][i] = line[c];
  }
}

/// Synthesis energy of each transformed component (1 for orthonormal modes).
inline std::vector<double> component_gains(std::size_t ncomp, ComponentTransform mode) {
  std::vector<double> g(ncomp, 1.0);
  if (mode != ComponentTransform::dwt97_z || ncomp < 2) return g;
  const std::size_t nl = (ncomp + 1) / 2;
  for (std::size_t c = 0; c < ncomp; ++c)
    g[c] = c < nl ? detail::synthesis_norm_1d(ncomp, 1, false, c) : detail::synthesis_norm_1d(ncomp, 1, true, c - nl);
  return g;
}

}  // namespace sbc
