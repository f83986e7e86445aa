#pragma once

// Grid operations on Fields: harmonic fill of invalid regions, synthetic
// test fields and finite-difference derivatives.

#include <cmath>
#include <cstdint>
#include <numbers>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "sbc/field.hpp"

namespace sbc {

namespace detail {

// Fills one plane in place. `known` is consumed.
inline void fill_plane(std::span<float> out, std::vector<std::uint8_t> known, std::size_t nx, std::size_t ny,
                       int max_iters, double tol) {
  const std::size_t n = nx * ny;
  std::vector<double> v(out.begin(), out.end());
  std::vector<std::size_t> holes;
  for (std::size_t i = 0; i < n; ++i)
    if (!known[i]) holes.push_back(i);
  if (holes.empty()) return;

  auto for_neighbors = [&](std::size_t i, auto&& fn) {
    const std::size_t x = i % nx, y = i / nx;
    if (x > 0) fn(i - 1);
    if (x + 1 < nx) fn(i + 1);
    if (y > 0) fn(i - nx);
    if (y + 1 < ny) fn(i + nx);
  };

  // Seed by synchronous dilation: each sweep assigns the mean of already-known neighbours.
  std::vector<std::size_t> pending = holes;
  while (!pending.empty()) {
    std::vector<std::pair<std::size_t, double>> ring;
    std::vector<std::size_t> rest;
    for (auto i : pending) {
      double sum = 0.0;
      int cnt = 0;
      for_neighbors(i, [&](std::size_t j) {
        if (known[j]) {
          sum += v[j];
          ++cnt;
        }
      });
      if (cnt > 0)
        ring.emplace_back(i, sum / cnt);
      else
        rest.push_back(i);
    }
    for (auto [i, val] : ring) {
      v[i] = val;
      known[i] = 1;
    }
    pending.swap(rest);
  }

  // Jacobi sweeps of the 4-neighbour Laplacian restricted to the holes.
  std::vector<double> next(holes.size());
  for (int it = 0; it < max_iters; ++it) {
    double max_update = 0.0;
    for (std::size_t k = 0; k < holes.size(); ++k) {
      double sum = 0.0;
      int cnt = 0;
      for_neighbors(holes[k], [&](std::size_t j) {
        sum += v[j];
        ++cnt;
      });
      next[k] = sum / cnt;
      max_update = std::max(max_update, std::abs(next[k] - v[holes[k]]));
    }
    for (std::size_t k = 0; k < holes.size(); ++k) v[holes[k]] = next[k];
    if (max_update < tol) break;
  }
  for (auto i : holes) out[i] = static_cast<float>(v[i]);
}

}  // namespace detail

/// Harmonic interpolation of masked samples, per component. Valid samples are
/// untouched; the result carries no mask. Defaults: tol = 1e-6 (vmax - vmin)
/// of the component, max_iters = 10 (nx + ny).
inline Field fill_masked(const Field& field, std::optional<int> max_iters = {}, std::optional<double> tol = {}) {
  validate(field);
  Field out = field;
  out.mask.clear();
  if (!field.has_mask()) return out;
  const std::size_t n = field.plane_size();
  for (std::size_t c = 0; c < field.ncomp; ++c) {
    auto stats = compute_stats(field, c * n, n);
    if (stats.valid_count == 0)
      throw Error(ErrorCode::bad_argument, "component " + std::to_string(c) + " has no valid samples");
    std::vector<std::uint8_t> known(field.mask.begin() + static_cast<std::ptrdiff_t>(c * n),
                                    field.mask.begin() + static_cast<std::ptrdiff_t>((c + 1) * n));
    const int iters = max_iters.value_or(static_cast<int>(10 * (field.nx + field.ny)));
    const double t = tol.value_or(1e-6 * (stats.vmax - stats.vmin));
    detail::fill_plane(out.plane(c), std::move(known), field.nx, field.ny, iters, t);
  }
  return out;
}

enum class SynthKind { smooth, vortices, ramp, noise };

inline SynthKind parse_synth_kind(const std::string& s) {
  if (s == "smooth") return SynthKind::smooth;
  if (s == "vortices") return SynthKind::vortices;
  if (s == "ramp") return SynthKind::ramp;
  if (s == "noise") return SynthKind::noise;
  throw Error(ErrorCode::bad_argument, "unknown synthetic field kind '" + s + "'");
}

inline const char* to_string(SynthKind k) {
  switch (k) {
    case SynthKind::smooth: return "smooth";
    case SynthKind::vortices: return "vortices";
    case SynthKind::ramp: return "ramp";
    case SynthKind::noise: return "noise";
  }
  return "?";
}

namespace detail {

// mt19937_64 output is fixed by the standard; the distributions are not, so
// uniform and normal variates are derived by hand.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : eng_(seed) {}
  double uniform() { return static_cast<double>(eng_() >> 11) * 0x1.0p-53; }
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
  double normal() {
    if (has_spare_) {
      has_spare_ = false;
      return spare_;
    }
    double u1;
    do u1 = uniform();
    while (u1 <= 0.0);
    const double u2 = uniform();
    const double r = std::sqrt(-2.0 * std::log(u1));
    spare_ = r * std::sin(2.0 * std::numbers::pi * u2);
    has_spare_ = true;
    return r * std::cos(2.0 * std::numbers::pi * u2);
  }

 private:
  std::mt19937_64 eng_;
  double spare_ = 0.0;
  bool has_spare_ = false;
};

}  // namespace detail

/// Deterministic synthetic test fields.
///  - ramp:     f = x + nx*y + nx*ny*c
///  - noise:    i.i.d. normal with the given variance
///  - smooth:   offset plus a mixture of broad Gaussian bumps
///  - vortices: velocity components (u for even c, v for odd c) of a field of
///              Gaussian-envelope eddies over a weak zonal background flow
inline Field synth_field(SynthKind kind, std::size_t nx, std::size_t ny, std::size_t ncomp, std::uint64_t seed,
                         double variance = 1.0) {
  if (nx < 8 || ny < 8 || ncomp == 0) throw Error(ErrorCode::bad_dims, "synthetic fields need nx, ny >= 8");
  Field f(nx, ny, ncomp);
  f.name = to_string(kind);
  f.units = "1";
  detail::Rng rng(seed);
  const double dnx = static_cast<double>(nx), dny = static_cast<double>(ny);

  switch (kind) {
    case SynthKind::ramp:
      for (std::size_t c = 0; c < ncomp; ++c)
        for (std::size_t y = 0; y < ny; ++y)
          for (std::size_t x = 0; x < nx; ++x) f.at(x, y, c) = static_cast<float>(x + nx * y + nx * ny * c);
      break;

    case SynthKind::noise: {
      const double sigma = std::sqrt(variance);
      for (auto& v : f.samples) v = static_cast<float>(sigma * rng.normal());
      break;
    }

    case SynthKind::smooth: {
      const double extent = static_cast<double>(std::min(nx, ny));
      for (std::size_t c = 0; c < ncomp; ++c) {
        struct Bump {
          double cx, cy, inv2s2, amp;
        };
        std::vector<Bump> bumps(12);
        for (auto& b : bumps) {
          b.cx = rng.uniform(0.0, dnx);
          b.cy = rng.uniform(0.0, dny);
          const double s = rng.uniform(extent / 12.0, extent / 4.0);
          b.inv2s2 = 1.0 / (2.0 * s * s);
          b.amp = rng.uniform(-3.0, 3.0);
        }
        const double base = 10.0 + static_cast<double>(c);
        for (std::size_t y = 0; y < ny; ++y)
          for (std::size_t x = 0; x < nx; ++x) {
            double v = base;
            for (const auto& b : bumps) {
              const double dx = static_cast<double>(x) - b.cx, dy = static_cast<double>(y) - b.cy;
              v += b.amp * std::exp(-(dx * dx + dy * dy) * b.inv2s2);
            }
            f.at(x, y, c) = static_cast<float>(v);
          }
      }
      break;
    }

    case SynthKind::vortices: {
      struct Eddy {
        double cx, cy, r, inv2r2, strength;
      };
      const std::size_t count = std::max<std::size_t>(8, nx * ny / 2048);
      std::vector<std::vector<Eddy>> sets((ncomp + 1) / 2);
      for (auto& set : sets) {
        set.resize(count);
        for (auto& e : set) {
          e.cx = rng.uniform(0.0, dnx);
          e.cy = rng.uniform(0.0, dny);
          e.r = rng.uniform(3.0, 14.0);
          e.inv2r2 = 1.0 / (2.0 * e.r * e.r);
          e.strength = rng.uniform(0.5, 1.0) * (rng.uniform() < 0.5 ? -1.0 : 1.0);
        }
      }
      for (std::size_t c = 0; c < ncomp; ++c) {
        const auto& set = sets[c / 2];
        const bool is_u = c % 2 == 0;
        for (std::size_t y = 0; y < ny; ++y)
          for (std::size_t x = 0; x < nx; ++x) {
            const double fy = static_cast<double>(y), fx = static_cast<double>(x);
            double v = is_u ? 0.3 * std::sin(2.0 * std::numbers::pi * fy / dny) : 0.0;
            for (const auto& e : set) {
              const double dx = fx - e.cx, dy = fy - e.cy;
              const double d2 = dx * dx + dy * dy;
              if (d2 > 36.0 * e.r * e.r) continue;
              // Velocity of a Gaussian stream function psi = s r exp(-d^2 / 2r^2).
              const double g = e.strength * std::exp(-d2 * e.inv2r2) / e.r;
              v += is_u ? g * dy : -g * dx;
            }
            f.at(x, y, c) = static_cast<float>(v);
          }
      }
      break;
    }
  }
  return f;
}

namespace detail {

// Differences along one axis: stride 1 for E-W, nx for N-S.
inline Field directional_derivative(const Field& field, bool along_x) {
  validate(field);
  const std::size_t len = along_x ? field.nx : field.ny;
  if (len < 3) throw Error(ErrorCode::bad_dims, "derivative needs at least 3 samples along the axis");
  Field out = field;
  out.name = field.name + (along_x ? "_ddx" : "_ddy");
  const std::size_t stride = along_x ? 1 : field.nx;
  std::vector<std::uint8_t> mask;
  if (field.has_mask()) mask.assign(field.size(), 0);
  for (std::size_t c = 0; c < field.ncomp; ++c)
    for (std::size_t y = 0; y < field.ny; ++y)
      for (std::size_t x = 0; x < field.nx; ++x) {
        const std::size_t i = field.index(x, y, c);
        const std::size_t pos = along_x ? x : y;
        std::size_t lo = i, hi = i;
        double denom = 1.0;
        if (pos == 0) {
          hi = i + stride;
        } else if (pos + 1 == len) {
          lo = i - stride;
        } else {
          lo = i - stride;
          hi = i + stride;
          denom = 2.0;
        }
        out.samples[i] =
            static_cast<float>((static_cast<double>(field.samples[hi]) - static_cast<double>(field.samples[lo])) /
                               denom);
        if (!mask.empty()) mask[i] = (field.valid(lo) && field.valid(hi) && field.valid(i)) ? 1 : 0;
      }
  out.mask = std::move(mask);
  if (out.has_mask())
    for (std::size_t i = 0; i < out.size(); ++i)
      if (!out.mask[i]) out.samples[i] = 0.0f;
  return out;
}

}  // namespace detail

/// E-W (x) derivative: central differences inside, one-sided at the edges.
inline Field derivative_ew(const Field& field) { return detail::directional_derivative(field, true); }

/// N-S (y) derivative, same stencils along rows.
inline Field derivative_ns(const Field& field) { return detail::directional_derivative(field, false); }

}  // namespace sbc
