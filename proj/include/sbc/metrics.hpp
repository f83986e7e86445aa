#pragma once

// Reconstruction error metrics, rate-distortion sweeps, log-log fits and the
// CSV report.

#include <charconv>
#include <cmath>
#include <filesystem>
#include <limits>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "sbc/codec.hpp"
#include "sbc/error.hpp"
#include "sbc/field.hpp"
#include "sbc/grid.hpp"

namespace sbc {

struct ErrorMetrics {
  double rmse = 0.0;
  double linf = 0.0;
  double snr_db = std::numeric_limits<double>::infinity();  // +inf when the error is zero
  double max_rel_err = 0.0;
};

namespace detail {

struct KahanSum {
  double sum = 0.0, c = 0.0;
  void add(double v) {
    const double y = v - c;
    const double t = sum + y;
    c = (t - sum) - y;
    sum = t;
  }
};

}  // namespace detail

/// Metrics over the samples valid in `original`. SNR uses the variance of the
/// original (mean removed) as signal power.
inline ErrorMetrics error_metrics(const Field& original, const Field& reconstructed) {
  if (original.nx != reconstructed.nx || original.ny != reconstructed.ny || original.ncomp != reconstructed.ncomp ||
      original.samples.size() != reconstructed.samples.size())
    throw Error(ErrorCode::bad_dims, "fields differ in dimensions");
  ErrorMetrics m;
  detail::KahanSum se;
  double peak = 0.0;
  std::size_t n = 0;
  for (std::size_t i = 0; i < original.samples.size(); ++i) {
    if (!original.valid(i)) continue;
    const double o = original.samples[i];
    const double e = static_cast<double>(reconstructed.samples[i]) - o;
    se.add(e * e);
    m.linf = std::max(m.linf, std::abs(e));
    peak = std::max(peak, std::abs(o));
    ++n;
  }
  if (n == 0) return m;
  m.rmse = std::sqrt(se.sum / static_cast<double>(n));
  const double var = compute_stats(original).variance;
  if (m.rmse > 0.0) m.snr_db = 10.0 * std::log10(var / (m.rmse * m.rmse));
  m.max_rel_err = peak > 0.0 ? m.linf / peak : (m.linf > 0.0 ? std::numeric_limits<double>::infinity() : 0.0);
  return m;
}

/// Largest absolute difference over samples valid in both fields.
inline double linf_valid(const Field& a, const Field& b) {
  if (a.samples.size() != b.samples.size()) throw Error(ErrorCode::bad_dims, "fields differ in dimensions");
  double m = 0.0;
  for (std::size_t i = 0; i < a.samples.size(); ++i)
    if (a.valid(i) && b.valid(i)) m = std::max(m, std::abs(static_cast<double>(a.samples[i]) - b.samples[i]));
  return m;
}

struct RdRow {
  std::string field;
  double rate_bps = 0.0;  // achieved, header included
  double rmse = 0.0;
  double linf = 0.0;
  double snr_db = 0.0;
  double max_rel_err = 0.0;
  double deriv_ew_linf = 0.0;
  double deriv_ns_linf = 0.0;
};

/// Encodes once and decodes every layer, lowest rate first.
inline std::vector<RdRow> rd_sweep(const Field& field, const EncodeConfig& cfg = {}) {
  if (cfg.target_rates.size() < 2) throw Error(ErrorCode::bad_argument, "a sweep needs at least two layers");
  const auto cs = encode(field, cfg);
  std::vector<std::size_t> layers(cs.header().layers.size());
  for (std::size_t k = 0; k < layers.size(); ++k) layers[k] = k + 1;
  const auto dew = derivative_ew(field), dns = derivative_ns(field);
  std::vector<RdRow> rows;
  for (const auto& d : decode_progressive(cs, layers)) {
    const auto m = error_metrics(field, d.field);
    RdRow row;
    row.field = field.name;
    row.rate_bps = d.report.bits_per_sample;
    row.rmse = m.rmse;
    row.linf = m.linf;
    row.snr_db = m.snr_db;
    row.max_rel_err = m.max_rel_err;
    row.deriv_ew_linf = linf_valid(dew, derivative_ew(d.field));
    row.deriv_ns_linf = linf_valid(dns, derivative_ns(d.field));
    rows.push_back(std::move(row));
  }
  return rows;
}

struct LogLogFit {
  double slope = 0.0;
  double intercept = 0.0;
  double r2 = 0.0;
  std::size_t points = 0;
};

/// Least squares of log10(y) on log10(x) over the points with x, y > 0.
inline LogLogFit loglog_fit(std::span<const double> x, std::span<const double> y) {
  if (x.size() != y.size()) throw Error(ErrorCode::bad_argument, "fit inputs differ in length");
  std::vector<double> lx, ly;
  for (std::size_t i = 0; i < x.size(); ++i)
    if (x[i] > 0.0 && y[i] > 0.0 && std::isfinite(x[i]) && std::isfinite(y[i])) {
      lx.push_back(std::log10(x[i]));
      ly.push_back(std::log10(y[i]));
    }
  const std::size_t n = lx.size();
  if (n < 3) throw Error(ErrorCode::bad_argument, "a fit needs at least three positive points");
  double mx = 0.0, my = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    mx += lx[i];
    my += ly[i];
  }
  mx /= static_cast<double>(n);
  my /= static_cast<double>(n);
  double sxx = 0.0, sxy = 0.0, syy = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    sxx += (lx[i] - mx) * (lx[i] - mx);
    sxy += (lx[i] - mx) * (ly[i] - my);
    syy += (ly[i] - my) * (ly[i] - my);
  }
  if (!(sxx > 0.0)) throw Error(ErrorCode::bad_argument, "fit abscissae are all equal");
  LogLogFit f;
  f.points = n;
  f.slope = sxy / sxx;
  f.intercept = my - f.slope * mx;
  double ss_res = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double r = ly[i] - (f.intercept + f.slope * lx[i]);
    ss_res += r * r;
  }
  f.r2 = syy > 0.0 ? 1.0 - ss_res / syy : (ss_res == 0.0 ? 1.0 : 0.0);
  return f;
}

struct LinearityFit {
  double slope_loglog = 0.0;
  double intercept = 0.0;
  double r2 = 0.0;
  double ratio_mean = 0.0;
  double ratio_spread = 0.0;  // max / min of linf / rmse
  std::size_t rows_used = 0;
};

/// Fit of log10(linf) against log10(rmse). Rows with zero error (exact
/// reconstruction) carry no slope information and are skipped.
inline LinearityFit linearity_fit(const std::vector<RdRow>& rows) {
  std::vector<double> rmse, linf;
  for (const auto& r : rows)
    if (r.rmse > 0.0 && r.linf > 0.0) {
      rmse.push_back(r.rmse);
      linf.push_back(r.linf);
    }
  if (rmse.size() < 3) throw Error(ErrorCode::bad_argument, "linearity fit needs at least three rows with nonzero error");
  const auto f = loglog_fit(rmse, linf);
  LinearityFit out;
  out.slope_loglog = f.slope;
  out.intercept = f.intercept;
  out.r2 = f.r2;
  out.rows_used = rmse.size();
  double lo = std::numeric_limits<double>::infinity(), hi = 0.0, sum = 0.0;
  for (std::size_t i = 0; i < rmse.size(); ++i) {
    const double q = linf[i] / rmse[i];
    lo = std::min(lo, q);
    hi = std::max(hi, q);
    sum += q;
  }
  out.ratio_mean = sum / static_cast<double>(rmse.size());
  out.ratio_spread = hi / lo;
  return out;
}

// ---------------------------------------------------------------------------
// CSV

inline constexpr const char* kCsvHeader = "field,rate_bps,rmse,linf,snr_db,max_rel_err,deriv_ew_linf,deriv_ns_linf";

/// Shortest text that reads back to the same double, capped at 17 digits.
inline std::string format_number(double v) {
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof buf, v, std::chars_format::general, 17);
  return std::string(buf, res.ptr);
}

inline double parse_number(std::string_view s) {
  double v = 0.0;
  if (!s.empty() && s.front() == '+') s.remove_prefix(1);
  if (s == "inf") return std::numeric_limits<double>::infinity();
  if (s == "-inf") return -std::numeric_limits<double>::infinity();
  auto res = std::from_chars(s.data(), s.data() + s.size(), v);
  if (res.ec != std::errc{} || res.ptr != s.data() + s.size())
    throw Error(ErrorCode::corrupt_stream, "bad number in CSV: " + std::string(s));
  return v;
}

namespace detail {

inline std::string csv_quote(const std::string& s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += '"';
    out += c;
  }
  return out + "\"";
}

inline std::vector<std::string> csv_split(const std::string& line) {
  std::vector<std::string> cells(1);
  bool quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    const char c = line[i];
    if (quoted) {
      if (c == '"' && i + 1 < line.size() && line[i + 1] == '"') {
        cells.back() += '"';
        ++i;
      } else if (c == '"') {
        quoted = false;
      } else {
        cells.back() += c;
      }
    } else if (c == '"') {
      quoted = true;
    } else if (c == ',') {
      cells.emplace_back();
    } else {
      cells.back() += c;
    }
  }
  return cells;
}

}  // namespace detail

inline std::string format_csv(const std::vector<RdRow>& rows, const std::optional<LinearityFit>& fit = {}) {
  std::string out = kCsvHeader;
  out += '\n';
  for (const auto& r : rows) {
    out += detail::csv_quote(r.field);
    for (double v : {r.rate_bps, r.rmse, r.linf, r.snr_db, r.max_rel_err, r.deriv_ew_linf, r.deriv_ns_linf}) {
      out += ',';
      out += format_number(v);
    }
    out += '\n';
  }
  if (fit) {
    out += "# fit slope=" + format_number(fit->slope_loglog) + " r2=" + format_number(fit->r2) +
           " ratio_mean=" + format_number(fit->ratio_mean) + " ratio_spread=" + format_number(fit->ratio_spread) + "\n";
  }
  return out;
}

/// Rows of a CSV produced by format_csv; comment lines are skipped.
inline std::vector<RdRow> parse_csv(const std::string& text) {
  std::istringstream in(text);
  std::string line;
  if (!std::getline(in, line) || line != kCsvHeader) throw Error(ErrorCode::corrupt_stream, "unexpected CSV header");
  std::vector<RdRow> rows;
  while (std::getline(in, line)) {
    if (line.empty() || line.front() == '#') continue;
    const auto cells = detail::csv_split(line);
    if (cells.size() != 8) throw Error(ErrorCode::corrupt_stream, "CSV row needs 8 columns");
    RdRow r;
    r.field = cells[0];
    double* dst[] = {&r.rate_bps, &r.rmse, &r.linf, &r.snr_db, &r.max_rel_err, &r.deriv_ew_linf, &r.deriv_ns_linf};
    for (std::size_t i = 0; i < 7; ++i) *dst[i] = parse_number(cells[i + 1]);
    rows.push_back(std::move(r));
  }
  return rows;
}

inline void report_csv(const std::vector<RdRow>& rows, const std::optional<LinearityFit>& fit,
                       const std::filesystem::path& path) {
  const auto text = format_csv(rows, fit);
  write_file_atomic(path, std::span(reinterpret_cast<const std::uint8_t*>(text.data()), text.size()));
}

}  // namespace sbc
