// sbc: command-line front end for the subband codec.
//
// Exit status: 0 success, 1 usage, 2 data error, 3 I/O error.

#include <cstdio>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "sbc/codec.hpp"
#include "sbc/metrics.hpp"
#include "sbc/stream.hpp"

namespace {

using sbc::format_number;

enum Exit { kOk = 0, kUsage = 1, kData = 2, kIo = 3 };

void kv(const std::string& key, const std::string& value) { std::cout << key << '=' << value << '\n'; }
void kv(const std::string& key, double value) { kv(key, format_number(value)); }
void kv(const std::string& key, std::uint64_t value) { kv(key, std::to_string(value)); }

std::vector<double> parse_list(const std::string& s) {
  std::vector<double> out;
  std::stringstream in(s);
  std::string item;
  while (std::getline(in, item, ',')) {
    try {
      out.push_back(sbc::parse_number(item));
    } catch (const sbc::Error&) {
      throw sbc::Error(sbc::ErrorCode::bad_argument, "bad number '" + item + "' in list");
    }
  }
  return out;
}

sbc::Region parse_region(const std::string& s) {
  const auto v = parse_list(s);
  if (v.size() != 4) throw sbc::Error(sbc::ErrorCode::bad_argument, "region must be x,y,w,h");
  for (double d : v)
    if (d < 0 || d != std::floor(d)) throw sbc::Error(sbc::ErrorCode::bad_argument, "region values must be nonnegative integers");
  return {static_cast<std::size_t>(v[0]), static_cast<std::size_t>(v[1]), static_cast<std::size_t>(v[2]),
          static_cast<std::size_t>(v[3])};
}

std::pair<std::string, std::uint16_t> parse_endpoint(const std::string& s) {
  const auto colon = s.rfind(':');
  if (colon == std::string::npos) throw sbc::Error(sbc::ErrorCode::bad_argument, "endpoint must be host:port");
  int port = 0;
  try {
    port = std::stoi(s.substr(colon + 1));
  } catch (const std::exception&) {
    port = -1;
  }
  if (port < 0 || port > 65535) throw sbc::Error(sbc::ErrorCode::bad_argument, "bad port in " + s);
  return {s.substr(0, colon), static_cast<std::uint16_t>(port)};
}

struct EncodeFlags {
  int bits = sbc::kDefaultBits;
  int levels = 5;
  std::string rates = "8,4,2,1,0.5,0.25";
  std::size_t block = 64;
  std::string ct = "none";

  void add(CLI::App* app) {
    app->add_option("--bits", bits, "Fixed-point precision B")->capture_default_str();
    app->add_option("--levels", levels, "Wavelet decomposition levels")->capture_default_str();
    app->add_option("--rates", rates, "Layer target rates, bits/sample, descending")->capture_default_str();
    app->add_option("--block", block, "Code block size (16, 32 or 64)")->capture_default_str();
    app->add_option("--ct", ct, "Component transform: none, haar, dwt97")->capture_default_str();
  }

  sbc::EncodeConfig config() const {
    sbc::EncodeConfig cfg;
    cfg.bits = bits;
    cfg.levels = levels;
    cfg.target_rates = parse_list(rates);
    cfg.block_size = block;
    cfg.component_transform = sbc::parse_component_transform(ct);
    sbc::validate(cfg);
    return cfg;
  }
};

std::vector<sbc::ScheduleStep> load_schedule(const std::string& path, std::string& dataset) {
  const auto bytes = sbc::read_file(path);
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(bytes.begin(), bytes.end());
  } catch (const nlohmann::json::exception& e) {
    throw sbc::Error(sbc::ErrorCode::bad_argument, std::string("schedule is not valid JSON: ") + e.what());
  }
  try {
    if (dataset.empty() && j.contains("dataset")) dataset = j.at("dataset").get<std::string>();
    std::vector<sbc::ScheduleStep> steps;
    for (const auto& s : j.at("steps")) {
      sbc::ScheduleStep step;
      if (s.contains("region") && !s.at("region").is_null()) {
        const auto r = s.at("region").get<std::vector<std::size_t>>();
        if (r.size() != 4) throw sbc::Error(sbc::ErrorCode::bad_argument, "schedule region must be [x, y, w, h]");
        step.request.region = sbc::Region{r[0], r[1], r[2], r[3]};
      }
      step.request.max_resolution = s.value("max_resolution", 255);
      step.request.max_layer = s.value("max_layer", std::size_t{255});
      step.request.budget = s.value("budget", std::uint64_t(-1));
      step.until_done = s.value("until_done", false);
      steps.push_back(step);
    }
    return steps;
  } catch (const nlohmann::json::exception& e) {
    throw sbc::Error(sbc::ErrorCode::bad_argument, std::string("bad schedule: ") + e.what());
  }
}

void print_header(const sbc::CodestreamHeader& h, std::size_t total) {
  kv("name", h.name);
  kv("units", h.units);
  kv("nx", std::uint64_t{h.nx});
  kv("ny", std::uint64_t{h.ny});
  kv("ncomp", std::uint64_t{h.ncomp});
  kv("constant", std::uint64_t{h.constant});
  if (h.constant) kv("constant_value", h.constant_value);
  kv("masked", std::uint64_t{!h.mask.empty()});
  kv("levels", std::uint64_t(h.levels));
  kv("ct", sbc::to_string(h.component_transform));
  kv("block", std::uint64_t{h.block_size});
  kv("bits", std::uint64_t(h.quant.bits));
  kv("offset", h.quant.offset);
  kv("scale", h.quant.scale);
  kv("blocks", std::uint64_t{h.block_msb.size()});
  kv("layers", std::uint64_t{h.layers.size()});
  for (std::size_t k = 0; k < h.layers.size(); ++k) {
    const auto& l = h.layers[k];
    const std::string p = "layer" + std::to_string(k + 1) + ".";
    kv(p + "target_bps", l.target_rate);
    kv(p + "bytes", l.achieved_bytes);
    kv(p + "bps", static_cast<double>(l.achieved_bytes) * 8.0 / static_cast<double>(h.samples()));
  }
  kv("bytes", std::uint64_t{total});
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Scalable embedded subband codec for floating-point fields"};
  app.require_subcommand(1);

  // synth
  auto* synth = app.add_subcommand("synth", "Write a synthetic test field");
  std::string synth_kind = "vortices", out_path;
  std::size_t nx = 512, ny = 512, ncomp = 1;
  std::uint64_t seed = 1;
  double variance = 1.0;
  synth->add_option("--kind", synth_kind, "smooth, vortices, ramp or noise")->capture_default_str();
  synth->add_option("--nx", nx)->capture_default_str();
  synth->add_option("--ny", ny)->capture_default_str();
  synth->add_option("--ncomp", ncomp)->capture_default_str();
  synth->add_option("--seed", seed)->capture_default_str();
  synth->add_option("--variance", variance, "Noise variance")->capture_default_str();
  synth->add_option("-o,--output", out_path, "FLD1 output")->required();

  // fill-mask
  auto* fill = app.add_subcommand("fill-mask", "Fill masked cells with a harmonic extension");
  std::string in_path;
  std::optional<double> fill_tol;
  std::optional<int> fill_iters;
  fill->add_option("input", in_path, "FLD1 input")->required();
  fill->add_option("-o,--output", out_path, "FLD1 output")->required();
  fill->add_option("--tol", fill_tol, "Convergence tolerance");
  fill->add_option("--iters", fill_iters, "Iteration cap");

  // encode
  auto* enc = app.add_subcommand("encode", "Compress an FLD1 field");
  EncodeFlags eflags;
  enc->add_option("input", in_path, "FLD1 input")->required();
  enc->add_option("-o,--output", out_path, "SBC1 output")->required();
  eflags.add(enc);

  // decode
  auto* dec = app.add_subcommand("decode", "Reconstruct a field from a codestream");
  std::optional<double> rate;
  std::optional<std::size_t> layer;
  int res = 0;
  std::string roi;
  dec->add_option("input", in_path, "SBC1 input")->required();
  dec->add_option("-o,--output", out_path, "FLD1 output")->required();
  auto* rate_opt = dec->add_option("--rate", rate, "Largest layer within this many bits/sample");
  auto* layer_opt = dec->add_option("--layer", layer, "Number of layers to decode");
  rate_opt->excludes(layer_opt);
  dec->add_option("--res", res, "Resolution levels to drop")->capture_default_str();
  dec->add_option("--roi", roi, "Region x,y,w,h in full-resolution samples");

  // info
  auto* info = app.add_subcommand("info", "Print codestream header");
  info->add_option("input", in_path, "SBC1 input")->required();

  // analyze
  auto* an = app.add_subcommand("analyze", "Rate-distortion sweep and linearity fit");
  an->add_option("input", in_path, "FLD1 input")->required();
  an->add_option("-o,--output", out_path, "CSV output (default: standard output)");
  eflags.add(an);

  // serve
  auto* srv = app.add_subcommand("serve", "Serve codestreams over TCP");
  std::string listen = "127.0.0.1:9750";
  std::vector<std::string> datasets;
  std::size_t max_sessions = 0;
  srv->add_option("--listen", listen, "host:port (port 0 picks a free port)")->capture_default_str();
  srv->add_option("--dataset", datasets, "name=path.sbc, repeatable")->required();
  srv->add_option("--max-sessions", max_sessions, "Exit after this many sessions (0: run forever)");

  // fetch
  auto* fet = app.add_subcommand("fetch", "Run a scripted progressive retrieval");
  std::string connect = "127.0.0.1:9750", schedule_path, dataset;
  fet->add_option("--connect", connect, "host:port")->capture_default_str();
  fet->add_option("--schedule", schedule_path, "JSON schedule")->required();
  fet->add_option("--dataset", dataset, "Dataset name (overrides the schedule)");
  fet->add_option("-o,--output", out_path, "SBC1 output of everything received");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) return app.exit(e);
    app.exit(e, std::cerr, std::cerr);
    return kUsage;
  }

  try {
    if (*synth) {
      auto f = sbc::synth_field(sbc::parse_synth_kind(synth_kind), nx, ny, ncomp, seed, variance);
      kv("bytes", std::uint64_t{sbc::write_raw(f, out_path)});
      kv("nx", std::uint64_t{f.nx});
      kv("ny", std::uint64_t{f.ny});
      kv("ncomp", std::uint64_t{f.ncomp});
    } else if (*fill) {
      const auto in = sbc::load_raw(in_path);
      const auto f = sbc::fill_masked(in, fill_iters, fill_tol);
      kv("bytes", std::uint64_t{sbc::write_raw(f, out_path)});
      kv("filled", std::uint64_t{in.size() - in.valid_count()});
    } else if (*enc) {
      const auto cfg = eflags.config();
      const auto f = sbc::load_raw(in_path);
      const auto result = sbc::encode_detailed(f, cfg);
      const auto& cs = result.codestream;
      sbc::write_file_atomic(out_path, cs.bytes());
      kv("bytes", std::uint64_t{cs.size()});
      kv("bps", static_cast<double>(cs.size()) * 8.0 / static_cast<double>(f.size()));
      kv("ratio", static_cast<double>(f.size() * sizeof(float)) / static_cast<double>(cs.size()));
      const auto& layers = cs.header().layers;
      for (std::size_t k = 0; k < layers.size(); ++k) {
        const std::string p = "layer" + std::to_string(k + 1) + ".";
        kv(p + "target_bps", layers[k].target_rate);
        kv(p + "bps", static_cast<double>(layers[k].achieved_bytes) * 8.0 / static_cast<double>(f.size()));
        if (result.starved_layers[k] && !cs.header().constant)
          std::cerr << "warning: layer " << k + 1 << " budget too small to add data\n";
      }
    } else if (*dec) {
      sbc::DecodeRequest req;
      req.max_rate = rate;
      req.max_layer = layer;
      req.resolution_drop = res;
      if (!roi.empty()) req.region = parse_region(roi);
      const auto cs = sbc::Codestream::parse(sbc::read_file(in_path));
      const auto d = sbc::decode(cs, req);
      sbc::write_raw(d.field, out_path);
      kv("layers", std::uint64_t{d.report.layers});
      kv("bytes", d.report.bytes);
      kv("bps", d.report.bits_per_sample);
      kv("planes_decoded", std::uint64_t(d.report.planes_decoded));
      kv("passes_decoded", std::uint64_t{d.report.passes_decoded});
      kv("nx", std::uint64_t{d.field.nx});
      kv("ny", std::uint64_t{d.field.ny});
    } else if (*info) {
      const auto cs = sbc::Codestream::parse(sbc::read_file(in_path));
      print_header(cs.header(), cs.size());
      kv("packets", std::uint64_t{cs.index().size()});
    } else if (*an) {
      const auto cfg = eflags.config();
      const auto f = sbc::load_raw(in_path);
      const auto rows = sbc::rd_sweep(f, cfg);
      std::optional<sbc::LinearityFit> fit;
      try {
        fit = sbc::linearity_fit(rows);
      } catch (const sbc::Error& e) {
        std::cerr << "warning: " << e.what() << '\n';
      }
      if (out_path.empty()) {
        std::cout << sbc::format_csv(rows, fit);
      } else {
        sbc::report_csv(rows, fit, out_path);
        kv("rows", std::uint64_t{rows.size()});
        if (fit) {
          kv("slope", fit->slope_loglog);
          kv("r2", fit->r2);
          kv("ratio_mean", fit->ratio_mean);
          kv("ratio_spread", fit->ratio_spread);
        }
      }
    } else if (*srv) {
      sbc::Server server;
      for (const auto& d : datasets) {
        const auto eq = d.find('=');
        if (eq == std::string::npos || eq == 0)
          throw sbc::Error(sbc::ErrorCode::bad_argument, "dataset must be name=path");
        server.add_dataset(d.substr(0, eq), sbc::Codestream::parse(sbc::read_file(d.substr(eq + 1))));
      }
      const auto [host, port] = parse_endpoint(listen);
      sbc::TcpListener listener(port, host);
      kv("port", std::uint64_t{listener.port()});
      std::cout.flush();
      if (max_sessions == 0) {
        server.serve(listener);
      } else {
        std::vector<std::thread> workers;
        for (std::size_t i = 0; i < max_sessions; ++i) {
          auto ch = listener.accept();
          if (!ch) break;
          workers.emplace_back([&server, ch] { server.serve_session(*ch); });
        }
        for (auto& w : workers) w.join();
      }
    } else if (*fet) {
      const auto steps = load_schedule(schedule_path, dataset);
      if (dataset.empty()) throw sbc::Error(sbc::ErrorCode::bad_argument, "no dataset given");
      const auto [host, port] = parse_endpoint(connect);
      const auto result = sbc::fetch_progressive(sbc::connect_tcp(host, port), dataset, steps);
      for (std::size_t i = 0; i < result.transcript.size(); ++i) {
        const auto& t = result.transcript[i];
        std::cout << "get=" << i << " step=" << t.step << " units=" << t.units << " body_bytes=" << t.body_bytes
                  << " wire_bytes=" << t.wire_bytes << " remaining=" << t.remaining << '\n';
      }
      kv("manifest_bytes", std::uint64_t{result.manifest_bytes});
      kv("total_bytes", result.total_wire_bytes());
      if (!out_path.empty()) {
        sbc::write_file_atomic(out_path, result.codestream.bytes());
        kv("codestream_bytes", std::uint64_t{result.codestream.size()});
      }
    }
  } catch (const sbc::Error& e) {
    std::cerr << "error: " << e.what() << '\n';
    if (e.code() == sbc::ErrorCode::io) return kIo;
    if (e.code() == sbc::ErrorCode::bad_argument) return kUsage;
    return kData;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kData;
  }
  return kOk;
}
