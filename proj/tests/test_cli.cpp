#include <gtest/gtest.h>

#include <sys/wait.h>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>

#include "sbc/codestream.hpp"
#include "sbc/metrics.hpp"

namespace {

namespace fs = std::filesystem;

struct Run {
  int status = -1;
  std::string out;
  std::map<std::string, std::string> kv;
};

Run run(const std::string& args) {
  const std::string cmd = std::string("\"") + SBC_CLI_PATH + "\" " + args + " 2>/dev/null";
  Run r;
  FILE* p = ::popen(cmd.c_str(), "r");
  if (!p) return r;
  char buf[4096];
  while (std::size_t n = std::fread(buf, 1, sizeof buf, p)) r.out.append(buf, n);
  const int st = ::pclose(p);
  r.status = WIFEXITED(st) ? WEXITSTATUS(st) : -1;
  std::istringstream in(r.out);
  for (std::string line; std::getline(in, line);)
    if (auto eq = line.find('='); eq != std::string::npos && line.find(' ') == std::string::npos)
      r.kv[line.substr(0, eq)] = line.substr(eq + 1);
  return r;
}

class Cli : public ::testing::Test {
 protected:
  void SetUp() override {
    dir = fs::temp_directory_path() / ("sbc_cli_" + std::to_string(::getpid()) + "_" +
                                       ::testing::UnitTest::GetInstance()->current_test_info()->name());
    fs::create_directories(dir);
  }
  void TearDown() override { fs::remove_all(dir); }
  std::string path(const std::string& name) const { return (dir / name).string(); }

  fs::path dir;
};

TEST_F(Cli, SynthEncodeDecodeAnalyze) {
  ASSERT_EQ(run("synth --kind vortices --nx 128 --ny 128 --seed 3 -o " + path("f.fld")).status, 0);
  const auto enc = run("encode --levels 4 --block 32 " + path("f.fld") + " -o " + path("f.sbc"));
  ASSERT_EQ(enc.status, 0);
  EXPECT_EQ(enc.kv.count("layer6.bps"), 1u);
  EXPECT_EQ(run("decode --layer 6 " + path("f.sbc") + " -o " + path("d.fld")).status, 0);
  EXPECT_TRUE(fs::exists(path("d.fld")));
  const auto an = run("analyze --levels 4 --block 32 " + path("f.fld"));
  ASSERT_EQ(an.status, 0);
  EXPECT_EQ(sbc::parse_csv(an.out).size(), 6u);
  const auto an2 = run("analyze --levels 4 --block 32 " + path("f.fld") + " -o " + path("rd.csv"));
  EXPECT_EQ(an2.kv.at("rows"), "6");
}

TEST_F(Cli, DecodeAtRateReportsRate) {
  ASSERT_EQ(run("synth --kind smooth --nx 128 --ny 96 -o " + path("f.fld")).status, 0);
  ASSERT_EQ(run("encode --levels 4 " + path("f.fld") + " -o " + path("f.sbc")).status, 0);
  const auto d = run("decode --rate 1.0 " + path("f.sbc") + " -o " + path("d.fld"));
  ASSERT_EQ(d.status, 0);
  EXPECT_LE(std::stod(d.kv.at("bps")), 1.0);
  EXPECT_GT(std::stod(d.kv.at("bps")), 0.0);
  const auto roi = run("decode --layer 3 --res 1 --roi 8,8,40,30 " + path("f.sbc") + " -o " + path("r.fld"));
  ASSERT_EQ(roi.status, 0);
  EXPECT_EQ(roi.kv.at("nx"), "20");
  EXPECT_EQ(run("decode --rate 1 --layer 2 " + path("f.sbc") + " -o " + path("x.fld")).status, 1);
}

TEST_F(Cli, InfoOnTruncatedFile) {
  ASSERT_EQ(run("synth --kind ramp --nx 64 --ny 64 -o " + path("f.fld")).status, 0);
  ASSERT_EQ(run("encode --levels 3 " + path("f.fld") + " -o " + path("f.sbc")).status, 0);
  const auto ok = run("info " + path("f.sbc"));
  ASSERT_EQ(ok.status, 0);
  EXPECT_EQ(ok.kv.at("nx"), "64");
  EXPECT_EQ(ok.kv.at("layers"), "6");

  const auto full = sbc::read_file(path("f.sbc"));
  sbc::write_file_atomic(path("t.sbc"), std::span(full).first(full.size() / 2));
  const auto before = std::distance(fs::directory_iterator(dir), fs::directory_iterator{});
  const auto bad = run("info " + path("t.sbc"));
  EXPECT_EQ(bad.status, 2);
  EXPECT_TRUE(bad.out.empty());
  EXPECT_EQ(std::distance(fs::directory_iterator(dir), fs::directory_iterator{}), before);
  EXPECT_EQ(run("decode " + path("t.sbc") + " -o " + path("t.fld")).status, 2);
  EXPECT_FALSE(fs::exists(path("t.fld")));
}

TEST_F(Cli, ExitCodes) {
  EXPECT_EQ(run("encode --no-such-flag x -o y").status, 1);
  EXPECT_EQ(run("").status, 1);
  EXPECT_EQ(run("info " + path("missing.sbc")).status, 3);
  EXPECT_EQ(run("synth --kind bogus -o " + path("x.fld")).status, 1);
}

TEST_F(Cli, FillMask) {
  ASSERT_EQ(run("synth --kind smooth --nx 32 --ny 32 -o " + path("f.fld")).status, 0);
  auto f = sbc::load_raw(path("f.fld"));
  f.mask.assign(f.size(), 1);
  for (std::size_t i = 100; i < 140; ++i) f.mask[i] = 0;
  sbc::write_raw(f, path("m.fld"));
  const auto r = run("fill-mask " + path("m.fld") + " -o " + path("filled.fld"));
  ASSERT_EQ(r.status, 0);
  EXPECT_EQ(r.kv.at("filled"), "40");
}

TEST_F(Cli, ServeAndFetch) {
  ASSERT_EQ(run("synth --kind vortices --nx 128 --ny 128 -o " + path("f.fld")).status, 0);
  ASSERT_EQ(run("encode --levels 4 --block 16 " + path("f.fld") + " -o " + path("f.sbc")).status, 0);
  {
    std::ofstream s(path("schedule.json"));
    s << R"({"dataset": "v", "steps": [{"max_resolution": 2, "budget": 4096, "until_done": true},
                                       {"region": [0, 0, 32, 32]}]})";
  }
  const std::string cmd = std::string("\"") + SBC_CLI_PATH + "\" serve --listen 127.0.0.1:0 --max-sessions 1 --dataset v=" +
                          path("f.sbc") + " 2>/dev/null";
  FILE* srv = ::popen(cmd.c_str(), "r");
  ASSERT_NE(srv, nullptr);
  char line[256] = {};
  ASSERT_NE(std::fgets(line, sizeof line, srv), nullptr);
  const std::string port_line(line);
  ASSERT_EQ(port_line.rfind("port=", 0), 0u);
  const std::string port = port_line.substr(5, port_line.find_first_of("\r\n") - 5);
  const auto f = run("fetch --connect 127.0.0.1:" + port + " --schedule " + path("schedule.json") + " -o " +
                     path("got.sbc"));
  const int st = ::pclose(srv);
  ASSERT_EQ(f.status, 0);
  EXPECT_EQ(WEXITSTATUS(st), 0);
  EXPECT_LT(std::stoull(f.kv.at("total_bytes")), fs::file_size(path("f.sbc")));
  EXPECT_NO_THROW(sbc::Codestream::parse(sbc::read_file(path("got.sbc"))));
}

}  // namespace
