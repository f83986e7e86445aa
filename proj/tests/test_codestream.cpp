#include <gtest/gtest.h>

#include <cstdlib>
#include <cstring>
#include <fstream>
#include <random>
#include <regex>

#include "sbc/codec.hpp"
#include "sbc/codestream.hpp"
#include "sbc/grid.hpp"

namespace {

using namespace sbc;

EncodeConfig small_config() {
  EncodeConfig cfg;
  cfg.levels = 3;
  cfg.block_size = 16;
  cfg.target_rates = {8, 4, 2, 1, 0.5, 0.25};
  return cfg;
}

const Codestream& vortex_stream() {
  static const Codestream cs = encode(synth_field(SynthKind::vortices, 96, 80, 2, 3), small_config());
  return cs;
}

ErrorCode parse_error(std::vector<std::uint8_t> bytes) {
  try {
    Codestream::parse(std::move(bytes));
  } catch (const Error& e) {
    return e.code();
  }
  ADD_FAILURE() << "parse accepted a damaged stream";
  return ErrorCode::io;
}

TEST(Codestream, ParseReproducesHeaderAndPackets) {
  const auto& cs = vortex_stream();
  const std::vector<std::uint8_t> bytes(cs.bytes().begin(), cs.bytes().end());
  const auto again = Codestream::parse(bytes);
  EXPECT_EQ(serialize_header(again.header()), serialize_header(cs.header()));
  ASSERT_EQ(again.index().size(), cs.index().size());
  for (std::size_t i = 0; i < cs.index().size(); ++i) {
    const auto a = cs.packet_body(i), b = again.packet_body(i);
    EXPECT_TRUE(std::equal(a.begin(), a.end(), b.begin(), b.end()));
  }
  // re-assembling the parsed contributions gives the same bytes
  const auto g = block_geometry(cs.header());
  EXPECT_EQ(assemble(cs.header(), g, read_contributions(cs, g)), bytes);
}

TEST(Codestream, PacketCountAndOrder) {
  const auto& cs = vortex_stream();
  const auto& h = cs.header();
  EXPECT_EQ(cs.index().size(), h.layers.size() * static_cast<std::size_t>(h.resolutions()) * h.ncomp);
  for (std::size_t i = 1; i < cs.index().size(); ++i) EXPECT_LT(cs.index()[i - 1].key, cs.index()[i].key);
  EXPECT_NE(cs.find({2, 1, 1}), nullptr);
  EXPECT_EQ(cs.find({9, 0, 0}), nullptr);
}

TEST(Codestream, EmptyLayerHasEmptyPackets) {
  const auto& cs = vortex_stream();
  const auto g = block_geometry(cs.header());
  ContributionTable table(2, std::vector<Contribution>(g.blocks.size()));
  auto h = cs.header();
  h.layers.resize(2);
  const auto out = Codestream::parse(assemble(h, g, table));
  EXPECT_EQ(out.index().size(), 2u * h.resolutions() * h.ncomp);
  for (const auto& e : out.index()) EXPECT_EQ(e.length, 0u);
}

TEST(Codestream, HeaderFields) {
  const auto& h = vortex_stream().header();
  EXPECT_EQ(h.nx, 96u);
  EXPECT_EQ(h.ny, 80u);
  EXPECT_EQ(h.ncomp, 2u);
  EXPECT_EQ(h.levels, 3);
  EXPECT_EQ(h.block_size, 16u);
  EXPECT_EQ(h.quant.step_codes.size(), 10u);
  ASSERT_EQ(h.layers.size(), 6u);
  EXPECT_EQ(h.layers.front().target_rate, 0.25);
  EXPECT_EQ(h.layers.back().target_rate, 8.0);
  for (std::size_t k = 1; k < h.layers.size(); ++k) EXPECT_GE(h.layers[k].achieved_bytes, h.layers[k - 1].achieved_bytes);
  EXPECT_EQ(h.block_msb.size(), block_geometry(h).blocks.size());
}

TEST(Codestream, DistinctParseErrors) {
  const auto& cs = vortex_stream();
  const std::vector<std::uint8_t> bytes(cs.bytes().begin(), cs.bytes().end());

  auto magic = bytes;
  magic[0] = 'X';
  EXPECT_EQ(parse_error(magic), ErrorCode::bad_magic);
  auto version = bytes;
  version[4] = 9;
  EXPECT_EQ(parse_error(version), ErrorCode::bad_version);
  EXPECT_EQ(parse_error({}), ErrorCode::bad_magic);

  // truncation anywhere in the packet data
  EXPECT_EQ(parse_error(std::vector<std::uint8_t>(bytes.begin(), bytes.end() - 1)), ErrorCode::truncated);
  EXPECT_EQ(parse_error(std::vector<std::uint8_t>(bytes.begin(), bytes.begin() + static_cast<std::ptrdiff_t>(cs.data_offset()) + 1)),
            ErrorCode::truncated);

  // packet key beyond the header's resolutions
  const std::size_t index_start = serialize_header(cs.header()).size() + 4;
  auto key = bytes;
  key[index_start + 1] = 17;
  EXPECT_EQ(parse_error(key), ErrorCode::out_of_bounds);

  // offsets must tile the data area
  auto gap = bytes;
  gap[index_start + 12 + 4] ^= 1;
  EXPECT_EQ(parse_error(gap), ErrorCode::corrupt_stream);
}

TEST(Codestream, EveryHeaderTruncationIsRejected) {
  const auto& cs = vortex_stream();
  const std::vector<std::uint8_t> bytes(cs.bytes().begin(), cs.bytes().end());
  for (std::size_t cut = 0; cut < cs.data_offset(); ++cut)
    EXPECT_THROW(Codestream::parse(std::vector<std::uint8_t>(bytes.begin(), bytes.begin() + static_cast<std::ptrdiff_t>(cut))),
                 Error)
        << cut;
}

TEST(Codestream, CorruptPacketBodyIsReported) {
  const auto& cs = vortex_stream();
  std::vector<std::uint8_t> bytes(cs.bytes().begin(), cs.bytes().end());
  const auto* e = cs.find({5, 3, 0});
  ASSERT_NE(e, nullptr);
  ASSERT_GT(e->length, 0u);
  bytes[cs.data_offset() + e->offset] = 0x7f;  // pass count far too large
  const auto bad = Codestream::parse(bytes);
  EXPECT_THROW(read_contributions(bad, block_geometry(bad.header())), Error);
}

TEST(Extract, IdentityKeepsBytes) {
  const auto& cs = vortex_stream();
  const auto& h = cs.header();
  const auto out = extract(cs, h.layers.size(), h.levels);
  EXPECT_TRUE(std::equal(out.bytes().begin(), out.bytes().end(), cs.bytes().begin(), cs.bytes().end()));
}

TEST(Extract, FirstLayerDecodesLikeFullStream) {
  const auto& cs = vortex_stream();
  DecodeRequest req;
  req.max_layer = 1;
  EXPECT_EQ(decode(extract(cs, 1, cs.header().levels)).field.samples, decode(cs, req).field.samples);
}

TEST(Extract, AchievedBytesEqualExtractSize) {
  const auto& cs = vortex_stream();
  const auto& h = cs.header();
  for (std::size_t k = 1; k <= h.layers.size(); ++k)
    EXPECT_EQ(h.layers[k - 1].achieved_bytes, extract(cs, k, h.levels).size()) << k;
  EXPECT_EQ(h.layers.back().achieved_bytes, cs.size());
}

TEST(Extract, EmptySelectionIsValid) {
  const auto& cs = vortex_stream();
  const auto out = extract(cs, 0, 0);
  EXPECT_TRUE(out.index().empty());
  EXPECT_TRUE(out.header().layers.empty());
  const auto d = decode(out).field;
  EXPECT_EQ(d.nx, 96u);
}

TEST(Extract, RejectsOutOfRangeLimits) {
  const auto& cs = vortex_stream();
  EXPECT_THROW(extract(cs, 7, 0), Error);
  EXPECT_THROW(extract(cs, 1, 4), Error);
  EXPECT_THROW(extract(cs, 1, 1, Region{90, 0, 10, 10}), Error);
}

TEST(Extract, RegionKeepsOnlyFootprintBlocks) {
  const auto& cs = vortex_stream();
  const auto& h = cs.header();
  const Region corner{0, 0, 16, 16};
  const auto out = extract(cs, h.layers.size(), h.levels, corner);
  EXPECT_LT(out.size(), cs.size());
  const auto g = block_geometry(h);
  const auto table = read_contributions(out, g);
  const auto keep = select_blocks(h, g, h.levels, corner);
  for (const auto& layer : table)
    for (std::size_t b = 0; b < g.blocks.size(); ++b)
      if (!keep[b]) {
        EXPECT_TRUE(layer[b].empty());
      }
  // the finest blocks far from the corner are excluded
  EXPECT_FALSE(keep.back());
}

TEST(Footprint, DilatesByHalfSupport) {
  const auto fp = footprint_1d(512, 5, 0, Span1{0, 63});
  EXPECT_EQ(fp[0].lo, 0);
  EXPECT_EQ(fp[0].hi, 63);
  EXPECT_EQ(fp[1].hi, 33);  // (63 + 4) / 2
  EXPECT_EQ(fp[2].hi, 18);
  const auto mid = footprint_1d(512, 2, 0, Span1{200, 210});
  EXPECT_EQ(mid[1].lo, 97);   // (200 - 5) / 2
  EXPECT_EQ(mid[1].hi, 107);  // (210 + 4) / 2
  EXPECT_EQ(mid[2].lo, 46);
  EXPECT_EQ(mid[2].hi, 55);
}

TEST(Footprint, RegionAtResolution) {
  const auto [sx, sy] = region_at_resolution(Region{10, 20, 30, 5}, 2);
  EXPECT_EQ(sx.lo, 2);
  EXPECT_EQ(sx.hi, 9);
  EXPECT_EQ(sy.lo, 5);
  EXPECT_EQ(sy.hi, 6);
}

TEST(Geometry, GroupsFollowResolutions) {
  const auto g = block_geometry(100, 70, 2, 2, 16);
  ASSERT_EQ(g.groups.size(), 3u);
  for (std::size_t r = 0; r < 3; ++r)
    for (std::size_t c = 0; c < 2; ++c)
      for (auto id : g.groups[r][c]) {
        EXPECT_EQ(g.blocks[id].resolution, static_cast<int>(r));
        EXPECT_EQ(g.blocks[id].component, c);
      }
  // component-major order
  EXPECT_EQ(g.blocks.front().component, 0u);
  EXPECT_EQ(g.blocks.back().component, 1u);
  EXPECT_EQ(g.blocks[g.blocks.size() / 2].component, 1u);
}

TEST(Codestream, MaskRunLengthRoundTrip) {
  auto f = synth_field(SynthKind::smooth, 64, 64, 1, 2);
  f.mask.assign(f.size(), 1);
  for (std::size_t i = 0; i < 300; ++i) f.mask[i] = 0;
  f.mask[1000] = 0;
  f.mask.back() = 0;
  const auto cs = encode(f, small_config());
  EXPECT_EQ(cs.header().mask, f.mask);
  // leading invalid run is written as a zero-length valid run first
  const auto again = Codestream::parse(std::vector<std::uint8_t>(cs.bytes().begin(), cs.bytes().end()));
  EXPECT_EQ(again.header().mask, f.mask);
}

// ---------------------------------------------------------------------------
// Golden file and FORMAT.md

Field golden_field() {
  Field f = synth_field(SynthKind::ramp, 32, 24, 1, 0);
  f.name = "golden";
  f.units = "m/s";
  f.mask.assign(f.size(), 1);
  for (std::size_t i = 40; i < 52; ++i) f.mask[i] = 0;
  return f;
}

EncodeConfig golden_config() {
  EncodeConfig cfg;
  cfg.levels = 2;
  cfg.block_size = 16;
  cfg.target_rates = {4.0, 1.0};
  cfg.threads = 1;
  return cfg;
}

const std::filesystem::path golden_path = std::filesystem::path(SBC_SOURCE_DIR) / "tests/golden/ramp_masked.sbc";

TEST(Golden, EncoderOutputIsFrozen) {
  const auto cs = encode(golden_field(), golden_config());
  const std::vector<std::uint8_t> bytes(cs.bytes().begin(), cs.bytes().end());
  if (std::getenv("SBC_UPDATE_GOLDEN")) write_file_atomic(golden_path, bytes);
  ASSERT_TRUE(std::filesystem::exists(golden_path));
  EXPECT_EQ(read_file(golden_path), bytes);
}

TEST(Golden, DecodesUnderCurrentReader) {
  const auto cs = Codestream::parse(read_file(golden_path));
  EXPECT_EQ(cs.header().name, "golden");
  EXPECT_EQ(cs.header().units, "m/s");
  const auto d = decode(cs).field;
  const auto f = golden_field();
  for (std::size_t i = 0; i < f.size(); ++i) {
    EXPECT_EQ(d.valid(i), f.valid(i));
    if (f.valid(i)) {
      EXPECT_NEAR(d.samples[i], f.samples[i], 0.01 * 767);
    }
  }
}

template <class T>
T read_le(const std::vector<std::uint8_t>& b, std::size_t off) {
  T v;
  std::memcpy(&v, b.data() + off, sizeof v);
  return v;
}

// FORMAT.md carries a table "| offset | size | type | field |" for the
// fixed-position prefix of the header; every row must match the golden file.
TEST(Golden, FormatDocumentOffsets) {
  std::ifstream doc(std::filesystem::path(SBC_SOURCE_DIR) / "FORMAT.md");
  ASSERT_TRUE(doc) << "FORMAT.md missing";
  const auto bytes = read_file(golden_path);
  const auto h = Codestream::parse(bytes).header();
  const std::regex row(R"(^\|\s*(\d+)\s*\|\s*(\d+|var)\s*\|\s*(\w+)\s*\|\s*`(\w+)`)");
  std::string line;
  std::size_t checked = 0;
  while (std::getline(doc, line)) {
    std::smatch m;
    if (!std::regex_search(line, m, row)) continue;
    const std::size_t off = std::stoul(m[1]);
    const std::size_t size = m[2] == "var" ? 0 : std::stoul(m[2]);
    const std::string type = m[3], name = m[4];
    ++checked;
    if (name == "magic") {
      EXPECT_EQ(size, 4u);
      EXPECT_EQ(std::string(bytes.begin() + static_cast<std::ptrdiff_t>(off), bytes.begin() + static_cast<std::ptrdiff_t>(off + 4)), "SBC1");
    } else if (name == "version") {
      EXPECT_EQ(type, "u16");
      EXPECT_EQ(read_le<std::uint16_t>(bytes, off), kCodestreamVersion);
    } else if (name == "nx") {
      EXPECT_EQ(read_le<std::uint32_t>(bytes, off), h.nx);
    } else if (name == "ny") {
      EXPECT_EQ(read_le<std::uint32_t>(bytes, off), h.ny);
    } else if (name == "ncomp") {
      EXPECT_EQ(read_le<std::uint32_t>(bytes, off), h.ncomp);
    } else if (name == "flags") {
      EXPECT_EQ(bytes[off], 2u);  // mask present, not constant
    } else if (name == "constant_value") {
      EXPECT_EQ(size, 8u);
      EXPECT_EQ(read_le<double>(bytes, off), h.constant_value);
    } else if (name == "name") {
      EXPECT_EQ(bytes[off], h.name.size());
      EXPECT_EQ(std::string(bytes.begin() + static_cast<std::ptrdiff_t>(off + 1),
                            bytes.begin() + static_cast<std::ptrdiff_t>(off + 1 + h.name.size())),
                h.name);
    } else {
      ADD_FAILURE() << "FORMAT.md lists unknown fixed field " << name;
    }
  }
  EXPECT_EQ(checked, 8u);
}

}  // namespace
