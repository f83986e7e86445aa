#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "oracles.hpp"
#include "sbc/ebcot.hpp"
#include "sbc/pcrd.hpp"

namespace {

using namespace sbc;

CodeBlock make_block(std::vector<std::int32_t> coeffs, std::size_t w, std::size_t h,
                     Orientation o = Orientation::HL) {
  CodeBlock b;
  b.orient = o;
  b.width = w;
  b.height = h;
  b.coeffs = std::move(coeffs);
  b.msb_planes = magnitude_planes(b.coeffs);
  return b;
}

std::vector<std::size_t> ends_of(const EncodedBlock& e, std::size_t passes) {
  std::vector<std::size_t> ends;
  for (std::size_t k = 0; k < passes; ++k) ends.push_back(e.passes[k].cum_bytes);
  return ends;
}

DecodedBlock decode_prefix(const CodeBlock& b, const EncodedBlock& e, std::size_t passes) {
  const auto ends = ends_of(e, passes);
  const std::size_t len = passes ? ends.back() : 0;
  return decode_block(std::span(e.bytes).first(len), ends, b.width, b.height, b.orient, e.msb_planes);
}

TEST(ArithCoder, BernoulliHalfCostsOneBitPerSymbol) {
  const auto bits = oracle::bernoulli_bits(10000, 0.5, 1);
  std::vector<std::uint8_t> out;
  ArithEncoder enc(out);
  BitContext c;
  for (int b : bits) enc.encode(c, b);
  enc.terminate();
  EXPECT_NEAR(static_cast<double>(out.size()), 1250.0, 12.5);
  ArithDecoder dec(out);
  BitContext d;
  for (int b : bits) ASSERT_EQ(dec.decode(d), b);
}

TEST(ArithCoder, BernoulliTenthNearEntropy) {
  const auto bits = oracle::bernoulli_bits(10000, 0.1, 2);
  std::vector<std::uint8_t> out;
  ArithEncoder enc(out);
  BitContext c;
  for (int b : bits) enc.encode(c, b);
  enc.terminate();
  const double h = -(0.1 * std::log2(0.1) + 0.9 * std::log2(0.9));
  EXPECT_LE(static_cast<double>(out.size()), 1.05 * std::ceil(h * 10000 / 8));
  ArithDecoder dec(out);
  BitContext d;
  for (int b : bits) ASSERT_EQ(dec.decode(d), b);
}

TEST(ArithCoder, MillionBitsSixteenContexts) {
  std::mt19937_64 eng(3);
  const std::size_t n = 1000000;
  std::vector<int> bits(n), which(n);
  for (std::size_t i = 0; i < n; ++i) {
    which[i] = static_cast<int>(eng() % kMaxContexts);
    // each context gets its own bias
    bits[i] = static_cast<double>(eng() % 1000) < 60.0 * which[i];
  }
  std::vector<std::uint8_t> out;
  ContextTable ec{}, dc{};
  ArithEncoder enc(out);
  for (std::size_t i = 0; i < n; ++i) enc.encode(ec[which[i]], bits[i]);
  enc.terminate();
  ArithDecoder dec(out);
  std::size_t mismatches = 0;
  for (std::size_t i = 0; i < n; ++i) mismatches += dec.decode(dc[which[i]]) != bits[i];
  EXPECT_EQ(mismatches, 0u);
}

TEST(ArithCoder, SegmentsDecodeIndependently) {
  std::vector<std::uint8_t> out;
  ArithEncoder enc(out);
  BitContext c;
  const auto a = oracle::bernoulli_bits(300, 0.3, 4), b = oracle::bernoulli_bits(500, 0.8, 5);
  for (int x : a) enc.encode(c, x);
  enc.terminate();
  const std::size_t cut = out.size();
  BitContext c2;
  for (int x : b) enc.encode(c2, x);
  enc.terminate();
  ArithDecoder d1{std::span(out).first(cut)};
  BitContext e1;
  for (int x : a) ASSERT_EQ(d1.decode(e1), x);
  ArithDecoder d2{std::span(out).subspan(cut)};
  BitContext e2;
  for (int x : b) ASSERT_EQ(d2.decode(e2), x);
}

TEST(BlockCoder, EmptyBlock) {
  const auto b = make_block(std::vector<std::int32_t>(64 * 64, 0), 64, 64);
  const auto e = encode_block(b);
  EXPECT_EQ(e.msb_planes, 0);
  EXPECT_TRUE(e.passes.empty());
  EXPECT_TRUE(e.bytes.empty());
  const auto d = decode_block({}, {}, 64, 64, b.orient, 0);
  for (auto v : d.coeffs) EXPECT_EQ(v, 0);
}

TEST(BlockCoder, SingleCoefficient) {
  std::vector<std::int32_t> c(16 * 16, 0);
  c[5 * 16 + 7] = 13;
  const auto b = make_block(c, 16, 16);
  const auto e = encode_block(b);
  EXPECT_EQ(e.msb_planes, 4);
  ASSERT_EQ(e.passes.size(), 12u);
  EXPECT_EQ(e.bytes.back(), kBlockSentinel);
  EXPECT_EQ(decode_prefix(b, e, 12).coeffs, c);
  // first cleanup pass finds the sample at plane 3: 13 -> 8
  EXPECT_EQ(decode_prefix(b, e, 3).coeffs[5 * 16 + 7], 8);
  const auto d9 = decode_prefix(b, e, 9);
  EXPECT_EQ(d9.coeffs[5 * 16 + 7], 12);
  EXPECT_EQ(d9.planes_decoded, 3);
}

TEST(BlockCoder, NegativeAndExtremeMagnitudes) {
  std::vector<std::int32_t> c(16 * 16, 0);
  c[0] = -1;
  c[1] = std::numeric_limits<std::int32_t>::max();
  c[255] = -(1 << 30);
  const auto b = make_block(c, 16, 16);
  const auto e = encode_block(b);
  EXPECT_EQ(e.msb_planes, 31);
  EXPECT_EQ(decode_prefix(b, e, e.passes.size()).coeffs, c);
}

TEST(BlockCoder, LaplacianRoundTripsAtEveryTruncation) {
  std::mt19937_64 eng(7);
  for (int t = 0; t < 20; ++t) {
    const std::size_t w = 16 + eng() % 49, h = 16 + eng() % 49;
    const auto c = oracle::laplacian_block(w * h, 1.0 + static_cast<double>(eng() % 400), eng);
    const auto o = static_cast<Orientation>(eng() % 4);
    const auto b = make_block(c, w, h, o);
    const auto e = encode_block(b);
    const int planes = e.msb_planes;
    for (std::size_t k = 0; k <= e.passes.size(); ++k) {
      const auto d = decode_prefix(b, e, k);
      const auto expect = oracle::expected_after_passes(c, w, h, planes, k);
      ASSERT_EQ(d.coeffs, expect.coeffs) << "trial " << t << " passes " << k;
      for (std::size_t i = 0; i < c.size(); ++i) ASSERT_EQ(d.known_plane[i], expect.known_plane[i]);
      if (k % 3 == 0) {
        EXPECT_EQ(d.coeffs, oracle::zero_planes_below(c, planes - static_cast<int>(k / 3)));
      }
    }
  }
}

TEST(BlockCoder, PassDistortionTelescopes) {
  std::mt19937_64 eng(8);
  const auto c = oracle::laplacian_block(32 * 32, 50.0, eng);
  const auto b = make_block(c, 32, 32);
  const double weight = 0.37;
  const auto e = encode_block(b, weight);
  double raw = 0.0, clamped = 0.0;
  for (const auto& p : e.passes) {
    raw += p.raw_delta_d;
    clamped += p.delta_d;
    EXPECT_GE(p.delta_d, 0.0);
  }
  double total = 0.0;
  for (auto q : c) {
    const double t = target_magnitude(static_cast<std::uint32_t>(std::abs(q)));
    total += t * t;
  }
  EXPECT_NEAR(raw, weight * total, 1e-9 * weight * total);
  EXPECT_GE(clamped, raw);
}

TEST(BlockCoder, CumBytesIncrease) {
  std::mt19937_64 eng(9);
  const auto c = oracle::laplacian_block(64 * 64, 20.0, eng);
  const auto e = encode_block(make_block(c, 64, 64));
  std::size_t prev = 0;
  for (const auto& p : e.passes) {
    EXPECT_GT(p.cum_bytes, prev);
    prev = p.cum_bytes;
  }
  EXPECT_EQ(prev, e.bytes.size());
}

TEST(BlockCoder, CorruptSentinelDetected) {
  std::vector<std::int32_t> c(16 * 16, 0);
  c[3] = 100;
  const auto b = make_block(c, 16, 16);
  auto e = encode_block(b);
  e.bytes.back() ^= 0xFF;
  try {
    decode_prefix(b, e, e.passes.size());
    FAIL() << "no error";
  } catch (const Error& err) {
    EXPECT_EQ(err.code(), ErrorCode::corrupt_stream);
  }
  EXPECT_NO_THROW(decode_prefix(b, e, e.passes.size() - 1));
}

TEST(BlockCoder, RejectsInconsistentPassTable) {
  const std::vector<std::uint8_t> bytes{1, 2, 3};
  const std::vector<std::size_t> too_long{1, 2, 9};
  EXPECT_THROW(decode_block(bytes, too_long, 4, 4, Orientation::LL, 1), Error);
  const std::vector<std::size_t> many(7, 1);
  EXPECT_THROW(decode_block(bytes, many, 4, 4, Orientation::LL, 2), Error);
}

TEST(Partition, TilesBandsCoarseToFine) {
  QuantizedPyramid q;
  q.width = 100;
  q.height = 70;
  q.levels = 1;
  q.info = band_layout(100, 70, 1);
  for (const auto& b : q.info) q.bands.emplace_back(b.width * b.height, 1);
  const auto blocks = partition(q, 32);
  // 50x35 bands: 2x2 blocks each
  ASSERT_EQ(blocks.size(), 16u);
  EXPECT_EQ(blocks[0].width, 32u);
  EXPECT_EQ(blocks[1].width, 18u);
  EXPECT_EQ(blocks[2].height, 3u);
  EXPECT_EQ(blocks[15].band, 3u);
  EXPECT_THROW(partition(q, 48), Error);
  EXPECT_THROW(partition(q, 8), Error);
}

// ---------------------------------------------------------------------------
// Rate allocation

std::vector<PassRecord> random_passes(std::mt19937_64& eng, int n) {
  std::vector<PassRecord> p(n);
  std::size_t cum = 0;
  for (int k = 0; k < n; ++k) {
    cum += 1 + eng() % 20;
    p[k].pass_index = k;
    p[k].cum_bytes = cum;
    p[k].delta_d = (eng() % 5 == 0) ? 0.0 : static_cast<double>(eng() % 1000) / 10.0;
    p[k].raw_delta_d = p[k].delta_d;
  }
  return p;
}

double achieved(const std::vector<std::vector<PassRecord>>& blocks, const Allocation& a, std::size_t layer) {
  double d = 0.0;
  for (std::size_t b = 0; b < blocks.size(); ++b)
    for (int k = 0; k < a.truncation[b][layer]; ++k) d += blocks[b][k].delta_d;
  return d;
}

TEST(Pcrd, HullIsConcaveAndOnTop) {
  std::mt19937_64 eng(10);
  for (int t = 0; t < 100; ++t) {
    const auto p = random_passes(eng, 1 + static_cast<int>(eng() % 8));
    const auto hull = convex_hull(p);
    for (std::size_t j = 2; j < hull.size(); ++j) EXPECT_LT(hull[j].slope, hull[j - 1].slope);
    // every truncation point lies on or below the hull
    double d = 0.0;
    for (const auto& r : p) {
      d += r.delta_d;
      for (std::size_t j = 1; j < hull.size(); ++j) {
        const auto& a = hull[j - 1];
        const auto& b = hull[j];
        if (r.cum_bytes < a.cost || r.cum_bytes > b.cost) continue;
        const double line = a.dist + b.slope * static_cast<double>(r.cum_bytes - a.cost);
        EXPECT_LE(d, line + 1e-9);
      }
    }
  }
}

TEST(Pcrd, MatchesExhaustiveSearch) {
  std::mt19937_64 eng(11);
  for (int t = 0; t < 100; ++t) {
    std::vector<std::vector<PassRecord>> blocks(1 + eng() % 3);
    for (auto& b : blocks) b = random_passes(eng, 1 + static_cast<int>(eng() % 5));
    double max_step = 0.0;
    std::vector<double> vertex_budgets;
    std::vector<double> slopes;
    for (const auto& b : blocks) {
      const auto h = convex_hull(b);
      for (std::size_t j = 1; j < h.size(); ++j) {
        max_step = std::max(max_step, h[j].dist - h[j - 1].dist);
        slopes.push_back(h[j].slope);
      }
    }
    for (double lambda : slopes) {
      double cost = 0.0;
      for (const auto& b : blocks) {
        const auto h = convex_hull(b);
        std::size_t j = 0;
        while (j + 1 < h.size() && h[j + 1].slope >= lambda) ++j;
        cost += static_cast<double>(h[j].cost);
      }
      vertex_budgets.push_back(cost);
    }
    for (double budget : vertex_budgets) {
      const std::vector<double> one{budget};
      const auto a = allocate_layers(blocks, one);
      EXPECT_NEAR(achieved(blocks, a, 0), oracle::exhaustive_best(blocks, budget), 1e-9);
    }
    for (int r = 0; r < 5; ++r) {
      const double budget = static_cast<double>(eng() % 120);
      const std::vector<double> one{budget};
      const auto a = allocate_layers(blocks, one);
      EXPECT_LE(static_cast<double>(a.layer_cost[0]), budget);
      const double best = oracle::exhaustive_best(blocks, budget);
      EXPECT_LE(achieved(blocks, a, 0), best + 1e-9);
      EXPECT_GE(achieved(blocks, a, 0), best - max_step - 1e-9);
    }
  }
}

TEST(Pcrd, LayersAreNested) {
  std::mt19937_64 eng(12);
  std::vector<std::vector<PassRecord>> blocks(20);
  for (auto& b : blocks) b = random_passes(eng, 15);
  const std::vector<double> budgets{10, 50, 200, 800, 5000};
  const auto a = allocate_layers(blocks, budgets);
  for (std::size_t b = 0; b < blocks.size(); ++b)
    for (std::size_t k = 1; k < budgets.size(); ++k) EXPECT_GE(a.truncation[b][k], a.truncation[b][k - 1]);
  for (std::size_t k = 0; k < budgets.size(); ++k) EXPECT_LE(static_cast<double>(a.layer_cost[k]), budgets[k]);
}

TEST(Pcrd, ZeroBudgetStarves) {
  std::mt19937_64 eng(13);
  std::vector<std::vector<PassRecord>> blocks{random_passes(eng, 4)};
  const std::vector<double> budgets{0.0};
  const auto a = allocate_layers(blocks, budgets);
  EXPECT_EQ(a.truncation[0][0], 0);
  EXPECT_TRUE(a.starved[0]);
}

}  // namespace
