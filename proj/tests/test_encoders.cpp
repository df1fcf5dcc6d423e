#include <gtest/gtest.h>

#include <algorithm>

#include "alcofm/encoders.hpp"
#include "alcofm/gradcheck.hpp"
#include "test_util.hpp"

using namespace alcofm;
using testutil::random_tensor;

namespace {

AtomicWindow make_window(std::int64_t start, std::uint64_t seed) {
  AtomicWindow w;
  w.window_start = start;
  CounterRng rng(seed, 3);
  for (std::size_t j = 0; j < kFeatureCount; ++j) w.features.push_back(rng.normal());
  w.temporal = encode_temporal(start, HolidayCalendar::us_fixed_date());
  return w;
}

FeatureStats unit_stats() { return {std::vector<double>(kFeatureCount, 0.0), std::vector<double>(kFeatureCount, 1.0)}; }

Tensor random_tile(std::size_t side, std::uint64_t seed) {
  CounterRng rng(seed, 5);
  Tensor t(side, side);
  for (auto& v : t.data()) v = rng.uniform();
  return t;
}

EncoderConfig small_config() {
  EncoderConfig c;
  c.d = 4;
  c.T = 2;
  c.P = 4;
  c.tile_px = 8;
  c.n_layers = 1;
  c.n_heads = 2;
  return c;
}

}  // namespace

TEST(NumericEncoder, ShapeForOneHourDefaults) {
  EncoderConfig c;
  ParamStore s;
  add_encoder_params(s, c, 1);
  Graph g(false);
  std::vector<AtomicWindow> w{make_window(1'700'000'000, 1)};
  auto seq = encode_numeric(g, s, c, w, unit_stats());
  EXPECT_EQ(seq.tokens.rows(), 4u);
  EXPECT_EQ(seq.tokens.cols(), 32u);
  EXPECT_EQ(seq.hours_covered, 1u);
  EXPECT_EQ(seq.modality, Modality::numeric);
}

TEST(NumericEncoder, ShapeContractForEachWindowLength) {
  EncoderConfig c;
  ParamStore s;
  add_encoder_params(s, c, 1);
  for (std::size_t h : {1u, 3u, 6u}) {
    Graph g(false);
    std::vector<AtomicWindow> w;
    for (std::size_t k = 0; k < h; ++k) w.push_back(make_window(1'700'000'000 + 3600 * static_cast<long>(k), k));
    EXPECT_EQ(encode_numeric(g, s, c, w, unit_stats()).tokens.rows(), h * c.T);
    Graph g2(false);
    Tensor patches(h * c.P, c.patch_side() * c.patch_side(), 0.5);
    EXPECT_EQ(encode_visual_rows(g2, s, c, patches).rows(), h * c.P);
  }
}

TEST(NumericEncoder, TimestampEntersOnlyThroughTimeEmbedding) {
  EncoderConfig c;
  ParamStore s;
  add_encoder_params(s, c, 2);
  AtomicWindow a = make_window(1'700'000'000, 9);
  AtomicWindow b = a;
  b.window_start += 5 * 3600;  // same features and calendar code, different clock
  auto run = [&](const EncoderConfig& cfg, const AtomicWindow& w) {
    Graph g(false);
    std::vector<AtomicWindow> one{w};
    return encode_numeric(g, s, cfg, one, unit_stats()).tokens.value();
  };
  EXPECT_GT(max_abs_diff(run(c, a), run(c, b)), 1e-6);
  EncoderConfig off = c;
  off.time_embedding = false;
  EXPECT_TRUE(run(off, a) == run(off, b));
}

TEST(NumericEncoder, RejectsAbsentFeatures) {
  EncoderConfig c;
  ParamStore s;
  add_encoder_params(s, c, 1);
  std::vector<AtomicWindow> w{make_window(0, 1)};
  w[0].features[3] = kAbsent;
  Graph g(false);
  EXPECT_THROW(encode_numeric(g, s, c, w, unit_stats()), ValidationError);
}

TEST(NumericEncoder, GradientCheck) {
  const EncoderConfig c = small_config();
  ParamStore s;
  add_encoder_params(s, c, 3);
  std::vector<AtomicWindow> w{make_window(1'690'000'000, 1), make_window(1'690'003'600, 2)};
  const Tensor R = random_tensor(w.size() * c.T, c.d, 4);
  const double err = grad_check_params(
      [&](Graph& g, const ParamStore& p) {
        return sum(mul(encode_numeric(g, p, c, w, unit_stats()).tokens, g.constant(R)));
      },
      s);
  EXPECT_LT(err, 1e-5);
}

TEST(VisualEncoder, ShapeForDefaults) {
  EncoderConfig c;
  ParamStore s;
  add_encoder_params(s, c, 1);
  Graph g(false);
  auto seq = encode_visual(g, s, c, random_tile(32, 1));
  EXPECT_EQ(seq.tokens.rows(), 16u);
  EXPECT_EQ(seq.tokens.cols(), 32u);
  EXPECT_EQ(seq.modality, Modality::visual);
}

TEST(VisualEncoder, PatchifyLayout) {
  EncoderConfig c = small_config();
  Tensor tile(8, 8);
  for (std::size_t i = 0; i < 8; ++i)
    for (std::size_t j = 0; j < 8; ++j) tile(i, j) = static_cast<double>(i * 8 + j) / 64.0;
  Tensor p = patchify(tile, c);
  ASSERT_EQ(p.rows(), 4u);
  ASSERT_EQ(p.cols(), 16u);
  // Patch 3 is the bottom-right 4x4 block; its first pixel is (4, 4).
  EXPECT_DOUBLE_EQ(p(3, 0), tile(4, 4));
  EXPECT_DOUBLE_EQ(p(1, 5), tile(1, 5));
  EXPECT_DOUBLE_EQ(p(2, 15), tile(7, 3));
}

TEST(VisualEncoder, ConstantTileGivesIdenticalTokens) {
  EncoderConfig c;
  ParamStore s;
  add_encoder_params(s, c, 5);
  const Tensor tile(32, 32, 0.37);
  {
    Graph g(false);
    const Tensor pre = visual_patch_tokens(g, s, c, patchify(tile, c)).value();
    for (std::size_t i = 1; i < c.P; ++i)
      for (std::size_t j = 0; j < c.d; ++j) EXPECT_NEAR(pre(i, j), pre(0, j), 1e-12);
  }
  c.pos_embedding = false;
  Graph g(false);
  const Tensor out = encode_visual(g, s, c, tile).tokens.value();
  for (std::size_t i = 1; i < c.P; ++i)
    for (std::size_t j = 0; j < c.d; ++j) EXPECT_NEAR(out(i, j), out(0, j), 1e-12);
}

TEST(VisualEncoder, ShapeAndRangeErrors) {
  EncoderConfig c;
  c.tile_px = 30;  // not divisible by the 4x4 patch grid
  EXPECT_THROW(c.validate(), ShapeError);
  EncoderConfig ok;
  Tensor bad(32, 32, 0.5);
  bad(3, 3) = 1.5;
  EXPECT_THROW(patchify(bad, ok), ValidationError);
  EXPECT_THROW(patchify(Tensor(16, 16, 0.5), ok), ShapeError);
}

TEST(VisualEncoder, SoftSplitOperatorIsRowStochastic) {
  const Tensor op = soft_split_operator(4);
  for (std::size_t i = 0; i < 16; ++i) {
    double s = 0;
    std::size_t nz = 0;
    for (std::size_t j = 0; j < 16; ++j) {
      s += op(i, j);
      nz += op(i, j) > 0;
    }
    EXPECT_NEAR(s, 1.0, 1e-15);
    const std::size_t a = i / 4, b = i % 4;
    const std::size_t rows = (a == 0 || a == 3) ? 2 : 3, cols = (b == 0 || b == 3) ? 2 : 3;
    EXPECT_EQ(nz, rows * cols);
  }
}

TEST(VisualEncoder, GradientCheckSmallTile) {
  const EncoderConfig c = small_config();
  ParamStore s;
  add_encoder_params(s, c, 6);
  const Tensor tile = random_tile(8, 7);
  const Tensor R = random_tensor(c.P, c.d, 8);
  const double err = grad_check_params(
      [&](Graph& g, const ParamStore& p) { return sum(mul(encode_visual(g, p, c, tile).tokens, g.constant(R))); }, s);
  EXPECT_LT(err, 1e-5);
}

TEST(Volatility, WorkedExamples) {
  EXPECT_DOUBLE_EQ(volatility(Tensor(4, 3, 2.0), Tensor(16, 3, -1.0)), 0.0);
  EXPECT_DOUBLE_EQ(volatility(Tensor::from_rows({{0}, {2}}), Tensor::from_rows({{1}, {1}})), 0.5);
}

TEST(Volatility, HomogeneityAndNonNegativity) {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const Tensor a = random_tensor(4, 6, seed), b = random_tensor(16, 6, seed + 100);
    const double u = volatility(a, b);
    EXPECT_GE(u, 0.0);
    Tensor a3 = a, b3 = b;
    for (auto& v : a3.data()) v *= 3.0;
    for (auto& v : b3.data()) v *= 3.0;
    EXPECT_NEAR(volatility(a3, b3), 3.0 * u, 1e-12);
  }
  // Single-token hour: population std is defined and zero.
  EXPECT_DOUBLE_EQ(token_spread(random_tensor(1, 5, 1)), 0.0);
}

TEST(Gating, SelectWindowWorkedExamples) {
  const GateThresholds t{0.2, 0.6};
  EXPECT_EQ(select_window(0.7, t), 6);
  EXPECT_EQ(select_window(0.6, t), 3);
  EXPECT_EQ(select_window(0.2, t), 3);
  EXPECT_EQ(select_window(0.1, t), 1);
}

TEST(Gating, SelectWindowExhaustiveGridAndMonotone) {
  std::vector<double> vals;
  for (int i = 0; i <= 40; ++i) vals.push_back(i * 0.025);
  for (double lo : vals)
    for (double hi : vals) {
      if (lo > hi) continue;
      const GateThresholds t{lo, hi};
      int prev = 0;
      for (double u : vals) {
        const int expected = (u >= lo && u <= hi) ? 3 : (u > hi ? 6 : 1);
        const int got = select_window(u, t);
        ASSERT_EQ(got, expected) << u << " " << lo << " " << hi;
        ASSERT_GE(got, prev);
        prev = got;
      }
    }
}

namespace {

// Smallest list value v with at least pct% of the list <= v.
double percentile_by_count(const std::vector<double>& xs, int pct) {
  std::vector<double> s = xs;
  std::sort(s.begin(), s.end());
  for (double v : s) {
    const auto le = std::count_if(s.begin(), s.end(), [&](double x) { return x <= v; });
    if (le * 100 >= static_cast<long>(pct) * static_cast<long>(s.size())) return v;
  }
  return s.back();
}

}  // namespace

TEST(Gating, FitThresholdsWorkedExamples) {
  const auto t = fit_thresholds({0.5, 0.1, 0.9, 0.3, 1.0, 0.2, 0.6, 0.4, 0.8, 0.7});
  EXPECT_DOUBLE_EQ(t.tau_low, 0.4);
  EXPECT_DOUBLE_EQ(t.tau_high, 0.7);
  const auto c = fit_thresholds(std::vector<double>(7, 2.5));
  EXPECT_DOUBLE_EQ(c.tau_low, 2.5);
  EXPECT_DOUBLE_EQ(c.tau_high, 2.5);
  EXPECT_THROW(fit_thresholds({}), ValidationError);
}

TEST(Gating, FitThresholdsMatchesCountingOracle) {
  CounterRng rng(77, 1);
  for (int trial = 0; trial < 1000; ++trial) {
    const std::size_t n = 1 + static_cast<std::size_t>(rng.uniform() * 60);
    std::vector<double> u(n);
    for (auto& v : u) v = std::round(rng.uniform() * 20) / 10.0;  // ties on purpose
    const auto t = fit_thresholds(u);
    ASSERT_EQ(t.tau_low, percentile_by_count(u, 33));
    ASSERT_EQ(t.tau_high, percentile_by_count(u, 67));
    ASSERT_LE(t.tau_low, t.tau_high);
    u.push_back(*std::max_element(u.begin(), u.end()) + rng.uniform());
    const auto t2 = fit_thresholds(u);
    ASSERT_GE(t2.tau_low, t.tau_low);
    ASSERT_GE(t2.tau_high, t.tau_high);
  }
}
