#include <gtest/gtest.h>

#include <cmath>
#include <random>
#include <vector>

#include "aapool/shift.hpp"
#include "test_util.hpp"

using namespace aapool;
using namespace aapool::shift;

namespace {

frontend::LogMelSpec random_spec(std::size_t frames, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  frontend::LogMelSpec s;
  s.frames = frames;
  s.values = aapool::testing::random_tensor({frames, frontend::kBands}, rng, -5.0, 5.0);
  s.sample_rate = 16000;
  return s;
}

std::vector<data::Clip> random_clips(std::size_t n, std::size_t classes, std::uint64_t seed) {
  std::vector<data::Clip> out;
  for (std::size_t i = 0; i < n; ++i) {
    out.push_back(data::make_clip("c" + std::to_string(i), i % classes, classes, random_spec(198, seed + i)));
  }
  return out;
}

std::vector<const data::Clip*> ptrs(const std::vector<data::Clip>& v) {
  std::vector<const data::Clip*> p;
  for (const auto& c : v) p.push_back(&c);
  return p;
}

}  // namespace

TEST(TimeShift, WindowsOverlapBitExactly) {
  const auto spec = random_spec(198, 1);
  for (std::size_t n : {0u, 1u, 3u, 5u}) {
    const auto [a, b] = time_shift_protocol(spec, n);
    EXPECT_EQ(a.start_frame, 50u);
    EXPECT_EQ(b.start_frame, 50u + n);
    for (std::size_t t = 0; t + n < frontend::kPatchFrames; ++t) {
      for (std::size_t f = 0; f < frontend::kBands; ++f) {
        ASSERT_EQ(a.values[(t + n) * frontend::kBands + f], b.values[t * frontend::kBands + f]);
      }
    }
    for (std::size_t t = 0; t < frontend::kPatchFrames; ++t) {
      ASSERT_EQ(a.values[t * frontend::kBands], spec.values[(50 + t) * frontend::kBands]);
    }
  }
}

TEST(TimeShift, ShortClipIsIneligible) {
  const auto spec = random_spec(151, 2);
  EXPECT_NO_THROW(time_shift_protocol(spec, 0));
  EXPECT_THROW(time_shift_protocol(spec, 1), IneligibleError);
}

TEST(FreqShift, BandsMoveUpExactly) {
  const auto p = frontend::patch_at(random_spec(198, 3), 50);
  std::mt19937_64 rng(4);
  for (std::size_t n : {1u, 3u, 5u, 40u}) {
    const auto q = freq_shift_protocol(p, n, rng);
    for (std::size_t t = 0; t < frontend::kPatchFrames; ++t) {
      for (std::size_t b = n; b < frontend::kBands; ++b) {
        ASSERT_EQ(q.values[t * frontend::kBands + b], p.values[t * frontend::kBands + b - n]);
      }
    }
  }
  const auto id = freq_shift_protocol(p, 0, rng);
  EXPECT_TRUE(std::equal(id.values.data().begin(), id.values.data().end(), p.values.data().begin()));
  EXPECT_THROW(freq_shift_protocol(p, 96, rng), ArgumentError);
}

TEST(FreqShift, FillNoiseMatchesLowestBandStatistics) {
  const auto p = frontend::patch_at(random_spec(198, 5), 50);
  double mean = 0, sq = 0;
  for (std::size_t t = 0; t < 101; ++t) mean += p.values[t * 96];
  mean /= 101;
  for (std::size_t t = 0; t < 101; ++t) sq += std::pow(p.values[t * 96] - mean, 2);
  const double sd = std::sqrt(sq / 101);
  std::mt19937_64 rng(6);
  for (std::size_t n : {1u, 3u, 5u}) {
    const auto q = freq_shift_protocol(p, n, rng);
    double m = 0;
    for (std::size_t t = 0; t < 101; ++t)
      for (std::size_t b = 0; b < n; ++b) m += q.values[t * 96 + b];
    m /= static_cast<double>(101 * n);
    EXPECT_LT(std::abs(m - mean), 3 * sd / std::sqrt(101.0 * n)) << n;
  }
}

TEST(FreqShift, NoiseIsPerClipDeterministic) {
  const auto p = frontend::patch_at(random_spec(198, 7), 50);
  std::mt19937_64 a(clip_seed(9, "x")), b(clip_seed(9, "x")), c(clip_seed(9, "y"));
  const auto qa = freq_shift_protocol(p, 3, a), qb = freq_shift_protocol(p, 3, b), qc = freq_shift_protocol(p, 3, c);
  EXPECT_EQ(qa.values[0], qb.values[0]);
  EXPECT_NE(qa.values[0], qc.values[0]);
}

TEST(Consistency, ZeroShiftIsPerfect) {
  const auto clips = random_clips(6, 3, 10);
  model::Network<float> net(model::ModelConfig::micro(3), 1);
  for (auto proto : {Protocol::Time, Protocol::Freq}) {
    const auto r = shift_consistency(net, ptrs(clips), proto, 0, 3);
    EXPECT_DOUBLE_EQ(r.consistency_pct, 100.0);
    EXPECT_DOUBLE_EQ(r.mac, 0.0);
  }
}

TEST(Consistency, ReportAggregatesRows) {
  const auto clips = random_clips(8, 4, 20);
  model::Network<float> net(model::ModelConfig::micro(4), 2);
  const auto r = shift_consistency(net, ptrs(clips), Protocol::Freq, 5, 1, 2);
  ASSERT_EQ(r.rows.size(), 8u);
  double sum = 0;
  std::size_t same = 0;
  for (const auto& x : r.rows) {
    EXPECT_NEAR(x.abs_change, std::abs(x.p_after - x.p_before), 1e-12);
    sum += x.abs_change;
    same += x.top_before == x.top_after;
  }
  EXPECT_NEAR(r.mac, sum / 8, 1e-12);
  EXPECT_NEAR(r.consistency_pct, 100.0 * same / 8, 1e-12);
  EXPECT_GE(r.consistency_pct, 0.0);
  EXPECT_LE(r.consistency_pct, 100.0);
  // Same result with one worker.
  const auto r1 = shift_consistency(net, ptrs(clips), Protocol::Freq, 5, 1, 1);
  EXPECT_EQ(report_csv(r, "h"), report_csv(r1, "h"));
}

TEST(Consistency, HandBuiltFlip) {
  // Constant-output network: zero all parameters except the head bias.
  const auto clips = random_clips(2, 2, 30);
  model::Network<float> net(model::ModelConfig::micro(2), 3);
  for (auto& p : net.parameters()) {
    for (std::size_t i = 0; i < p.tensor.numel(); ++i) p.tensor[i] = 0.0f;
  }
  const auto r = shift_consistency(net, ptrs(clips), Protocol::Time, 3);
  EXPECT_DOUBLE_EQ(r.consistency_pct, 100.0);
  EXPECT_DOUBLE_EQ(r.mac, 0.0);
  const auto rf = shift_consistency(net, ptrs(clips), Protocol::Freq, 5, 2);
  EXPECT_DOUBLE_EQ(rf.consistency_pct, 100.0);
  EXPECT_DOUBLE_EQ(rf.mac, 0.0);

  // Two rows, one flipped: consistency 50%, MAC the mean of both changes.
  ShiftReport rep;
  rep.rows = {{"a", 0, 0, 0.9, 0.8, 0.1}, {"b", 1, 0, 0.6, 0.3, 0.3}};
  std::size_t same = 0;
  double sum = 0;
  for (const auto& x : rep.rows) {
    same += x.top_before == x.top_after;
    sum += x.abs_change;
  }
  EXPECT_DOUBLE_EQ(100.0 * same / 2, 50.0);
  EXPECT_DOUBLE_EQ(sum / 2, 0.2);
}

TEST(Consistency, EligibilityAndErrors) {
  auto clips = random_clips(3, 2, 40);
  clips[1].spec = random_spec(120, 41);
  clips[2].target = {1.0f, 1.0f};
  const auto e = eligible_clips(clips, 5);
  ASSERT_EQ(e.size(), 1u);
  EXPECT_EQ(e[0]->id, "c0");
  model::Network<float> net(model::ModelConfig::micro(2), 4);
  EXPECT_THROW(shift_consistency(net, {}, Protocol::Time, 1), ArgumentError);
  EXPECT_THROW(shift_consistency(net, {&clips[1]}, Protocol::Time, 1), IneligibleError);
  EXPECT_THROW(protocol_from_name("pitch"), ConfigError);
}

TEST(Reports, CsvCarriesManifestHashAndSummaryLayout) {
  ShiftReport a{Protocol::Time, 1, 75.0, 0.125, {{"x", 0, 1, 0.5, 0.25, 0.25}}};
  const auto csv = report_csv(a, "abc123");
  EXPECT_EQ(csv.rfind("# manifest abc123\n", 0), 0u);
  EXPECT_NE(csv.find("x,0,1,0.5,0.25,0.25"), std::string::npos);
  const auto sum = summary_csv({{"baseline", {a}}, {"tlpf_aps", {a}}}, "abc123");
  EXPECT_NE(sum.find("protocol,baseline_consistency_pct,baseline_mac,tlpf_aps_consistency_pct,tlpf_aps_mac"),
            std::string::npos);
  EXPECT_NE(sum.find("time-1,75,0.125,75,0.125"), std::string::npos);
  const auto svg = score_plot_svg({a});
  EXPECT_EQ(svg.rfind("<svg", 0), 0u);
  EXPECT_NE(svg.find("polyline"), std::string::npos);
}
