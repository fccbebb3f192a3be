#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <map>
#include <set>
#include <vector>

#include "aapool/data.hpp"
#include "aapool/io.hpp"
#include "aapool/synth.hpp"

using namespace aapool;
using namespace aapool::synth;

namespace {

SynthSpec small_spec(std::uint64_t seed = 7, std::size_t per_class = 50) {
  SynthSpec s;
  s.seed = seed;
  s.clips_per_class = per_class;
  return s;
}

// Onsets in 5 ms RMS frames: a frame above half the clip's max RMS that follows
// a frame below it, with at least 40 ms between counted onsets.
std::size_t count_bursts(const std::vector<float>& x, int sr) {
  const std::size_t hop = static_cast<std::size_t>(sr / 200);
  std::vector<double> rms;
  for (std::size_t i = 0; i + hop <= x.size(); i += hop) {
    double e = 0;
    for (std::size_t k = 0; k < hop; ++k) e += static_cast<double>(x[i + k]) * x[i + k];
    rms.push_back(std::sqrt(e / hop));
  }
  const double thr = 0.5 * *std::max_element(rms.begin(), rms.end());
  std::size_t count = 0, last = 0;
  for (std::size_t i = 1; i < rms.size(); ++i) {
    if (rms[i] > thr && rms[i - 1] <= thr && (count == 0 || i - last >= 8)) {
      ++count;
      last = i;
    }
  }
  return count;
}

}  // namespace

TEST(Synth, SameSeedSameSamples) {
  const auto a = generate(small_spec(3, 10)), b = generate(small_spec(3, 10));
  ASSERT_EQ(a.clips.size(), b.clips.size());
  for (std::size_t i = 0; i < a.clips.size(); ++i) {
    EXPECT_EQ(a.clips[i].id, b.clips[i].id);
    EXPECT_EQ(a.clips[i].split, b.clips[i].split);
    EXPECT_EQ(a.clips[i].samples, b.clips[i].samples);
  }
  const auto c = generate(small_spec(4, 10));
  EXPECT_NE(a.clips[0].samples, c.clips[0].samples);
}

TEST(Synth, WrittenDatasetIsByteIdentical) {
  const auto root = std::filesystem::temp_directory_path() / "aapool_test_synth";
  std::filesystem::remove_all(root);
  const auto spec = small_spec(5, 10);
  write_dataset(root / "a", generate(spec), spec, true);
  write_dataset(root / "b", generate(spec), spec, true);
  std::size_t files = 0;
  for (const auto& e : std::filesystem::recursive_directory_iterator(root / "a")) {
    if (!e.is_regular_file()) continue;
    const auto rel = std::filesystem::relative(e.path(), root / "a");
    EXPECT_EQ(io::read_text(e.path()), io::read_text(root / "b" / rel)) << rel;
    ++files;
  }
  EXPECT_EQ(files, 1u + 2u * 40u);
  std::filesystem::remove_all(root);
}

TEST(Synth, SplitsAre70_10_20PerClass) {
  const auto ds = generate(small_spec());
  std::map<std::pair<std::size_t, Split>, std::size_t> n;
  std::set<std::string> ids;
  for (const auto& c : ds.clips) {
    ++n[{c.label, c.split}];
    ids.insert(c.id);
  }
  EXPECT_EQ(ids.size(), 200u);
  std::size_t tr = 0, va = 0, ev = 0;
  for (std::size_t c = 0; c < 4; ++c) {
    EXPECT_EQ((n[{c, Split::Train}]), 35u);
    EXPECT_EQ((n[{c, Split::Val}]), 5u);
    EXPECT_EQ((n[{c, Split::Eval}]), 10u);
    tr += n[{c, Split::Train}];
    va += n[{c, Split::Val}];
    ev += n[{c, Split::Eval}];
  }
  EXPECT_EQ(tr, 140u);
  EXPECT_EQ(va, 20u);
  EXPECT_EQ(ev, 40u);
}

TEST(Synth, ClipsArePeakNormalizedAndSized) {
  const auto ds = generate(small_spec(1, 4));
  for (const auto& c : ds.clips) {
    ASSERT_EQ(c.samples.size(), 32000u);
    float peak = 0;
    for (float v : c.samples) peak = std::max(peak, std::abs(v));
    EXPECT_NEAR(peak, 0.5f, 1e-6f);
  }
}

TEST(Synth, ClapTrainHasExpectedBurstCount) {
  SynthSpec s = small_spec(9, 1);
  s.num_classes = 1;
  s.recipes = {{"claps", PatternKind::Claps, 0, 0, 0, 0, 8.0, 8.0}};
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    const auto x = render(s.recipes[0], s, seed);
    EXPECT_GE(count_bursts(x, s.sample_rate), 14u) << "seed " << seed;
    EXPECT_LE(count_bursts(x, s.sample_rate), 16u) << "seed " << seed;
  }
}

TEST(Synth, OnsetJitterMovesTheEvent) {
  SynthSpec s = small_spec();
  const auto r = resolved_recipes(s)[0];
  std::set<std::size_t> onsets;
  for (std::uint64_t seed = 0; seed < 8; ++seed) {
    const auto x = render(r, s, seed);
    std::size_t i = 0;
    while (i < x.size() && std::abs(x[i]) < 0.2f) ++i;
    onsets.insert(i / 160);
  }
  EXPECT_GE(onsets.size(), 4u);
}

TEST(Synth, ClassesSeparableByNearestCentroid) {
  const auto ds = data::from_synth(generate(small_spec(2)));
  auto profile = [](const data::Clip& c) {
    std::vector<double> p(frontend::kBands, 0.0);
    for (std::size_t t = 0; t < c.spec.frames; ++t)
      for (std::size_t b = 0; b < frontend::kBands; ++b) p[b] += c.spec.values[t * frontend::kBands + b];
    for (auto& v : p) v /= static_cast<double>(c.spec.frames);
    return p;
  };
  const std::size_t k = ds.classes.size();
  std::vector<std::vector<double>> centroid(k, std::vector<double>(frontend::kBands, 0.0));
  std::vector<std::size_t> count(k, 0);
  for (const auto& c : ds.train) {
    const std::size_t y = std::max_element(c.target.begin(), c.target.end()) - c.target.begin();
    const auto p = profile(c);
    for (std::size_t b = 0; b < p.size(); ++b) centroid[y][b] += p[b];
    ++count[y];
  }
  for (std::size_t y = 0; y < k; ++y)
    for (auto& v : centroid[y]) v /= static_cast<double>(count[y]);
  std::size_t hits = 0;
  for (const auto& c : ds.eval) {
    const auto p = profile(c);
    std::size_t best = 0;
    double best_d = 1e300;
    for (std::size_t y = 0; y < k; ++y) {
      double d = 0;
      for (std::size_t b = 0; b < p.size(); ++b) d += (p[b] - centroid[y][b]) * (p[b] - centroid[y][b]);
      if (d < best_d) best_d = d, best = y;
    }
    hits += c.target[best] > 0.5f;
  }
  EXPECT_GT(static_cast<double>(hits) / static_cast<double>(ds.eval.size()), 0.8);
}

TEST(Synth, ValidationAndJson) {
  SynthSpec s;
  s.onset_jitter_s = 0.05;
  s.clip_seconds = 1.0;
  EXPECT_EQ(validate(s).size(), 2u);
  EXPECT_THROW(generate(s), ConfigError);
  SynthSpec t = small_spec(12, 8);
  t.num_classes = 6;
  const auto back = spec_from_json(to_json(t));
  EXPECT_EQ(to_json(back), to_json(t));
  EXPECT_EQ(resolved_recipes(back).size(), 6u);
  EXPECT_EQ(resolved_recipes(back)[4].name, "tone2");
  EXPECT_THROW(spec_from_json(nlohmann::json{{"recipes", {{{"kind", "bells"}}}}}), ConfigError);
}

TEST(Dataset, LoadMatchesInMemoryFeatures) {
  const auto root = std::filesystem::temp_directory_path() / "aapool_test_dataset";
  std::filesystem::remove_all(root);
  const auto spec = small_spec(6, 10);
  const auto gen = generate(spec);
  write_dataset(root / "feat", gen, spec, true);
  write_dataset(root / "wav", gen, spec, false);
  const auto mem = data::from_synth(gen);
  const auto a = data::load_dataset(root / "feat"), b = data::load_dataset(root / "wav");
  ASSERT_EQ(a.train.size(), mem.train.size());
  ASSERT_EQ(b.eval.size(), mem.eval.size());
  for (std::size_t i = 0; i < mem.train.size(); ++i) {
    EXPECT_EQ(a.train[i].id, mem.train[i].id);
    EXPECT_EQ(a.train[i].target, mem.train[i].target);
    EXPECT_EQ(a.train[i].spec.values.data()[0], mem.train[i].spec.values.data()[0]);
    EXPECT_TRUE(std::equal(b.train[i].spec.values.data().begin(), b.train[i].spec.values.data().end(),
                           mem.train[i].spec.values.data().begin()));
  }
  EXPECT_EQ(a.manifest_hash.size(), 16u);
  EXPECT_THROW(data::load_dataset(root / "missing"), ConfigError);
  io::write_text(root / "wav" / "manifest.json", "{\"classes\": [\"a\"], \"clips\": [{\"id\": \"x\"}]}");
  EXPECT_THROW(data::load_dataset(root / "wav"), FormatError);
  std::filesystem::remove_all(root);
}
