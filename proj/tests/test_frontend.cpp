#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <numbers>
#include <random>

#include "aapool/frontend.hpp"
#include "aapool/wav.hpp"

using namespace aapool;
using namespace aapool::frontend;

namespace {

constexpr int kRate = 16000;

std::vector<float> tone(double hz, double seconds, double amp = 0.5) {
  std::vector<float> s(static_cast<std::size_t>(seconds * kRate));
  for (std::size_t i = 0; i < s.size(); ++i) {
    s[i] = static_cast<float>(amp * std::sin(2.0 * std::numbers::pi * hz * static_cast<double>(i) / kRate));
  }
  return s;
}

LogMelSpec ramp_spec(std::size_t frames) {
  std::vector<float> v(frames * kBands);
  for (std::size_t t = 0; t < frames; ++t)
    for (std::size_t b = 0; b < kBands; ++b) v[t * kBands + b] = static_cast<float>(t * 1000 + b);
  LogMelSpec spec;
  spec.frames = frames;
  spec.values = Tensor({frames, kBands}, std::move(v));
  spec.sample_rate = kRate;
  return spec;
}

}  // namespace

TEST(MelScale, RoundTripAndBreakpoint) {
  EXPECT_NEAR(hz_to_mel(1000.0), 15.0, 1e-12);
  for (double hz : {0.0, 440.0, 999.0, 1000.0, 3150.5, 8000.0}) EXPECT_NEAR(mel_to_hz(hz_to_mel(hz)), hz, 1e-9);
}

TEST(MelScale, FilterbankCoversEveryBand) {
  const auto fb = mel_filterbank(kRate, 512, kBands);
  ASSERT_EQ(fb.size(), kBands);
  for (const auto& band : fb) {
    double peak = 0.0;
    for (double w : band) {
      EXPECT_GE(w, 0.0);
      peak = std::max(peak, w);
    }
    EXPECT_GT(peak, 0.0);
  }
}

TEST(Logmel, SilenceSitsAtFloor) {
  const std::vector<float> silence(kRate, 0.0f);
  const auto spec = logmel(silence, kRate);
  EXPECT_EQ(spec.bands, 96u);
  const float floor = static_cast<float>(std::log(1e-10));
  for (float v : spec.values.data()) EXPECT_EQ(v, floor);
}

TEST(Logmel, OneSecondGivesOnePatchOfFrames) {
  const auto spec = logmel(tone(440.0, 1.0), kRate);
  EXPECT_GE(spec.frames, 98u);
  EXPECT_EQ(spec.frames, 101u);
  EXPECT_EQ(spec.values.shape(), (Shape{101, 96}));
}

TEST(Logmel, ToneAtBandCentreLightsThatBand) {
  const auto centers = mel_band_centers(kRate, kBands);
  for (std::size_t band : {40u, 60u, 75u}) {
    const auto spec = logmel(tone(centers[band], 1.0), kRate);
    for (std::size_t t = 0; t < spec.frames; ++t) {
      std::size_t best = 0;
      for (std::size_t b = 1; b < kBands; ++b) {
        if (spec.at(t, b) > spec.at(t, best)) best = b;
      }
      EXPECT_EQ(best, band) << "frame " << t;
    }
  }
}

TEST(Logmel, DelayByOneHopShiftsByOneFrame) {
  std::mt19937_64 rng(3);
  std::normal_distribution<float> noise(0.0f, 0.1f);
  std::vector<float> x(20000);
  for (auto& v : x) v = noise(rng);
  std::vector<float> delayed(160, 0.0f);
  delayed.insert(delayed.end(), x.begin(), x.end());
  const auto a = logmel(x, kRate), b = logmel(delayed, kRate);
  ASSERT_EQ(b.frames, a.frames + 1);
  for (std::size_t t = 2; t + 2 < a.frames; ++t)
    for (std::size_t band = 0; band < kBands; ++band) EXPECT_NEAR(b.at(t + 1, band), a.at(t, band), 1e-4);
}

TEST(Logmel, RejectsBadInput) {
  EXPECT_THROW(logmel(std::vector<float>{}, kRate), FormatError);
  EXPECT_THROW(logmel(std::vector<float>(100, 0.0f), 4000), FormatError);
  wav::Audio stereo{kRate, 2, std::vector<std::int16_t>(3200, 0)};
  EXPECT_THROW(logmel(stereo), FormatError);
  wav::Audio empty{kRate, 1, {}};
  EXPECT_THROW(logmel(empty), FormatError);
}

TEST(Patches, ExactlyOnePatch) {
  const auto patches = extract_patches(ramp_spec(101), "c");
  ASSERT_EQ(patches.size(), 1u);
  EXPECT_EQ(patches[0].start_frame, 0u);
  EXPECT_EQ(patches[0].clip_id, "c");
}

TEST(Patches, ShortClipReplicatesFrames) {
  const auto spec = ramp_spec(50);
  const auto patches = extract_patches(spec);
  ASSERT_EQ(patches.size(), 1u);
  const auto& p = patches[0].values;
  ASSERT_EQ(p.shape(), (Shape{101, 96}));
  for (std::size_t t = 0; t < 101; ++t) EXPECT_EQ(p[t * kBands + 7], spec.at(t % 50, 7)) << t;
  EXPECT_EQ(p[100 * kBands], spec.at(0, 0));
}

TEST(Patches, FiftyPercentOverlap) {
  std::vector<std::size_t> starts;
  for (const auto& p : extract_patches(ramp_spec(201))) starts.push_back(p.start_frame);
  EXPECT_EQ(starts, (std::vector<std::size_t>{0, 50, 100}));
}

TEST(Patches, LastWindowAnchoredToEnd) {
  std::vector<std::size_t> starts;
  const auto spec = ramp_spec(230);
  const auto patches = extract_patches(spec);
  for (const auto& p : patches) starts.push_back(p.start_frame);
  EXPECT_EQ(starts, (std::vector<std::size_t>{0, 50, 100, 129}));
  EXPECT_EQ(patches.back().values[100 * kBands + 3], spec.at(229, 3));
}

TEST(Patches, EveryPatchIs101By96AndPure) {
  for (std::size_t frames : {1u, 17u, 100u, 101u, 102u, 151u, 333u}) {
    const auto spec = ramp_spec(frames);
    const auto a = extract_patches(spec), b = extract_patches(spec);
    ASSERT_EQ(a.size(), b.size());
    for (std::size_t i = 0; i < a.size(); ++i) {
      EXPECT_EQ(a[i].values.shape(), (Shape{101, 96}));
      EXPECT_EQ(a[i].values.values(), b[i].values.values());
    }
  }
}

TEST(Wav, RoundTripAndRejects) {
  const auto tmp = std::filesystem::temp_directory_path() / "aapool_wav_test.wav";
  const auto audio = wav::from_float(tone(1000.0, 0.1), kRate);
  wav::write(tmp, audio);
  const auto back = wav::read(tmp);
  EXPECT_EQ(back.sample_rate, kRate);
  EXPECT_EQ(back.channels, 1);
  EXPECT_EQ(back.samples, audio.samples);
  std::filesystem::remove(tmp);

  const std::string junk = "RIFX0000WAVE";
  EXPECT_THROW(wav::parse({reinterpret_cast<const unsigned char*>(junk.data()), junk.size()}), FormatError);
  auto bytes = wav::encode(audio);
  bytes[34] = 8;  // bits per sample
  EXPECT_THROW(wav::parse({reinterpret_cast<const unsigned char*>(bytes.data()), bytes.size()}), FormatError);
}
