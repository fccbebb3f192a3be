#pragma once

// Log-mel frontend and fixed-size patch extraction.
//
// Conventions: periodic Hann window of 30 ms, 10 ms hop, frames centered on
// multiples of the hop (the signal is zero-padded by half a window on each
// side), FFT size = next power of two >= window, 96 Slaney-style mel bands
// spanning 0 Hz..Nyquist with Slaney area normalization, natural log of the
// mel power with a 1e-10 floor. A clip of N samples yields 1 + N/hop frames,
// so exactly one second gives 101 frames.

#include <fftw3.h>

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <mutex>
#include <numbers>
#include <span>
#include <string>
#include <vector>

#include "aapool/errors.hpp"
#include "aapool/tensor.hpp"
#include "aapool/wav.hpp"

namespace aapool::frontend {

inline constexpr std::size_t kBands = 96;
inline constexpr std::size_t kPatchFrames = 101;
inline constexpr std::size_t kPatchHop = 50;

struct FrontendConfig {
  double window_s = 0.030;
  double hop_s = 0.010;
  std::size_t bands = kBands;
  double log_floor = 1e-10;
};

struct LogMelSpec {
  std::size_t frames = 0;
  std::size_t bands = kBands;
  Tensor values;  // [frames, bands]
  int sample_rate = 0;
  double hop = 0.010;
  double window = 0.030;

  float at(std::size_t frame, std::size_t band) const { return values[frame * bands + band]; }
};

struct Patch {
  Tensor values;  // [101, 96]
  std::string clip_id;
  std::size_t start_frame = 0;
};

// Slaney mel scale: linear below 1 kHz, logarithmic above.
inline double hz_to_mel(double hz) {
  constexpr double f_sp = 200.0 / 3.0, min_log_hz = 1000.0, min_log_mel = min_log_hz / f_sp;
  const double logstep = std::log(6.4) / 27.0;
  return hz < min_log_hz ? hz / f_sp : min_log_mel + std::log(hz / min_log_hz) / logstep;
}

inline double mel_to_hz(double mel) {
  constexpr double f_sp = 200.0 / 3.0, min_log_hz = 1000.0, min_log_mel = min_log_hz / f_sp;
  const double logstep = std::log(6.4) / 27.0;
  return mel < min_log_mel ? mel * f_sp : min_log_hz * std::exp(logstep * (mel - min_log_mel));
}

inline std::size_t next_pow2(std::size_t n) {
  std::size_t p = 1;
  while (p < n) p <<= 1;
  return p;
}

// Band centre frequencies (Hz), one per band.
inline std::vector<double> mel_band_centers(int sample_rate, std::size_t bands) {
  const double lo = hz_to_mel(0.0), hi = hz_to_mel(sample_rate / 2.0);
  std::vector<double> centers(bands);
  for (std::size_t b = 0; b < bands; ++b) {
    centers[b] = mel_to_hz(lo + (hi - lo) * static_cast<double>(b + 1) / static_cast<double>(bands + 1));
  }
  return centers;
}

// Triangular filters, weights[band][fft_bin], area-normalized.
inline std::vector<std::vector<double>> mel_filterbank(int sample_rate, std::size_t n_fft,
                                                       std::size_t bands) {
  const double lo = hz_to_mel(0.0), hi = hz_to_mel(sample_rate / 2.0);
  std::vector<double> edges(bands + 2);
  for (std::size_t i = 0; i < edges.size(); ++i) {
    edges[i] = mel_to_hz(lo + (hi - lo) * static_cast<double>(i) / static_cast<double>(bands + 1));
  }
  const std::size_t bins = n_fft / 2 + 1;
  std::vector<std::vector<double>> fb(bands, std::vector<double>(bins, 0.0));
  for (std::size_t b = 0; b < bands; ++b) {
    const double enorm = 2.0 / (edges[b + 2] - edges[b]);
    for (std::size_t k = 0; k < bins; ++k) {
      const double f = static_cast<double>(k) * sample_rate / static_cast<double>(n_fft);
      const double rise = (f - edges[b]) / (edges[b + 1] - edges[b]);
      const double fall = (edges[b + 2] - f) / (edges[b + 2] - edges[b + 1]);
      fb[b][k] = std::max(0.0, std::min(rise, fall)) * enorm;
    }
  }
  return fb;
}

namespace detail {
// The FFTW planner is not re-entrant.
inline std::mutex& fftw_planner_mutex() {
  static std::mutex m;
  return m;
}
}  // namespace detail

inline LogMelSpec logmel(std::span<const float> samples, int sample_rate, const FrontendConfig& cfg = {}) {
  if (samples.empty()) throw FormatError("logmel: empty input");
  if (sample_rate < 8000) throw FormatError("logmel: sample rate must be >= 8 kHz");
  const auto win = static_cast<std::size_t>(std::lround(cfg.window_s * sample_rate));
  const auto hop = static_cast<std::size_t>(std::lround(cfg.hop_s * sample_rate));
  const std::size_t n_fft = next_pow2(win);
  const std::size_t bins = n_fft / 2 + 1;
  const std::size_t frames = 1 + samples.size() / hop;
  const auto fb = mel_filterbank(sample_rate, n_fft, cfg.bands);

  std::vector<double> window(win);
  for (std::size_t i = 0; i < win; ++i) {
    window[i] = 0.5 - 0.5 * std::cos(2.0 * std::numbers::pi * static_cast<double>(i) / static_cast<double>(win));
  }

  double* in = fftw_alloc_real(n_fft);
  fftw_complex* out = fftw_alloc_complex(bins);
  fftw_plan plan;
  {
    std::lock_guard lock(detail::fftw_planner_mutex());
    plan = fftw_plan_dft_r2c_1d(static_cast<int>(n_fft), in, out, FFTW_ESTIMATE);
  }

  LogMelSpec spec;
  spec.frames = frames;
  spec.bands = cfg.bands;
  spec.sample_rate = sample_rate;
  spec.hop = cfg.hop_s;
  spec.window = cfg.window_s;
  std::vector<float> values(frames * cfg.bands);
  std::vector<double> power(bins);
  const auto half = static_cast<std::ptrdiff_t>(win / 2);
  for (std::size_t t = 0; t < frames; ++t) {
    std::fill(in, in + n_fft, 0.0);
    const std::ptrdiff_t start = static_cast<std::ptrdiff_t>(t * hop) - half;
    for (std::size_t i = 0; i < win; ++i) {
      const std::ptrdiff_t s = start + static_cast<std::ptrdiff_t>(i);
      if (s >= 0 && s < static_cast<std::ptrdiff_t>(samples.size())) {
        in[i] = samples[static_cast<std::size_t>(s)] * window[i];
      }
    }
    fftw_execute(plan);
    for (std::size_t k = 0; k < bins; ++k) power[k] = out[k][0] * out[k][0] + out[k][1] * out[k][1];
    for (std::size_t b = 0; b < cfg.bands; ++b) {
      double e = 0.0;
      for (std::size_t k = 0; k < bins; ++k) e += fb[b][k] * power[k];
      values[t * cfg.bands + b] = static_cast<float>(std::log(std::max(e, cfg.log_floor)));
    }
  }
  {
    std::lock_guard lock(detail::fftw_planner_mutex());
    fftw_destroy_plan(plan);
  }
  fftw_free(in);
  fftw_free(out);
  spec.values = Tensor({frames, cfg.bands}, std::move(values));
  return spec;
}

inline LogMelSpec logmel(const wav::Audio& audio, const FrontendConfig& cfg = {}) {
  if (audio.channels != 1) throw FormatError("logmel: expected mono audio, got " + std::to_string(audio.channels) + " channels");
  if (audio.samples.empty()) throw FormatError("logmel: empty input");
  const auto samples = wav::to_float(audio);
  return logmel(samples, audio.sample_rate, cfg);
}

// Copies frames [start, start + 101) of the spectrogram, wrapping cyclically past the end.
inline Patch patch_at(const LogMelSpec& spec, std::size_t start, const std::string& clip_id = {}) {
  std::vector<float> v(kPatchFrames * spec.bands);
  for (std::size_t t = 0; t < kPatchFrames; ++t) {
    const std::size_t src = (start + t) % spec.frames;
    std::copy_n(&spec.values[src * spec.bands], spec.bands, &v[t * spec.bands]);
  }
  return {Tensor({kPatchFrames, spec.bands}, std::move(v)), clip_id, start};
}

// Clips shorter than 101 frames are tiled cyclically to one patch; longer clips
// yield windows every 50 frames, the last one anchored to the clip end.
inline std::vector<Patch> extract_patches(const LogMelSpec& spec, const std::string& clip_id = {}) {
  std::vector<Patch> patches;
  if (spec.frames == 0) return patches;
  if (spec.frames <= kPatchFrames) {
    patches.push_back(patch_at(spec, 0, clip_id));
    return patches;
  }
  std::size_t start = 0;
  for (; start + kPatchFrames <= spec.frames; start += kPatchHop) patches.push_back(patch_at(spec, start, clip_id));
  const std::size_t last = spec.frames - kPatchFrames;
  if (patches.back().start_frame != last) patches.push_back(patch_at(spec, last, clip_id));
  return patches;
}

}  // namespace aapool::frontend
