#pragma once

// Deterministic synthetic sound-event clips. Each class is a recipe drawn from
// three pattern families: stationary tones, linear chirps and transient trains
// (broadband claps or tone pips). Every clip gets a random onset offset and
// white background noise at a fixed SNR.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <numbers>
#include <random>
#include <string>
#include <vector>

#include "aapool/errors.hpp"
#include "aapool/frontend.hpp"
#include "aapool/io.hpp"
#include "aapool/wav.hpp"
#include "json.hpp"

namespace aapool::synth {

enum class PatternKind { Tone, Chirp, Claps, TonePips };

struct Recipe {
  std::string name;
  PatternKind kind = PatternKind::Tone;
  double f_lo = 500.0, f_hi = 1000.0;         // Hz; start frequency for chirps
  double slope_lo = 0.0, slope_hi = 0.0;      // Hz/s, chirps only
  double rate_lo = 0.0, rate_hi = 0.0;        // events/s, transient trains only
};

struct SynthSpec {
  std::size_t num_classes = 4;
  std::size_t clips_per_class = 50;
  double clip_seconds = 2.0;
  int sample_rate = 16000;
  double noise_snr_db = 20.0;
  double onset_jitter_s = 0.25;
  std::uint64_t seed = 0;
  std::vector<Recipe> recipes;  // one per class; defaults fill missing ones

  static std::vector<Recipe> default_recipes() {
    return {
        {"tone", PatternKind::Tone, 400.0, 1600.0, 0.0, 0.0, 0.0, 0.0},
        {"chirp", PatternKind::Chirp, 400.0, 1600.0, 250.0, 1200.0, 0.0, 0.0},
        {"claps", PatternKind::Claps, 0.0, 0.0, 0.0, 0.0, 6.0, 10.0},
        {"pips", PatternKind::TonePips, 1000.0, 2000.0, 0.0, 0.0, 6.0, 10.0},
    };
  }
};

inline std::vector<std::string> validate(const SynthSpec& s) {
  std::vector<std::string> errs;
  if (s.num_classes < 1) errs.emplace_back("num_classes must be >= 1");
  if (s.clips_per_class < 1) errs.emplace_back("clips_per_class must be >= 1");
  if (!(s.clip_seconds >= 2.0)) errs.emplace_back("clip_seconds must be >= 2.0");
  if (s.sample_rate < 8000) errs.emplace_back("sample_rate must be >= 8000");
  if (!(s.onset_jitter_s >= 0.1)) errs.emplace_back("onset_jitter_s must be >= 0.1");
  if (!(s.onset_jitter_s < s.clip_seconds / 2)) errs.emplace_back("onset_jitter_s must be below half the clip");
  if (s.recipes.size() > s.num_classes) errs.emplace_back("more recipes than classes");
  for (const auto& r : s.recipes) {
    if (r.kind != PatternKind::Claps && !(r.f_lo > 0 && r.f_hi >= r.f_lo && r.f_hi < s.sample_rate / 2.0)) {
      errs.push_back("recipe '" + r.name + "': need 0 < f_lo <= f_hi < Nyquist");
    }
    if ((r.kind == PatternKind::Claps || r.kind == PatternKind::TonePips) && !(r.rate_lo > 0 && r.rate_hi >= r.rate_lo)) {
      errs.push_back("recipe '" + r.name + "': need 0 < rate_lo <= rate_hi");
    }
  }
  return errs;
}

// Recipes for every class: explicit ones first, then the defaults cycled with
// their frequency ranges moved up an octave per cycle.
inline std::vector<Recipe> resolved_recipes(const SynthSpec& s) {
  std::vector<Recipe> out = s.recipes;
  const auto defaults = SynthSpec::default_recipes();
  for (std::size_t c = out.size(); c < s.num_classes; ++c) {
    Recipe r = defaults[c % defaults.size()];
    const double octave = std::pow(2.0, static_cast<double>(c / defaults.size()));
    r.f_lo *= octave;
    r.f_hi *= octave;
    r.rate_lo *= octave;
    r.rate_hi *= octave;
    if (c >= defaults.size()) r.name += std::to_string(c / defaults.size() + 1);
    out.push_back(r);
  }
  return out;
}

inline std::string kind_name(PatternKind k) {
  switch (k) {
    case PatternKind::Tone: return "tone";
    case PatternKind::Chirp: return "chirp";
    case PatternKind::Claps: return "claps";
    case PatternKind::TonePips: return "pips";
  }
  return "tone";
}

inline PatternKind kind_from_name(const std::string& s) {
  if (s == "tone") return PatternKind::Tone;
  if (s == "chirp") return PatternKind::Chirp;
  if (s == "claps") return PatternKind::Claps;
  if (s == "pips") return PatternKind::TonePips;
  throw ConfigError("unknown pattern kind '" + s + "'");
}

inline nlohmann::json to_json(const SynthSpec& s) {
  nlohmann::json j;
  j["num_classes"] = s.num_classes;
  j["clips_per_class"] = s.clips_per_class;
  j["clip_seconds"] = s.clip_seconds;
  j["sample_rate"] = s.sample_rate;
  j["noise_snr_db"] = s.noise_snr_db;
  j["onset_jitter_s"] = s.onset_jitter_s;
  j["seed"] = s.seed;
  j["recipes"] = nlohmann::json::array();
  for (const auto& r : resolved_recipes(s)) {
    j["recipes"].push_back({{"name", r.name}, {"kind", kind_name(r.kind)}, {"f_lo", r.f_lo}, {"f_hi", r.f_hi},
                            {"slope_lo", r.slope_lo}, {"slope_hi", r.slope_hi}, {"rate_lo", r.rate_lo},
                            {"rate_hi", r.rate_hi}});
  }
  return j;
}

inline SynthSpec spec_from_json(const nlohmann::json& j) {
  try {
    SynthSpec s;
    s.num_classes = j.value("num_classes", s.num_classes);
    s.clips_per_class = j.value("clips_per_class", s.clips_per_class);
    s.clip_seconds = j.value("clip_seconds", s.clip_seconds);
    s.sample_rate = j.value("sample_rate", s.sample_rate);
    s.noise_snr_db = j.value("noise_snr_db", s.noise_snr_db);
    s.onset_jitter_s = j.value("onset_jitter_s", s.onset_jitter_s);
    s.seed = j.value("seed", s.seed);
    if (j.contains("recipes")) {
      for (const auto& r : j.at("recipes")) {
        Recipe x;
        x.name = r.value("name", std::string("class") + std::to_string(s.recipes.size()));
        x.kind = kind_from_name(r.value("kind", std::string("tone")));
        x.f_lo = r.value("f_lo", x.f_lo);
        x.f_hi = r.value("f_hi", x.f_hi);
        x.slope_lo = r.value("slope_lo", x.slope_lo);
        x.slope_hi = r.value("slope_hi", x.slope_hi);
        x.rate_lo = r.value("rate_lo", x.rate_lo);
        x.rate_hi = r.value("rate_hi", x.rate_hi);
        s.recipes.push_back(x);
      }
    }
    return s;
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("synth spec: ") + e.what());
  }
}

enum class Split { Train, Val, Eval };

inline std::string split_name(Split s) {
  return s == Split::Train ? "train" : s == Split::Val ? "val" : "eval";
}

struct SynthClip {
  std::string id;
  Split split = Split::Train;
  std::size_t label = 0;
  std::vector<float> samples;
};

struct SynthDataset {
  std::vector<std::string> classes;
  int sample_rate = 16000;
  std::vector<SynthClip> clips;
};

// splitmix64 finalizer; derives independent per-clip streams from one seed.
inline std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t index) {
  std::uint64_t z = seed + 0x9E3779B97F4A7C15ULL * (index + 1);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

// One clip of `recipe`, deterministic in `clip_seed`.
inline std::vector<float> render(const Recipe& recipe, const SynthSpec& spec, std::uint64_t clip_seed) {
  std::mt19937_64 rng(clip_seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  auto uniform = [&](double lo, double hi) { return lo + (hi - lo) * unit(rng); };
  const double sr = spec.sample_rate;
  const auto n = static_cast<std::size_t>(std::lround(spec.clip_seconds * sr));
  std::vector<double> sig(n, 0.0);
  const double onset = uniform(0.0, spec.onset_jitter_s);
  const double two_pi = 2.0 * std::numbers::pi;

  // Event tail ends a random amount before the clip end, so position varies at both ends.
  const double end = spec.clip_seconds - uniform(0.0, spec.onset_jitter_s);
  auto envelope = [&](double t) {
    constexpr double ramp = 0.02;
    if (t < onset || t > end) return 0.0;
    return std::min({1.0, (t - onset) / ramp, (end - t) / ramp});
  };

  switch (recipe.kind) {
    case PatternKind::Tone: {
      const double f = uniform(recipe.f_lo, recipe.f_hi);
      const double phase = uniform(0.0, two_pi);
      for (std::size_t i = 0; i < n; ++i) {
        const double t = static_cast<double>(i) / sr;
        double v = 0.0;
        for (int h = 1; h <= 3; ++h) {
          if (f * h < sr / 2) v += std::sin(two_pi * f * h * t + phase * h) / h;
        }
        sig[i] = envelope(t) * v;
      }
      break;
    }
    case PatternKind::Chirp: {
      const double f0 = uniform(recipe.f_lo, recipe.f_hi);
      const double slope = uniform(recipe.slope_lo, recipe.slope_hi) * (unit(rng) < 0.5 ? -1.0 : 1.0);
      const double phase0 = uniform(0.0, two_pi);
      for (std::size_t i = 0; i < n; ++i) {
        const double t = static_cast<double>(i) / sr;
        const double tau = std::max(0.0, t - onset);
        const double f = f0 + slope * tau;
        if (f <= 20.0 || f >= sr / 2) continue;
        sig[i] = envelope(t) * std::sin(phase0 + two_pi * (f0 * tau + 0.5 * slope * tau * tau));
      }
      break;
    }
    case PatternKind::Claps:
    case PatternKind::TonePips: {
      const double rate = uniform(recipe.rate_lo, recipe.rate_hi);
      const double pip_f = recipe.kind == PatternKind::TonePips ? uniform(recipe.f_lo, recipe.f_hi) : 0.0;
      std::normal_distribution<double> gauss(0.0, 1.0);
      for (double t0 = onset; t0 < spec.clip_seconds; t0 += 1.0 / rate) {
        const auto start = static_cast<std::size_t>(t0 * sr);
        const double tau = recipe.kind == PatternKind::Claps ? 0.004 : 0.012;
        const auto len = static_cast<std::size_t>(6.0 * tau * sr);
        for (std::size_t k = 0; k < len && start + k < n; ++k) {
          const double dt = static_cast<double>(k) / sr;
          const double carrier = recipe.kind == PatternKind::Claps ? gauss(rng) : std::sin(two_pi * pip_f * dt);
          sig[start + k] += std::exp(-dt / tau) * carrier;
        }
      }
      break;
    }
  }

  double power = 0.0;
  std::size_t active = 0;
  for (std::size_t i = 0; i < n; ++i) {
    if (sig[i] != 0.0) {
      power += sig[i] * sig[i];
      ++active;
    }
  }
  power = active ? power / static_cast<double>(active) : 1.0;
  const double noise_std = std::sqrt(power / std::pow(10.0, spec.noise_snr_db / 10.0));
  std::normal_distribution<double> noise(0.0, noise_std);
  double peak = 0.0;
  for (auto& v : sig) {
    v += noise(rng);
    peak = std::max(peak, std::abs(v));
  }
  const double gain = peak > 0.0 ? 0.5 / peak : 1.0;
  std::vector<float> out(n);
  for (std::size_t i = 0; i < n; ++i) out[i] = static_cast<float>(sig[i] * gain);
  return out;
}

// Per class: clips shuffled, then 70% train, 10% val, the rest eval.
inline SynthDataset generate(const SynthSpec& spec) {
  if (auto errs = validate(spec); !errs.empty()) {
    std::string msg = "invalid synth spec:";
    for (const auto& e : errs) msg += "\n  - " + e;
    throw ConfigError(msg);
  }
  const auto recipes = resolved_recipes(spec);
  SynthDataset ds;
  ds.sample_rate = spec.sample_rate;
  for (const auto& r : recipes) ds.classes.push_back(r.name);
  const std::size_t per = spec.clips_per_class;
  const auto n_train = static_cast<std::size_t>(std::lround(0.7 * static_cast<double>(per)));
  const auto n_val = std::min(per - n_train, static_cast<std::size_t>(std::lround(0.1 * static_cast<double>(per))));
  std::mt19937_64 split_rng(mix_seed(spec.seed, 0xC1A55));
  for (std::size_t c = 0; c < spec.num_classes; ++c) {
    std::vector<std::size_t> order(per);
    for (std::size_t i = 0; i < per; ++i) order[i] = i;
    std::shuffle(order.begin(), order.end(), split_rng);
    for (std::size_t rank = 0; rank < per; ++rank) {
      const std::size_t i = order[rank];
      SynthClip clip;
      char id[64];
      std::snprintf(id, sizeof id, "%s_%03zu", recipes[c].name.c_str(), i);
      clip.id = id;
      clip.label = c;
      clip.split = rank < n_train ? Split::Train : rank < n_train + n_val ? Split::Val : Split::Eval;
      clip.samples = render(recipes[c], spec, mix_seed(spec.seed, c * 1000003ULL + i));
      ds.clips.push_back(std::move(clip));
    }
  }
  std::stable_sort(ds.clips.begin(), ds.clips.end(),
                   [](const SynthClip& a, const SynthClip& b) { return a.id < b.id; });
  return ds;
}

// Writes wav/<id>.wav, manifest.json and, optionally, features/<id>.aapt (log-mel
// of the quantized audio, identical to recomputing it from the WAV file).
inline void write_dataset(const std::filesystem::path& dir, const SynthDataset& ds, const SynthSpec& spec,
                          bool write_features) {
  std::filesystem::create_directories(dir / "wav");
  nlohmann::json m;
  m["format"] = "aapool-dataset-1";
  m["classes"] = ds.classes;
  m["sample_rate"] = ds.sample_rate;
  m["spec"] = to_json(spec);
  m["clips"] = nlohmann::json::array();
  for (const auto& clip : ds.clips) {
    const auto audio = wav::from_float(clip.samples, ds.sample_rate);
    const std::string wav_rel = "wav/" + clip.id + ".wav";
    wav::write(dir / wav_rel, audio);
    nlohmann::json e = {{"id", clip.id}, {"split", split_name(clip.split)}, {"label", clip.label}, {"wav", wav_rel}};
    if (write_features) {
      const std::string feat_rel = "features/" + clip.id + ".aapt";
      io::save_tensor(dir / feat_rel, frontend::logmel(audio).values);
      e["features"] = feat_rel;
    }
    m["clips"].push_back(e);
  }
  io::write_text(dir / "manifest.json", m.dump(2) + "\n");
}

}  // namespace aapool::synth
