#pragma once

// In-memory labeled clips (log-mel + target vector) and the dataset directory
// reader. A dataset directory holds manifest.json plus WAV files and,
// optionally, precomputed AAPT log-mel features.

#include <cstddef>
#include <filesystem>
#include <string>
#include <vector>

#include "aapool/errors.hpp"
#include "aapool/frontend.hpp"
#include "aapool/io.hpp"
#include "aapool/synth.hpp"
#include "aapool/wav.hpp"
#include "json.hpp"

namespace aapool::data {

struct Clip {
  std::string id;
  std::vector<float> target;  // one entry per class, 0/1
  frontend::LogMelSpec spec;

  std::vector<frontend::Patch> patches() const { return frontend::extract_patches(spec, id); }
  std::size_t positives() const {
    std::size_t n = 0;
    for (float t : target) n += t > 0.5f;
    return n;
  }
};

struct Dataset {
  std::vector<std::string> classes;
  std::vector<Clip> train, val, eval;
  std::string manifest_hash;  // content hash of manifest.json
};

inline Clip make_clip(std::string id, std::size_t label, std::size_t classes, frontend::LogMelSpec spec) {
  Clip c;
  c.id = std::move(id);
  c.target.assign(classes, 0.0f);
  c.target.at(label) = 1.0f;
  c.spec = std::move(spec);
  return c;
}

// Straight from a generated dataset, without touching disk. Audio is quantized
// to PCM16 first so features match what load_dataset() would compute.
inline Dataset from_synth(const synth::SynthDataset& ds) {
  Dataset out;
  out.classes = ds.classes;
  for (const auto& clip : ds.clips) {
    auto spec = frontend::logmel(wav::from_float(clip.samples, ds.sample_rate));
    auto c = make_clip(clip.id, clip.label, ds.classes.size(), std::move(spec));
    (clip.split == synth::Split::Train ? out.train : clip.split == synth::Split::Val ? out.val : out.eval)
        .push_back(std::move(c));
  }
  return out;
}

inline Dataset load_dataset(const std::filesystem::path& dir) {
  const auto manifest_path = dir / "manifest.json";
  if (!std::filesystem::is_directory(dir)) throw ConfigError("data directory not found: " + dir.string());
  if (!std::filesystem::exists(manifest_path)) throw ConfigError("no manifest.json in " + dir.string());
  const std::string text = io::read_text(manifest_path);
  Dataset out;
  out.manifest_hash = io::hex64(io::fnv1a(text));
  try {
    const auto m = nlohmann::json::parse(text);
    out.classes = m.at("classes").get<std::vector<std::string>>();
    for (const auto& e : m.at("clips")) {
      const std::string id = e.at("id").get<std::string>();
      frontend::LogMelSpec spec;
      if (e.contains("features")) {
        spec.values = io::load_tensor(dir / e.at("features").get<std::string>());
        if (spec.values.rank() != 2 || spec.values.dim(1) != frontend::kBands) {
          throw FormatError("features for " + id + " must be [frames, 96]");
        }
        spec.frames = spec.values.dim(0);
        spec.sample_rate = m.value("sample_rate", 16000);
      } else {
        spec = frontend::logmel(wav::read(dir / e.at("wav").get<std::string>()));
      }
      const auto label = e.at("label").get<std::size_t>();
      if (label >= out.classes.size()) throw FormatError("clip " + id + " has label out of range");
      auto clip = make_clip(id, label, out.classes.size(), std::move(spec));
      const std::string split = e.at("split").get<std::string>();
      if (split == "train") {
        out.train.push_back(std::move(clip));
      } else if (split == "val") {
        out.val.push_back(std::move(clip));
      } else if (split == "eval") {
        out.eval.push_back(std::move(clip));
      } else {
        throw FormatError("clip " + id + " has unknown split '" + split + "'");
      }
    }
  } catch (const nlohmann::json::exception& e) {
    throw FormatError("dataset manifest: " + std::string(e.what()));
  }
  return out;
}

}  // namespace aapool::data
