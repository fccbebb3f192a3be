#pragma once

// Shift-robustness protocols: a patch at 0.5 s compared with the same window
// moved n_f frames later (time-n) or with the spectrum moved n_b mel bands up
// (freq-n). Consistency is the share of clips whose top class survives the
// shift; MAC is the mean absolute change of the pre-shift top-class score.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "aapool/data.hpp"
#include "aapool/errors.hpp"
#include "aapool/frontend.hpp"
#include "aapool/inference.hpp"
#include "aapool/io.hpp"
#include "aapool/model.hpp"
#include "aapool/synth.hpp"

namespace aapool::shift {

enum class Protocol { Time, Freq };

inline std::string protocol_name(Protocol p) { return p == Protocol::Time ? "time" : "freq"; }

inline Protocol protocol_from_name(const std::string& s) {
  if (s == "time") return Protocol::Time;
  if (s == "freq") return Protocol::Freq;
  throw ConfigError("unknown shift protocol '" + s + "' (expected time or freq)");
}

inline constexpr std::size_t kAnchorFrame = 50;  // 0.5 s at a 10 ms hop

inline bool time_eligible(const frontend::LogMelSpec& spec, std::size_t n_f) {
  return spec.frames >= kAnchorFrame + n_f + frontend::kPatchFrames;
}

// (patch at frame 50, patch at frame 50 + n_f).
inline std::pair<frontend::Patch, frontend::Patch> time_shift_protocol(const frontend::LogMelSpec& spec,
                                                                       std::size_t n_f,
                                                                       const std::string& clip_id = {}) {
  if (!time_eligible(spec, n_f)) {
    throw IneligibleError("clip " + (clip_id.empty() ? std::string("<unnamed>") : clip_id) + " has " +
                          std::to_string(spec.frames) + " frames; time-" + std::to_string(n_f) + " needs " +
                          std::to_string(kAnchorFrame + n_f + frontend::kPatchFrames));
  }
  return {frontend::patch_at(spec, kAnchorFrame, clip_id), frontend::patch_at(spec, kAnchorFrame + n_f, clip_id)};
}

// Moves every band up by n_b. The top n_b bands are dropped; the bottom n_b
// are Gaussian noise with the mean and standard deviation of the original
// lowest band.
inline frontend::Patch freq_shift_protocol(const frontend::Patch& patch, std::size_t n_b, std::mt19937_64& rng) {
  const std::size_t frames = patch.values.dim(0), bands = patch.values.dim(1);
  if (n_b >= bands) throw ArgumentError("freq shift: n_b must be below the band count");
  if (n_b == 0) return {Tensor(patch.values.shape(), std::vector<float>(patch.values.data().begin(), patch.values.data().end())),
                        patch.clip_id, patch.start_frame};
  double mean = 0.0, sq = 0.0;
  for (std::size_t t = 0; t < frames; ++t) mean += patch.values[t * bands];
  mean /= static_cast<double>(frames);
  for (std::size_t t = 0; t < frames; ++t) sq += std::pow(patch.values[t * bands] - mean, 2);
  const double sd = std::sqrt(sq / static_cast<double>(frames));
  std::normal_distribution<double> noise(mean, sd);
  std::vector<float> out(frames * bands);
  for (std::size_t t = 0; t < frames; ++t) {
    for (std::size_t b = 0; b < n_b; ++b) out[t * bands + b] = static_cast<float>(sd > 0.0 ? noise(rng) : mean);
    for (std::size_t b = n_b; b < bands; ++b) out[t * bands + b] = patch.values[t * bands + b - n_b];
  }
  return {Tensor({frames, bands}, std::move(out)), patch.clip_id, patch.start_frame};
}

// Per-clip noise stream, independent of clip order.
inline std::uint64_t clip_seed(std::uint64_t seed, const std::string& clip_id) {
  return synth::mix_seed(seed, io::fnv1a(clip_id));
}

struct ShiftRow {
  std::string clip_id;
  std::size_t top_before = 0, top_after = 0;
  double p_before = 0.0, p_after = 0.0;  // score of top_before, before and after
  double abs_change = 0.0;
};

struct ShiftReport {
  Protocol protocol = Protocol::Time;
  std::size_t magnitude = 0;
  double consistency_pct = 0.0;
  double mac = 0.0;
  std::vector<ShiftRow> rows;
};

// Single-label clips long enough for the time protocol at `max_shift` frames.
inline std::vector<const data::Clip*> eligible_clips(const std::vector<data::Clip>& clips, std::size_t max_shift) {
  std::vector<const data::Clip*> out;
  for (const auto& c : clips) {
    if (c.positives() == 1 && time_eligible(c.spec, max_shift)) out.push_back(&c);
  }
  return out;
}

inline std::size_t argmax(const Tensor& scores) {
  std::size_t best = 0;
  for (std::size_t c = 1; c < scores.numel(); ++c) {
    if (scores[c] > scores[best]) best = c;
  }
  return best;
}

inline ShiftReport shift_consistency(model::Network<float>& net, const std::vector<const data::Clip*>& clips,
                                     Protocol protocol, std::size_t magnitude, std::uint64_t seed = 0,
                                     std::size_t threads = 1) {
  if (clips.empty()) throw ArgumentError("shift evaluation: no eligible clips");
  for (const auto* c : clips) {
    if (protocol == Protocol::Time && !time_eligible(c->spec, magnitude)) {
      throw IneligibleError("clip " + c->id + " is too short for time-" + std::to_string(magnitude));
    }
    if (protocol == Protocol::Freq && (!time_eligible(c->spec, 0) || magnitude >= frontend::kBands)) {
      throw IneligibleError("clip " + c->id + " is ineligible for freq-" + std::to_string(magnitude));
    }
  }
  std::vector<frontend::Patch> before(clips.size()), after(clips.size());
  for (std::size_t i = 0; i < clips.size(); ++i) {
    if (protocol == Protocol::Time) {
      std::tie(before[i], after[i]) = time_shift_protocol(clips[i]->spec, magnitude, clips[i]->id);
    } else {
      before[i] = frontend::patch_at(clips[i]->spec, kAnchorFrame, clips[i]->id);
      std::mt19937_64 rng(clip_seed(seed, clips[i]->id));
      after[i] = freq_shift_protocol(before[i], magnitude, rng);
    }
  }
  ShiftReport rep;
  rep.protocol = protocol;
  rep.magnitude = magnitude;
  rep.rows.resize(clips.size());
  parallel_for(clips.size(), threads, [&](std::size_t i) {
    const auto s = score_patches(net, {&before[i].values, &after[i].values});
    ShiftRow& r = rep.rows[i];
    r.clip_id = clips[i]->id;
    r.top_before = argmax(s[0]);
    r.top_after = argmax(s[1]);
    r.p_before = s[0][r.top_before];
    r.p_after = s[1][r.top_before];
    r.abs_change = std::abs(r.p_after - r.p_before);
  });
  std::size_t same = 0;
  double sum = 0.0;
  for (const auto& r : rep.rows) {
    same += r.top_before == r.top_after;
    sum += r.abs_change;
  }
  rep.consistency_pct = 100.0 * static_cast<double>(same) / static_cast<double>(rep.rows.size());
  rep.mac = sum / static_cast<double>(rep.rows.size());
  return rep;
}

// ---------------------------------------------------------------------------
// Reports

inline std::string csv_header(const std::string& manifest_hash) { return "# manifest " + manifest_hash + "\n"; }

inline std::string report_csv(const ShiftReport& r, const std::string& manifest_hash) {
  std::ostringstream os;
  os.precision(9);
  os << csv_header(manifest_hash);
  os << "# protocol " << protocol_name(r.protocol) << "-" << r.magnitude << " consistency_pct " << r.consistency_pct
     << " mac " << r.mac << "\n";
  os << "clip_id,top_before,top_after,p_before,p_after,abs_change\n";
  for (const auto& x : r.rows) {
    os << x.clip_id << ',' << x.top_before << ',' << x.top_after << ',' << x.p_before << ',' << x.p_after << ','
       << x.abs_change << '\n';
  }
  return os.str();
}

struct SummaryColumn {
  std::string model;
  std::vector<ShiftReport> reports;
};

// One row per (protocol, magnitude): consistency and MAC for every model column.
inline std::string summary_csv(const std::vector<SummaryColumn>& cols, const std::string& manifest_hash) {
  std::ostringstream os;
  os.precision(9);
  os << csv_header(manifest_hash) << "protocol";
  for (const auto& c : cols) os << ',' << c.model << "_consistency_pct," << c.model << "_mac";
  os << '\n';
  if (cols.empty()) return os.str();
  for (std::size_t k = 0; k < cols.front().reports.size(); ++k) {
    const auto& r0 = cols.front().reports[k];
    os << protocol_name(r0.protocol) << '-' << r0.magnitude;
    for (const auto& c : cols) os << ',' << c.reports.at(k).consistency_pct << ',' << c.reports.at(k).mac;
    os << '\n';
  }
  return os.str();
}

// Line plot of the pre-shift top-class score against shift magnitude, one
// polyline per clip (at most `max_clips`), for one protocol.
inline std::string score_plot_svg(const std::vector<ShiftReport>& reports, std::size_t max_clips = 20) {
  constexpr double w = 480, h = 320, pad = 40;
  std::size_t max_mag = 1;
  for (const auto& r : reports) max_mag = std::max(max_mag, r.magnitude);
  auto px = [&](double m) { return pad + (w - 2 * pad) * m / static_cast<double>(max_mag); };
  auto py = [&](double p) { return h - pad - (h - 2 * pad) * p; };
  std::ostringstream os;
  os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << w << "\" height=\"" << h << "\">\n";
  os << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  os << "<line x1=\"" << pad << "\" y1=\"" << py(0) << "\" x2=\"" << w - pad << "\" y2=\"" << py(0)
     << "\" stroke=\"black\"/>\n";
  os << "<line x1=\"" << pad << "\" y1=\"" << py(0) << "\" x2=\"" << pad << "\" y2=\"" << py(1)
     << "\" stroke=\"black\"/>\n";
  if (!reports.empty()) {
    os << "<text x=\"" << w / 2 << "\" y=\"" << h - 8 << "\" font-size=\"12\" text-anchor=\"middle\">"
       << protocol_name(reports.front().protocol) << " shift</text>\n";
    const std::size_t n = std::min(max_clips, reports.front().rows.size());
    for (std::size_t i = 0; i < n; ++i) {
      os << "<polyline fill=\"none\" stroke=\"steelblue\" stroke-opacity=\"0.6\" points=\"" << px(0) << ','
         << py(reports.front().rows[i].p_before);
      for (const auto& r : reports) {
        if (i < r.rows.size()) os << ' ' << px(static_cast<double>(r.magnitude)) << ',' << py(r.rows[i].p_after);
      }
      os << "\"/>\n";
    }
  }
  os << "</svg>\n";
  return os.str();
}

}  // namespace aapool::shift
