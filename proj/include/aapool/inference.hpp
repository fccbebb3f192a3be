#pragma once

// Batched eval-mode scoring of patches and clips.

#include <algorithm>
#include <cstddef>
#include <thread>
#include <vector>

#include "aapool/data.hpp"
#include "aapool/frontend.hpp"
#include "aapool/metrics.hpp"
#include "aapool/model.hpp"

namespace aapool {

// Stacks [101,96] patches into [N,1,101,96].
inline Tensor stack_patches(const std::vector<const Tensor*>& patches) {
  if (patches.empty()) throw ArgumentError("stack_patches: no patches");
  const Shape& s = patches.front()->shape();
  std::vector<float> v;
  v.reserve(patches.size() * patches.front()->numel());
  for (const Tensor* p : patches) {
    if (p->shape() != s) throw DimensionError("stack_patches: patches differ in shape");
    v.insert(v.end(), p->data().begin(), p->data().end());
  }
  return Tensor({patches.size(), 1, s[0], s[1]}, std::move(v));
}

// Runs fn(i) for i in [0, n) on up to `threads` workers, contiguous chunks each.
template <typename Fn>
void parallel_for(std::size_t n, std::size_t threads, Fn&& fn) {
  threads = std::max<std::size_t>(1, std::min(threads, n));
  if (threads == 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::vector<std::thread> pool;
  for (std::size_t t = 0; t < threads; ++t) {
    pool.emplace_back([&, t] {
      for (std::size_t i = n * t / threads; i < n * (t + 1) / threads; ++i) fn(i);
    });
  }
  for (auto& th : pool) th.join();
}

// Eval-mode scores for each patch, in order. Rows are independent of batching.
inline std::vector<Tensor> score_patches(model::Network<float>& net, const std::vector<const Tensor*>& patches,
                                         std::size_t batch = 64) {
  std::vector<Tensor> out;
  out.reserve(patches.size());
  for (std::size_t i = 0; i < patches.size(); i += batch) {
    std::vector<const Tensor*> chunk(patches.begin() + static_cast<std::ptrdiff_t>(i),
                                     patches.begin() + static_cast<std::ptrdiff_t>(std::min(patches.size(), i + batch)));
    const auto y = net.forward(stack_patches(chunk), Mode::Eval);
    const std::size_t c = y.dim(1);
    for (std::size_t r = 0; r < chunk.size(); ++r) {
      out.emplace_back(Shape{c}, std::vector<float>(y.data().begin() + static_cast<std::ptrdiff_t>(r * c),
                                                    y.data().begin() + static_cast<std::ptrdiff_t>((r + 1) * c)));
    }
  }
  return out;
}

// Clip scores (mean over patches) for every clip, as a prediction set.
inline metrics::PredictionSet predict_clips(model::Network<float>& net, const std::vector<data::Clip>& clips,
                                            std::size_t threads = 1) {
  if (clips.empty()) throw ArgumentError("predict_clips: no clips");
  const std::size_t c = net.config().num_classes;
  std::vector<float> scores(clips.size() * c), targets(clips.size() * c);
  for (const auto& clip : clips) {
    if (clip.target.size() != c) throw DimensionError("clip " + clip.id + " has the wrong number of targets");
  }
  metrics::PredictionSet p;
  parallel_for(clips.size(), threads, [&](std::size_t i) {
    const auto patches = clips[i].patches();
    std::vector<const Tensor*> ptrs;
    for (const auto& pt : patches) ptrs.push_back(&pt.values);
    const auto s = model::clip_scores(score_patches(net, ptrs));
    std::copy(s.data().begin(), s.data().end(), scores.begin() + static_cast<std::ptrdiff_t>(i * c));
    std::copy(clips[i].target.begin(), clips[i].target.end(), targets.begin() + static_cast<std::ptrdiff_t>(i * c));
  });
  for (const auto& clip : clips) p.clip_ids.push_back(clip.id);
  p.scores = Tensor({clips.size(), c}, std::move(scores));
  p.targets = Tensor({clips.size(), c}, std::move(targets));
  return p;
}

}  // namespace aapool
