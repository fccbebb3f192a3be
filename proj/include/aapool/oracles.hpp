#pragma once

// Brute-force reference checks grouped into suites. Each reference is computed
// directly (nested loops, exhaustive enumeration, finite differences) and
// compared with the library implementation at a fixed tolerance.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <map>
#include <numeric>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "aapool/data.hpp"
#include "aapool/metrics.hpp"
#include "aapool/model.hpp"
#include "aapool/ops.hpp"
#include "aapool/pooling.hpp"
#include "aapool/shift.hpp"
#include "aapool/training.hpp"

namespace aapool::oracles {

struct Check {
  std::string suite;
  std::string name;
  bool passed = false;
  std::string detail;
};

struct Options {
  std::uint64_t seed = 0;
  // Negative control: scales every binomial kernel by (1 + 1e-3) before checking.
  bool perturb_kernel_normalization = false;
};

namespace detail {

inline std::string fmt(double v) {
  std::ostringstream os;
  os.precision(3);
  os << v;
  return os.str();
}

inline Check make(const std::string& suite, const std::string& name, bool ok, const std::string& detail) {
  return {suite, name, ok, detail};
}

inline Tensor random_tensor(Shape shape, std::mt19937_64& rng, double lo = -1.0, double hi = 1.0) {
  std::uniform_real_distribution<double> d(lo, hi);
  std::vector<float> v(numel_of(shape));
  for (auto& x : v) x = static_cast<float>(d(rng));
  return Tensor(std::move(shape), std::move(v));
}

inline Tensor64 random_tensor64(Shape shape, std::mt19937_64& rng, double lo = -1.0, double hi = 1.0) {
  std::uniform_real_distribution<double> d(lo, hi);
  std::vector<double> v(numel_of(shape));
  for (auto& x : v) x = d(rng);
  return Tensor64(std::move(shape), std::move(v), true);
}

// out[(y + dh) % h][(x + dw) % w] = in[y][x] on every plane.
inline Tensor circular_shift(const Tensor& x, std::size_t dh, std::size_t dw) {
  const std::size_t planes = x.dim(0) * x.dim(1), h = x.dim(2), w = x.dim(3);
  Tensor out(x.shape());
  for (std::size_t p = 0; p < planes; ++p)
    for (std::size_t y = 0; y < h; ++y)
      for (std::size_t z = 0; z < w; ++z) out[(p * h + (y + dh) % h) * w + (z + dw) % w] = x[(p * h + y) * w + z];
  return out;
}

inline double rel_err(double a, double b, double floor = 1e-2) {
  return std::abs(a - b) / std::max({std::abs(a), std::abs(b), floor});
}

// Pascal's triangle row n as integers.
inline std::vector<double> pascal_row(std::size_t n) {
  std::vector<double> row{1.0};
  for (std::size_t i = 0; i < n; ++i) {
    std::vector<double> next(row.size() + 1, 0.0);
    for (std::size_t j = 0; j < row.size(); ++j) {
      next[j] += row[j];
      next[j + 1] += row[j];
    }
    row = std::move(next);
  }
  return row;
}

// Mean over positives of precision at each positive's rank, ranks from pairwise
// comparisons under a stable descending order.
inline double brute_force_ap(const std::vector<float>& s, const std::vector<float>& t) {
  const std::size_t n = s.size();
  std::vector<float> by_rank(n + 1, 0.0f);
  for (std::size_t i = 0; i < n; ++i) {
    std::size_t r = 1;
    for (std::size_t j = 0; j < n; ++j) r += s[j] > s[i] || (j < i && s[j] == s[i]);
    by_rank[r] = t[i];
  }
  double pos = 0.0;
  for (float v : t) pos += v;
  double area = 0.0, hits = 0.0, prev_recall = 0.0;
  for (std::size_t k = 1; k <= n; ++k) {
    hits += by_rank[k];
    const double recall = hits / pos;
    area += (hits / static_cast<double>(k)) * (recall - prev_recall);
    prev_recall = recall;
  }
  return area;
}

}  // namespace detail

// ---------------------------------------------------------------------------

inline std::vector<Check> binomial_suite(const Options& opt) {
  const std::string s = "binomial";
  std::vector<Check> out;
  const double bump = opt.perturb_kernel_normalization ? 1.0 + 1e-3 : 1.0;
  const std::vector<std::vector<double>> masks{{1, 2, 1}, {1, 3, 3, 1}, {1, 4, 6, 4, 1}};
  for (const auto& want : masks) {
    const int order = static_cast<int>(want.size()) - 2;
    auto taps = pooling::binomial1d(order);
    bool ok = true;
    std::string got;
    for (std::size_t i = 0; i < taps.size(); ++i) {
      const double v = taps[i] * bump * std::ldexp(1.0, order + 1);
      ok = ok && v == want[i];
      got += (i ? "," : "") + detail::fmt(v);
    }
    out.push_back(detail::make(s, "mask-" + std::to_string(want.size()), ok, "[" + got + "]"));
  }
  for (std::size_t size = 2; size <= 7; ++size) {
    const auto k = pooling::binomial2d(size);
    const auto row = detail::pascal_row(size - 1);
    const double norm = std::ldexp(1.0, static_cast<int>(2 * (size - 1)));
    double total = 0.0, worst = 0.0;
    for (std::size_t r = 0; r < size; ++r) {
      for (std::size_t c = 0; c < size; ++c) {
        const double w = k.weights[r * size + c] * bump;
        total += w;
        worst = std::max(worst, std::abs(w - row[r] * row[c] / norm));
      }
    }
    out.push_back(detail::make(s, "outer-product-" + std::to_string(size), worst == 0.0,
                               "max deviation " + detail::fmt(worst)));
    out.push_back(detail::make(s, "unit-sum-" + std::to_string(size), std::abs(total - 1.0) <= 1e-9,
                               "sum - 1 = " + detail::fmt(total - 1.0)));
  }
  return out;
}

inline std::vector<Check> tlpf_suite(const Options& opt) {
  const std::string s = "tlpf";
  std::mt19937_64 rng(synth::mix_seed(opt.seed, 2));
  const std::vector<std::pair<std::size_t, std::size_t>> shapes{{3, 3}, {4, 4}, {5, 5}, {6, 6}, {1, 4},
                                                                {1, 5}, {1, 6}, {4, 1}, {5, 1}, {6, 1}};
  double worst_sum = 0.0, worst_grad = 0.0, min_w = 1.0;
  std::size_t draws = 0;
  for (std::size_t d = 0; d < 1000; ++d) {
    const auto [m, n] = shapes[d % shapes.size()];
    const std::size_t ch = 1 + d % 3;
    auto logits = detail::random_tensor64({ch, m, n}, rng, -4.0, 4.0);
    auto probe = detail::random_tensor64({ch, m, n}, rng);
    probe.set_requires_grad(false);
    auto loss = [&] { return sum(mul(pooling::tlpf_materialize(logits).weights, probe)); };
    const auto k = pooling::tlpf_materialize(logits);
    for (std::size_t c = 0; c < ch; ++c) {
      double total = 0.0;
      for (std::size_t i = 0; i < m * n; ++i) {
        min_w = std::min(min_w, k.weights[c * m * n + i]);
        total += k.weights[c * m * n + i];
      }
      worst_sum = std::max(worst_sum, std::abs(total - 1.0));
    }
    logits.zero_grad();
    backward(loss());
    const std::vector<double> g(logits.grad().begin(), logits.grad().end());
    for (std::size_t i = 0; i < logits.numel(); ++i) {
      const double h = 1e-6, x0 = logits[i];
      logits[i] = x0 + h;
      const double up = loss().item();
      logits[i] = x0 - h;
      const double dn = loss().item();
      logits[i] = x0;
      worst_grad = std::max(worst_grad, detail::rel_err(g[i], (up - dn) / (2 * h)));
    }
    ++draws;
  }
  return {detail::make(s, "positive", min_w > 0.0, "min weight " + detail::fmt(min_w) + " over " +
                                                       std::to_string(draws) + " draws"),
          detail::make(s, "unit-sum", worst_sum <= 1e-6, "max |sum - 1| " + detail::fmt(worst_sum)),
          detail::make(s, "gradient", worst_grad < 1e-3, "max rel err " + detail::fmt(worst_grad))};
}

// Random map with pairwise-distinct component norms for the given p.
inline Tensor distinct_norm_map(std::size_t c, std::size_t h, std::size_t w, int p, std::mt19937_64& rng) {
  for (;;) {
    auto x = detail::random_tensor({1, c, h, w}, rng);
    std::vector<double> norms;
    for (std::size_t i = 0; i < 2; ++i)
      for (std::size_t j = 0; j < 2; ++j) norms.push_back(pooling::component_norm(x, 0, {i, j}, {2, 2}, p));
    std::sort(norms.begin(), norms.end());
    bool distinct = true;
    for (std::size_t i = 1; i < norms.size(); ++i) distinct = distinct && norms[i] - norms[i - 1] > 1e-6 * norms[i];
    if (distinct) return x;
  }
}

inline std::vector<Check> aps_suite(const Options& opt) {
  const std::string s = "aps";
  std::vector<Check> out;
  for (int p : {1, 2}) {
    std::mt19937_64 rng(synth::mix_seed(opt.seed, 30 + p));
    std::size_t cases = 0, consistent = 0, exact = 0, value_sets = 0;
    for (std::size_t m = 0; m < 500; ++m) {
      const std::size_t c = m % 2 ? 4 : 1;
      const std::size_t h = 2 * (1 + rng() % 8), w = 2 * (1 + rng() % 8);
      const auto x = distinct_norm_map(c, h, w, p, rng);
      const auto base = pooling::aps_subsample(x, {2, 2}, p);
      const auto sel = base.selected.front();
      for (auto [dh, dw] : {std::pair<std::size_t, std::size_t>{0, 1}, {1, 0}, {1, 1}}) {
        const auto moved = pooling::aps_subsample(detail::circular_shift(x, dh, dw), {2, 2}, p);
        const pooling::PolyphaseIndex want{(sel.i + dh) % 2, (sel.j + dw) % 2};
        ++cases;
        consistent += moved.selected.front() == want;
        // The selected component wraps by one output bin when the offset overflows the stride.
        const auto aligned = detail::circular_shift(base.output, sel.i + dh >= 2, sel.j + dw >= 2);
        exact += moved.output.values() == aligned.values();
        auto a = moved.output.values(), b = base.output.values();
        std::sort(a.begin(), a.end());
        std::sort(b.begin(), b.end());
        value_sets += a == b;
      }
    }
    const std::string tag = "-l" + std::to_string(p);
    out.push_back(detail::make(s, "selection-consistency" + tag, consistent == cases,
                               std::to_string(consistent) + "/" + std::to_string(cases)));
    out.push_back(detail::make(s, "aligned-output" + tag, exact == cases,
                               std::to_string(exact) + "/" + std::to_string(cases)));
    out.push_back(detail::make(s, "value-set" + tag, value_sets == cases,
                               std::to_string(value_sets) + "/" + std::to_string(cases)));
  }
  return out;
}

inline std::vector<Check> pooling_suite(const Options& opt) {
  const std::string s = "pooling";
  std::mt19937_64 rng(synth::mix_seed(opt.seed, 4));
  std::size_t exact = 0;
  for (std::size_t t = 0; t < 100; ++t) {
    const std::size_t n = 1 + rng() % 2, c = 1 + rng() % 3, h = 2 + rng() % 15, w = 2 + rng() % 15;
    const auto x = detail::random_tensor({n, c, h, w}, rng);
    const auto ours = pooling::naive_subsample(pooling::dense_maxpool(x, 2), {2, 2});
    // Conventional max-pool(2, stride 2) by direct window scan; windows that hang
    // over the bottom or right edge keep the in-range part.
    const std::size_t oh = (h + 1) / 2, ow = (w + 1) / 2;
    std::vector<float> ref(n * c * oh * ow);
    for (std::size_t pl = 0; pl < n * c; ++pl)
      for (std::size_t y = 0; y < oh; ++y)
        for (std::size_t z = 0; z < ow; ++z) {
          float m = x[(pl * h + 2 * y) * w + 2 * z];
          for (std::size_t u = 2 * y; u < std::min(h, 2 * y + 2); ++u)
            for (std::size_t v = 2 * z; v < std::min(w, 2 * z + 2); ++v) m = std::max(m, x[(pl * h + u) * w + v]);
          ref[(pl * oh + y) * ow + z] = m;
        }
    exact += ours.shape() == Shape{n, c, oh, ow} && ours.values() == ref;
  }
  const std::size_t h = 10, w = 11;
  Tensor board({1, 1, h, w});
  for (std::size_t y = 0; y < h; ++y)
    for (std::size_t z = 0; z < w; ++z) board[y * w + z] = (y + z) % 2 ? -1.0f : 1.0f;
  auto kernel = pooling::binomial2d(3);
  if (opt.perturb_kernel_normalization) kernel.weights = scale(kernel.weights, 1.001f);
  const auto blurred = pooling::lpf_subsample(board, kernel, {1, 1});
  double worst = 0.0;
  for (std::size_t y = 1; y + 1 < h; ++y)
    for (std::size_t z = 1; z + 1 < w; ++z) worst = std::max(worst, static_cast<double>(std::abs(blurred[y * w + z])));
  return {detail::make(s, "decomposition", exact == 100, std::to_string(exact) + "/100 exact"),
          detail::make(s, "checkerboard", worst == 0.0, "max interior |value| " + detail::fmt(worst))};
}

inline std::vector<Check> conv_suite(const Options& opt) {
  const std::string s = "conv";
  std::mt19937_64 rng(synth::mix_seed(opt.seed, 5));
  double worst = 0.0;
  for (std::size_t t = 0; t < 40; ++t) {
    const std::size_t n = 1 + rng() % 2, c = 1 + rng() % 4, f = 1 + rng() % 5;
    const std::size_t h = 3 + rng() % 10, w = 3 + rng() % 10, kh = 1 + rng() % 3, kw = 1 + rng() % 3;
    const Stride2 st{1 + rng() % 2, 1 + rng() % 2};
    const bool same = rng() % 2;
    const auto x = detail::random_tensor({n, c, h, w}, rng), k = detail::random_tensor({f, c, kh, kw}, rng);
    const auto y = conv2d(x, k, st, same ? PaddingMode::Same : PaddingMode::Valid);
    const std::size_t ph = same ? (kh - 1) / 2 : 0, pw = same ? (kw - 1) / 2 : 0;
    const std::size_t oh = ((same ? h + kh - 1 : h) - kh) / st.h + 1, ow = ((same ? w + kw - 1 : w) - kw) / st.w + 1;
    if (y.shape() != Shape{n, f, oh, ow}) return {detail::make(s, "conv2d", false, "shape " + shape_str(y.shape()))};
    for (std::size_t b = 0; b < n; ++b)
      for (std::size_t fi = 0; fi < f; ++fi)
        for (std::size_t oy = 0; oy < oh; ++oy)
          for (std::size_t ox = 0; ox < ow; ++ox) {
            double acc = 0.0;
            for (std::size_t ci = 0; ci < c; ++ci)
              for (std::size_t u = 0; u < kh; ++u)
                for (std::size_t v = 0; v < kw; ++v) {
                  const long iy = static_cast<long>(oy * st.h + u) - static_cast<long>(ph);
                  const long ix = static_cast<long>(ox * st.w + v) - static_cast<long>(pw);
                  if (iy < 0 || ix < 0 || iy >= static_cast<long>(h) || ix >= static_cast<long>(w)) continue;
                  acc += static_cast<double>(x[((b * c + ci) * h + iy) * w + ix]) * k[((fi * c + ci) * kh + u) * kw + v];
                }
            worst = std::max(worst, std::abs(acc - y[((b * f + fi) * oh + oy) * ow + ox]));
          }
  }
  return {detail::make(s, "conv2d", worst < 1e-4, "max abs err " + detail::fmt(worst))};
}

inline std::vector<Check> gradcheck_suite(const Options& opt) {
  const std::string s = "gradcheck";
  std::mt19937_64 rng(synth::mix_seed(opt.seed, 6));
  auto check = [&](const std::string& name, std::vector<Tensor64> leaves, const std::function<Tensor64()>& f) {
    for (auto& l : leaves) l.zero_grad();
    backward(f());
    double worst = 0.0;
    for (auto& l : leaves) {
      const std::vector<double> g(l.grad().begin(), l.grad().end());
      for (std::size_t i = 0; i < l.numel(); ++i) {
        const double h = 1e-6, x0 = l[i];
        l[i] = x0 + h;
        const double up = f().item();
        l[i] = x0 - h;
        const double dn = f().item();
        l[i] = x0;
        worst = std::max(worst, detail::rel_err(g[i], (up - dn) / (2 * h)));
      }
    }
    return detail::make(s, name, worst < 1e-5, "max rel err " + detail::fmt(worst));
  };
  auto x = detail::random_tensor64({2, 2, 6, 7}, rng), w = detail::random_tensor64({3, 2, 3, 3}, rng);
  auto probe = detail::random_tensor64({2, 3, 6, 7}, rng);
  probe.set_requires_grad(false);
  std::vector<Check> out;
  out.push_back(check("conv2d", {x, w}, [&] { return sum(mul(conv2d(x, w), probe)); }));
  auto dk = detail::random_tensor64({2, 3, 3}, rng);
  auto probe2 = detail::random_tensor64({2, 2, 3, 4}, rng);
  probe2.set_requires_grad(false);
  out.push_back(check("lpf-subsample", {x, dk}, [&] {
    return sum(mul(pooling::lpf_subsample(x, pooling::tlpf_materialize(dk), {2, 2}), probe2));
  }));
  out.push_back(check("aps", {x}, [&] { return sum(mul(pooling::aps_subsample(x, {2, 2}, 1).output, probe2)); }));
  auto gamma = detail::random_tensor64({2}, rng, 0.5, 1.5), beta = detail::random_tensor64({2}, rng);
  auto probe3 = detail::random_tensor64({2, 2, 6, 7}, rng);
  probe3.set_requires_grad(false);
  out.push_back(check("batch-norm", {x, gamma, beta}, [&] {
    RunningStats rs(2);
    return sum(mul(batch_norm(x, gamma, beta, rs, Mode::Train), probe3));
  }));
  return out;
}

inline std::vector<Check> metrics_suite(const Options& opt) {
  const std::string s = "metrics";
  std::mt19937_64 rng(synth::mix_seed(opt.seed, 7));
  double worst = 0.0;
  for (std::size_t t = 0; t < 1000; ++t) {
    const std::size_t n = 1 + rng() % 30;
    std::vector<float> sc(n), tg(n);
    for (std::size_t i = 0; i < n; ++i) {
      sc[i] = t % 2 ? static_cast<float>(rng() % 6) / 5.0f : std::uniform_real_distribution<float>(0, 1)(rng);
      tg[i] = static_cast<float>(rng() % 3 == 0);
    }
    tg[rng() % n] = 1.0f;
    worst = std::max(worst, std::abs(*metrics::average_precision(sc, tg) - detail::brute_force_ap(sc, tg)));
  }
  const double hand = *metrics::average_precision(std::vector<float>{0.9f, 0.8f, 0.1f}, std::vector<float>{1, 0, 1});
  const double d0 = metrics::d_prime_from_auc(0.5);
  return {detail::make(s, "ap-brute-force", worst <= 1e-9, "max abs err " + detail::fmt(worst) + " over 1000 sets"),
          detail::make(s, "ap-hand-case", std::abs(hand - 5.0 / 6.0) <= 1e-12, "AP " + detail::fmt(hand)),
          detail::make(s, "dprime-chance", d0 == 0.0, "d' " + detail::fmt(d0))};
}

inline std::vector<Check> shift_suite(const Options& opt) {
  const std::string s = "shift";
  std::mt19937_64 rng(synth::mix_seed(opt.seed, 8));
  std::vector<data::Clip> clips;
  for (std::size_t i = 0; i < 6; ++i) {
    frontend::LogMelSpec spec;
    spec.frames = 198;
    spec.values = detail::random_tensor({198, frontend::kBands}, rng, -8.0, 2.0);
    spec.sample_rate = 16000;
    clips.push_back(data::make_clip("clip" + std::to_string(i), i % 3, 3, std::move(spec)));
  }
  bool time_ok = true, freq_ok = true;
  for (const auto& c : clips) {
    for (std::size_t n : {1u, 3u, 5u}) {
      const auto [a, b] = shift::time_shift_protocol(c.spec, n, c.id);
      for (std::size_t t = 0; t + n < frontend::kPatchFrames; ++t)
        for (std::size_t f = 0; f < frontend::kBands; ++f)
          time_ok = time_ok && a.values[(t + n) * frontend::kBands + f] == b.values[t * frontend::kBands + f];
      std::mt19937_64 noise(shift::clip_seed(opt.seed, c.id));
      const auto q = shift::freq_shift_protocol(a, n, noise);
      for (std::size_t t = 0; t < frontend::kPatchFrames; ++t)
        for (std::size_t f = n; f < frontend::kBands; ++f)
          freq_ok = freq_ok && q.values[t * frontend::kBands + f] == a.values[t * frontend::kBands + f - n];
    }
  }
  model::Network<float> net(model::ModelConfig::micro(3), opt.seed);
  std::vector<const data::Clip*> ptrs;
  for (const auto& c : clips) ptrs.push_back(&c);
  bool zero_ok = true;
  std::string zero_detail;
  for (auto proto : {shift::Protocol::Time, shift::Protocol::Freq}) {
    const auto r = shift::shift_consistency(net, ptrs, proto, 0, opt.seed);
    zero_ok = zero_ok && r.consistency_pct == 100.0 && r.mac == 0.0;
    zero_detail += shift::protocol_name(proto) + "-0: " + detail::fmt(r.consistency_pct) + "% MAC " +
                   detail::fmt(r.mac) + "; ";
  }
  return {detail::make(s, "time-overlap", time_ok, "101 - n_f shared frames bit-identical for n_f in {1,3,5}"),
          detail::make(s, "freq-bands", freq_ok, "band b equals input band b - n_b for n_b in {1,3,5}"),
          detail::make(s, "magnitude-zero", zero_ok, zero_detail)};
}

inline std::vector<Check> mixup_suite(const Options& opt) {
  const std::string s = "mixup";
  std::mt19937_64 rng(synth::mix_seed(opt.seed, 9));
  double total = 0.0;
  for (int i = 0; i < 100000; ++i) total += training::sample_beta(1.25, 1.25, rng);
  const double mean = total / 100000.0;
  const auto x = detail::random_tensor({6, 1, 4, 3}, rng);
  std::vector<float> yv(6 * 3, 0.0f);
  for (std::size_t i = 0; i < 6; ++i) yv[i * 3 + i % 3] = 1.0f;
  const Tensor y({6, 3}, yv);
  auto draws = training::draw_mixup(6, 1.25, rng);
  for (auto& d : draws) d.lambda = 1.0f;
  const auto [x1, y1] = training::apply_mixup(x, y, draws);
  const bool one_ok = x1.values() == x.values() && y1.values() == y.values();
  for (auto& d : draws) d.lambda = 0.0f;
  const auto [x0, y0] = training::apply_mixup(x, y, draws);
  bool zero_ok = true;
  for (std::size_t i = 0; i < 6; ++i) {
    const std::size_t j = draws[i].partner;
    for (std::size_t k = 0; k < 12; ++k) zero_ok = zero_ok && x0[i * 12 + k] == x[j * 12 + k];
    for (std::size_t k = 0; k < 3; ++k) zero_ok = zero_ok && y0[i * 3 + k] == y[j * 3 + k];
  }
  return {detail::make(s, "beta-mean", std::abs(mean - 0.5) <= 0.01, "mean " + detail::fmt(mean) + " over 1e5 draws"),
          detail::make(s, "lambda-one", one_ok, "examples unchanged"),
          detail::make(s, "lambda-zero", zero_ok, "partner examples returned")};
}

inline std::vector<Check> model_suite(const Options&) {
  const std::string s = "model";
  // Conv weights + BN affine per conv, linear head: counted independently of the builder.
  auto by_hand = [](const std::vector<std::size_t>& widths, std::size_t classes) {
    std::size_t total = 0, in = 1;
    for (std::size_t w : widths) {
      total += w * in * 9 + 2 * w + w * w * 9 + 2 * w;
      in = w;
    }
    return total + classes * in + classes;
  };
  const model::Network<float> v41(model::ModelConfig::vgg41(), 0), v42(model::ModelConfig::vgg42(), 0);
  const model::Network<float> var(model::ModelConfig::vgg41(200, pooling::PoolingSpec::tlpf_aps(5, 5, 1)), 0);
  const double n41 = static_cast<double>(v41.trainable_count()), n42 = static_cast<double>(v42.trainable_count());
  std::map<std::string, Shape> a, b;
  for (const auto& p : v41.parameters()) a[p.name] = p.tensor.shape();
  for (const auto& p : var.parameters())
    if (p.name.rfind("pool", 0) != 0) b[p.name] = p.tensor.shape();
  const bool only_pool = a == b && var.trainable_count() - v41.trainable_count() == var.pooling_param_count() &&
                         v41.pooling_param_count() == 0;
  return {detail::make(s, "vgg41-count", std::abs(n41 - 1.2e6) <= 0.05 * 1.2e6 && v41.trainable_count() ==
                                                                                       by_hand({32, 64, 128, 256}, 200),
                       std::to_string(v41.trainable_count()) + " vs 1.2M"),
          detail::make(s, "vgg42-count", std::abs(n42 - 4.9e6) <= 0.05 * 4.9e6 && v42.trainable_count() ==
                                                                                       by_hand({64, 128, 256, 512}, 200),
                       std::to_string(v42.trainable_count()) + " vs 4.9M"),
          detail::make(s, "variant-differs-only-in-pooling", only_pool,
                       "variant adds " + std::to_string(var.pooling_param_count()) + " pooling parameters")};
}

using Suite = std::function<std::vector<Check>(const Options&)>;

inline const std::map<std::string, Suite>& suites() {
  static const std::map<std::string, Suite> all{
      {"binomial", binomial_suite}, {"tlpf", tlpf_suite},         {"aps", aps_suite},
      {"pooling", pooling_suite},   {"conv", conv_suite},         {"gradcheck", gradcheck_suite},
      {"metrics", metrics_suite},   {"shift", shift_suite},       {"mixup", mixup_suite},
      {"model", model_suite}};
  return all;
}

inline std::vector<Check> run(const std::string& suite, const Options& opt) {
  const auto& all = suites();
  if (suite == "all") {
    std::vector<Check> out;
    for (const auto& [name, fn] : all) {
      auto part = fn(opt);
      out.insert(out.end(), part.begin(), part.end());
    }
    return out;
  }
  auto it = all.find(suite);
  if (it == all.end()) throw ConfigError("unknown oracle suite '" + suite + "'");
  return it->second(opt);
}

}  // namespace aapool::oracles
