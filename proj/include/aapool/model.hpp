#pragma once

// VGG-style audio tagger with pluggable pooling layers.
//
// Each block is `convs_per_block` x (conv 3x3 -> batch norm -> ReLU), with an
// optional dense 3x3 max (intra-block pooling) between consecutive convs, and
// ends in one pooling layer. The head averages over frequency, takes the max
// over time, and maps to per-class sigmoid scores with one dense layer.

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <map>
#include <optional>
#include <random>
#include <string>
#include <type_traits>
#include <utility>
#include <vector>

#include "aapool/errors.hpp"
#include "aapool/ops.hpp"
#include "aapool/pooling.hpp"
#include "aapool/tensor.hpp"
#include "json.hpp"

namespace aapool::model {

using pooling::PoolingSpec;
using pooling::SubsamplerKind;

struct ModelConfig {
  std::vector<std::size_t> block_widths{32, 64, 128, 256};
  std::size_t convs_per_block = 2;
  std::size_t kernel_h = 3;
  std::size_t kernel_w = 3;
  bool ibp = false;
  std::vector<PoolingSpec> pooling;  // one per block
  std::size_t num_classes = 200;
  std::size_t input_frames = 101;
  std::size_t input_bands = 96;

  static ModelConfig vgg41(std::size_t classes = 200, const PoolingSpec& pool = PoolingSpec::naive()) {
    ModelConfig c;
    c.num_classes = classes;
    c.pooling.assign(c.block_widths.size(), pool);
    return c;
  }
  // VGG41 with every width doubled.
  static ModelConfig vgg42(std::size_t classes = 200, const PoolingSpec& pool = PoolingSpec::naive()) {
    ModelConfig c = vgg41(classes, pool);
    for (auto& w : c.block_widths) w *= 2;
    return c;
  }
  static ModelConfig micro(std::size_t classes = 4, const PoolingSpec& pool = PoolingSpec::naive()) {
    ModelConfig c;
    c.block_widths = {8, 16};
    c.num_classes = classes;
    c.pooling.assign(c.block_widths.size(), pool);
    return c;
  }

  ModelConfig with_pooling(const PoolingSpec& pool) const {
    ModelConfig c = *this;
    c.pooling.assign(c.block_widths.size(), pool);
    return c;
  }
};

inline std::vector<std::string> validate(const ModelConfig& c) {
  std::vector<std::string> errs;
  if (c.block_widths.empty()) errs.emplace_back("block_widths is empty");
  for (std::size_t w : c.block_widths) {
    if (w == 0) errs.emplace_back("block widths must be positive");
  }
  if (c.convs_per_block < 1) errs.emplace_back("convs_per_block must be >= 1");
  if (c.kernel_h < 1 || c.kernel_w < 1) errs.emplace_back("conv kernel must be at least 1x1");
  if (c.pooling.size() != c.block_widths.size()) {
    errs.push_back("pooling has " + std::to_string(c.pooling.size()) + " entries for " +
                   std::to_string(c.block_widths.size()) + " blocks");
  }
  for (std::size_t i = 0; i < c.pooling.size(); ++i) {
    for (const auto& e : pooling::validate(c.pooling[i])) errs.push_back("pooling[" + std::to_string(i) + "]: " + e);
  }
  if (c.num_classes < 1) errs.emplace_back("num_classes must be >= 1");
  if (c.input_frames < 1 || c.input_bands < 1) errs.emplace_back("input shape must be positive");
  return errs;
}

// ---------------------------------------------------------------------------
// JSON schema
//
// {
//   "block_widths": [32, 64, 128, 256], "convs_per_block": 2, "kernel": [3, 3],
//   "ibp": false, "num_classes": 200, "input_shape": [101, 96],
//   "pooling": <spec> | [<spec>, ...]          (a single spec applies to every block)
// }
// <spec> = { "dense_k": 2, "subsampler": "naive" | "lpf" | "aps", "stride": [2, 2],
//            "aps_p": 1, "lpf": { "rows": 5, "cols": 5, "trainable": true, "shared": false } }

inline nlohmann::json pooling_to_json(const PoolingSpec& s) {
  nlohmann::json j;
  j["dense_k"] = s.dense_k;
  j["subsampler"] = s.kind == SubsamplerKind::Naive ? "naive" : s.kind == SubsamplerKind::Lpf ? "lpf" : "aps";
  j["stride"] = {s.stride.h, s.stride.w};
  if (s.kind == SubsamplerKind::Aps) j["aps_p"] = s.aps_p;
  if (s.lpf) {
    j["lpf"] = {{"rows", s.lpf->rows},
                {"cols", s.lpf->cols},
                {"trainable", s.lpf->trainable},
                {"shared", s.lpf->shared_across_channels}};
  }
  return j;
}

inline PoolingSpec pooling_from_json(const nlohmann::json& j) {
  PoolingSpec s;
  s.dense_k = j.value("dense_k", std::size_t{2});
  const std::string kind = j.value("subsampler", std::string("naive"));
  if (kind == "naive") {
    s.kind = SubsamplerKind::Naive;
  } else if (kind == "lpf") {
    s.kind = SubsamplerKind::Lpf;
  } else if (kind == "aps") {
    s.kind = SubsamplerKind::Aps;
  } else {
    throw ConfigError("unknown subsampler '" + kind + "'");
  }
  if (j.contains("stride")) s.stride = {j.at("stride").at(0).get<std::size_t>(), j.at("stride").at(1).get<std::size_t>()};
  s.aps_p = j.value("aps_p", 1);
  if (j.contains("lpf")) {
    const auto& l = j.at("lpf");
    const bool trainable = l.value("trainable", false);
    s.lpf = pooling::LpfSpec{l.value("rows", std::size_t{3}), l.value("cols", std::size_t{3}), trainable,
                             l.value("shared", !trainable)};
  }
  return s;
}

inline nlohmann::json to_json(const ModelConfig& c) {
  nlohmann::json j;
  j["block_widths"] = c.block_widths;
  j["convs_per_block"] = c.convs_per_block;
  j["kernel"] = {c.kernel_h, c.kernel_w};
  j["ibp"] = c.ibp;
  j["num_classes"] = c.num_classes;
  j["input_shape"] = {c.input_frames, c.input_bands};
  j["pooling"] = nlohmann::json::array();
  for (const auto& p : c.pooling) j["pooling"].push_back(pooling_to_json(p));
  return j;
}

inline ModelConfig config_from_json(const nlohmann::json& j) {
  try {
    ModelConfig c;
    if (j.contains("block_widths")) c.block_widths = j.at("block_widths").get<std::vector<std::size_t>>();
    c.convs_per_block = j.value("convs_per_block", c.convs_per_block);
    if (j.contains("kernel")) {
      c.kernel_h = j.at("kernel").at(0).get<std::size_t>();
      c.kernel_w = j.at("kernel").at(1).get<std::size_t>();
    }
    c.ibp = j.value("ibp", false);
    c.num_classes = j.value("num_classes", c.num_classes);
    if (j.contains("input_shape")) {
      c.input_frames = j.at("input_shape").at(0).get<std::size_t>();
      c.input_bands = j.at("input_shape").at(1).get<std::size_t>();
    }
    c.pooling.clear();
    if (!j.contains("pooling")) {
      c.pooling.assign(c.block_widths.size(), PoolingSpec::naive());
    } else if (j.at("pooling").is_array()) {
      for (const auto& p : j.at("pooling")) c.pooling.push_back(pooling_from_json(p));
    } else {
      c.pooling.assign(c.block_widths.size(), pooling_from_json(j.at("pooling")));
    }
    return c;
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("model config: ") + e.what());
  }
}

// ---------------------------------------------------------------------------
// Global pooling: mean over frequency, then max over time. [N,C,T,F] -> [N,C]

template <typename T>
BasicTensor<T> global_pool(const BasicTensor<T>& x) {
  if (x.rank() != 4) throw DimensionError("global_pool: expected [N,C,T,F], got " + shape_str(x.shape()));
  const std::size_t n = x.dim(0), c = x.dim(1), t = x.dim(2), f = x.dim(3);
  std::vector<T> out(n * c);
  std::vector<std::size_t> arg(n * c);
  for (std::size_t p = 0; p < n * c; ++p) {
    T best = 0;
    for (std::size_t ti = 0; ti < t; ++ti) {
      double acc = 0.0;
      for (std::size_t fi = 0; fi < f; ++fi) acc += x[(p * t + ti) * f + fi];
      const T m = static_cast<T>(acc / static_cast<double>(f));
      if (ti == 0 || m > best) {
        best = m;
        arg[p] = ti;
      }
    }
    out[p] = best;
  }
  auto nx = x.node_ptr();
  return make_result<T>({n, c}, std::move(out), {x}, [nx, arg, t, f](detail::Node<T>& o) {
    nx->ensure_grad();
    for (std::size_t p = 0; p < o.grad.size(); ++p) {
      const T g = o.grad[p] / static_cast<T>(f);
      T* row = &nx->grad[(p * t + arg[p]) * f];
      for (std::size_t fi = 0; fi < f; ++fi) row[fi] += g;
    }
  });
}

// ---------------------------------------------------------------------------
// Network

template <typename T>
struct NamedTensor {
  std::string name;
  BasicTensor<T> tensor;
};

template <typename T = float>
class Network {
 public:
  Network(ModelConfig config, std::uint64_t seed) : config_(std::move(config)) {
    if (auto errs = validate(config_); !errs.empty()) {
      std::string msg = "invalid model config:";
      for (const auto& e : errs) msg += "\n  - " + e;
      throw ConfigError(msg);
    }
    std::mt19937_64 rng(seed);
    std::size_t in_ch = 1;
    for (std::size_t b = 0; b < config_.block_widths.size(); ++b) {
      const std::size_t width = config_.block_widths[b];
      Block block;
      for (std::size_t c = 0; c < config_.convs_per_block; ++c) {
        const std::string prefix = "block" + std::to_string(b) + ".";
        const std::size_t fan_in = in_ch * config_.kernel_h * config_.kernel_w;
        const double bound = std::sqrt(6.0 / static_cast<double>(fan_in));  // Kaiming-uniform, ReLU gain
        std::uniform_real_distribution<double> dist(-bound, bound);
        std::vector<T> w(width * fan_in);
        for (auto& v : w) v = static_cast<T>(dist(rng));
        block.conv.push_back(add_param(prefix + "conv" + std::to_string(c) + ".weight",
                                       BasicTensor<T>({width, in_ch, config_.kernel_h, config_.kernel_w}, std::move(w), true)));
        block.gamma.push_back(add_param(prefix + "bn" + std::to_string(c) + ".gamma", BasicTensor<T>({width}, T{1}, true)));
        block.beta.push_back(add_param(prefix + "bn" + std::to_string(c) + ".beta", BasicTensor<T>({width}, T{0}, true)));
        block.stats.emplace_back(width);
        in_ch = width;
      }
      const auto& spec = config_.pooling[b];
      if (spec.lpf) {
        const auto& l = *spec.lpf;
        const std::string name = "pool" + std::to_string(b);
        if (l.trainable) {
          Shape shape = l.shared_across_channels ? Shape{l.rows, l.cols} : Shape{width, l.rows, l.cols};
          block.lpf_logits = add_param(name + ".lpf_logits", BasicTensor<T>(shape, T{0}, true));
        } else {
          const auto k = pooling::binomial2d(l.rows);
          std::vector<T> v(k.weights.values().begin(), k.weights.values().end());
          block.fixed_kernel = BasicTensor<T>({l.rows, l.cols}, std::move(v));
        }
      }
      blocks_.push_back(std::move(block));
    }
    const double bound = 1.0 / std::sqrt(static_cast<double>(in_ch));
    std::uniform_real_distribution<double> dist(-bound, bound);
    std::vector<T> w(config_.num_classes * in_ch);
    for (auto& v : w) v = static_cast<T>(dist(rng));
    head_w_ = add_param("head.weight", BasicTensor<T>({config_.num_classes, in_ch}, std::move(w), true));
    head_b_ = add_param("head.bias", BasicTensor<T>({config_.num_classes}, T{0}, true));
  }

  const ModelConfig& config() const { return config_; }

  // Trainable tensors in a fixed order.
  std::vector<NamedTensor<T>>& parameters() { return params_; }
  const std::vector<NamedTensor<T>>& parameters() const { return params_; }

  std::size_t trainable_count() const {
    std::size_t n = 0;
    for (const auto& p : params_) n += p.tensor.numel();
    return n;
  }

  // Count of trainable values that belong to pooling layers.
  std::size_t pooling_param_count() const {
    std::size_t n = 0;
    for (const auto& p : params_) {
      if (p.name.rfind("pool", 0) == 0) n += p.tensor.numel();
    }
    return n;
  }

  BatchNormOptions bn_options{};

  // [N,1,frames,bands] -> [N,num_classes] sigmoid scores. Train mode uses batch
  // statistics and updates the running ones; eval mode records no gradients.
  BasicTensor<T> forward(const BasicTensor<T>& x, Mode mode) {
    if (x.rank() != 4 || x.dim(1) != 1 || x.dim(2) != config_.input_frames || x.dim(3) != config_.input_bands) {
      throw DimensionError("forward: expected input [N,1," + std::to_string(config_.input_frames) + "," +
                           std::to_string(config_.input_bands) + "], got " + shape_str(x.shape()));
    }
    const bool eval = mode == Mode::Eval;
    auto use = [eval](const BasicTensor<T>& p) { return eval ? p.detach() : p; };
    BasicTensor<T> h = x;
    for (std::size_t b = 0; b < blocks_.size(); ++b) {
      auto& block = blocks_[b];
      for (std::size_t c = 0; c < block.conv.size(); ++c) {
        h = conv2d(h, use(params_[block.conv[c]].tensor), {1, 1}, PaddingMode::Same);
        h = batch_norm(h, use(params_[block.gamma[c]].tensor), use(params_[block.beta[c]].tensor), block.stats[c],
                       mode, bn_options);
        h = relu(h);
        if (config_.ibp && c + 1 < block.conv.size()) h = pooling::dense_maxpool(h, 3);
      }
      std::optional<BasicTensor<T>> kernel;
      if (block.lpf_logits) kernel = pooling::tlpf_materialize(use(params_[*block.lpf_logits].tensor)).weights;
      if (block.fixed_kernel) kernel = *block.fixed_kernel;
      h = pooling::pooling_layer(h, config_.pooling[b], kernel);
    }
    return sigmoid(linear(global_pool(h), use(params_[head_w_].tensor), use(params_[head_b_].tensor)));
  }

  // Every persistent value (parameters and batch-norm statistics) as f32 tensors.
  std::vector<NamedTensor<float>> state() const {
    std::vector<NamedTensor<float>> out;
    for (const auto& p : params_) out.push_back({p.name, to_f32(p.tensor)});
    for (std::size_t b = 0; b < blocks_.size(); ++b) {
      for (std::size_t c = 0; c < blocks_[b].stats.size(); ++c) {
        const std::string prefix = "block" + std::to_string(b) + ".bn" + std::to_string(c);
        const auto& s = blocks_[b].stats[c];
        out.push_back({prefix + ".running_mean", Tensor({s.mean.size()}, s.mean)});
        out.push_back({prefix + ".running_var", Tensor({s.var.size()}, s.var)});
      }
    }
    return out;
  }

  void load_state(const std::map<std::string, Tensor>& state) {
    auto fetch = [&](const std::string& name, const Shape& shape) -> const Tensor& {
      auto it = state.find(name);
      if (it == state.end()) throw FormatError("checkpoint is missing '" + name + "'");
      if (it->second.shape() != shape) {
        throw DimensionError("checkpoint tensor '" + name + "' has shape " + shape_str(it->second.shape()) +
                             ", model expects " + shape_str(shape));
      }
      return it->second;
    };
    for (auto& p : params_) {
      const auto& src = fetch(p.name, p.tensor.shape());
      for (std::size_t i = 0; i < src.numel(); ++i) p.tensor[i] = static_cast<T>(src[i]);
    }
    for (std::size_t b = 0; b < blocks_.size(); ++b) {
      for (std::size_t c = 0; c < blocks_[b].stats.size(); ++c) {
        const std::string prefix = "block" + std::to_string(b) + ".bn" + std::to_string(c);
        auto& s = blocks_[b].stats[c];
        s.mean = fetch(prefix + ".running_mean", {s.mean.size()}).values();
        s.var = fetch(prefix + ".running_var", {s.var.size()}).values();
      }
    }
  }

  // Same network in another scalar type (values converted).
  template <typename U>
  Network<U> cast() const {
    Network<U> out(config_, 0);
    std::map<std::string, Tensor> s;
    for (auto& [name, t] : state()) s.emplace(name, t);
    out.load_state(s);
    out.bn_options = bn_options;
    if constexpr (std::is_same_v<U, T>) {
      return out;
    } else {
      // load_state goes through f32; copy full-precision values directly.
      for (std::size_t i = 0; i < params_.size(); ++i) {
        auto& dst = out.parameters()[i].tensor;
        for (std::size_t k = 0; k < dst.numel(); ++k) dst[k] = static_cast<U>(params_[i].tensor[k]);
      }
      return out;
    }
  }

 private:
  struct Block {
    std::vector<std::size_t> conv, gamma, beta;  // indices into params_
    std::vector<RunningStats> stats;
    std::optional<std::size_t> lpf_logits;
    std::optional<BasicTensor<T>> fixed_kernel;
  };

  std::size_t add_param(std::string name, BasicTensor<T> t) {
    params_.push_back({std::move(name), std::move(t)});
    return params_.size() - 1;
  }

  static Tensor to_f32(const BasicTensor<T>& t) {
    return Tensor(t.shape(), std::vector<float>(t.values().begin(), t.values().end()));
  }

  ModelConfig config_;
  std::vector<NamedTensor<T>> params_;
  std::vector<Block> blocks_;
  std::size_t head_w_ = 0, head_b_ = 0;
};

// Arithmetic mean of per-patch score vectors.
inline Tensor clip_scores(const std::vector<Tensor>& patch_scores) {
  if (patch_scores.empty()) throw ArgumentError("clip_scores: no patches");
  const std::size_t c = patch_scores.front().numel();
  std::vector<double> acc(c, 0.0);
  for (const auto& s : patch_scores) {
    if (s.numel() != c) throw DimensionError("clip_scores: patches disagree on class count");
    for (std::size_t i = 0; i < c; ++i) acc[i] += s[i];
  }
  std::vector<float> out(c);
  for (std::size_t i = 0; i < c; ++i) out[i] = static_cast<float>(acc[i] / static_cast<double>(patch_scores.size()));
  return Tensor({c}, std::move(out));
}

}  // namespace aapool::model
