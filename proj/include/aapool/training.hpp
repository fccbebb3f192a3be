#pragma once

// Adam on binary cross-entropy with optional mixup, plateau halving of the
// learning rate, early stopping and best-checkpoint selection on validation mAP.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <limits>
#include <optional>
#include <random>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "aapool/checkpoint.hpp"
#include "aapool/data.hpp"
#include "aapool/errors.hpp"
#include "aapool/inference.hpp"
#include "aapool/metrics.hpp"
#include "aapool/model.hpp"
#include "aapool/ops.hpp"
#include "json.hpp"

namespace aapool::training {

// ---------------------------------------------------------------------------
// Loss

// Mean over all entries of -[t ln s + (1 - t) ln(1 - s)], with s clamped to
// [eps, 1 - eps] (no gradient flows through the clamped region).
template <typename T>
BasicTensor<T> bce_loss(const BasicTensor<T>& scores, const BasicTensor<T>& targets) {
  if (scores.shape() != targets.shape()) {
    throw DimensionError("bce_loss: scores " + shape_str(scores.shape()) + " vs targets " + shape_str(targets.shape()));
  }
  const double eps = std::is_same_v<T, float> ? 1e-7 : 1e-12;
  const std::size_t n = scores.numel();
  double acc = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double s = std::clamp(static_cast<double>(scores[i]), eps, 1.0 - eps);
    const double t = targets[i];
    acc -= t * std::log(s) + (1.0 - t) * std::log(1.0 - s);
  }
  auto ns = scores.node_ptr(), nt = targets.node_ptr();
  return make_result<T>(Shape{1}, {static_cast<T>(acc / static_cast<double>(n))}, {scores},
                        [ns, nt, n, eps](detail::Node<T>& o) {
                          ns->ensure_grad();
                          const double g = o.grad[0] / static_cast<double>(n);
                          for (std::size_t i = 0; i < n; ++i) {
                            const double s = ns->data[i];
                            if (s <= eps || s >= 1.0 - eps) continue;
                            const double t = nt->data[i];
                            ns->grad[i] += static_cast<T>(g * (-t / s + (1.0 - t) / (1.0 - s)));
                          }
                        });
}

// ---------------------------------------------------------------------------
// Mixup

// Beta(a, b) via two Gamma draws.
inline double sample_beta(double a, double b, std::mt19937_64& rng) {
  std::gamma_distribution<double> ga(a, 1.0), gb(b, 1.0);
  const double x = ga(rng), y = gb(rng);
  return x + y > 0.0 ? x / (x + y) : 0.5;
}

struct MixupDraw {
  float lambda = 1.0f;
  std::size_t partner = 0;
};

// One lambda per example, partners from a random permutation of the batch.
inline std::vector<MixupDraw> draw_mixup(std::size_t n, double alpha, std::mt19937_64& rng) {
  if (!(alpha > 0.0)) throw ArgumentError("mixup: alpha must be > 0");
  std::vector<std::size_t> perm(n);
  for (std::size_t i = 0; i < n; ++i) perm[i] = i;
  std::shuffle(perm.begin(), perm.end(), rng);
  std::vector<MixupDraw> draws(n);
  for (std::size_t i = 0; i < n; ++i) draws[i] = {static_cast<float>(sample_beta(alpha, alpha, rng)), perm[i]};
  return draws;
}

// x'_i = l x_i + (1 - l) x_j, y'_i = l y_i + (1 - l) y_j, rows along axis 0.
inline std::pair<Tensor, Tensor> apply_mixup(const Tensor& x, const Tensor& y, const std::vector<MixupDraw>& draws) {
  const std::size_t n = x.dim(0);
  if (y.dim(0) != n || draws.size() != n) throw DimensionError("mixup: batch sizes disagree");
  auto mix = [&](const Tensor& t) {
    const std::size_t row = t.numel() / n;
    std::vector<float> out(t.numel());
    for (std::size_t i = 0; i < n; ++i) {
      const float l = draws[i].lambda;
      const std::size_t j = draws[i].partner;
      for (std::size_t k = 0; k < row; ++k) out[i * row + k] = l * t[i * row + k] + (1.0f - l) * t[j * row + k];
    }
    return Tensor(t.shape(), std::move(out));
  };
  return {mix(x), mix(y)};
}

// Draws per-example lambdas from Beta(alpha, alpha), or uses `forced_lambda`
// for every example when given.
inline std::pair<Tensor, Tensor> mixup_batch(const Tensor& x, const Tensor& y, double alpha, std::mt19937_64& rng,
                                             std::optional<float> forced_lambda = std::nullopt) {
  auto draws = draw_mixup(x.dim(0), alpha, rng);
  if (forced_lambda) {
    for (auto& d : draws) d.lambda = *forced_lambda;
  }
  return apply_mixup(x, y, draws);
}

// ---------------------------------------------------------------------------
// Adam

struct AdamOptions {
  double beta1 = 0.9, beta2 = 0.999, eps = 1e-8;
};

template <typename T>
class Adam {
 public:
  explicit Adam(std::vector<model::NamedTensor<T>>& params, AdamOptions opts = {}) : params_(params), opts_(opts) {
    for (const auto& p : params_) {
      m_.emplace_back(p.tensor.numel(), T{0});
      v_.emplace_back(p.tensor.numel(), T{0});
    }
  }

  void step(double lr) {
    ++t_;
    const double c1 = 1.0 - std::pow(opts_.beta1, static_cast<double>(t_));
    const double c2 = 1.0 - std::pow(opts_.beta2, static_cast<double>(t_));
    for (std::size_t k = 0; k < params_.size(); ++k) {
      auto& p = params_[k].tensor;
      if (!p.has_grad()) continue;
      const auto g = p.grad();
      auto& m = m_[k];
      auto& v = v_[k];
      for (std::size_t i = 0; i < p.numel(); ++i) {
        m[i] = static_cast<T>(opts_.beta1 * m[i] + (1.0 - opts_.beta1) * g[i]);
        v[i] = static_cast<T>(opts_.beta2 * v[i] + (1.0 - opts_.beta2) * g[i] * g[i]);
        const double mh = m[i] / c1, vh = v[i] / c2;
        p[i] = static_cast<T>(p[i] - lr * mh / (std::sqrt(vh) + opts_.eps));
      }
    }
  }

  void zero_grad() {
    for (auto& p : params_) p.tensor.zero_grad();
  }

  std::uint64_t steps() const { return t_; }

  std::map<std::string, Tensor> state() const {
    std::map<std::string, Tensor> s;
    for (std::size_t k = 0; k < params_.size(); ++k) {
      const Shape& shape = params_[k].tensor.shape();
      s.emplace("m/" + params_[k].name, Tensor(shape, std::vector<float>(m_[k].begin(), m_[k].end())));
      s.emplace("v/" + params_[k].name, Tensor(shape, std::vector<float>(v_[k].begin(), v_[k].end())));
    }
    return s;
  }

  void load_state(const std::map<std::string, Tensor>& s, std::uint64_t steps) {
    for (std::size_t k = 0; k < params_.size(); ++k) {
      for (auto [prefix, dst] : {std::pair{"m/", &m_[k]}, std::pair{"v/", &v_[k]}}) {
        auto it = s.find(prefix + params_[k].name);
        if (it == s.end() || it->second.numel() != dst->size()) {
          throw FormatError("optimizer state missing or mis-sized for " + params_[k].name);
        }
        for (std::size_t i = 0; i < dst->size(); ++i) (*dst)[i] = static_cast<T>(it->second[i]);
      }
    }
    t_ = steps;
  }

 private:
  std::vector<model::NamedTensor<T>>& params_;
  AdamOptions opts_;
  std::vector<std::vector<T>> m_, v_;
  std::uint64_t t_ = 0;
};

// ---------------------------------------------------------------------------
// Configuration

struct TrainConfig {
  double lr = 1e-3;
  std::size_t batch_size = 32;
  std::size_t max_epochs = 60;
  std::size_t plateau_patience = 10;
  std::size_t earlystop_patience = 20;
  std::optional<double> mixup_alpha;
  std::uint64_t seed = 0;
  double improvement_threshold = 1e-4;
  double bn_momentum = 0.1;
  std::size_t threads = 1;  // validation scoring workers

  // Full-scale settings (lr 3e-5, batch 128, 150 epochs, mixup 1.25).
  static TrainConfig paper() {
    TrainConfig c;
    c.lr = 3e-5;
    c.batch_size = 128;
    c.max_epochs = 150;
    c.mixup_alpha = 1.25;
    return c;
  }
};

inline std::vector<std::string> validate(const TrainConfig& c) {
  std::vector<std::string> errs;
  if (!(c.lr >= 0.0) || !std::isfinite(c.lr)) errs.emplace_back("lr must be >= 0 (0 freezes the parameters)");
  if (c.batch_size < 1) errs.emplace_back("batch_size must be >= 1");
  if (c.max_epochs < 1) errs.emplace_back("max_epochs must be >= 1");
  if (c.plateau_patience < 1) errs.emplace_back("plateau_patience must be >= 1");
  if (c.earlystop_patience < 1) errs.emplace_back("earlystop_patience must be >= 1");
  if (c.mixup_alpha && !(*c.mixup_alpha > 0.0)) errs.emplace_back("mixup_alpha must be > 0");
  if (!(c.bn_momentum >= 0.0 && c.bn_momentum <= 1.0)) errs.emplace_back("bn_momentum must be in [0, 1]");
  if (c.threads < 1) errs.emplace_back("threads must be >= 1");
  return errs;
}

inline nlohmann::json to_json(const TrainConfig& c) {
  nlohmann::json j = {{"lr", c.lr},
                      {"batch_size", c.batch_size},
                      {"max_epochs", c.max_epochs},
                      {"plateau_patience", c.plateau_patience},
                      {"earlystop_patience", c.earlystop_patience},
                      {"seed", c.seed},
                      {"improvement_threshold", c.improvement_threshold},
                      {"bn_momentum", c.bn_momentum}};
  j["mixup_alpha"] = c.mixup_alpha ? nlohmann::json(*c.mixup_alpha) : nlohmann::json(nullptr);
  return j;
}

inline TrainConfig train_config_from_json(const nlohmann::json& j) {
  try {
    TrainConfig c = j.value("preset", std::string("desk")) == "paper" ? TrainConfig::paper() : TrainConfig{};
    c.lr = j.value("lr", c.lr);
    c.batch_size = j.value("batch_size", c.batch_size);
    c.max_epochs = j.value("max_epochs", c.max_epochs);
    c.plateau_patience = j.value("plateau_patience", c.plateau_patience);
    c.earlystop_patience = j.value("earlystop_patience", c.earlystop_patience);
    c.seed = j.value("seed", c.seed);
    c.improvement_threshold = j.value("improvement_threshold", c.improvement_threshold);
    c.bn_momentum = j.value("bn_momentum", c.bn_momentum);
    if (j.contains("mixup_alpha")) {
      c.mixup_alpha = j.at("mixup_alpha").is_null() ? std::nullopt : std::optional<double>(j.at("mixup_alpha").get<double>());
    }
    return c;
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("train config: ") + e.what());
  }
}

// ---------------------------------------------------------------------------
// Training loop

struct EpochRecord {
  std::size_t epoch = 0;  // 1-based
  double train_loss = 0.0;
  double val_map = 0.0;
  double lr = 0.0;  // rate used during this epoch
};

struct TrainResult {
  model::Checkpoint best;  // best.val_history.back() is the best validation mAP
  std::vector<EpochRecord> history;
  bool early_stopped = false;
};

inline std::string history_csv(const std::vector<EpochRecord>& history) {
  std::ostringstream os;
  os.precision(9);
  os << "epoch,train_loss,val_mAP,lr\n";
  for (const auto& r : history) os << r.epoch << ',' << r.train_loss << ',' << r.val_map << ',' << r.lr << '\n';
  return os.str();
}

// One training patch: a clip's spectrogram window plus the clip's target.
struct TrainItem {
  const Tensor* patch;
  const std::vector<float>* target;
};

inline std::vector<std::vector<frontend::Patch>> patch_cache(const std::vector<data::Clip>& clips) {
  std::vector<std::vector<frontend::Patch>> out;
  out.reserve(clips.size());
  for (const auto& c : clips) out.push_back(c.patches());
  return out;
}

// Plateau halving and early stopping on a validation metric that should rise.
class PlateauSchedule {
 public:
  enum class Event { Improved, None, Halved, Stop };

  PlateauSchedule(double lr, std::size_t plateau_patience, std::size_t earlystop_patience, double threshold)
      : lr_(lr), plateau_(plateau_patience), stop_(earlystop_patience), threshold_(threshold) {}

  // Feeds one epoch's metric. The first value always counts as an improvement.
  Event update(double metric) {
    if (!seen_ || metric >= best_ + threshold_) {
      seen_ = true;
      best_ = metric;
      since_best_ = since_plateau_ = 0;
      return Event::Improved;
    }
    ++since_best_;
    ++since_plateau_;
    if (since_best_ >= stop_) return Event::Stop;
    if (since_plateau_ >= plateau_) {
      lr_ *= 0.5;
      since_plateau_ = 0;
      return Event::Halved;
    }
    return Event::None;
  }

  double lr() const { return lr_; }
  double best() const { return best_; }

 private:
  double lr_;
  std::size_t plateau_, stop_;
  double threshold_;
  double best_ = 0.0;
  bool seen_ = false;
  std::size_t since_best_ = 0, since_plateau_ = 0;
};

using EpochCallback = std::function<void(const EpochRecord&)>;

inline TrainResult train(model::Network<float>& net, const std::vector<data::Clip>& train_set,
                         const std::vector<data::Clip>& val_set, const TrainConfig& cfg,
                         const EpochCallback& on_epoch = {}) {
  if (auto errs = validate(cfg); !errs.empty()) {
    std::string msg = "invalid train config:";
    for (const auto& e : errs) msg += "\n  - " + e;
    throw ConfigError(msg);
  }
  if (train_set.empty() || val_set.empty()) throw ArgumentError("train: training and validation sets must be non-empty");
  net.bn_options.momentum = static_cast<float>(cfg.bn_momentum);

  const auto cache = patch_cache(train_set);
  std::vector<TrainItem> items;
  for (std::size_t c = 0; c < train_set.size(); ++c) {
    if (train_set[c].target.size() != net.config().num_classes) {
      throw DimensionError("clip " + train_set[c].id + " has " + std::to_string(train_set[c].target.size()) +
                           " targets, model has " + std::to_string(net.config().num_classes) + " classes");
    }
    for (const auto& p : cache[c]) items.push_back({&p.values, &train_set[c].target});
  }

  std::mt19937_64 rng(cfg.seed);
  Adam<float> opt(net.parameters());
  const std::size_t classes = net.config().num_classes;
  PlateauSchedule schedule(cfg.lr, cfg.plateau_patience, cfg.earlystop_patience, cfg.improvement_threshold);
  TrainResult result;

  for (std::size_t epoch = 1; epoch <= cfg.max_epochs; ++epoch) {
    std::shuffle(items.begin(), items.end(), rng);
    const double lr = schedule.lr();
    double loss_sum = 0.0;
    for (std::size_t start = 0; start < items.size(); start += cfg.batch_size) {
      const std::size_t end = std::min(items.size(), start + cfg.batch_size);
      std::vector<const Tensor*> patches;
      std::vector<float> y;
      for (std::size_t i = start; i < end; ++i) {
        patches.push_back(items[i].patch);
        y.insert(y.end(), items[i].target->begin(), items[i].target->end());
      }
      Tensor x = stack_patches(patches);
      Tensor t({end - start, classes}, std::move(y));
      if (cfg.mixup_alpha) std::tie(x, t) = mixup_batch(x, t, *cfg.mixup_alpha, rng);
      const auto loss = bce_loss(net.forward(x, Mode::Train), t);
      const double lv = loss.item();
      if (!std::isfinite(lv)) {
        throw DivergenceError("training diverged: non-finite loss at epoch " + std::to_string(epoch) + ", batch " +
                              std::to_string(start / cfg.batch_size + 1) + " (lr " + std::to_string(lr) + ")");
      }
      opt.zero_grad();
      backward(loss);
      opt.step(lr);
      for (const auto& p : net.parameters()) {
        for (float v : p.tensor.data()) {
          if (!std::isfinite(v)) {
            throw DivergenceError("training diverged: parameter " + p.name + " became non-finite at epoch " +
                                  std::to_string(epoch) + " (lr " + std::to_string(lr) + ")");
          }
        }
      }
      loss_sum += lv * static_cast<double>(end - start);
    }
    opt.zero_grad();

    const double val = metrics::mean_ap(predict_clips(net, val_set, cfg.threads)).value;
    EpochRecord rec{epoch, loss_sum / static_cast<double>(items.size()), val, lr};
    result.history.push_back(rec);
    if (on_epoch) on_epoch(rec);

    const auto event = schedule.update(val);
    if (event == PlateauSchedule::Event::Improved) {
      result.best = model::snapshot(net);
      result.best.optimizer = opt.state();
      result.best.optimizer_step = opt.steps();
      result.best.epoch = epoch;
      result.best.lr = lr;
      result.best.val_history.clear();
      for (const auto& r : result.history) result.best.val_history.push_back(r.val_map);
    } else if (event == PlateauSchedule::Event::Stop) {
      result.early_stopped = true;
      break;
    }
  }
  return result;
}

}  // namespace aapool::training
