// aapool: command-line front end for filters, synthetic data, training and
// evaluation. Exit codes: 0 success, 1 runtime failure, 2 usage/config error.

#include <algorithm>
#include <cstdint>
#include <exception>
#include <filesystem>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "aapool/checkpoint.hpp"
#include "aapool/data.hpp"
#include "aapool/inference.hpp"
#include "aapool/io.hpp"
#include "aapool/metrics.hpp"
#include "aapool/model.hpp"
#include "aapool/oracles.hpp"
#include "aapool/pooling.hpp"
#include "aapool/shift.hpp"
#include "aapool/synth.hpp"
#include "aapool/training.hpp"
#include "json.hpp"

namespace fs = std::filesystem;
using namespace aapool;

namespace {

struct Globals {
  std::uint64_t seed = 0;
  std::size_t threads = 1;
};

// Hash of everything that determines a command's outputs. Output paths and
// worker counts are left out on purpose.
std::string manifest_hash(const nlohmann::json& manifest) { return io::hex64(io::fnv1a(manifest.dump())); }

void write_manifest(const fs::path& dir, nlohmann::json manifest) {
  const std::string h = manifest_hash(manifest);
  manifest["manifest_hash"] = h;
  io::write_text(dir / "experiment.json", manifest.dump(2) + "\n");
}

// Content hash of a checkpoint directory: manifest plus every tensor file, in name order.
std::string checkpoint_hash(const fs::path& dir) {
  std::vector<fs::path> files;
  for (const auto& e : fs::recursive_directory_iterator(dir)) {
    if (e.is_regular_file()) files.push_back(e.path());
  }
  std::sort(files.begin(), files.end());
  std::uint64_t h = io::fnv1a("");
  for (const auto& f : files) {
    h = io::fnv1a(fs::relative(f, dir).generic_string(), h);
    h = io::fnv1a(io::read_text(f), h);
  }
  return io::hex64(h);
}

nlohmann::json read_json(const std::string& path) {
  if (!fs::exists(path)) throw ConfigError("config file not found: " + path);
  try {
    return nlohmann::json::parse(io::read_text(path));
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(path + ": " + e.what());
  }
}

const std::vector<data::Clip>& split_of(const data::Dataset& ds, const std::string& split) {
  if (split == "train") return ds.train;
  if (split == "val") return ds.val;
  if (split == "eval") return ds.eval;
  throw ConfigError("unknown split '" + split + "' (expected train, val or eval)");
}

pooling::PoolingSpec pooling_preset(const std::string& name) {
  if (name == "naive") return pooling::PoolingSpec::naive();
  if (name == "blurpool") return pooling::PoolingSpec::blurpool(5);
  if (name == "tlpf") return pooling::PoolingSpec::tlpf(5, 5);
  if (name == "aps") return pooling::PoolingSpec::aps(1);
  if (name == "tlpf_aps") return pooling::PoolingSpec::tlpf_aps(5, 5, 1);
  throw ConfigError("unknown pooling preset '" + name + "'");
}

// ---------------------------------------------------------------------------

struct BuildFilterArgs {
  std::optional<std::size_t> size;
  std::optional<int> order;
  std::string out;
};

int cmd_build_filter(const BuildFilterArgs& a) {
  if (a.size.has_value() == a.order.has_value()) throw ConfigError("build-filter: give exactly one of --size or --order");
  Tensor k;
  std::string label;
  if (a.size) {
    k = pooling::binomial2d(*a.size).weights;
    label = std::to_string(*a.size) + "x" + std::to_string(*a.size) + " binomial kernel";
  } else {
    const auto taps = pooling::binomial1d(*a.order);
    k = Tensor({taps.size()}, std::vector<float>(taps.begin(), taps.end()));
    label = "order-" + std::to_string(*a.order) + " binomial taps";
  }
  std::cout << label << ":\n";
  const std::size_t cols = k.dim(k.rank() - 1);
  for (std::size_t i = 0; i < k.numel(); ++i) std::cout << k[i] << ((i + 1) % cols ? ' ' : '\n');
  if (!a.out.empty()) {
    io::save_tensor(a.out, k);
    std::cout << "wrote " << a.out << "\n";
  }
  return 0;
}

struct GenDataArgs {
  std::string out;
  std::string config;
  std::optional<std::size_t> classes, clips_per_class;
  bool features = false;
};

int cmd_gen_data(const GenDataArgs& a, const Globals& g) {
  synth::SynthSpec spec = a.config.empty() ? synth::SynthSpec{} : synth::spec_from_json(read_json(a.config));
  spec.seed = g.seed;
  if (a.classes) spec.num_classes = *a.classes;
  if (a.clips_per_class) spec.clips_per_class = *a.clips_per_class;
  const auto ds = synth::generate(spec);
  synth::write_dataset(a.out, ds, spec, a.features);
  std::cout << "wrote " << ds.clips.size() << " clips (" << ds.classes.size() << " classes) to " << a.out << "\n";
  return 0;
}

struct TrainArgs {
  std::string data, out, model_config, train_config;
  std::string model = "micro";
  std::string pooling = "naive";
  std::optional<double> lr, mixup_alpha;
  std::optional<std::size_t> epochs, batch_size;
  bool paper = false;
  bool quiet = false;
};

int cmd_train(const TrainArgs& a, const Globals& g) {
  if (!fs::is_directory(a.data)) throw ConfigError("data directory not found: " + a.data);
  const auto ds = data::load_dataset(a.data);
  const std::size_t classes = ds.classes.size();

  model::ModelConfig mc;
  if (!a.model_config.empty()) {
    mc = model::config_from_json(read_json(a.model_config));
  } else {
    const auto pool = pooling_preset(a.pooling);
    if (a.model == "micro") mc = model::ModelConfig::micro(classes, pool);
    else if (a.model == "vgg41") mc = model::ModelConfig::vgg41(classes, pool);
    else if (a.model == "vgg42") mc = model::ModelConfig::vgg42(classes, pool);
    else throw ConfigError("unknown model preset '" + a.model + "'");
  }
  if (mc.num_classes != classes) {
    throw ConfigError("model has " + std::to_string(mc.num_classes) + " classes, data has " + std::to_string(classes));
  }

  training::TrainConfig tc = a.train_config.empty()
                                 ? (a.paper ? training::TrainConfig::paper() : training::TrainConfig{})
                                 : training::train_config_from_json(read_json(a.train_config));
  tc.seed = g.seed;
  tc.threads = g.threads;
  if (a.lr) tc.lr = *a.lr;
  if (a.epochs) tc.max_epochs = *a.epochs;
  if (a.batch_size) tc.batch_size = *a.batch_size;
  if (a.mixup_alpha) tc.mixup_alpha = *a.mixup_alpha;

  const nlohmann::json manifest = {{"command", "train"},
                                   {"seed", g.seed},
                                   {"data", ds.manifest_hash},
                                   {"model", model::to_json(mc)},
                                   {"train", training::to_json(tc)}};
  const std::string hash = manifest_hash(manifest);

  model::Network<float> net(mc, g.seed);
  fs::create_directories(a.out);
  const auto result = training::train(net, ds.train, ds.val, tc, [&](const training::EpochRecord& r) {
    if (!a.quiet) {
      std::cout << "epoch " << r.epoch << " loss " << r.train_loss << " val_mAP " << r.val_map << " lr " << r.lr
                << std::endl;
    }
  });
  model::save_checkpoint(fs::path(a.out) / "checkpoint", result.best);
  io::write_text(fs::path(a.out) / "history.csv", shift::csv_header(hash) + training::history_csv(result.history));
  write_manifest(a.out, manifest);
  std::cout << "best epoch " << result.best.epoch << " val_mAP " << result.best.val_history.back()
            << (result.early_stopped ? " (early stop)" : "") << "\n";
  return 0;
}

struct EvalMapArgs {
  std::string checkpoint, data, out;
  std::string split = "eval";
};

int cmd_eval_map(const EvalMapArgs& a, const Globals& g) {
  if (!fs::is_directory(a.data)) throw ConfigError("data directory not found: " + a.data);
  if (!fs::is_directory(a.checkpoint)) throw ConfigError("checkpoint directory not found: " + a.checkpoint);
  const auto ds = data::load_dataset(a.data);
  auto net = model::restore(model::load_checkpoint(a.checkpoint));
  const auto preds = predict_clips(net, split_of(ds, a.split), g.threads);
  const auto map = metrics::mean_ap(preds);
  const auto dp = metrics::d_prime(preds);
  const double acc = metrics::top1_accuracy(preds);
  const nlohmann::json manifest = {{"command", "eval-map"},
                                   {"data", ds.manifest_hash},
                                   {"checkpoint", checkpoint_hash(a.checkpoint)},
                                   {"split", a.split}};
  std::ostringstream os;
  os.precision(9);
  os << shift::csv_header(manifest_hash(manifest)) << "class,ap\n";
  for (std::size_t c = 0; c < map.per_class.size(); ++c) {
    os << ds.classes.at(c) << ',';
    if (map.per_class[c]) os << *map.per_class[c];
    os << '\n';
  }
  os << "mAP," << map.value << "\nd_prime," << dp.value << "\nmean_auc," << dp.mean_auc << "\ntop1_accuracy," << acc
     << '\n';
  if (!a.out.empty()) {
    io::write_text(a.out, os.str());
  }
  std::cout << os.str();
  for (std::size_t c : map.skipped) std::cerr << "warning: class " << ds.classes.at(c) << " has no positives\n";
  return 0;
}

struct ShiftEvalArgs {
  std::vector<std::string> checkpoints, names;
  std::string data, out;
  std::vector<std::string> protocols{"time", "freq"};
  std::vector<std::size_t> magnitudes{1, 3, 5};
  bool svg = false;
};

int cmd_shift_eval(const ShiftEvalArgs& a, const Globals& g) {
  std::vector<shift::Protocol> protocols;
  for (const auto& p : a.protocols) protocols.push_back(shift::protocol_from_name(p));
  if (!fs::is_directory(a.data)) throw ConfigError("data directory not found: " + a.data);
  if (!a.names.empty() && a.names.size() != a.checkpoints.size()) {
    throw ConfigError("--name must be given once per --checkpoint");
  }
  for (const auto& c : a.checkpoints) {
    if (!fs::is_directory(c)) throw ConfigError("checkpoint directory not found: " + c);
  }
  const auto ds = data::load_dataset(a.data);
  const std::size_t max_mag = *std::max_element(a.magnitudes.begin(), a.magnitudes.end());
  const auto clips = shift::eligible_clips(ds.eval, max_mag);
  if (clips.empty()) throw IneligibleError("no eval clip is single-label and long enough for time-" + std::to_string(max_mag));

  nlohmann::json manifest = {{"command", "shift-eval"}, {"seed", g.seed}, {"data", ds.manifest_hash},
                             {"protocols", a.protocols}, {"magnitudes", a.magnitudes}};
  manifest["checkpoints"] = nlohmann::json::array();
  for (const auto& c : a.checkpoints) manifest["checkpoints"].push_back(checkpoint_hash(c));
  manifest["names"] = a.names;
  const std::string hash = manifest_hash(manifest);

  fs::create_directories(a.out);
  std::string ids;
  for (const auto* c : clips) ids += c->id + "\n";
  io::write_text(fs::path(a.out) / "eligible_clips.txt", ids);

  std::vector<shift::SummaryColumn> columns;
  for (std::size_t k = 0; k < a.checkpoints.size(); ++k) {
    const std::string name = a.names.empty() ? "model" + std::to_string(k) : a.names[k];
    auto net = model::restore(model::load_checkpoint(a.checkpoints[k]));
    shift::SummaryColumn col{name, {}};
    for (auto proto : protocols) {
      std::vector<shift::ShiftReport> per_proto;
      for (std::size_t n : a.magnitudes) {
        auto rep = shift::shift_consistency(net, clips, proto, n, g.seed, g.threads);
        const std::string file = name + "_" + shift::protocol_name(proto) + "-" + std::to_string(n) + ".csv";
        io::write_text(fs::path(a.out) / file, shift::report_csv(rep, hash));
        std::cout << name << " " << shift::protocol_name(proto) << "-" << n << ": consistency " << rep.consistency_pct
                  << "% MAC " << rep.mac << "\n";
        per_proto.push_back(rep);
        col.reports.push_back(std::move(rep));
      }
      if (a.svg) {
        io::write_text(fs::path(a.out) / (name + "_" + shift::protocol_name(proto) + ".svg"),
                       shift::score_plot_svg(per_proto));
      }
    }
    columns.push_back(std::move(col));
  }
  io::write_text(fs::path(a.out) / "summary.csv", shift::summary_csv(columns, hash));
  write_manifest(a.out, manifest);
  return 0;
}

struct OracleArgs {
  std::string suite = "all";
  bool perturb = false;
};

int cmd_oracle(const OracleArgs& a, const Globals& g) {
  oracles::Options opt;
  opt.seed = g.seed;
  opt.perturb_kernel_normalization = a.perturb;
  const auto checks = oracles::run(a.suite, opt);
  std::size_t failed = 0;
  for (const auto& c : checks) {
    std::cout << (c.passed ? "PASS " : "FAIL ") << c.suite << "/" << c.name << "  " << c.detail << "\n";
    failed += !c.passed;
  }
  std::cout << checks.size() - failed << "/" << checks.size() << " checks passed\n";
  if (failed) {
    std::cerr << "failing:";
    for (const auto& c : checks)
      if (!c.passed) std::cerr << " " << c.suite << "/" << c.name;
    std::cerr << "\n";
  }
  return failed ? 1 : 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Anti-aliased pooling for audio tagging: filters, synthetic data, training and evaluation"};
  app.require_subcommand(1);
  Globals g;
  app.add_option("--seed", g.seed, "Seed for every random choice")->capture_default_str();
  app.add_option("--threads", g.threads, "Worker threads for scoring")->check(CLI::PositiveNumber)->capture_default_str();

  BuildFilterArgs bf;
  auto* c_bf = app.add_subcommand("build-filter", "Write a normalized binomial kernel");
  c_bf->add_option("--size", bf.size, "Square 2D kernel size (>= 2)");
  c_bf->add_option("--order", bf.order, "1D taps of the given order (order 1 = [1,2,1]/4)");
  c_bf->add_option("--out", bf.out, "AAPT output file");

  GenDataArgs gd;
  auto* c_gd = app.add_subcommand("gen-data", "Generate a synthetic labeled dataset");
  c_gd->add_option("--out", gd.out, "Output directory")->required();
  c_gd->add_option("--config", gd.config, "SynthSpec JSON");
  c_gd->add_option("--classes", gd.classes, "Number of classes");
  c_gd->add_option("--clips-per-class", gd.clips_per_class, "Clips per class");
  c_gd->add_flag("--features", gd.features, "Also write log-mel AAPT features");

  TrainArgs tr;
  auto* c_tr = app.add_subcommand("train", "Train a model and keep the best validation checkpoint");
  c_tr->add_option("--data", tr.data, "Dataset directory")->required();
  c_tr->add_option("--out", tr.out, "Output directory")->required();
  c_tr->add_option("--model-config", tr.model_config, "ModelConfig JSON (overrides --model/--pooling)");
  c_tr->add_option("--train-config", tr.train_config, "TrainConfig JSON");
  c_tr->add_option("--model", tr.model, "micro, vgg41 or vgg42")->capture_default_str();
  c_tr->add_option("--pooling", tr.pooling, "naive, blurpool, tlpf, aps or tlpf_aps")->capture_default_str();
  c_tr->add_option("--lr", tr.lr, "Learning rate");
  c_tr->add_option("--epochs", tr.epochs, "Maximum epochs");
  c_tr->add_option("--batch-size", tr.batch_size, "Batch size");
  c_tr->add_option("--mixup-alpha", tr.mixup_alpha, "Enable mixup with Beta(alpha, alpha)");
  c_tr->add_flag("--paper", tr.paper, "Start from the full-scale training settings");
  c_tr->add_flag("--quiet", tr.quiet, "No per-epoch output");

  EvalMapArgs em;
  auto* c_em = app.add_subcommand("eval-map", "Clip-level mAP, d' and accuracy of a checkpoint");
  c_em->add_option("--checkpoint", em.checkpoint, "Checkpoint directory")->required();
  c_em->add_option("--data", em.data, "Dataset directory")->required();
  c_em->add_option("--split", em.split, "train, val or eval")->capture_default_str();
  c_em->add_option("--out", em.out, "CSV output file");

  ShiftEvalArgs se;
  auto* c_se = app.add_subcommand("shift-eval", "Time/frequency shift consistency and MAC");
  c_se->add_option("--checkpoint", se.checkpoints, "Checkpoint directory (repeatable)")->required();
  c_se->add_option("--name", se.names, "Column name per checkpoint");
  c_se->add_option("--data", se.data, "Dataset directory")->required();
  c_se->add_option("--out", se.out, "Output directory")->required();
  c_se->add_option("--protocols", se.protocols, "time and/or freq")->delimiter(',')->capture_default_str();
  c_se->add_option("--magnitudes", se.magnitudes, "Shift sizes")->delimiter(',')->capture_default_str();
  c_se->add_flag("--svg", se.svg, "Also write score-vs-shift plots");

  OracleArgs orc;
  auto* c_or = app.add_subcommand("oracle", "Run brute-force reference checks");
  c_or->add_option("--suite", orc.suite, "all, binomial, tlpf, aps, pooling, conv, gradcheck, metrics, shift, mixup, model")
      ->capture_default_str();
  c_or->add_flag("--perturb-kernel-normalization", orc.perturb, "Negative control: break kernel normalization");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : 2;
  }

  try {
    if (*c_bf) return cmd_build_filter(bf);
    if (*c_gd) return cmd_gen_data(gd, g);
    if (*c_tr) return cmd_train(tr, g);
    if (*c_em) return cmd_eval_map(em, g);
    if (*c_se) return cmd_shift_eval(se, g);
    if (*c_or) return cmd_oracle(orc, g);
  } catch (const ConfigError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const ArgumentError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 2;
}
