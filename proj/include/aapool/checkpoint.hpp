#pragma once

// Checkpoint directory layout:
//   manifest.json        model config, epoch, lr, optimizer step, validation history, tensor index
//   tensors/<name>.aapt  parameters, batch-norm statistics, optimizer moments

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "aapool/errors.hpp"
#include "aapool/io.hpp"
#include "aapool/model.hpp"
#include "json.hpp"

namespace aapool::model {

struct Checkpoint {
  ModelConfig config;
  std::map<std::string, Tensor> state;      // Network::state()
  std::map<std::string, Tensor> optimizer;  // e.g. "m/<param>", "v/<param>"
  std::uint64_t optimizer_step = 0;
  std::size_t epoch = 0;
  double lr = 0.0;
  std::vector<double> val_history;
};

template <typename T>
Checkpoint snapshot(const Network<T>& net) {
  Checkpoint ck;
  ck.config = net.config();
  for (auto& [name, t] : net.state()) ck.state.emplace(name, t.detach());
  return ck;
}

inline Network<float> restore(const Checkpoint& ck) {
  Network<float> net(ck.config, 0);
  net.load_state(ck.state);
  return net;
}

namespace detail {
inline std::string tensor_file(const std::string& group, const std::string& name) {
  std::string f = group + "." + name;
  for (auto& c : f) {
    if (c == '/' || c == '\\') c = '~';
  }
  return "tensors/" + f + ".aapt";
}
}  // namespace detail

inline void save_checkpoint(const std::filesystem::path& dir, const Checkpoint& ck) {
  std::filesystem::create_directories(dir / "tensors");
  nlohmann::json m;
  m["format"] = "aapool-checkpoint-1";
  m["model"] = to_json(ck.config);
  m["epoch"] = ck.epoch;
  m["lr"] = ck.lr;
  m["optimizer_step"] = ck.optimizer_step;
  m["val_history"] = ck.val_history;
  auto index = [&](const char* group, const std::map<std::string, Tensor>& tensors) {
    nlohmann::json list = nlohmann::json::array();
    for (const auto& [name, t] : tensors) {
      const auto file = detail::tensor_file(group, name);
      io::save_tensor(dir / file, t);
      list.push_back({{"name", name}, {"file", file}});
    }
    return list;
  };
  m["state"] = index("state", ck.state);
  m["optimizer"] = index("opt", ck.optimizer);
  io::write_text(dir / "manifest.json", m.dump(2) + "\n");
}

inline Checkpoint load_checkpoint(const std::filesystem::path& dir) {
  if (!std::filesystem::exists(dir / "manifest.json")) {
    throw FormatError("no checkpoint manifest in " + dir.string());
  }
  try {
    const auto m = nlohmann::json::parse(io::read_text(dir / "manifest.json"));
    if (m.value("format", std::string()) != "aapool-checkpoint-1") throw FormatError("unknown checkpoint format");
    Checkpoint ck;
    ck.config = config_from_json(m.at("model"));
    ck.epoch = m.at("epoch").get<std::size_t>();
    ck.lr = m.at("lr").get<double>();
    ck.optimizer_step = m.at("optimizer_step").get<std::uint64_t>();
    ck.val_history = m.at("val_history").get<std::vector<double>>();
    for (const auto& e : m.at("state")) {
      ck.state.emplace(e.at("name").get<std::string>(), io::load_tensor(dir / e.at("file").get<std::string>()));
    }
    for (const auto& e : m.at("optimizer")) {
      ck.optimizer.emplace(e.at("name").get<std::string>(), io::load_tensor(dir / e.at("file").get<std::string>()));
    }
    return ck;
  } catch (const nlohmann::json::exception& e) {
    throw FormatError("checkpoint manifest: " + std::string(e.what()));
  }
}

}  // namespace aapool::model
