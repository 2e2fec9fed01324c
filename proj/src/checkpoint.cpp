#include "sgad/checkpoint.hpp"

#include <bit>
#include <cstdint>
#include <filesystem>
#include <fstream>

#include "json.hpp"

static_assert(std::endian::native == std::endian::little,
              "tensor files are little-endian; big-endian hosts need byte swaps");

namespace sgad {

namespace fs = std::filesystem;

void write_tensor_file(const std::string& path, const Tensor& t) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IngestionError("cannot write " + path);
  const uint32_t ndim = uint32_t(t.shape.size());
  out.write(reinterpret_cast<const char*>(&ndim), sizeof(ndim));
  for (int64_t d : t.shape) {
    const uint32_t v = uint32_t(d);
    out.write(reinterpret_cast<const char*>(&v), sizeof(v));
  }
  out.write(reinterpret_cast<const char*>(t.data.data()),
            std::streamsize(t.data.size() * sizeof(float)));
  if (!out) throw IngestionError("short write to " + path);
}

Tensor read_tensor_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IngestionError("cannot open " + path);
  uint32_t ndim = 0;
  in.read(reinterpret_cast<char*>(&ndim), sizeof(ndim));
  if (!in || ndim > 8) throw IngestionError(path + ": bad tensor header");
  std::vector<int64_t> shape(ndim);
  for (auto& d : shape) {
    uint32_t v = 0;
    in.read(reinterpret_cast<char*>(&v), sizeof(v));
    if (!in) throw IngestionError(path + ": truncated shape header");
    d = v;
  }
  Tensor t(shape);
  in.read(reinterpret_cast<char*>(t.data.data()), std::streamsize(t.data.size() * sizeof(float)));
  if (in.gcount() != std::streamsize(t.data.size() * sizeof(float))) {
    throw IngestionError(path + ": truncated tensor data");
  }
  return t;
}

namespace {
constexpr const char* kInitScheme =
    "he-normal conv/fc weights; zero biases; GroupNorm gamma 1 except the "
    "residual-branch output norm, which starts at 0";
}

void save_checkpoint(const std::string& dir, SgadModel& model, const ExperimentConfig& cfg,
                     const std::vector<int>& removed_blocks, const TrainStateBlob* train_state,
                     const std::vector<Tensor>* momentum) {
  fs::create_directories(fs::path(dir) / "params");
  std::vector<ParamRef> params;
  model.collect_params(params);

  nlohmann::ordered_json j;
  j["code_version"] = kCodeVersion;
  j["init_scheme"] = kInitScheme;
  j["config"] = nlohmann::ordered_json::parse(cfg.to_json());
  j["removed_blocks"] = removed_blocks;
  j["has_sgnet"] = model.has_sgnet;
  std::vector<std::string> names;
  for (const auto& p : params) names.push_back(p.name);
  j["params"] = names;
  if (train_state) {
    j["train_state"] = {{"epoch", train_state->epoch},
                        {"iteration", train_state->iteration},
                        {"grad_l1_sums", train_state->grad_l1_sums},
                        {"grad_l1_count", train_state->grad_l1_count}};
  } else {
    j["train_state"] = nullptr;
  }

  for (const auto& p : params) {
    write_tensor_file((fs::path(dir) / "params" / (p.name + ".bin")).string(), *p.value);
  }
  if (momentum) {
    if (momentum->size() != params.size()) {
      throw StructuralError("checkpoint: momentum buffer count != parameter count");
    }
    fs::create_directories(fs::path(dir) / "momentum");
    for (size_t i = 0; i < params.size(); ++i) {
      write_tensor_file((fs::path(dir) / "momentum" / (params[i].name + ".bin")).string(),
                        (*momentum)[i]);
    }
  }

  std::ofstream out(fs::path(dir) / "manifest.json", std::ios::trunc);
  if (!out) throw IngestionError("cannot write manifest in " + dir);
  out << j.dump(2) << "\n";
}

Checkpoint load_checkpoint(const std::string& dir) {
  std::ifstream in(fs::path(dir) / "manifest.json");
  if (!in) throw IngestionError("no manifest.json in " + dir);
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(in);
  } catch (const std::exception& e) {
    throw IngestionError(dir + "/manifest.json: " + e.what());
  }
  if (j.at("code_version") != kCodeVersion) {
    throw IngestionError(dir + ": checkpoint written by " +
                         j.at("code_version").get<std::string>() + ", this build is " +
                         kCodeVersion);
  }

  Checkpoint ck;
  ck.config = ExperimentConfig::from_json(j.at("config").dump());
  ck.removed_blocks = j.at("removed_blocks").get<std::vector<int>>();
  ck.has_sgnet = j.at("has_sgnet");
  ck.model = SgadModel(ck.config.backbone, ck.config.bmnet, ck.config.sgnet, ck.has_sgnet);
  if (!ck.removed_blocks.empty()) ck.model.remove_blocks(ck.removed_blocks);

  std::vector<ParamRef> params;
  ck.model.collect_params(params);
  const auto names = j.at("params").get<std::vector<std::string>>();
  if (names.size() != params.size()) {
    throw IngestionError(dir + ": manifest lists " + std::to_string(names.size()) +
                         " params, model has " + std::to_string(params.size()));
  }
  for (size_t i = 0; i < params.size(); ++i) {
    if (names[i] != params[i].name) {
      throw IngestionError(dir + ": param order mismatch at " + names[i]);
    }
    Tensor t = read_tensor_file((fs::path(dir) / "params" / (names[i] + ".bin")).string());
    if (t.shape != params[i].value->shape) {
      throw IngestionError(dir + ": shape mismatch for " + names[i] + ": file " + t.shape_str() +
                           ", model " + params[i].value->shape_str());
    }
    *params[i].value = std::move(t);
  }

  if (!j.at("train_state").is_null()) {
    ck.has_train_state = true;
    const auto& ts = j.at("train_state");
    ck.train_state.epoch = ts.at("epoch");
    ck.train_state.iteration = ts.at("iteration");
    ck.train_state.grad_l1_sums = ts.at("grad_l1_sums").get<std::vector<double>>();
    ck.train_state.grad_l1_count = ts.at("grad_l1_count");
  }
  if (fs::exists(fs::path(dir) / "momentum")) {
    for (const auto& p : params) {
      ck.momentum.push_back(
          read_tensor_file((fs::path(dir) / "momentum" / (p.name + ".bin")).string()));
    }
  }
  return ck;
}

}  // namespace sgad
