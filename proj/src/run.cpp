#include "sgad/run.hpp"

#include <fcntl.h>
#include <unistd.h>

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>

#include "json.hpp"
#include "sgad/trainer.hpp"

namespace sgad {

namespace fs = std::filesystem;

namespace {

// One run per output directory at a time.
class DirLock {
 public:
  explicit DirLock(const std::string& dir) {
    fs::create_directories(dir);
    path_ = (fs::path(dir) / ".lock").string();
    fd_ = ::open(path_.c_str(), O_CREAT | O_EXCL | O_WRONLY, 0644);
    if (fd_ < 0) {
      throw ConfigError("output directory " + dir + " is in use (" + path_ +
                        " exists; remove it if no run is active)");
    }
    const std::string pid = std::to_string(::getpid()) + "\n";
    (void)!::write(fd_, pid.data(), pid.size());
  }
  ~DirLock() {
    if (fd_ >= 0) {
      ::close(fd_);
      ::unlink(path_.c_str());
    }
  }
  DirLock(const DirLock&) = delete;
  DirLock& operator=(const DirLock&) = delete;

 private:
  std::string path_;
  int fd_ = -1;
};

std::string config_fingerprint(const ExperimentConfig& cfg) {
  ExperimentConfig c = cfg;
  c.out_dir.clear();  // continuing a run elsewhere is still the same run
  return c.to_json();
}

std::string network_fingerprint(const ExperimentConfig& cfg) {
  nlohmann::ordered_json j = nlohmann::ordered_json::parse(cfg.to_json());
  nlohmann::ordered_json net;
  net["backbone"] = j["backbone"];
  net["bmnet"] = j["bmnet"];
  net["sgnet"] = j["sgnet"];
  return net.dump();
}

Checkpoint load_for_inspection(const ExperimentConfig& cfg, const std::string& resume_path) {
  const std::string path =
      resume_path.empty() ? (fs::path(cfg.out_dir) / "checkpoint").string() : resume_path;
  return load_checkpoint(path);
}

int cmd_train(ExperimentConfig& cfg, const std::string& resume_path) {
  cfg.validate();
  DirLock lock(cfg.out_dir);
  const Dataset train_data = load_dataset(cfg.data, true);
  const Dataset test_data = load_dataset(cfg.data, false);

  SgadModel model(cfg.backbone, cfg.bmnet, cfg.sgnet, true);
  int start_epoch = 0;
  bool continuing = false;
  TrainStateBlob blob;
  std::vector<Tensor> momentum;

  if (!resume_path.empty()) {
    Checkpoint ck = load_checkpoint(resume_path);
    if (network_fingerprint(ck.config) != network_fingerprint(cfg)) {
      throw ConfigError("resume: checkpoint network layout differs from the current config");
    }
    if (!ck.removed_blocks.empty()) {
      throw ConfigError("resume: cannot train a pruned inference model");
    }
    if (!ck.has_sgnet) throw ConfigError("resume: checkpoint has no guideline net");
    model = std::move(ck.model);
    if (ck.has_train_state && !ck.momentum.empty() &&
        config_fingerprint(ck.config) == config_fingerprint(cfg)) {
      // Same experiment: continue it bit-for-bit.
      continuing = true;
      start_epoch = ck.train_state.epoch;
      blob = ck.train_state;
      momentum = std::move(ck.momentum);
    }
    // Different experiment: warm start from the parameters alone.
  } else {
    model.init_params(cfg.train.seed);
  }

  Trainer trainer(model, cfg);
  if (continuing) trainer.restore(blob, std::move(momentum));

  const std::string metrics_path = (fs::path(cfg.out_dir) / "metrics.jsonl").string();
  std::ofstream metrics(metrics_path,
                        continuing ? (std::ios::out | std::ios::app) : std::ios::trunc);
  if (!metrics) throw IngestionError("cannot write " + metrics_path);
  if (!continuing) {
    nlohmann::ordered_json header;
    header["type"] = "header";
    header["code_version"] = kCodeVersion;
    header["config"] = nlohmann::ordered_json::parse(cfg.to_json());
    metrics << header.dump() << "\n";
  }

  const std::string ckpt_dir = (fs::path(cfg.out_dir) / "checkpoint").string();
  trainer.run(
      train_data, test_data, [&](const std::string& line) { metrics << line << "\n"; }, ckpt_dir,
      start_epoch);
  metrics.flush();

  EvalResult ev = evaluate(model, test_data, cfg);
  std::ofstream report((fs::path(cfg.out_dir) / "report.json").string(), std::ios::trunc);
  report << ev.to_json() << "\n";
  std::cout << "trained " << cfg.train.epochs << " epochs: test accuracy " << ev.accuracy
            << ", n-FLOPs " << ev.flops.n_flops << "\n";
  return 0;
}

int cmd_eval(ExperimentConfig& cfg, const std::string& resume_path) {
  Checkpoint ck = load_for_inspection(cfg, resume_path);
  ExperimentConfig run_cfg = ck.config;
  run_cfg.include_bmnet_flops = cfg.include_bmnet_flops;
  const Dataset test_data = load_dataset(run_cfg.data, false);
  EvalResult ev = evaluate(ck.model, test_data, run_cfg);
  fs::create_directories(cfg.out_dir);
  std::ofstream report((fs::path(cfg.out_dir) / "report.json").string(), std::ios::trunc);
  report << ev.to_json() << "\n";
  std::cout << "accuracy " << ev.accuracy << ", n-FLOPs " << ev.flops.n_flops << " over "
            << ev.n << " samples\n";
  return 0;
}

int cmd_analyze(ExperimentConfig& cfg, const std::string& resume_path) {
  Checkpoint ck = load_for_inspection(cfg, resume_path);
  const Dataset test_data = load_dataset(ck.config.data, false);
  EvalResult ev = evaluate(ck.model, test_data, ck.config);
  std::vector<double> grad_means(size_t(ck.model.backbone.num_blocks()), 0.0);
  if (ck.has_train_state && ck.train_state.grad_l1_count > 0) {
    for (size_t b = 0; b < grad_means.size() && b < ck.train_state.grad_l1_sums.size(); ++b) {
      grad_means[b] = ck.train_state.grad_l1_sums[b] / double(ck.train_state.grad_l1_count);
    }
  }
  fs::create_directories(cfg.out_dir);
  const std::string csv_path = (fs::path(cfg.out_dir) / "analyze.csv").string();
  std::ofstream csv(csv_path, std::ios::trunc);
  csv << "block,grad_l1_mean,keep_ratio\n";
  for (size_t b = 0; b < ev.keep_ratios.size(); ++b) {
    csv << b << "," << grad_means[b] << "," << ev.keep_ratios[b] << "\n";
  }
  std::cout << "wrote " << csv_path << " (" << ev.keep_ratios.size() << " blocks)\n";
  return 0;
}

int cmd_prune(ExperimentConfig& cfg, const std::string& resume_path) {
  Checkpoint ck = load_for_inspection(cfg, resume_path);
  const Dataset test_data = load_dataset(ck.config.data, false);
  const std::vector<int> dead =
      detect_dead_blocks(ck.model, test_data, ck.config.train.batch_size);
  prune_dead_blocks(ck.model, dead, test_data, ck.config.train.batch_size);

  // Fold the new removals into unpruned-stack coordinates.
  std::vector<int> survivors;
  for (int i = 0; i < ck.config.backbone.num_blocks(); ++i) {
    if (std::find(ck.removed_blocks.begin(), ck.removed_blocks.end(), i) ==
        ck.removed_blocks.end()) {
      survivors.push_back(i);
    }
  }
  std::vector<int> removed = ck.removed_blocks;
  for (int d : dead) removed.push_back(survivors[size_t(d)]);
  std::sort(removed.begin(), removed.end());

  const std::string out = (fs::path(cfg.out_dir) / "pruned").string();
  save_checkpoint(out, ck.model, ck.config, removed);
  std::cout << "pruned " << dead.size() << " dead block(s); wrote " << out << "\n";
  return 0;
}

int cmd_export(ExperimentConfig& cfg, const std::string& resume_path) {
  Checkpoint ck = load_for_inspection(cfg, resume_path);
  ck.model.has_sgnet = false;  // inference needs only the backbone and BMNet
  const std::string out = (fs::path(cfg.out_dir) / "export").string();
  save_checkpoint(out, ck.model, ck.config, ck.removed_blocks);
  std::cout << "wrote inference model to " << out << "\n";
  return 0;
}

int cmd_report(ExperimentConfig& cfg) {
  const std::string metrics_path = (fs::path(cfg.out_dir) / "metrics.jsonl").string();
  std::ifstream in(metrics_path);
  if (!in) throw IngestionError("no metrics stream at " + metrics_path);

  struct EpochRow {
    double lr = 0, r_prime = 0, r_m = 0, r_g = 0;
    int64_t steps = 0;
    double accuracy = -1, sg_accuracy = -1, n_flops = -1, executed = 0;
    bool closed = false;
  };
  std::map<int, EpochRow> rows;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const std::exception& e) {
      throw IngestionError(metrics_path + ":" + std::to_string(lineno) + ": " + e.what());
    }
    const std::string type = j.at("type");
    if (type == "step") {
      EpochRow& r = rows[j.at("epoch").get<int>()];
      r.lr = j.at("lr");
      r.r_prime += j.at("r_prime").get<double>();
      r.r_m += j.at("r_m").get<double>();
      r.r_g += j.at("r_g").get<double>();
      ++r.steps;
    } else if (type == "epoch") {
      EpochRow& r = rows[j.at("epoch").get<int>()];
      r.accuracy = j.at("test_accuracy");
      r.sg_accuracy = j.at("sg_accuracy");
      r.n_flops = j.at("n_flops");
      r.executed = j.at("mean_executed_blocks");
      r.closed = true;
    }
  }

  const std::string csv_path = (fs::path(cfg.out_dir) / "report.csv").string();
  std::ofstream csv(csv_path, std::ios::trunc);
  csv << "epoch,lr,r_prime,r_m,r_g,test_accuracy,sg_accuracy,n_flops,mean_executed_blocks\n";
  for (const auto& [epoch, r] : rows) {
    const double denom = double(std::max<int64_t>(1, r.steps));
    csv << epoch << "," << r.lr << "," << r.r_prime / denom << "," << r.r_m / denom << ","
        << r.r_g / denom << "," << r.accuracy << "," << r.sg_accuracy << "," << r.n_flops << ","
        << r.executed << "\n";
  }
  std::cout << "wrote " << csv_path << " (" << rows.size() << " epochs)\n";
  return 0;
}

}  // namespace

int run_command(const std::string& command, ExperimentConfig cfg, const std::string& resume_path) {
  if (command == "train") return cmd_train(cfg, resume_path);
  if (command == "eval") return cmd_eval(cfg, resume_path);
  if (command == "analyze") return cmd_analyze(cfg, resume_path);
  if (command == "prune") return cmd_prune(cfg, resume_path);
  if (command == "export") return cmd_export(cfg, resume_path);
  if (command == "report") return cmd_report(cfg);
  throw ConfigError("unknown command '" + command +
                    "' (expected train|eval|analyze|prune|export|report)");
}

}  // namespace sgad
