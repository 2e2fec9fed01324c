#pragma once

#include <string>
#include <vector>

#include "sgad/backbone.hpp"
#include "sgad/bmnet.hpp"
#include "sgad/data.hpp"
#include "sgad/loss.hpp"
#include "sgad/sgnet.hpp"

namespace sgad {

struct TrainConfig {
  int epochs = 220;
  int batch_size = 128;
  double base_lr = 0.1;
  std::vector<int> decay_epochs = {128, 160, 192};
  double decay_factor = 0.1;
  double momentum = 0.9;
  double weight_decay = 0.0;
  bool augment = false;
  uint64_t seed = 1;
  // -1 keeps the 160-of-220 proportion when the run is shorter.
  int grad_log_start_epoch = -1;

  int resolved_grad_log_start() const;
  void validate() const;
};

// Everything one run needs; serialized verbatim into checkpoint manifests
// and metrics headers.
struct ExperimentConfig {
  BackboneConfig backbone;
  BmnetConfig bmnet;
  SgnetConfig sgnet;
  MappingMode mapping_mode = MappingMode::kConsistent;
  double s_max = 0.2;
  NoiseSchedule noise{0.0, 3.0, 0};  // ramp_epochs 0 = two-thirds of training
  TrainConfig train;
  LossConfig loss;
  DatasetSpec data;
  std::string out_dir = "runs/default";
  bool include_bmnet_flops = true;
  bool baseline = false;  // all-ones masks, no BMNet/SGNet training

  MappingConfig mapping() const;
  NoiseSchedule noise_resolved() const;
  void validate() const;

  // Flat key=value text, '#' comments. Unknown keys are rejected.
  static ExperimentConfig from_file(const std::string& path);
  void set(const std::string& key, const std::string& value);

  std::string to_json() const;
  static ExperimentConfig from_json(const std::string& json_text);
};

// base_lr * decay_factor^(decay epochs passed).
double lr_schedule(int epoch, const TrainConfig& cfg);

}  // namespace sgad
