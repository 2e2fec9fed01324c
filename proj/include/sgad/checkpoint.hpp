#pragma once

#include <string>
#include <vector>

#include "sgad/config.hpp"
#include "sgad/model.hpp"

namespace sgad {

// Raw tensor file: u32 ndim, u32 per dim, then float32 data, little-endian.
void write_tensor_file(const std::string& path, const Tensor& t);
Tensor read_tensor_file(const std::string& path);

// Optimizer/logging state saved alongside parameters so a resumed run
// replays the original bit-for-bit (all RNG streams are derived per epoch).
struct TrainStateBlob {
  int epoch = 0;  // next epoch to run
  int64_t iteration = 0;
  std::vector<double> grad_l1_sums;  // per block
  int64_t grad_l1_count = 0;
};

struct Checkpoint {
  ExperimentConfig config;
  std::vector<int> removed_blocks;  // indices in the unpruned stack
  bool has_sgnet = true;
  SgadModel model;
  bool has_train_state = false;
  TrainStateBlob train_state;
  std::vector<Tensor> momentum;  // aligned with collect_params order; may be empty
};

// Writes dir/manifest.json plus params/<name>.bin (and momentum/<name>.bin
// when given). The manifest embeds the full config and the init scheme.
void save_checkpoint(const std::string& dir, SgadModel& model, const ExperimentConfig& cfg,
                     const std::vector<int>& removed_blocks,
                     const TrainStateBlob* train_state = nullptr,
                     const std::vector<Tensor>* momentum = nullptr);

Checkpoint load_checkpoint(const std::string& dir);

}  // namespace sgad
