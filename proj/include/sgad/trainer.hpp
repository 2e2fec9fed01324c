#pragma once

#include <functional>
#include <string>
#include <vector>

#include "sgad/analysis.hpp"
#include "sgad/checkpoint.hpp"
#include "sgad/config.hpp"
#include "sgad/data.hpp"
#include "sgad/loss.hpp"
#include "sgad/model.hpp"

namespace sgad {

struct StepMetrics {
  int epoch = 0;
  int64_t step = 0;
  double lr = 0;
  double r_prime = 0, r_m = 0, r_g = 0, total = 0;
  std::vector<double> rats_b;  // per-block batch keep ratio
  double mean_expected_drop = 0, mean_measured_drop = 0;
  double unsaturated = 0;

  std::string to_json() const;
};

struct EvalResult {
  int64_t n = 0;
  double accuracy = 0;
  double sg_accuracy = -1;  // -1 when the guideline net is absent
  std::vector<int> executed_blocks;  // per sample
  std::vector<double> keep_ratios;   // per block over the dataset
  std::vector<double> sg_variance;   // per sample; empty when absent
  double unsaturated_fraction = 0;
  FlopsReport flops;

  double mean_executed_blocks() const;
  std::string to_json() const;  // summary without the per-sample vectors
};

// Deterministic eval pass: noise off, masks from BMNet (or all ones for
// baseline configs), accuracy + keep stats + FLOPs report.
EvalResult evaluate(SgadModel& model, const Dataset& data, const ExperimentConfig& cfg);

// In-place pad-4 crop + horizontal flip.
void augment_batch(Tensor& x, Rng& rng);

class Trainer {
 public:
  Trainer(SgadModel& model, const ExperimentConfig& cfg);

  // Installs optimizer/logging state from a checkpoint.
  void restore(const TrainStateBlob& blob, std::vector<Tensor> momentum);

  // One SGD step over the composite objective.
  StepMetrics train_step(const Tensor& x, const std::vector<int>& labels, int epoch,
                         Rng& noise_rng);

  // Epochs [start_epoch, cfg.train.epochs). emit receives one JSON line per
  // step and one per epoch; a checkpoint lands in ckpt_dir after every epoch
  // unless ckpt_dir is empty.
  void run(const Dataset& train_data, const Dataset& test_data,
           const std::function<void(const std::string&)>& emit, const std::string& ckpt_dir,
           int start_epoch = 0);

  TrainStateBlob state_blob(int next_epoch) const;
  const std::vector<Tensor>& momentum() const { return momentum_; }
  // Running mean of per-block gradient L1 (zeros before logging starts).
  std::vector<double> grad_l1_means() const;

 private:
  void sgd_update(double lr);
  void accumulate_grad_l1();

  SgadModel& model_;
  ExperimentConfig cfg_;
  std::vector<ParamRef> params_;
  std::vector<Tensor> momentum_;
  std::vector<int> param_block_;  // block index per param, -1 for the rest
  std::vector<int64_t> block_numel_;
  std::vector<double> grad_l1_sums_;
  int64_t grad_l1_count_ = 0;
  int64_t iteration_ = 0;
};

}  // namespace sgad
