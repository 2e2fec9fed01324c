#pragma once

#include <algorithm>
#include <cmath>
#include <vector>

#include "sgad/layers.hpp"

namespace sgad {

enum class RunMode { kTrain, kEval };

// Additive pre-sigmoid noise, ramped linearly so the sigmoid saturates as
// training progresses. Eval mode always uses zero noise.
struct NoiseSchedule {
  double sigma_start = 0.0;
  double sigma_end = 3.0;
  int ramp_epochs = 1;

  double sigma(int epoch) const {
    if (ramp_epochs <= 0) return sigma_end;
    double t = std::min(1.0, double(epoch) / double(ramp_epochs));
    return sigma_start + (sigma_end - sigma_start) * t;
  }
  void validate() const;
};

// Per-sample keep/drop decisions for all L blocks, with the intermediate
// activations needed for the straight-through backward pass.
struct MaskBatch {
  int n = 0, l = 0;
  Tensor bits;         // (N, L) in {0, 1}, forced positions already applied
  Tensor pre_sigmoid;  // (N, L) logits before noise
  Tensor noise;        // (N, L), zero in eval mode
  Tensor sigmoid_out;  // (N, L) sigmoid(pre_sigmoid + noise)
  std::vector<uint8_t> forced;  // per block; 1 = bit pinned to 1

  // Fraction of sigmoid outputs away from saturation, in [0.05, 0.95].
  double unsaturated_fraction() const;
  // Per-sample measured drop ratio 1 - mean(bits).
  std::vector<double> measured_drop() const;
};

struct BmnetConfig {
  int channels = 8;
  int pool = 4;
  int kernel = 3;
  int stride = 2;
};

// The binary mask network: stem output -> one logit per block. Kept tiny
// (pool, one strided conv, global pool, FC) to honor the compute budget.
class BmNet {
 public:
  BmNet() = default;
  BmNet(const BmnetConfig& cfg, int in_channels, int num_blocks);

  void init_params(Rng& rng);
  Tensor forward(const Tensor& z1);      // (N, L) logits
  Tensor backward(const Tensor& dlogits);  // returns dz1
  void collect_params(std::vector<ParamRef>& out);

  int num_blocks() const { return fc_.out_dim(); }
  const BmnetConfig& config() const { return cfg_; }

  // Dead-block pruning: drop FC output rows for removed blocks.
  void remove_logit_rows(const std::vector<int>& indices);

  Linear& fc() { return fc_; }

 private:
  BmnetConfig cfg_;
  AvgPool2d pool_{4};
  Conv2d conv_;
  ReLU relu_;
  GlobalAvgPool gap_;
  Linear fc_;
};

// round(x) at threshold 0.5; ties round to 1 (keeping a block is the
// accuracy-safe default).
void binarize(const Tensor& sigmoid_out, Tensor& bits);

// Straight-through backward for round(sigmoid(u)): the rounding contributes
// factor 1, so du = g * sigmoid'(u) with u = pre_sigmoid + noise.
float ste_sigmoid_grad(float sigmoid_out);

// Full mask pipeline: logits -> +noise -> sigmoid -> binarize -> forced bits.
MaskBatch mask_batch(BmNet& net, const Tensor& z1, const NoiseSchedule& schedule, int epoch,
                     RunMode mode, Rng& rng, const std::vector<uint8_t>& forced);

// Backward from dLoss/dbits to dz1 through the STE; forced positions
// contribute nothing. Parameter gradients accumulate into the net.
Tensor mask_backward(BmNet& net, const MaskBatch& mask, const Tensor& dbits);

}  // namespace sgad
