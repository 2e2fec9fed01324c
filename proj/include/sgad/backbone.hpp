#pragma once

#include <optional>
#include <vector>

#include "sgad/layers.hpp"

namespace sgad {

// One residual block's static description.
struct BlockConfig {
  int index = 0;
  int in_channels = 0;
  int out_channels = 0;
  int spatial_stride = 1;
  int conv_kernel = 3;

  // The identity bypass is undefined across shape changes; such blocks are
  // never droppable and carry a 1x1 projection on the skip path.
  bool shape_changing() const { return in_channels != out_channels || spatial_stride != 1; }
};

struct BackboneConfig {
  int input_channels = 3;
  int input_h = 32;
  int input_w = 32;
  int num_classes = 10;
  std::vector<int> stage_widths = {16, 32, 64};
  int blocks_per_stage = 3;
  int kernel = 3;
  int gn_groups = 8;

  // Standard CIFAR-style family: depth = 6*blocks_per_stage + 2.
  static BackboneConfig from_depth(int depth);

  int num_blocks() const { return int(stage_widths.size()) * blocks_per_stage; }
  std::vector<BlockConfig> block_configs() const;
  // Block indices whose mask bit is structurally forced to 1.
  std::vector<int> shape_changing_blocks() const;
  void validate() const;
};

struct BackboneOutput {
  Tensor logits;              // (N, M)
  Tensor pre_logit_features;  // block-stack output, NCHW
};

// Residual block z -> z + m*f(z) with f = conv-gn-relu-conv-gn and no
// post-add nonlinearity, so a 0 bit reproduces the input bit-for-bit.
// Shape-changing blocks use a projected skip and ignore the mask (callers
// must pass bit 1; forward checks).
class ResidualBlock {
 public:
  ResidualBlock() = default;
  ResidualBlock(const BlockConfig& cfg, int gn_groups);

  void init_params(Rng& rng);
  // mask_bits: one float in {0,1} per sample.
  Tensor forward(const Tensor& x, const float* mask_bits);
  // dmask (nullable): receives dLoss/dbit per sample for droppable blocks.
  Tensor backward(const Tensor& dy, const float* mask_bits, float* dmask);
  void collect_params(std::vector<ParamRef>& out, const std::string& prefix);

  const BlockConfig& config() const { return cfg_; }

 private:
  Tensor f_forward(const Tensor& x);
  Tensor f_backward(const Tensor& df);

  BlockConfig cfg_;
  Conv2d conv1_, conv2_;
  GroupNorm gn1_, gn2_;
  ReLU relu_;
  std::optional<Conv2d> proj_;
  std::optional<GroupNorm> proj_gn_;
  Tensor f_cache_;  // f(x), kept for the mask gradient
};

// Stem conv + residual blocks + global average pool + FC head. The stem and
// the block stack are split so the mask network can consume the stem output.
class Backbone {
 public:
  Backbone() = default;
  explicit Backbone(const BackboneConfig& cfg);

  void init_params(Rng& rng);

  Tensor stem_forward(const Tensor& input);
  // mask_bits: (N, L) matrix of {0,1} floats.
  BackboneOutput blocks_head_forward(const Tensor& z1, const Tensor& mask_bits);
  // Returns dz1; accumulates parameter gradients. dmask (nullable) gets (N, L).
  Tensor blocks_head_backward(const Tensor& dlogits, const Tensor& mask_bits, Tensor* dmask);
  Tensor stem_backward(const Tensor& dz1);

  void collect_params(std::vector<ParamRef>& out);
  const BackboneConfig& config() const { return cfg_; }
  ResidualBlock& block(int i) { return blocks_[size_t(i)]; }
  int num_blocks() const { return int(blocks_.size()); }

  // Drops the given blocks from the stack (used by dead-block pruning).
  void remove_blocks(const std::vector<int>& indices);

 private:
  BackboneConfig cfg_;
  Conv2d stem_;
  GroupNorm stem_gn_;
  ReLU stem_relu_;
  std::vector<ResidualBlock> blocks_;
  GlobalAvgPool gap_;
  Linear head_;
};

}  // namespace sgad
