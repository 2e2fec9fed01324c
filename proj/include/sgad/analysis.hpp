#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "sgad/data.hpp"
#include "sgad/model.hpp"

namespace sgad {

// Multiply-accumulate counts. Convention: conv and FC layers only;
// normalization, pooling, activations, and the residual add are free.
int64_t conv_macs(int out_h, int out_w, int out_c, int in_c, int kernel);

// One block's MACs given its input spatial dims (projection included).
int64_t count_block_macs(const BlockConfig& bc, int in_h, int in_w);

struct MacTable {
  int64_t stem = 0;
  int64_t head = 0;
  int64_t bmnet = 0;
  std::vector<int64_t> blocks;  // length L

  int64_t baseline() const;  // unmasked backbone: stem + blocks + head
};

MacTable count_macs(const BackboneConfig& bb, const BmnetConfig& bm);

// Fraction of samples keeping block i in a (N, L) bit matrix.
double batch_keep_ratio(const Tensor& bits, int block);

// Eval-mode mask statistics over a whole dataset.
struct MaskSweep {
  int64_t n = 0;
  std::vector<int64_t> keep_counts;   // per block
  std::vector<int> executed_blocks;   // per sample: number of 1-bits
  double unsaturated_fraction = 0;    // sigmoid outputs in [0.05, 0.95]

  std::vector<double> keep_ratios() const;
};

MaskSweep sweep_masks(SgadModel& model, const Dataset& data, int batch_size);

struct FlopsReport {
  std::vector<int64_t> per_block_macs;
  std::vector<double> per_block_keep_ratio;
  std::vector<uint8_t> forced;
  int64_t stem_macs = 0, head_macs = 0, bmnet_macs = 0;
  bool include_bmnet = true;
  std::vector<int> dead_blocks;
  double n_flops = 0;

  std::string to_json() const;
};

// n_flops = (static + sum over droppable keep_i * macs_i [+ bmnet]) / baseline,
// static = stem + head + forced blocks, baseline = the unmasked backbone.
FlopsReport make_flops_report(const MacTable& macs, const std::vector<double>& keep_ratios,
                              const std::vector<uint8_t>& forced, bool include_bmnet);

// Blocks dropped by every sample of the dataset (keep count exactly 0).
std::vector<int> detect_dead_blocks(const MaskSweep& sweep);
std::vector<int> detect_dead_blocks(SgadModel& model, const Dataset& data, int batch_size);

// Removes verified-dead blocks in place. Refuses (with a witness sample
// index) if any listed block is kept by some reference sample; asserts the
// pruned model reproduces logits and masks bit-for-bit on the reference set.
void prune_dead_blocks(SgadModel& model, const std::vector<int>& dead, const Dataset& reference,
                       int batch_size);

// Spearman rank correlation with average ranks on ties.
double spearman(const std::vector<double>& a, const std::vector<double>& b);

}  // namespace sgad
