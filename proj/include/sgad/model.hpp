#pragma once

#include <vector>

#include "sgad/backbone.hpp"
#include "sgad/bmnet.hpp"
#include "sgad/sgnet.hpp"

namespace sgad {

// The full system: backbone + mask network, plus the guideline net while
// training. Exported inference models carry has_sgnet = false.
class SgadModel {
 public:
  SgadModel() = default;
  SgadModel(const BackboneConfig& bb, const BmnetConfig& bm, const SgnetConfig& sg,
            bool with_sgnet = true);

  void init_params(uint64_t seed);

  struct ForwardResult {
    Tensor z1;
    MaskBatch mask;
    BackboneOutput out;
  };

  // stem -> BMNet mask -> masked blocks -> head.
  ForwardResult forward(const Tensor& input, const NoiseSchedule& schedule, int epoch,
                        RunMode mode, Rng& rng);
  // Unmasked baseline path: every bit 1, BMNet untouched.
  ForwardResult forward_all_on(const Tensor& input);

  void collect_params(std::vector<ParamRef>& out);
  void zero_grads();

  // Dead-block removal: shrinks the backbone and re-indexes the BMNet head.
  void remove_blocks(const std::vector<int>& indices);

  Backbone backbone;
  BmNet bmnet;
  SgNet sgnet;
  bool has_sgnet = true;
  std::vector<uint8_t> forced;  // per block: mask bit pinned to 1
};

// Forced positions: shape-changing blocks plus the always-kept last block.
std::vector<uint8_t> forced_bits(const BackboneConfig& cfg);

}  // namespace sgad
