#include "sgad/model.hpp"

namespace sgad {

std::vector<uint8_t> forced_bits(const BackboneConfig& cfg) {
  std::vector<uint8_t> forced(size_t(cfg.num_blocks()), 0);
  for (int i : cfg.shape_changing_blocks()) forced[size_t(i)] = 1;
  forced.back() = 1;
  return forced;
}

SgadModel::SgadModel(const BackboneConfig& bb, const BmnetConfig& bm, const SgnetConfig& sg,
                     bool with_sgnet)
    : backbone(bb),
      bmnet(bm, bb.stage_widths.front(), bb.num_blocks()),
      has_sgnet(with_sgnet),
      forced(forced_bits(bb)) {
  if (with_sgnet) sgnet = SgNet(sg, bb.input_channels, bb.num_classes);
}

void SgadModel::init_params(uint64_t seed) {
  Rng bb_rng = Rng::derive(seed, {1});
  backbone.init_params(bb_rng);
  Rng bm_rng = Rng::derive(seed, {2});
  bmnet.init_params(bm_rng);
  if (has_sgnet) {
    Rng sg_rng = Rng::derive(seed, {3});
    sgnet.init_params(sg_rng);
  }
}

SgadModel::ForwardResult SgadModel::forward(const Tensor& input, const NoiseSchedule& schedule,
                                            int epoch, RunMode mode, Rng& rng) {
  ForwardResult r;
  r.z1 = backbone.stem_forward(input);
  r.mask = mask_batch(bmnet, r.z1, schedule, epoch, mode, rng, forced);
  r.out = backbone.blocks_head_forward(r.z1, r.mask.bits);
  return r;
}

SgadModel::ForwardResult SgadModel::forward_all_on(const Tensor& input) {
  ForwardResult r;
  r.z1 = backbone.stem_forward(input);
  const int n = int(input.dim(0)), l = backbone.num_blocks();
  r.mask.n = n;
  r.mask.l = l;
  r.mask.bits = Tensor({n, l});
  r.mask.bits.fill(1.f);
  r.mask.forced.assign(size_t(l), 1);
  r.out = backbone.blocks_head_forward(r.z1, r.mask.bits);
  return r;
}

void SgadModel::collect_params(std::vector<ParamRef>& out) {
  backbone.collect_params(out);
  bmnet.collect_params(out);
  if (has_sgnet) sgnet.collect_params(out);
}

void SgadModel::zero_grads() {
  std::vector<ParamRef> params;
  collect_params(params);
  for (auto& p : params) p.grad->zero();
}

void SgadModel::remove_blocks(const std::vector<int>& indices) {
  backbone.remove_blocks(indices);
  bmnet.remove_logit_rows(indices);
  std::vector<uint8_t> kept;
  for (size_t i = 0; i < forced.size(); ++i) {
    bool dead = false;
    for (int d : indices) dead = dead || size_t(d) == i;
    if (!dead) kept.push_back(forced[i]);
  }
  forced = std::move(kept);
}

}  // namespace sgad
