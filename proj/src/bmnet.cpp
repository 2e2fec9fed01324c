#include "sgad/bmnet.hpp"

#include <cmath>

namespace sgad {

void NoiseSchedule::validate() const {
  if (sigma_start < 0 || sigma_end < sigma_start) {
    throw ConfigError("noise schedule: need 0 <= sigma_start <= sigma_end");
  }
  if (ramp_epochs < 1) throw ConfigError("noise schedule: ramp_epochs must be positive");
}

double MaskBatch::unsaturated_fraction() const {
  int64_t cnt = 0;
  for (float v : sigmoid_out.data) {
    if (v >= 0.05f && v <= 0.95f) ++cnt;
  }
  return sigmoid_out.numel() ? double(cnt) / double(sigmoid_out.numel()) : 0.0;
}

std::vector<double> MaskBatch::measured_drop() const {
  std::vector<double> out(size_t(n), 0.0);
  for (int i = 0; i < n; ++i) {
    double kept = 0;
    for (int j = 0; j < l; ++j) kept += bits[int64_t(i) * l + j];
    out[size_t(i)] = 1.0 - kept / double(l);
  }
  return out;
}

BmNet::BmNet(const BmnetConfig& cfg, int in_channels, int num_blocks)
    : cfg_(cfg), pool_(cfg.pool) {
  conv_ = Conv2d(in_channels, cfg.channels, cfg.kernel, cfg.stride, cfg.kernel / 2);
  fc_ = Linear(cfg.channels, num_blocks);
}

void BmNet::init_params(Rng& rng) {
  conv_.init_params(rng);
  fc_.init_params(rng);
}

Tensor BmNet::forward(const Tensor& z1) {
  return fc_.forward(gap_.forward(relu_.forward(conv_.forward(pool_.forward(z1)))));
}

Tensor BmNet::backward(const Tensor& dlogits) {
  return pool_.backward(conv_.backward(relu_.backward(gap_.backward(fc_.backward(dlogits)))));
}

void BmNet::collect_params(std::vector<ParamRef>& out) {
  conv_.collect_params(out, "bmnet.conv");
  fc_.collect_params(out, "bmnet.fc");
}

void BmNet::remove_logit_rows(const std::vector<int>& indices) {
  const int old_l = fc_.out_dim();
  const int in = fc_.in_dim();
  std::vector<int> keep;
  for (int j = 0; j < old_l; ++j) {
    bool dead = false;
    for (int d : indices) dead = dead || (d == j);
    if (!dead) keep.push_back(j);
  }
  Linear next(in, int(keep.size()));
  for (int r = 0; r < int(keep.size()); ++r) {
    for (int c = 0; c < in; ++c) next.weight.at2(r, c) = fc_.weight.at2(keep[size_t(r)], c);
    next.bias[r] = fc_.bias[keep[size_t(r)]];
  }
  fc_ = std::move(next);
}

void binarize(const Tensor& sigmoid_out, Tensor& bits) {
  bits = Tensor(sigmoid_out.shape);
  for (int64_t i = 0; i < sigmoid_out.numel(); ++i) {
    bits[i] = sigmoid_out[i] >= 0.5f ? 1.f : 0.f;
  }
}

float ste_sigmoid_grad(float sigmoid_out) { return sigmoid_out * (1.f - sigmoid_out); }

MaskBatch mask_batch(BmNet& net, const Tensor& z1, const NoiseSchedule& schedule, int epoch,
                     RunMode mode, Rng& rng, const std::vector<uint8_t>& forced) {
  MaskBatch mb;
  mb.pre_sigmoid = net.forward(z1);
  mb.n = int(mb.pre_sigmoid.dim(0));
  mb.l = int(mb.pre_sigmoid.dim(1));
  if (int(forced.size()) != mb.l) {
    throw StructuralError("forced-position vector length != L");
  }
  mb.forced = forced;

  mb.noise = Tensor(mb.pre_sigmoid.shape);
  if (mode == RunMode::kTrain) {
    const double sigma = schedule.sigma(epoch);
    for (auto& v : mb.noise.data) v = float(rng.normal() * sigma);
  }

  mb.sigmoid_out = Tensor(mb.pre_sigmoid.shape);
  for (int64_t i = 0; i < mb.pre_sigmoid.numel(); ++i) {
    mb.sigmoid_out[i] = 1.f / (1.f + std::exp(-(mb.pre_sigmoid[i] + mb.noise[i])));
  }
  binarize(mb.sigmoid_out, mb.bits);
  for (int i = 0; i < mb.n; ++i) {
    for (int j = 0; j < mb.l; ++j) {
      if (forced[size_t(j)]) mb.bits[int64_t(i) * mb.l + j] = 1.f;
    }
  }
  return mb;
}

Tensor mask_backward(BmNet& net, const MaskBatch& mask, const Tensor& dbits) {
  check_shape(dbits, {mask.n, mask.l}, "mask_backward");
  Tensor dlogits({mask.n, mask.l});
  for (int i = 0; i < mask.n; ++i) {
    for (int j = 0; j < mask.l; ++j) {
      const int64_t k = int64_t(i) * mask.l + j;
      dlogits[k] = mask.forced[size_t(j)] ? 0.f : dbits[k] * ste_sigmoid_grad(mask.sigmoid_out[k]);
    }
  }
  return net.backward(dlogits);
}

}  // namespace sgad
