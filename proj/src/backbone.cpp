#include "sgad/backbone.hpp"

#include <algorithm>
#include <cstring>

namespace sgad {

BackboneConfig BackboneConfig::from_depth(int depth) {
  if (depth < 8 || (depth - 2) % 6 != 0) {
    throw ConfigError("depth must be 6n+2 with n >= 1, got " + std::to_string(depth));
  }
  BackboneConfig cfg;
  cfg.blocks_per_stage = (depth - 2) / 6;
  cfg.stage_widths = {16, 32, 64};
  return cfg;
}

std::vector<BlockConfig> BackboneConfig::block_configs() const {
  validate();
  std::vector<BlockConfig> out;
  int prev = stage_widths[0];  // stem outputs the first stage width
  int idx = 0;
  for (size_t s = 0; s < stage_widths.size(); ++s) {
    for (int b = 0; b < blocks_per_stage; ++b) {
      BlockConfig bc;
      bc.index = idx++;
      bc.in_channels = prev;
      bc.out_channels = stage_widths[s];
      bc.spatial_stride = (b == 0 && s > 0) ? 2 : 1;
      bc.conv_kernel = kernel;
      out.push_back(bc);
      prev = stage_widths[s];
    }
  }
  return out;
}

std::vector<int> BackboneConfig::shape_changing_blocks() const {
  std::vector<int> out;
  for (const auto& bc : block_configs()) {
    if (bc.shape_changing()) out.push_back(bc.index);
  }
  return out;
}

void BackboneConfig::validate() const {
  if (stage_widths.empty()) throw ConfigError("backbone: stage_widths empty");
  if (blocks_per_stage < 1) throw ConfigError("backbone: blocks_per_stage < 1");
  if (num_blocks() < 2) throw ConfigError("backbone: need at least 2 blocks");
  for (size_t s = 0; s < stage_widths.size(); ++s) {
    if (stage_widths[s] < 1) throw ConfigError("backbone: non-positive stage width");
    if (s > 0 && stage_widths[s] < stage_widths[s - 1]) {
      throw ConfigError("backbone: stage widths must be nondecreasing");
    }
  }
  // Two stride-2 transitions per extra stage; spatial dims must survive them.
  int h = input_h, w = input_w;
  for (size_t s = 1; s < stage_widths.size(); ++s) {
    h /= 2;
    w /= 2;
  }
  if (h < 1 || w < 1) throw ConfigError("backbone: input too small for stage count");
}

ResidualBlock::ResidualBlock(const BlockConfig& cfg, int gn_groups) : cfg_(cfg) {
  const int g1 = std::min(gn_groups, cfg.out_channels);
  conv1_ = Conv2d(cfg.in_channels, cfg.out_channels, cfg.conv_kernel, cfg.spatial_stride,
                  cfg.conv_kernel / 2);
  gn1_ = GroupNorm(cfg.out_channels, g1);
  conv2_ = Conv2d(cfg.out_channels, cfg.out_channels, cfg.conv_kernel, 1, cfg.conv_kernel / 2);
  gn2_ = GroupNorm(cfg.out_channels, g1);
  if (cfg.shape_changing()) {
    proj_ = Conv2d(cfg.in_channels, cfg.out_channels, 1, cfg.spatial_stride, 0);
    proj_gn_ = GroupNorm(cfg.out_channels, g1);
  }
}

void ResidualBlock::init_params(Rng& rng) {
  conv1_.init_params(rng);
  gn1_.init_params();
  conv2_.init_params(rng);
  gn2_.init_params();
  // Residual branch starts at zero so the stack is an identity map at init.
  gn2_.init_gamma(0.f);
  if (proj_) {
    proj_->init_params(rng);
    proj_gn_->init_params();
  }
}

Tensor ResidualBlock::f_forward(const Tensor& x) {
  return gn2_.forward(conv2_.forward(relu_.forward(gn1_.forward(conv1_.forward(x)))));
}

Tensor ResidualBlock::f_backward(const Tensor& df) {
  return conv1_.backward(gn1_.backward(relu_.backward(conv2_.backward(gn2_.backward(df)))));
}

Tensor ResidualBlock::forward(const Tensor& x, const float* mask_bits) {
  const int n = int(x.dim(0));
  f_cache_ = f_forward(x);

  if (cfg_.shape_changing()) {
    for (int i = 0; i < n; ++i) {
      if (mask_bits[i] != 1.f) {
        throw StructuralError("block " + std::to_string(cfg_.index) +
                              " changes shape; mask bit must be 1");
      }
    }
    Tensor skip = proj_gn_->forward(proj_->forward(x));
    Tensor out(skip.shape);
    for (int64_t j = 0; j < out.numel(); ++j) out[j] = skip[j] + f_cache_[j];
    return out;
  }

  Tensor out(x.shape);
  const int64_t per = x.numel() / n;
  for (int i = 0; i < n; ++i) {
    const float* xs = x.ptr() + i * per;
    float* os = out.ptr() + i * per;
    if (mask_bits[i] == 0.f) {
      std::memcpy(os, xs, size_t(per) * sizeof(float));
    } else {
      const float* fs = f_cache_.ptr() + i * per;
      for (int64_t j = 0; j < per; ++j) os[j] = xs[j] + fs[j];
    }
  }
  return out;
}

Tensor ResidualBlock::backward(const Tensor& dy, const float* mask_bits, float* dmask) {
  const int n = int(dy.dim(0));
  const int64_t per = dy.numel() / n;

  // df = m * dy; the mask gradient is <dy, f> per sample.
  Tensor df(dy.shape);
  for (int i = 0; i < n; ++i) {
    const float* ds = dy.ptr() + i * per;
    float* dfs = df.ptr() + i * per;
    const float m = cfg_.shape_changing() ? 1.f : mask_bits[i];
    if (m != 0.f) {
      std::memcpy(dfs, ds, size_t(per) * sizeof(float));
    }
    if (dmask && !cfg_.shape_changing()) {
      const float* fs = f_cache_.ptr() + i * per;
      double acc = 0;
      for (int64_t j = 0; j < per; ++j) acc += double(ds[j]) * fs[j];
      dmask[i] = float(acc);
    }
  }
  Tensor dx = f_backward(df);

  if (cfg_.shape_changing()) {
    Tensor dskip = proj_->backward(proj_gn_->backward(dy));
    for (int64_t j = 0; j < dx.numel(); ++j) dx[j] += dskip[j];
    return dx;
  }
  for (int64_t j = 0; j < dx.numel(); ++j) dx[j] += dy[j];
  return dx;
}

void ResidualBlock::collect_params(std::vector<ParamRef>& out, const std::string& prefix) {
  conv1_.collect_params(out, prefix + ".conv1");
  gn1_.collect_params(out, prefix + ".gn1");
  conv2_.collect_params(out, prefix + ".conv2");
  gn2_.collect_params(out, prefix + ".gn2");
  if (proj_) {
    proj_->collect_params(out, prefix + ".proj");
    proj_gn_->collect_params(out, prefix + ".proj_gn");
  }
}

Backbone::Backbone(const BackboneConfig& cfg) : cfg_(cfg) {
  cfg_.validate();
  stem_ = Conv2d(cfg.input_channels, cfg.stage_widths[0], cfg.kernel, 1, cfg.kernel / 2);
  stem_gn_ = GroupNorm(cfg.stage_widths[0], std::min(cfg.gn_groups, cfg.stage_widths[0]));
  for (const auto& bc : cfg.block_configs()) {
    blocks_.emplace_back(bc, cfg.gn_groups);
  }
  head_ = Linear(cfg.stage_widths.back(), cfg.num_classes);
}

void Backbone::init_params(Rng& rng) {
  stem_.init_params(rng);
  stem_gn_.init_params();
  for (auto& b : blocks_) b.init_params(rng);
  head_.init_params(rng);
}

Tensor Backbone::stem_forward(const Tensor& input) {
  return stem_relu_.forward(stem_gn_.forward(stem_.forward(input)));
}

namespace {
// Column i of the (N, L) mask matrix as a contiguous per-sample vector.
std::vector<float> mask_column(const Tensor& mask_bits, int i) {
  const int n = int(mask_bits.dim(0));
  const int l = int(mask_bits.dim(1));
  std::vector<float> col(size_t(n), 0.f);
  for (int s = 0; s < n; ++s) col[size_t(s)] = mask_bits[int64_t(s) * l + i];
  return col;
}
}  // namespace

BackboneOutput Backbone::blocks_head_forward(const Tensor& z1, const Tensor& mask_bits) {
  const int n = int(z1.dim(0));
  const int l = num_blocks();
  if (mask_bits.ndim() != 2 || mask_bits.dim(0) != n || mask_bits.dim(1) != l) {
    throw StructuralError("mask must be (N, L) = (" + std::to_string(n) + ", " +
                          std::to_string(l) + "), got " + mask_bits.shape_str());
  }
  Tensor z = z1;
  for (int i = 0; i < l; ++i) {
    z = blocks_[size_t(i)].forward(z, mask_column(mask_bits, i).data());
  }
  BackboneOutput out;
  out.pre_logit_features = z;
  out.logits = head_.forward(gap_.forward(z));
  return out;
}

Tensor Backbone::blocks_head_backward(const Tensor& dlogits, const Tensor& mask_bits,
                                      Tensor* dmask) {
  const int n = int(mask_bits.dim(0));
  const int l = num_blocks();
  Tensor dz = gap_.backward(head_.backward(dlogits));
  std::vector<float> dm_col(size_t(n), 0.f);
  for (int i = l - 1; i >= 0; --i) {
    std::fill(dm_col.begin(), dm_col.end(), 0.f);
    auto col = mask_column(mask_bits, i);
    dz = blocks_[size_t(i)].backward(dz, col.data(), dmask ? dm_col.data() : nullptr);
    if (dmask) {
      for (int s = 0; s < n; ++s) (*dmask)[int64_t(s) * l + i] = dm_col[size_t(s)];
    }
  }
  return dz;
}

Tensor Backbone::stem_backward(const Tensor& dz1) {
  return stem_.backward(stem_gn_.backward(stem_relu_.backward(dz1)));
}

void Backbone::collect_params(std::vector<ParamRef>& out) {
  stem_.collect_params(out, "backbone.stem");
  stem_gn_.collect_params(out, "backbone.stem_gn");
  for (size_t i = 0; i < blocks_.size(); ++i) {
    blocks_[i].collect_params(out, "backbone.block" + std::to_string(i));
  }
  head_.collect_params(out, "backbone.head");
}

void Backbone::remove_blocks(const std::vector<int>& indices) {
  std::vector<ResidualBlock> kept;
  for (int i = 0; i < int(blocks_.size()); ++i) {
    if (std::find(indices.begin(), indices.end(), i) == indices.end()) {
      kept.push_back(std::move(blocks_[size_t(i)]));
    }
  }
  blocks_ = std::move(kept);
}

}  // namespace sgad
