#pragma once

#include <vector>

#include "sgad/layers.hpp"

namespace sgad {

// How softmax variance maps to an expected drop ratio. The printed form of
// the paper's scale constant makes rat_s(1/M) = 1 - s_max, which contradicts
// the surrounding text and the reported trend; "consistent" fixes the scale
// so rat_s(1/M) = s_max. Both are selectable.
enum class MappingMode { kConsistent, kPaperLiteral };

struct MappingConfig {
  double s_max = 0.2;
  int num_blocks = 0;   // L
  int num_classes = 0;  // M
  MappingMode mode = MappingMode::kConsistent;

  double scale() const;
  void validate() const;
};

// Per-sample guideline values for a batch.
struct GuidelineBatch {
  Tensor softmax_probs;               // (N, M)
  std::vector<double> variance;       // var^n in [0, 1/M)
  std::vector<double> expected_drop;  // rat_s^n
};

struct SgnetConfig {
  std::vector<int> widths = {16, 32, 32, 64};  // stride pattern 1,2,1,2
  int gn_groups = 8;
};

// Soft guideline network: small independent classifier over the raw input.
// Training-time only; its softmax variance scores per-sample difficulty.
class SgNet {
 public:
  SgNet() = default;
  SgNet(const SgnetConfig& cfg, int in_channels, int num_classes);

  void init_params(Rng& rng);
  Tensor forward(const Tensor& input);     // (N, M) logits
  void backward(const Tensor& dlogits);    // input gradient discarded
  void collect_params(std::vector<ParamRef>& out);

  Linear& head() { return fc_; }
  int num_classes() const { return fc_.out_dim(); }

 private:
  SgnetConfig cfg_;
  std::vector<Conv2d> convs_;
  std::vector<GroupNorm> gns_;
  std::vector<ReLU> relus_;
  GlobalAvgPool gap_;
  Linear fc_;
};

// Row-wise softmax with the usual max-shift.
Tensor softmax_rows(const Tensor& logits);

// var^n = (1/M) sum_i (p_i - 1/M)^2, the deviation form.
std::vector<double> soft_target_variance(const Tensor& probs);

// Exponential form computed from logits; algebraically identical.
std::vector<double> soft_target_variance_from_logits(const Tensor& logits);

// rat_s = 1 - L^(1 - scale*var)/L. Monotone nondecreasing, rat_s(0) = 0.
std::vector<double> map_variance_to_drop_ratio(const std::vector<double>& var,
                                               const MappingConfig& cfg);
double map_one_variance(double var, const MappingConfig& cfg);

// Forward + variance + mapping in one call (variance is detached: the
// guideline is a target, not a trainable signal).
GuidelineBatch guideline_batch(SgNet& net, const Tensor& input, const MappingConfig& cfg);

}  // namespace sgad
