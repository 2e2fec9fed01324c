#pragma once

#include <vector>

#include "sgad/bmnet.hpp"
#include "sgad/tensor.hpp"

namespace sgad {

// Weights of the three objective terms. Defaults follow the training recipe:
// classification and mask regularizer at full weight, guideline at 0.3.
struct LossConfig {
  double alpha = 1.0;    // backbone classification R'
  double alpha_m = 1.0;  // drop-ratio regularizer R^m
  double alpha_g = 0.3;  // guideline classification R^g
};

// Mean cross-entropy over the batch, log-sum-exp stabilized.
double classification_loss(const Tensor& logits, const std::vector<int>& labels);

// Same, also filling dlogits with the gradient of the batch mean.
double classification_loss_grad(const Tensor& logits, const std::vector<int>& labels,
                                Tensor& dlogits);

// R^m = (1/N) sum_n | rat_s^n - (1 - (1/L) sum_j m^n_j) |. The measured drop
// ratio averages over all L positions, forced bits included.
double drop_ratio_regularizer(const std::vector<double>& rat_s, const MaskBatch& mask);

// Same, filling dbits (N, L) with the subgradient w.r.t. the mask bits
// (sign convention: 0 at an exact match).
double drop_ratio_regularizer_grad(const std::vector<double>& rat_s, const MaskBatch& mask,
                                   Tensor& dbits);

// alpha*R' + alpha_m*R^m + alpha_g*R^g; rejects non-finite terms.
double total_loss(double r_prime, double r_m, double r_g, const LossConfig& cfg);

}  // namespace sgad
