#include "sgad/loss.hpp"

#include <cmath>
#include <string>

namespace sgad {

namespace {

void check_labels(const std::vector<int>& labels, int64_t n, int64_t m) {
  if (int64_t(labels.size()) != n) {
    throw StructuralError("classification_loss: " + std::to_string(labels.size()) +
                          " labels for " + std::to_string(n) + " rows");
  }
  for (size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] < 0 || labels[i] >= m) {
      throw DomainError("label " + std::to_string(labels[i]) + " at row " + std::to_string(i) +
                        " outside [0, " + std::to_string(m) + ")");
    }
  }
}

// Drop-ratio targets live in [0, 1]; the |target - drop| bound depends on it.
void check_targets(const std::vector<double>& rat_s) {
  for (size_t i = 0; i < rat_s.size(); ++i) {
    if (!(rat_s[i] >= 0.0 && rat_s[i] <= 1.0)) {
      throw DomainError("drop target " + std::to_string(rat_s[i]) + " at sample " +
                        std::to_string(i) + " outside [0, 1]");
    }
  }
}

}  // namespace

double classification_loss(const Tensor& logits, const std::vector<int>& labels) {
  const int64_t n = logits.dim(0), m = logits.dim(1);
  check_labels(labels, n, m);
  double total = 0;
  for (int64_t i = 0; i < n; ++i) {
    const float* row = logits.ptr() + i * m;
    float mx = row[0];
    for (int64_t j = 1; j < m; ++j) mx = std::max(mx, row[j]);
    double sum = 0;
    for (int64_t j = 0; j < m; ++j) sum += std::exp(double(row[j]) - mx);
    total += double(mx) + std::log(sum) - double(row[labels[size_t(i)]]);
  }
  return total / double(n);
}

double classification_loss_grad(const Tensor& logits, const std::vector<int>& labels,
                                Tensor& dlogits) {
  const int64_t n = logits.dim(0), m = logits.dim(1);
  check_labels(labels, n, m);
  dlogits = Tensor(logits.shape);
  double total = 0;
  for (int64_t i = 0; i < n; ++i) {
    const float* row = logits.ptr() + i * m;
    float* drow = dlogits.ptr() + i * m;
    float mx = row[0];
    for (int64_t j = 1; j < m; ++j) mx = std::max(mx, row[j]);
    double sum = 0;
    for (int64_t j = 0; j < m; ++j) sum += std::exp(double(row[j]) - mx);
    total += double(mx) + std::log(sum) - double(row[labels[size_t(i)]]);
    for (int64_t j = 0; j < m; ++j) {
      drow[j] = float(std::exp(double(row[j]) - mx) / sum / double(n));
    }
    drow[labels[size_t(i)]] -= 1.f / float(n);
  }
  return total / double(n);
}

double drop_ratio_regularizer(const std::vector<double>& rat_s, const MaskBatch& mask) {
  const std::vector<double> drop = mask.measured_drop();
  if (rat_s.size() != drop.size()) {
    throw StructuralError("drop regularizer: " + std::to_string(rat_s.size()) +
                          " targets for " + std::to_string(drop.size()) + " samples");
  }
  check_targets(rat_s);
  double total = 0;
  for (size_t i = 0; i < drop.size(); ++i) total += std::fabs(rat_s[i] - drop[i]);
  return total / double(drop.size());
}

double drop_ratio_regularizer_grad(const std::vector<double>& rat_s, const MaskBatch& mask,
                                   Tensor& dbits) {
  const std::vector<double> drop = mask.measured_drop();
  if (rat_s.size() != drop.size()) {
    throw StructuralError("drop regularizer: " + std::to_string(rat_s.size()) +
                          " targets for " + std::to_string(drop.size()) + " samples");
  }
  check_targets(rat_s);
  const int n = mask.n, l = mask.l;
  dbits = Tensor({n, l});
  double total = 0;
  for (int i = 0; i < n; ++i) {
    const double e = rat_s[size_t(i)] - drop[size_t(i)];
    total += std::fabs(e);
    // d|e|/dm_j = sign(e)/L: raising a bit lowers the measured drop ratio,
    // which raises e. Exact match takes the 0 subgradient.
    const float g = e > 0 ? 1.f : (e < 0 ? -1.f : 0.f);
    float* row = dbits.ptr() + int64_t(i) * l;
    for (int j = 0; j < l; ++j) row[j] = g / float(n * l);
  }
  return total / double(n);
}

double total_loss(double r_prime, double r_m, double r_g, const LossConfig& cfg) {
  if (!std::isfinite(r_prime)) throw NumericError("non-finite classification loss");
  if (!std::isfinite(r_m)) throw NumericError("non-finite drop-ratio regularizer");
  if (!std::isfinite(r_g)) throw NumericError("non-finite guideline loss");
  return cfg.alpha * r_prime + cfg.alpha_m * r_m + cfg.alpha_g * r_g;
}

}  // namespace sgad
