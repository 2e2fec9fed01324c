#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cstring>

#include "oracles.hpp"
#include "sgad/loss.hpp"
#include "sgad/sgnet.hpp"

using namespace sgad;

namespace {

MaskBatch mask_of(const std::vector<std::vector<float>>& rows) {
  MaskBatch mb;
  mb.n = int(rows.size());
  mb.l = int(rows[0].size());
  mb.bits = Tensor({mb.n, mb.l});
  mb.pre_sigmoid = Tensor({mb.n, mb.l});
  mb.noise = Tensor({mb.n, mb.l});
  mb.sigmoid_out = Tensor({mb.n, mb.l});
  for (int i = 0; i < mb.n; ++i)
    for (int j = 0; j < mb.l; ++j) mb.bits.at2(i, j) = rows[size_t(i)][size_t(j)];
  return mb;
}

}  // namespace

TEST_CASE("cross entropy of uniform logits is ln(num_classes)") {
  Tensor logits({4, 10});
  std::vector<int> labels = {0, 3, 7, 9};
  CHECK(std::fabs(classification_loss(logits, labels) - 2.302585092994046) < 1e-9);
}

TEST_CASE("cross entropy vanishes at a huge correct margin") {
  Tensor logits({2, 5});
  logits.at2(0, 2) = 100.f;
  logits.at2(1, 4) = 100.f;
  CHECK(classification_loss(logits, {2, 4}) < 1e-12);
}

TEST_CASE("cross entropy matches a long-double oracle on random logits") {
  Rng rng(41);
  Tensor logits({32, 10});
  oracle::fill_uniform(logits, rng, -9, 9);
  std::vector<int> labels(32);
  for (auto& y : labels) y = int(rng.next_below(10));
  const double want = oracle::lse_cross_entropy(logits, labels);
  CHECK(std::fabs(classification_loss(logits, labels) - want) < 1e-6);
}

TEST_CASE("cross entropy gradient is (softmax - onehot)/N") {
  Rng rng(42);
  Tensor logits({8, 10});
  oracle::fill_uniform(logits, rng, -4, 4);
  std::vector<int> labels(8);
  for (auto& y : labels) y = int(rng.next_below(10));

  Tensor dlogits;
  const double via_grad = classification_loss_grad(logits, labels, dlogits);
  CHECK(via_grad == doctest::Approx(classification_loss(logits, labels)).epsilon(1e-12));
  REQUIRE(dlogits.shape == logits.shape);

  Tensor probs = softmax_rows(logits);
  for (int i = 0; i < 8; ++i)
    for (int j = 0; j < 10; ++j) {
      const double want = (probs.at2(i, j) - (labels[size_t(i)] == j ? 1.0 : 0.0)) / 8.0;
      CHECK(std::fabs(dlogits.at2(i, j) - want) < 1e-6);
    }

  // Rows sum to ~0: shifting all logits of a sample is loss-neutral.
  for (int i = 0; i < 8; ++i) {
    double s = 0;
    for (int j = 0; j < 10; ++j) s += dlogits.at2(i, j);
    CHECK(std::fabs(s) < 1e-7);
  }

  // Finite differences on a couple of entries.
  for (auto [i, j] : {std::pair{0, 0}, std::pair{3, 7}}) {
    const float keep = logits.at2(i, j);
    const float h = 1e-3f;
    logits.at2(i, j) = keep + h;
    const double up = classification_loss(logits, labels);
    logits.at2(i, j) = keep - h;
    const double dn = classification_loss(logits, labels);
    logits.at2(i, j) = keep;
    CHECK(oracle::rel_err((up - dn) / (2 * h), dlogits.at2(i, j)) < 1e-3);
  }
}

TEST_CASE("labels outside the class range are rejected") {
  Tensor logits({2, 5});
  CHECK_THROWS_AS((void)classification_loss(logits, {0, 5}), DomainError);
  CHECK_THROWS_AS((void)classification_loss(logits, {-1, 0}), DomainError);
  Tensor d;
  CHECK_THROWS_AS((void)classification_loss_grad(logits, {5, 0}, d), DomainError);
}

TEST_CASE("drop-ratio regularizer on pinned cases") {
  // Measured drop of row {1,0,1,0} is 0.5.
  MaskBatch mb = mask_of({{1, 0, 1, 0}});
  CHECK(drop_ratio_regularizer({0.5}, mb) == doctest::Approx(0.0).epsilon(1e-12));
  CHECK(drop_ratio_regularizer({0.0}, mb) == doctest::Approx(0.5).epsilon(1e-12));
  CHECK(drop_ratio_regularizer({1.0}, mb) == doctest::Approx(0.5).epsilon(1e-12));

  // All-ones mask, guideline zero: exact match again.
  MaskBatch all_on = mask_of({{1, 1, 1, 1}});
  CHECK(drop_ratio_regularizer({0.0}, all_on) == doctest::Approx(0.0).epsilon(1e-12));

  // Batch mean of two mismatches.
  MaskBatch two = mask_of({{1, 1, 1, 1}, {0, 0, 0, 0}});
  CHECK(drop_ratio_regularizer({0.25, 0.75}, two) == doctest::Approx(0.25).epsilon(1e-12));
}

TEST_CASE("drop-ratio regularizer is bounded and zero iff matched") {
  Rng rng(43);
  const int l = 9;
  for (int trial = 0; trial < 500; ++trial) {
    const int n = 1 + int(rng.next_below(5));
    std::vector<std::vector<float>> rows(n, std::vector<float>(l));
    std::vector<double> rat(n);
    bool matched = true;
    for (int i = 0; i < n; ++i) {
      int zeros = 0;
      for (int j = 0; j < l; ++j) {
        rows[size_t(i)][size_t(j)] = rng.next_below(2) ? 1.f : 0.f;
        zeros += rows[size_t(i)][size_t(j)] == 0.f;
      }
      if (rng.next_below(2)) {
        rat[size_t(i)] = double(zeros) / l;
      } else {
        rat[size_t(i)] = rng.next_double();
        matched = false;
      }
    }
    MaskBatch mb = mask_of(rows);
    const double r = drop_ratio_regularizer(rat, mb);
    REQUIRE(r >= 0.0);
    REQUIRE(r <= 1.0);
    if (matched) REQUIRE(r < 1e-12);
    if (r < 1e-15) {
      for (int i = 0; i < n; ++i) {
        int zeros = 0;
        for (int j = 0; j < l; ++j) zeros += rows[size_t(i)][size_t(j)] == 0.f;
        REQUIRE(std::fabs(rat[size_t(i)] - double(zeros) / l) < 1e-9);
      }
    }
  }
}

TEST_CASE("drop-ratio subgradient is sign(err)/(N*L) per bit") {
  // err_n = rat_s^n - drop_n; d/dm_j drop_n = -1/L, so dR/dm_j =
  // sign(err_n)/(N*L) when err_n != 0.
  MaskBatch mb = mask_of({{1, 0, 1, 0}, {1, 1, 1, 1}, {0, 0, 1, 1}});
  Tensor dbits;
  const double r = drop_ratio_regularizer_grad({0.9, 0.25, 0.5}, mb, dbits);
  // errors: 0.9-0.5=+0.4, 0.25-0=+0.25, 0.5-0.5=0
  CHECK(r == doctest::Approx((0.4 + 0.25 + 0.0) / 3).epsilon(1e-12));
  REQUIRE(dbits.shape == std::vector<int64_t>({3, 4}));
  const float g = float(1.0 / (3 * 4));  // the tensor itself holds float32
  for (int j = 0; j < 4; ++j) {
    CHECK(dbits.at2(0, j) == g);
    CHECK(dbits.at2(1, j) == g);
    CHECK(dbits.at2(2, j) == 0.f);
  }

  // Negative error flips the sign.
  Tensor dneg;
  (void)drop_ratio_regularizer_grad({0.1, 0.25, 0.5}, mb, dneg);
  for (int j = 0; j < 4; ++j) CHECK(dneg.at2(0, j) == -g);
}

TEST_CASE("drop-ratio regularizer validates sizes and ranges") {
  MaskBatch mb = mask_of({{1, 0}});
  CHECK_THROWS_AS((void)drop_ratio_regularizer({0.5, 0.5}, mb), StructuralError);
  CHECK_THROWS_AS((void)drop_ratio_regularizer({1.5}, mb), DomainError);
  CHECK_THROWS_AS((void)drop_ratio_regularizer({-0.1}, mb), DomainError);
}

TEST_CASE("total loss combines the three terms") {
  LossConfig cfg;  // 1.0, 1.0, 0.3
  CHECK(total_loss(1.0, 0.0, 0.0, cfg) == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(total_loss(2.0, 0.3, 1.0, cfg) == doctest::Approx(2.6).epsilon(1e-12));
  LossConfig custom{0.5, 2.0, 0.0};
  CHECK(total_loss(1.0, 0.25, 123.0, custom) == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("non-finite terms are rejected by name") {
  LossConfig cfg;
  const double nan = std::numeric_limits<double>::quiet_NaN();
  const double inf = std::numeric_limits<double>::infinity();
  CHECK_THROWS_AS((void)total_loss(nan, 0, 0, cfg), NumericError);
  CHECK_THROWS_AS((void)total_loss(0, inf, 0, cfg), NumericError);
  CHECK_THROWS_WITH_AS((void)total_loss(0, 0, nan, cfg),
                       doctest::Contains("guideline"), NumericError);
  CHECK_THROWS_WITH_AS((void)total_loss(nan, 0, 0, cfg),
                       doctest::Contains("classification"), NumericError);
}
