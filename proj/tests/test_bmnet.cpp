#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cstring>

#include "oracles.hpp"
#include "sgad/analysis.hpp"
#include "sgad/bmnet.hpp"

using namespace sgad;

TEST_CASE("zeroed head gives zero logits; repeated calls are identical") {
  Rng rng(21);
  BmNet net(BmnetConfig{}, 16, 9);
  net.init_params(rng);
  net.fc().zero_weights();
  Tensor z1({2, 16, 16, 16});
  Tensor logits = net.forward(z1);
  REQUIRE(logits.shape == std::vector<int64_t>({2, 9}));
  for (int64_t i = 0; i < logits.numel(); ++i) CHECK(logits[i] == 0.f);

  Rng rng2(22);
  net.init_params(rng2);
  oracle::fill_uniform(z1, rng2, -1, 1);
  Tensor a = net.forward(z1);
  Tensor b = net.forward(z1);
  CHECK(std::memcmp(a.ptr(), b.ptr(), size_t(a.numel()) * sizeof(float)) == 0);
}

TEST_CASE("mask network stays inside its compute budget") {
  // Depth-32 backbone: the mask head must cost at most 0.1% of the stack.
  BackboneConfig bb = BackboneConfig::from_depth(32);
  MacTable t = count_macs(bb, BmnetConfig{});
  CHECK(t.bmnet == 18552);  // pool to 8x8, strided 3x3 conv to 4x4, fc 8->15
  CHECK(double(t.bmnet) / double(t.baseline()) <= 0.001);
}

TEST_CASE("noise schedule ramps linearly and saturates") {
  NoiseSchedule s{0.0, 3.0, 20};
  CHECK(s.sigma(0) == doctest::Approx(0.0));
  CHECK(s.sigma(10) == doctest::Approx(1.5));
  CHECK(s.sigma(20) == doctest::Approx(3.0));
  CHECK(s.sigma(35) == doctest::Approx(3.0));
  for (int e = 0; e < 40; ++e) CHECK(s.sigma(e) <= s.sigma(e + 1));
}

TEST_CASE("midpoint noise has the scheduled standard deviation") {
  NoiseSchedule s{0.0, 3.0, 20};
  const double sigma = s.sigma(10);
  Rng rng(77);
  const int n = 1000000;
  double sum = 0, sq = 0;
  for (int i = 0; i < n; ++i) {
    const double v = rng.normal() * sigma;
    sum += v;
    sq += v * v;
  }
  const double mean = sum / n;
  const double sd = std::sqrt(sq / n - mean * mean);
  CHECK(std::fabs(sd - 1.5) / 1.5 < 0.01);
}

TEST_CASE("binarize thresholds at one half with ties kept") {
  Tensor s({1, 3});
  s[0] = 0.7f;
  s[1] = 0.3f;
  s[2] = 0.5f;
  Tensor bits;
  binarize(s, bits);
  CHECK(bits[0] == 1.f);
  CHECK(bits[1] == 0.f);
  CHECK(bits[2] == 1.f);
}

TEST_CASE("straight-through gradient equals the sigmoid derivative") {
  CHECK(ste_sigmoid_grad(0.5f) == doctest::Approx(0.25).epsilon(1e-9));

  // Compare against finite differences of sigmoid(u) itself.
  auto sigmoid = [](double u) { return 1.0 / (1.0 + std::exp(-u)); };
  const double h = 1e-5;
  for (double u : {-3.0, -1.0, 0.0, 0.5, 2.0}) {
    const double fd = (sigmoid(u + h) - sigmoid(u - h)) / (2 * h);
    const double got = ste_sigmoid_grad(float(sigmoid(u)));
    CHECK(std::fabs(got - fd) <= 1e-4);
  }
}

TEST_CASE("mask pipeline: eval determinism, forced columns, recorded tensors") {
  Rng rng(23);
  BmNet net(BmnetConfig{}, 8, 4);
  net.init_params(rng);
  Tensor z1({3, 8, 16, 16});
  oracle::fill_uniform(z1, rng, -1, 1);
  const std::vector<uint8_t> forced = {0, 1, 0, 1};  // column 1 forced, last forced
  NoiseSchedule sched{0.0, 3.0, 10};

  Rng noise_a(1), noise_b(1);
  MaskBatch a = mask_batch(net, z1, sched, 5, RunMode::kEval, noise_a, forced);
  MaskBatch b = mask_batch(net, z1, sched, 5, RunMode::kEval, noise_b, forced);
  CHECK(std::memcmp(a.bits.ptr(), b.bits.ptr(), size_t(a.bits.numel()) * sizeof(float)) == 0);
  for (int64_t i = 0; i < a.noise.numel(); ++i) CHECK(a.noise[i] == 0.f);  // eval: no noise
  for (int64_t i = 0; i < a.bits.numel(); ++i) {
    if (forced[size_t(i % 4)]) {
      CHECK(a.bits[i] == 1.f);
    } else {
      CHECK(a.bits[i] == (a.sigmoid_out[i] >= 0.5f ? 1.f : 0.f));
    }
  }

  // Forced columns stay 1 even when the head screams "drop".
  net.fc().zero_weights();
  net.fc().bias.fill(-50.f);
  Rng noise_c(1);
  MaskBatch c = mask_batch(net, z1, sched, 5, RunMode::kTrain, noise_c, forced);
  for (int i = 0; i < 3; ++i) {
    CHECK(c.bits.at2(i, 1) == 1.f);
    CHECK(c.bits.at2(i, 3) == 1.f);  // last block fixed
    CHECK(c.bits.at2(i, 0) == 0.f);
    CHECK(c.bits.at2(i, 2) == 0.f);
  }
}

TEST_CASE("train-mode noise follows the derived stream") {
  Rng rng(24);
  BmNet net(BmnetConfig{}, 8, 3);
  net.init_params(rng);
  Tensor z1({2, 8, 8, 8});
  oracle::fill_uniform(z1, rng, -1, 1);
  NoiseSchedule sched{0.0, 3.0, 10};
  const std::vector<uint8_t> forced = {0, 0, 1};

  Rng na(9), nb(9);
  MaskBatch a = mask_batch(net, z1, sched, 20, RunMode::kTrain, na, forced);
  MaskBatch b = mask_batch(net, z1, sched, 20, RunMode::kTrain, nb, forced);
  CHECK(std::memcmp(a.noise.ptr(), b.noise.ptr(), size_t(a.noise.numel()) * sizeof(float)) == 0);

  // Past the ramp the noise is sigma_end times a unit normal.
  Rng nc(9);
  double expect0 = nc.normal() * 3.0;
  CHECK(a.noise[0] == doctest::Approx(expect0).epsilon(1e-6));
}

TEST_CASE("ste backward routes through the net and skips forced positions") {
  Rng rng(25);
  BmNet net(BmnetConfig{}, 8, 3);
  net.init_params(rng);
  Tensor z1({2, 8, 8, 8});
  oracle::fill_uniform(z1, rng, -1, 1);
  const std::vector<uint8_t> forced = {0, 1, 1};
  NoiseSchedule sched{0.0, 0.0, 1};
  Rng noise(1);
  MaskBatch mb = mask_batch(net, z1, sched, 0, RunMode::kTrain, noise, forced);

  Tensor dbits({2, 3});
  dbits.fill(1.f);
  Tensor dz1 = mask_backward(net, mb, dbits);
  CHECK(dz1.shape == z1.shape);

  // fc rows of forced blocks receive exactly zero gradient.
  std::vector<ParamRef> params;
  net.collect_params(params);
  Tensor* fc_w = nullptr;
  for (auto& p : params) {
    if (p.name == "bmnet.fc.weight") fc_w = p.grad;
  }
  REQUIRE(fc_w != nullptr);
  const int in_dim = int(fc_w->dim(1));
  bool row0_nonzero = false;
  for (int c = 0; c < in_dim; ++c) {
    row0_nonzero = row0_nonzero || fc_w->at2(0, c) != 0.f;
    CHECK(fc_w->at2(1, c) == 0.f);
    CHECK(fc_w->at2(2, c) == 0.f);
  }
  CHECK(row0_nonzero);

  // The delivered pre-sigmoid gradient is dbits * s(1-s): verify through the
  // fc bias gradient, which accumulates those values per block directly.
  Tensor* fc_b = nullptr;
  for (auto& p : params) {
    if (p.name == "bmnet.fc.bias") fc_b = p.grad;
  }
  REQUIRE(fc_b != nullptr);
  double want = 0;
  for (int i = 0; i < 2; ++i) {
    const float s = mb.sigmoid_out.at2(i, 0);
    want += double(s) * (1.0 - double(s));
  }
  CHECK(oracle::rel_err(double((*fc_b)[0]), want) < 1e-5);
}

TEST_CASE("mask batch statistics") {
  MaskBatch mb;
  mb.n = 2;
  mb.l = 4;
  mb.bits = Tensor({2, 4});
  mb.sigmoid_out = Tensor({2, 4});
  const float s[8] = {0.01f, 0.5f, 0.96f, 0.94f, 0.02f, 0.99f, 0.03f, 0.97f};
  const float b[8] = {0, 1, 1, 1, 0, 1, 0, 1};
  for (int i = 0; i < 8; ++i) {
    mb.sigmoid_out[i] = s[i];
    mb.bits[i] = b[i];
  }
  CHECK(mb.unsaturated_fraction() == doctest::Approx(0.25));  // 0.5 and 0.94
  auto drops = mb.measured_drop();
  CHECK(drops[0] == doctest::Approx(0.25));
  CHECK(drops[1] == doctest::Approx(0.5));
}

TEST_CASE("logit row removal keeps surviving rows verbatim") {
  Rng rng(26);
  BmNet net(BmnetConfig{}, 8, 5);
  net.init_params(rng);
  Tensor z1({1, 8, 8, 8});
  oracle::fill_uniform(z1, rng, -1, 1);
  Tensor before = net.forward(z1);
  net.remove_logit_rows({1, 3});
  CHECK(net.num_blocks() == 3);
  Tensor after = net.forward(z1);
  CHECK(after.at2(0, 0) == before.at2(0, 0));
  CHECK(after.at2(0, 1) == before.at2(0, 2));
  CHECK(after.at2(0, 2) == before.at2(0, 4));
}
