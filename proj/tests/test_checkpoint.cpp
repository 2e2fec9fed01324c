#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <unistd.h>

#include <cstring>
#include <filesystem>
#include <fstream>

#include "oracles.hpp"
#include "sgad/checkpoint.hpp"

using namespace sgad;
namespace fs = std::filesystem;

namespace {

struct TempDir {
  fs::path path;
  TempDir() {
    path = fs::temp_directory_path() /
           ("sgad_ckpt_test_" + std::to_string(uint64_t(::getpid())));
    fs::remove_all(path);
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
};

ExperimentConfig small_config() {
  ExperimentConfig cfg;
  cfg.backbone.input_h = 8;
  cfg.backbone.input_w = 8;
  cfg.backbone.num_classes = 5;
  cfg.backbone.stage_widths = {8, 16};
  cfg.backbone.blocks_per_stage = 2;
  cfg.s_max = 0.5;
  cfg.data.source = DatasetSpec::Source::kSynthetic;
  cfg.data.n_train = 32;
  cfg.data.n_test = 16;
  cfg.data.n_classes = 5;
  cfg.data.height = 8;
  cfg.data.width = 8;
  cfg.out_dir = "unused";
  return cfg;
}

SgadModel make_model(const ExperimentConfig& cfg, uint64_t seed) {
  SgadModel m(cfg.backbone, cfg.bmnet, cfg.sgnet);
  m.init_params(seed);
  return m;
}

bool params_bitwise_equal(SgadModel& a, SgadModel& b) {
  std::vector<ParamRef> pa, pb;
  a.collect_params(pa);
  b.collect_params(pb);
  if (pa.size() != pb.size()) return false;
  for (size_t i = 0; i < pa.size(); ++i) {
    if (pa[i].name != pb[i].name) return false;
    if (pa[i].value->shape != pb[i].value->shape) return false;
    if (std::memcmp(pa[i].value->ptr(), pb[i].value->ptr(),
                    size_t(pa[i].value->numel()) * sizeof(float)) != 0)
      return false;
  }
  return true;
}

}  // namespace

TEST_CASE("tensor files round-trip bit for bit") {
  TempDir dir;
  const std::string file = (dir.path / "t.bin").string();
  Rng rng(3);
  Tensor t({3, 4, 5});
  oracle::fill_uniform(t, rng, -10, 10);
  t[0] = -0.0f;  // sign of zero must survive
  write_tensor_file(file, t);

  // Header: u32 ndim + 3 u32 dims, then 60 floats.
  CHECK(fs::file_size(file) == 4 + 3 * 4 + 60 * 4);

  Tensor back = read_tensor_file(file);
  REQUIRE(back.shape == t.shape);
  CHECK(std::memcmp(back.ptr(), t.ptr(), 60 * sizeof(float)) == 0);
  CHECK(std::signbit(back[0]));
}

TEST_CASE("malformed tensor files are rejected") {
  TempDir dir;
  const std::string file = (dir.path / "t.bin").string();
  Tensor t({4, 4});
  write_tensor_file(file, t);

  fs::resize_file(file, 4 + 2 * 4 + 7);  // mid-float cut
  CHECK_THROWS_WITH_AS((void)read_tensor_file(file), doctest::Contains("truncated"),
                       IngestionError);

  fs::resize_file(file, 6);  // inside the shape header
  CHECK_THROWS_AS((void)read_tensor_file(file), IngestionError);

  {
    std::ofstream bad(file, std::ios::binary | std::ios::trunc);
    const uint32_t ndim = 200;
    bad.write(reinterpret_cast<const char*>(&ndim), 4);
  }
  CHECK_THROWS_WITH_AS((void)read_tensor_file(file), doctest::Contains("header"),
                       IngestionError);

  CHECK_THROWS_AS((void)read_tensor_file((dir.path / "absent.bin").string()), IngestionError);
}

TEST_CASE("checkpoints restore parameters exactly") {
  TempDir dir;
  ExperimentConfig cfg = small_config();
  SgadModel model = make_model(cfg, 21);
  const std::string ckpt = (dir.path / "ckpt").string();
  save_checkpoint(ckpt, model, cfg, {});

  Checkpoint ck = load_checkpoint(ckpt);
  CHECK(ck.has_sgnet);
  CHECK(ck.removed_blocks.empty());
  CHECK_FALSE(ck.has_train_state);
  CHECK(ck.momentum.empty());
  CHECK(params_bitwise_equal(model, ck.model));
  CHECK(ck.config.to_json() == cfg.to_json());

  // Same inputs, same outputs: the reloaded model is the model.
  Dataset data = synth_dataset(cfg.data, false);
  std::vector<int64_t> idx = {0, 1, 2, 3, 4, 5, 6, 7};
  NoiseSchedule sched;
  Rng r1(0), r2(0);
  Tensor a = model.forward(data.gather(idx), sched, 0, RunMode::kEval, r1).out.logits;
  Tensor b = ck.model.forward(data.gather(idx), sched, 0, RunMode::kEval, r2).out.logits;
  CHECK(std::memcmp(a.ptr(), b.ptr(), size_t(a.numel()) * sizeof(float)) == 0);
}

TEST_CASE("manifest carries version, init scheme, and config") {
  TempDir dir;
  ExperimentConfig cfg = small_config();
  SgadModel model = make_model(cfg, 4);
  const std::string ckpt = (dir.path / "ckpt").string();
  save_checkpoint(ckpt, model, cfg, {});

  std::ifstream in(fs::path(ckpt) / "manifest.json");
  std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  CHECK(text.find("\"code_version\"") != std::string::npos);
  CHECK(text.find(kCodeVersion) != std::string::npos);
  CHECK(text.find("\"init_scheme\"") != std::string::npos);
  CHECK(text.find("\"config\"") != std::string::npos);
  CHECK(text.find("\"params\"") != std::string::npos);
}

TEST_CASE("checkpoints from another code version are refused") {
  TempDir dir;
  ExperimentConfig cfg = small_config();
  SgadModel model = make_model(cfg, 5);
  const std::string ckpt = (dir.path / "ckpt").string();
  save_checkpoint(ckpt, model, cfg, {});

  const fs::path manifest = fs::path(ckpt) / "manifest.json";
  std::ifstream in(manifest);
  std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  in.close();
  const std::string needle = kCodeVersion;
  text.replace(text.find(needle), needle.size(), "sgad-0.0.0");
  std::ofstream(manifest, std::ios::trunc) << text;

  CHECK_THROWS_WITH_AS((void)load_checkpoint(ckpt), doctest::Contains("sgad-0.0.0"),
                       IngestionError);
}

TEST_CASE("train state and momentum round-trip") {
  TempDir dir;
  ExperimentConfig cfg = small_config();
  SgadModel model = make_model(cfg, 6);

  std::vector<ParamRef> params;
  model.collect_params(params);
  std::vector<Tensor> momentum;
  Rng rng(60);
  for (const auto& p : params) {
    Tensor m(p.value->shape);
    oracle::fill_uniform(m, rng, -1, 1);
    momentum.push_back(std::move(m));
  }

  TrainStateBlob ts;
  ts.epoch = 3;
  ts.iteration = 77;
  ts.grad_l1_sums = {0.5, 0.25, 1.5, 0.0};
  ts.grad_l1_count = 9;

  const std::string ckpt = (dir.path / "ckpt").string();
  save_checkpoint(ckpt, model, cfg, {}, &ts, &momentum);

  Checkpoint ck = load_checkpoint(ckpt);
  REQUIRE(ck.has_train_state);
  CHECK(ck.train_state.epoch == 3);
  CHECK(ck.train_state.iteration == 77);
  CHECK(ck.train_state.grad_l1_sums == ts.grad_l1_sums);
  CHECK(ck.train_state.grad_l1_count == 9);
  REQUIRE(ck.momentum.size() == momentum.size());
  for (size_t i = 0; i < momentum.size(); ++i) {
    REQUIRE(ck.momentum[i].shape == momentum[i].shape);
    CHECK(std::memcmp(ck.momentum[i].ptr(), momentum[i].ptr(),
                      size_t(momentum[i].numel()) * sizeof(float)) == 0);
  }

  // Wrong buffer count is a structural bug, not a file problem.
  momentum.pop_back();
  CHECK_THROWS_AS(save_checkpoint(ckpt, model, cfg, {}, &ts, &momentum), StructuralError);
}

TEST_CASE("pruned models round-trip through their manifest") {
  TempDir dir;
  ExperimentConfig cfg = small_config();
  SgadModel model = make_model(cfg, 7);
  model.remove_blocks({1});
  REQUIRE(model.backbone.num_blocks() == 3);

  const std::string ckpt = (dir.path / "ckpt").string();
  save_checkpoint(ckpt, model, cfg, {1});

  Checkpoint ck = load_checkpoint(ckpt);
  CHECK(ck.removed_blocks == std::vector<int>({1}));
  CHECK(ck.model.backbone.num_blocks() == 3);
  CHECK(ck.model.bmnet.num_blocks() == 3);
  CHECK(params_bitwise_equal(model, ck.model));
}

TEST_CASE("corrupt parameter files surface by name") {
  TempDir dir;
  ExperimentConfig cfg = small_config();
  SgadModel model = make_model(cfg, 8);
  const std::string ckpt = (dir.path / "ckpt").string();
  save_checkpoint(ckpt, model, cfg, {});

  // Overwrite one parameter with the wrong shape.
  std::vector<ParamRef> params;
  model.collect_params(params);
  const std::string victim = params[3].name;
  write_tensor_file((fs::path(ckpt) / "params" / (victim + ".bin")).string(), Tensor({1, 1}));
  CHECK_THROWS_WITH_AS((void)load_checkpoint(ckpt), doctest::Contains(victim.c_str()), IngestionError);

  CHECK_THROWS_AS((void)load_checkpoint((dir.path / "nowhere").string()), IngestionError);
}
