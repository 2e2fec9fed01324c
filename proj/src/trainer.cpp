#include "sgad/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "json.hpp"

namespace sgad {

std::string StepMetrics::to_json() const {
  nlohmann::ordered_json j;
  j["type"] = "step";
  j["epoch"] = epoch;
  j["step"] = step;
  j["lr"] = lr;
  j["r_prime"] = r_prime;
  j["r_m"] = r_m;
  j["r_g"] = r_g;
  j["total"] = total;
  j["rats_b"] = rats_b;
  j["mean_expected_drop"] = mean_expected_drop;
  j["mean_measured_drop"] = mean_measured_drop;
  j["unsaturated"] = unsaturated;
  return j.dump();
}

double EvalResult::mean_executed_blocks() const {
  if (executed_blocks.empty()) return 0;
  return double(std::accumulate(executed_blocks.begin(), executed_blocks.end(), int64_t(0))) /
         double(executed_blocks.size());
}

std::string EvalResult::to_json() const {
  nlohmann::ordered_json j;
  j["n"] = n;
  j["accuracy"] = accuracy;
  j["sg_accuracy"] = sg_accuracy;
  j["mean_executed_blocks"] = mean_executed_blocks();
  j["unsaturated_fraction"] = unsaturated_fraction;
  j["keep_ratios"] = keep_ratios;
  j["flops"] = nlohmann::ordered_json::parse(flops.to_json());
  return j.dump(2);
}

namespace {

// MAC table of the live block stack: after pruning, removed blocks cost
// nothing and the BMNet head has fewer rows. Dead blocks are never
// shape-changing, so spatial propagation is unaffected.
MacTable count_macs_live(SgadModel& model) {
  const BackboneConfig& bb = model.backbone.config();
  const BmnetConfig& bm = model.bmnet.config();
  const MacTable full = count_macs(bb, bm);
  MacTable t;
  t.stem = full.stem;
  t.head = full.head;
  t.bmnet = full.bmnet - int64_t(bm.channels) * (bb.num_blocks() - model.backbone.num_blocks());
  int h = bb.input_h - (bb.kernel - 1) + 2 * (bb.kernel / 2);  // stem output
  int w = bb.input_w - (bb.kernel - 1) + 2 * (bb.kernel / 2);
  for (int i = 0; i < model.backbone.num_blocks(); ++i) {
    const BlockConfig& bc = model.backbone.block(i).config();
    t.blocks.push_back(count_block_macs(bc, h, w));
    const int k = bc.conv_kernel, s = bc.spatial_stride, p = k / 2;
    h = (h + 2 * p - k) / s + 1;
    w = (w + 2 * p - k) / s + 1;
  }
  return t;
}

int argmax_row(const float* row, int64_t m) {
  int best = 0;
  for (int64_t j = 1; j < m; ++j) {
    if (row[j] > row[best]) best = int(j);
  }
  return best;
}

}  // namespace

EvalResult evaluate(SgadModel& model, const Dataset& data, const ExperimentConfig& cfg) {
  EvalResult r;
  const int l = model.backbone.num_blocks();
  std::vector<int64_t> keep_counts(size_t(l), 0);
  int64_t correct = 0, sg_correct = 0;
  double unsat_weighted = 0;
  NoiseSchedule sched;
  Rng rng(0);
  const bool adaptive = !cfg.baseline;
  const int batch = cfg.train.batch_size;

  for (int64_t start = 0; start < data.size(); start += batch) {
    const int64_t stop = std::min(data.size(), start + batch);
    std::vector<int64_t> idx(size_t(stop - start));
    std::iota(idx.begin(), idx.end(), start);
    Tensor x = data.gather(idx);
    const auto labels = data.gather_labels(idx);

    auto fwd = adaptive ? model.forward(x, sched, 0, RunMode::kEval, rng)
                        : model.forward_all_on(x);
    const int64_t m = fwd.out.logits.dim(1);
    for (int i = 0; i < int(idx.size()); ++i) {
      correct += argmax_row(fwd.out.logits.ptr() + i * m, m) == labels[size_t(i)];
      int executed = 0;
      for (int j = 0; j < l; ++j) {
        const bool kept = fwd.mask.bits[int64_t(i) * l + j] != 0.f;
        keep_counts[size_t(j)] += kept;
        executed += kept;
      }
      r.executed_blocks.push_back(executed);
    }
    if (adaptive) unsat_weighted += fwd.mask.unsaturated_fraction() * double(idx.size());

    if (model.has_sgnet) {
      Tensor sg_logits = model.sgnet.forward(x);
      Tensor probs = softmax_rows(sg_logits);
      auto var = soft_target_variance(probs);
      for (int i = 0; i < int(idx.size()); ++i) {
        sg_correct += argmax_row(probs.ptr() + int64_t(i) * probs.dim(1), probs.dim(1)) ==
                      labels[size_t(i)];
        r.sg_variance.push_back(var[size_t(i)]);
      }
    }
    r.n += int64_t(idx.size());
  }
  if (r.n == 0) throw DomainError("evaluate: empty dataset");

  r.accuracy = double(correct) / double(r.n);
  if (model.has_sgnet) r.sg_accuracy = double(sg_correct) / double(r.n);
  r.unsaturated_fraction = adaptive ? unsat_weighted / double(r.n) : 0.0;
  for (int64_t c : keep_counts) r.keep_ratios.push_back(double(c) / double(r.n));

  const MacTable macs = count_macs_live(model);
  const bool include_bmnet = cfg.include_bmnet_flops && adaptive;
  r.flops = make_flops_report(macs, r.keep_ratios, model.forced, include_bmnet);
  return r;
}

void augment_batch(Tensor& x, Rng& rng) {
  const int n = int(x.dim(0)), c = int(x.dim(1)), h = int(x.dim(2)), w = int(x.dim(3));
  const int pad = 4;
  std::vector<float> sample(size_t(c) * h * w);
  for (int i = 0; i < n; ++i) {
    const int oy = int(rng.next_below(uint64_t(2 * pad + 1))) - pad;
    const int ox = int(rng.next_below(uint64_t(2 * pad + 1))) - pad;
    const bool flip = rng.next_below(2) == 1;
    float* base = x.ptr() + x.idx4(i, 0, 0, 0);
    std::copy_n(base, sample.size(), sample.data());
    for (int ch = 0; ch < c; ++ch) {
      for (int y = 0; y < h; ++y) {
        for (int z = 0; z < w; ++z) {
          const int sy = y + oy;
          const int sz = (flip ? w - 1 - z : z) + ox;
          const bool in = sy >= 0 && sy < h && sz >= 0 && sz < w;
          base[(int64_t(ch) * h + y) * w + z] =
              in ? sample[size_t((int64_t(ch) * h + sy) * w + sz)] : 0.f;
        }
      }
    }
  }
}

Trainer::Trainer(SgadModel& model, const ExperimentConfig& cfg) : model_(model), cfg_(cfg) {
  cfg_.validate();
  model_.collect_params(params_);
  momentum_.reserve(params_.size());
  for (const auto& p : params_) momentum_.push_back(Tensor(p.value->shape));

  const int l = model_.backbone.num_blocks();
  block_numel_.assign(size_t(l), 0);
  grad_l1_sums_.assign(size_t(l), 0.0);
  for (const auto& p : params_) {
    int block = -1;
    const std::string prefix = "backbone.block";
    if (p.name.rfind(prefix, 0) == 0) {
      block = std::stoi(p.name.substr(prefix.size()));
    }
    param_block_.push_back(block);
    if (block >= 0) block_numel_[size_t(block)] += p.value->numel();
  }
}

void Trainer::restore(const TrainStateBlob& blob, std::vector<Tensor> momentum) {
  if (momentum.size() != params_.size()) {
    throw StructuralError("restore: momentum buffer count mismatch");
  }
  for (size_t i = 0; i < momentum.size(); ++i) {
    if (momentum[i].shape != params_[i].value->shape) {
      throw StructuralError("restore: momentum shape mismatch at " + params_[i].name);
    }
  }
  momentum_ = std::move(momentum);
  grad_l1_sums_ = blob.grad_l1_sums;
  grad_l1_sums_.resize(size_t(model_.backbone.num_blocks()), 0.0);
  grad_l1_count_ = blob.grad_l1_count;
  iteration_ = blob.iteration;
}

StepMetrics Trainer::train_step(const Tensor& x, const std::vector<int>& labels, int epoch,
                                Rng& noise_rng) {
  model_.zero_grads();
  const int n = int(x.dim(0));
  const int l = model_.backbone.num_blocks();
  const bool adaptive = !cfg_.baseline;

  StepMetrics m;
  m.epoch = epoch;
  m.step = iteration_;
  m.lr = lr_schedule(epoch, cfg_.train);

  // Forward.
  SgadModel::ForwardResult fwd = adaptive
      ? model_.forward(x, cfg_.noise_resolved(), epoch, RunMode::kTrain, noise_rng)
      : model_.forward_all_on(x);

  Tensor dlogits;
  m.r_prime = classification_loss_grad(fwd.out.logits, labels, dlogits);

  Tensor dsg_logits;
  std::vector<double> rat_s;
  Tensor dbits_reg;
  if (adaptive) {
    Tensor sg_logits = model_.sgnet.forward(x);
    m.r_g = classification_loss_grad(sg_logits, labels, dsg_logits);
    // The guideline is a detached target: no gradient flows into SGNet from
    // the regularizer.
    rat_s = map_variance_to_drop_ratio(soft_target_variance(softmax_rows(sg_logits)),
                                       cfg_.mapping());
    m.r_m = drop_ratio_regularizer_grad(rat_s, fwd.mask, dbits_reg);
  }

  try {
    m.total = total_loss(m.r_prime, m.r_m, m.r_g, cfg_.loss);
  } catch (const NumericError& e) {
    double mean_bits = 0;
    for (float b : fwd.mask.bits.data) mean_bits += b;
    mean_bits /= double(std::max<int64_t>(1, fwd.mask.bits.numel()));
    throw NumericError(std::string(e.what()) + " at epoch " + std::to_string(epoch) + " step " +
                       std::to_string(iteration_) + " (mean mask bit " + std::to_string(mean_bits) +
                       ", unsaturated " + std::to_string(fwd.mask.unsaturated_fraction()) + ")");
  }

  // Backward. Scaling upstream gradients by the loss weights makes every
  // parameter gradient the gradient of the weighted objective.
  for (auto& v : dlogits.data) v *= float(cfg_.loss.alpha);
  Tensor dmask({n, l});
  Tensor dz1 = model_.backbone.blocks_head_backward(dlogits, fwd.mask.bits,
                                                    adaptive ? &dmask : nullptr);
  if (adaptive) {
    for (int64_t k = 0; k < dmask.numel(); ++k) {
      dmask[k] += float(cfg_.loss.alpha_m) * dbits_reg[k];
    }
    Tensor dz1_mask = mask_backward(model_.bmnet, fwd.mask, dmask);
    for (int64_t k = 0; k < dz1.numel(); ++k) dz1[k] += dz1_mask[k];

    for (auto& v : dsg_logits.data) v *= float(cfg_.loss.alpha_g);
    model_.sgnet.backward(dsg_logits);
  }
  model_.backbone.stem_backward(dz1);

  if (epoch >= cfg_.train.resolved_grad_log_start()) accumulate_grad_l1();
  sgd_update(m.lr);
  ++iteration_;

  // Step statistics.
  for (int j = 0; j < l; ++j) m.rats_b.push_back(batch_keep_ratio(fwd.mask.bits, j));
  const auto drops = fwd.mask.measured_drop();
  m.mean_measured_drop = std::accumulate(drops.begin(), drops.end(), 0.0) / double(n);
  if (!rat_s.empty()) {
    m.mean_expected_drop = std::accumulate(rat_s.begin(), rat_s.end(), 0.0) / double(n);
  }
  m.unsaturated = adaptive ? fwd.mask.unsaturated_fraction() : 0.0;
  return m;
}

void Trainer::sgd_update(double lr) {
  const double mu = cfg_.train.momentum;
  const double wd = cfg_.train.weight_decay;
  for (size_t i = 0; i < params_.size(); ++i) {
    float* p = params_[i].value->ptr();
    const float* g = params_[i].grad->ptr();
    float* v = momentum_[i].ptr();
    const int64_t count = params_[i].value->numel();
    for (int64_t k = 0; k < count; ++k) {
      const float grad = g[k] + float(wd) * p[k];
      v[k] = float(mu) * v[k] + grad;
      p[k] -= float(lr) * v[k];
    }
  }
}

void Trainer::accumulate_grad_l1() {
  std::vector<double> sums(grad_l1_sums_.size(), 0.0);
  for (size_t i = 0; i < params_.size(); ++i) {
    const int b = param_block_[i];
    if (b < 0) continue;
    double s = 0;
    for (float g : params_[i].grad->data) s += std::fabs(double(g));
    sums[size_t(b)] += s;
  }
  for (size_t b = 0; b < sums.size(); ++b) {
    if (block_numel_[b] > 0) grad_l1_sums_[b] += sums[b] / double(block_numel_[b]);
  }
  ++grad_l1_count_;
}

std::vector<double> Trainer::grad_l1_means() const {
  std::vector<double> out(grad_l1_sums_.size(), 0.0);
  if (grad_l1_count_ == 0) return out;
  for (size_t b = 0; b < out.size(); ++b) out[b] = grad_l1_sums_[b] / double(grad_l1_count_);
  return out;
}

TrainStateBlob Trainer::state_blob(int next_epoch) const {
  TrainStateBlob blob;
  blob.epoch = next_epoch;
  blob.iteration = iteration_;
  blob.grad_l1_sums = grad_l1_sums_;
  blob.grad_l1_count = grad_l1_count_;
  return blob;
}

void Trainer::run(const Dataset& train_data, const Dataset& test_data,
                  const std::function<void(const std::string&)>& emit,
                  const std::string& ckpt_dir, int start_epoch) {
  const auto& tc = cfg_.train;
  for (int epoch = start_epoch; epoch < tc.epochs; ++epoch) {
    std::vector<int64_t> perm(size_t(train_data.size()));
    std::iota(perm.begin(), perm.end(), int64_t(0));
    Rng shuffle_rng = Rng::derive(tc.seed, {0xA11u, uint64_t(epoch)});
    for (int64_t i = train_data.size() - 1; i > 0; --i) {
      std::swap(perm[size_t(i)], perm[size_t(shuffle_rng.next_below(uint64_t(i + 1)))]);
    }
    Rng noise_rng = Rng::derive(tc.seed, {0xB0Bu, uint64_t(epoch)});
    Rng aug_rng = Rng::derive(tc.seed, {0xAF6u, uint64_t(epoch)});

    for (int64_t start = 0; start < train_data.size(); start += tc.batch_size) {
      const int64_t stop = std::min(train_data.size(), start + tc.batch_size);
      std::vector<int64_t> idx(perm.begin() + start, perm.begin() + stop);
      Tensor x = train_data.gather(idx);
      if (tc.augment) augment_batch(x, aug_rng);
      StepMetrics sm = train_step(x, train_data.gather_labels(idx), epoch, noise_rng);
      emit(sm.to_json());
    }

    EvalResult ev = evaluate(model_, test_data, cfg_);
    nlohmann::ordered_json j;
    j["type"] = "epoch";
    j["epoch"] = epoch;
    j["lr"] = lr_schedule(epoch, tc);
    j["test_accuracy"] = ev.accuracy;
    j["sg_accuracy"] = ev.sg_accuracy;
    j["n_flops"] = ev.flops.n_flops;
    j["mean_executed_blocks"] = ev.mean_executed_blocks();
    j["keep_ratios"] = ev.keep_ratios;
    j["unsaturated_fraction"] = ev.unsaturated_fraction;
    if (epoch >= tc.resolved_grad_log_start()) {
      j["grad_l1"] = grad_l1_means();
    } else {
      j["grad_l1"] = nullptr;
    }
    emit(j.dump());

    if (!ckpt_dir.empty()) {
      TrainStateBlob blob = state_blob(epoch + 1);
      save_checkpoint(ckpt_dir, model_, cfg_, {}, &blob, &momentum_);
    }
  }
}

}  // namespace sgad
