#include "sgad/analysis.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "json.hpp"

namespace sgad {

int64_t conv_macs(int out_h, int out_w, int out_c, int in_c, int kernel) {
  return int64_t(out_h) * out_w * out_c * in_c * kernel * kernel;
}

namespace {
int conv_out(int in, int kernel, int stride, int pad) {
  return (in + 2 * pad - kernel) / stride + 1;
}
}  // namespace

int64_t count_block_macs(const BlockConfig& bc, int in_h, int in_w) {
  const int k = bc.conv_kernel;
  const int oh = conv_out(in_h, k, bc.spatial_stride, k / 2);
  const int ow = conv_out(in_w, k, bc.spatial_stride, k / 2);
  int64_t macs = conv_macs(oh, ow, bc.out_channels, bc.in_channels, k) +
                 conv_macs(oh, ow, bc.out_channels, bc.out_channels, k);
  if (bc.shape_changing()) {
    macs += conv_macs(oh, ow, bc.out_channels, bc.in_channels, 1);
  }
  return macs;
}

int64_t MacTable::baseline() const {
  return stem + head + std::accumulate(blocks.begin(), blocks.end(), int64_t(0));
}

MacTable count_macs(const BackboneConfig& bb, const BmnetConfig& bm) {
  bb.validate();
  MacTable t;
  int h = conv_out(bb.input_h, bb.kernel, 1, bb.kernel / 2);
  int w = conv_out(bb.input_w, bb.kernel, 1, bb.kernel / 2);
  t.stem = conv_macs(h, w, bb.stage_widths[0], bb.input_channels, bb.kernel);

  // BMNet runs on the stem output; its pool shrinks to fit tiny inputs the
  // same way the layer does.
  {
    const int pk = std::min({bm.pool, h, w});
    const int ph = h / pk, pw = w / pk;
    const int oh = conv_out(ph, bm.kernel, bm.stride, bm.kernel / 2);
    const int ow = conv_out(pw, bm.kernel, bm.stride, bm.kernel / 2);
    t.bmnet = conv_macs(oh, ow, bm.channels, bb.stage_widths[0], bm.kernel) +
              int64_t(bm.channels) * bb.num_blocks();
  }

  for (const auto& bc : bb.block_configs()) {
    t.blocks.push_back(count_block_macs(bc, h, w));
    h = conv_out(h, bc.conv_kernel, bc.spatial_stride, bc.conv_kernel / 2);
    w = conv_out(w, bc.conv_kernel, bc.spatial_stride, bc.conv_kernel / 2);
  }
  t.head = int64_t(bb.stage_widths.back()) * bb.num_classes;
  return t;
}

double batch_keep_ratio(const Tensor& bits, int block) {
  const int64_t n = bits.dim(0), l = bits.dim(1);
  if (n == 0) throw DomainError("keep ratio of an empty batch");
  if (block < 0 || block >= l) throw DomainError("keep ratio: block index out of range");
  int64_t kept = 0;
  for (int64_t i = 0; i < n; ++i) kept += bits[i * l + block] != 0.f;
  return double(kept) / double(n);
}

std::vector<double> MaskSweep::keep_ratios() const {
  if (n == 0) throw DomainError("keep ratios of an empty sweep");
  std::vector<double> out(keep_counts.size());
  for (size_t i = 0; i < keep_counts.size(); ++i) out[i] = double(keep_counts[i]) / double(n);
  return out;
}

MaskSweep sweep_masks(SgadModel& model, const Dataset& data, int batch_size) {
  MaskSweep sw;
  const int l = model.backbone.num_blocks();
  sw.keep_counts.assign(size_t(l), 0);
  NoiseSchedule sched;
  Rng rng(0);  // eval mode draws nothing
  double unsat_weighted = 0;
  for (int64_t start = 0; start < data.size(); start += batch_size) {
    const int64_t stop = std::min(data.size(), start + batch_size);
    std::vector<int64_t> idx(size_t(stop - start));
    std::iota(idx.begin(), idx.end(), start);
    auto r = model.forward(data.gather(idx), sched, 0, RunMode::kEval, rng);
    for (int i = 0; i < r.mask.n; ++i) {
      int executed = 0;
      for (int j = 0; j < l; ++j) {
        const bool kept = r.mask.bits[int64_t(i) * l + j] != 0.f;
        sw.keep_counts[size_t(j)] += kept;
        executed += kept;
      }
      sw.executed_blocks.push_back(executed);
    }
    unsat_weighted += r.mask.unsaturated_fraction() * double(r.mask.n);
    sw.n += r.mask.n;
  }
  if (sw.n == 0) throw DomainError("mask sweep over an empty dataset");
  sw.unsaturated_fraction = unsat_weighted / double(sw.n);
  return sw;
}

FlopsReport make_flops_report(const MacTable& macs, const std::vector<double>& keep_ratios,
                              const std::vector<uint8_t>& forced, bool include_bmnet) {
  if (keep_ratios.size() != macs.blocks.size() || forced.size() != macs.blocks.size()) {
    throw StructuralError("flops report: keep/forced/macs length mismatch");
  }
  FlopsReport r;
  r.per_block_macs = macs.blocks;
  r.per_block_keep_ratio = keep_ratios;
  r.forced = forced;
  r.stem_macs = macs.stem;
  r.head_macs = macs.head;
  r.bmnet_macs = macs.bmnet;
  r.include_bmnet = include_bmnet;

  double cost = double(macs.stem + macs.head);
  for (size_t i = 0; i < macs.blocks.size(); ++i) {
    if (forced[i]) {
      cost += double(macs.blocks[i]);  // static: forced bits are always 1
    } else {
      cost += keep_ratios[i] * double(macs.blocks[i]);
      if (keep_ratios[i] == 0.0) r.dead_blocks.push_back(int(i));
    }
  }
  if (include_bmnet) cost += double(macs.bmnet);
  r.n_flops = cost / double(macs.baseline());
  return r;
}

std::string FlopsReport::to_json() const {
  nlohmann::ordered_json j;
  j["n_flops"] = n_flops;
  j["include_bmnet"] = include_bmnet;
  j["stem_macs"] = stem_macs;
  j["head_macs"] = head_macs;
  j["bmnet_macs"] = bmnet_macs;
  int64_t baseline = stem_macs + head_macs;
  for (int64_t m : per_block_macs) baseline += m;
  j["baseline_macs"] = baseline;
  j["dead_blocks"] = dead_blocks;
  auto blocks = nlohmann::ordered_json::array();
  for (size_t i = 0; i < per_block_macs.size(); ++i) {
    nlohmann::ordered_json b;
    b["index"] = i;
    b["macs"] = per_block_macs[i];
    b["keep_ratio"] = per_block_keep_ratio[i];
    b["forced"] = bool(forced[i]);
    blocks.push_back(b);
  }
  j["blocks"] = blocks;
  return j.dump(2);
}

std::vector<int> detect_dead_blocks(const MaskSweep& sweep) {
  std::vector<int> dead;
  for (size_t i = 0; i < sweep.keep_counts.size(); ++i) {
    if (sweep.keep_counts[i] == 0) dead.push_back(int(i));
  }
  return dead;
}

std::vector<int> detect_dead_blocks(SgadModel& model, const Dataset& data, int batch_size) {
  return detect_dead_blocks(sweep_masks(model, data, batch_size));
}

void prune_dead_blocks(SgadModel& model, const std::vector<int>& dead, const Dataset& reference,
                       int batch_size) {
  if (dead.empty()) return;
  const int l = model.backbone.num_blocks();
  for (int d : dead) {
    if (d < 0 || d >= l) throw DomainError("prune: block index out of range");
    if (model.forced[size_t(d)]) throw DomainError("prune: block " + std::to_string(d) + " is forced on");
  }

  NoiseSchedule sched;
  Rng rng(0);
  std::vector<Tensor> ref_logits, ref_bits;
  for (int64_t start = 0; start < reference.size(); start += batch_size) {
    const int64_t stop = std::min(reference.size(), start + batch_size);
    std::vector<int64_t> idx(size_t(stop - start));
    std::iota(idx.begin(), idx.end(), start);
    auto r = model.forward(reference.gather(idx), sched, 0, RunMode::kEval, rng);
    for (int i = 0; i < r.mask.n; ++i) {
      for (int d : dead) {
        if (r.mask.bits[int64_t(i) * l + d] != 0.f) {
          throw DomainError("prune refused: block " + std::to_string(d) +
                            " is kept by reference sample " + std::to_string(start + i));
        }
      }
    }
    ref_logits.push_back(r.out.logits);
    ref_bits.push_back(r.mask.bits);
  }

  model.remove_blocks(dead);

  std::vector<int> survivors;
  for (int j = 0; j < l; ++j) {
    if (std::find(dead.begin(), dead.end(), j) == dead.end()) survivors.push_back(j);
  }
  size_t batch_at = 0;
  for (int64_t start = 0; start < reference.size(); start += batch_size, ++batch_at) {
    const int64_t stop = std::min(reference.size(), start + batch_size);
    std::vector<int64_t> idx(size_t(stop - start));
    std::iota(idx.begin(), idx.end(), start);
    auto r = model.forward(reference.gather(idx), sched, 0, RunMode::kEval, rng);
    const Tensor& want_logits = ref_logits[batch_at];
    const Tensor& want_bits = ref_bits[batch_at];
    for (int64_t k = 0; k < r.out.logits.numel(); ++k) {
      if (r.out.logits[k] != want_logits[k]) {
        throw StructuralError("prune broke logits at batch " + std::to_string(batch_at));
      }
    }
    const int nl = int(survivors.size());
    for (int i = 0; i < r.mask.n; ++i) {
      for (int j = 0; j < nl; ++j) {
        if (r.mask.bits[int64_t(i) * nl + j] != want_bits[int64_t(i) * l + survivors[size_t(j)]]) {
          throw StructuralError("prune broke masks at batch " + std::to_string(batch_at));
        }
      }
    }
  }
}

namespace {
std::vector<double> ranks_with_ties(const std::vector<double>& v) {
  const size_t n = v.size();
  std::vector<size_t> order(n);
  std::iota(order.begin(), order.end(), size_t(0));
  std::sort(order.begin(), order.end(), [&](size_t a, size_t b) { return v[a] < v[b]; });
  std::vector<double> rank(n);
  size_t i = 0;
  while (i < n) {
    size_t j = i;
    while (j + 1 < n && v[order[j + 1]] == v[order[i]]) ++j;
    const double avg = 0.5 * double(i + j) + 1.0;  // 1-based average rank
    for (size_t k = i; k <= j; ++k) rank[order[k]] = avg;
    i = j + 1;
  }
  return rank;
}
}  // namespace

double spearman(const std::vector<double>& a, const std::vector<double>& b) {
  if (a.size() != b.size() || a.size() < 2) throw DomainError("spearman: need two equal-length series");
  const auto ra = ranks_with_ties(a), rb = ranks_with_ties(b);
  const double n = double(a.size());
  double ma = 0, mb = 0;
  for (size_t i = 0; i < a.size(); ++i) {
    ma += ra[i];
    mb += rb[i];
  }
  ma /= n;
  mb /= n;
  double cov = 0, va = 0, vb = 0;
  for (size_t i = 0; i < a.size(); ++i) {
    cov += (ra[i] - ma) * (rb[i] - mb);
    va += (ra[i] - ma) * (ra[i] - ma);
    vb += (rb[i] - mb) * (rb[i] - mb);
  }
  if (va == 0 || vb == 0) throw DomainError("spearman: a series is constant");
  return cov / std::sqrt(va * vb);
}

}  // namespace sgad
