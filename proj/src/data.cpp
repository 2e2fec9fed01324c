#include "sgad/data.hpp"

#include <algorithm>
#include <cstdlib>
#include <fstream>

#include "sgad/common.hpp"

namespace sgad {

Tensor Dataset::gather(const std::vector<int64_t>& indices) const {
  Tensor out({int64_t(indices.size()), channels, height, width});
  const int64_t step = sample_floats();
  for (size_t i = 0; i < indices.size(); ++i) {
    const int64_t src = indices[i];
    if (src < 0 || src >= size()) throw DomainError("sample index out of range");
    std::copy_n(images.data() + src * step, step, out.ptr() + int64_t(i) * step);
  }
  return out;
}

std::vector<int> Dataset::gather_labels(const std::vector<int64_t>& indices) const {
  std::vector<int> out(indices.size());
  for (size_t i = 0; i < indices.size(); ++i) out[i] = labels[size_t(indices[i])];
  return out;
}

int DatasetSpec::num_classes() const {
  switch (source) {
    case Source::kCifar10: return 10;
    case Source::kCifar100: return 100;
    case Source::kSynthetic: return n_classes;
  }
  return 0;
}

void DatasetSpec::validate() const {
  if (num_classes() < 2) throw ConfigError("dataset: need at least 2 classes");
  if (source == Source::kSynthetic) {
    if (height < 4 || width < 4) throw ConfigError("dataset: synthetic images too small");
    if (n_train <= 0 || n_test <= 0) throw ConfigError("dataset: split sizes must be positive");
    if (hard_fraction < 0 || hard_fraction > 1) throw ConfigError("dataset: hard_fraction in [0,1]");
    if (hard_mix < 0 || hard_mix > 1) throw ConfigError("dataset: hard_mix in [0,1]");
  }
}

namespace {

std::string data_root(const DatasetSpec& spec) {
  const char* env = std::getenv("SGAD_DATA_DIR");
  if (!spec.path.empty() && spec.path[0] == '/') return spec.path;
  std::string base = env ? env : "";
  if (spec.path.empty()) return base;
  if (base.empty()) return spec.path;
  return base + "/" + spec.path;
}

void read_cifar_file(const std::string& file, int label_bytes, int num_classes,
                     const DatasetSpec& spec, Dataset& out, int64_t limit) {
  std::ifstream in(file, std::ios::binary);
  if (!in) throw IngestionError("cannot open " + file);
  std::vector<unsigned char> raw((std::istreambuf_iterator<char>(in)),
                                 std::istreambuf_iterator<char>());
  const int64_t record = label_bytes + 3072;
  if (int64_t(raw.size()) == 0 || int64_t(raw.size()) % record != 0) {
    const int64_t offset = (int64_t(raw.size()) / record) * record;
    throw IngestionError(file + ": truncated record at byte offset " + std::to_string(offset));
  }
  const int64_t n = int64_t(raw.size()) / record;
  for (int64_t r = 0; r < n; ++r) {
    if (limit > 0 && out.size() >= limit) return;
    const unsigned char* rec = raw.data() + r * record;
    // CIFAR-100 stores coarse then fine; the fine label is the class.
    const int label = rec[label_bytes - 1];
    if (label >= num_classes) {
      throw IngestionError(file + ": label " + std::to_string(label) + " >= " +
                           std::to_string(num_classes) + " at byte offset " +
                           std::to_string(r * record + label_bytes - 1));
    }
    if (label_bytes == 2 && rec[0] >= 20) {
      throw IngestionError(file + ": coarse label " + std::to_string(rec[0]) +
                           " >= 20 at byte offset " + std::to_string(r * record));
    }
    out.labels.push_back(label);
    const unsigned char* px = rec + label_bytes;
    for (int c = 0; c < 3; ++c) {
      for (int i = 0; i < 1024; ++i) {
        const float v = float(px[c * 1024 + i]) / 255.f;
        out.images.push_back((v - spec.mean[size_t(c)]) / spec.stdev[size_t(c)]);
      }
    }
  }
}

}  // namespace

Dataset load_cifar(const DatasetSpec& spec, bool train) {
  Dataset out;
  out.num_classes = spec.num_classes();
  out.channels = 3;
  out.height = 32;
  out.width = 32;
  const std::string root = data_root(spec);
  const int64_t limit = train ? spec.n_train : spec.n_test;
  std::vector<std::string> files;
  int label_bytes = 1;
  if (spec.source == DatasetSpec::Source::kCifar10) {
    if (train) {
      for (int i = 1; i <= 5; ++i) files.push_back(root + "/data_batch_" + std::to_string(i) + ".bin");
    } else {
      files.push_back(root + "/test_batch.bin");
    }
  } else {
    label_bytes = 2;
    files.push_back(root + (train ? "/train.bin" : "/test.bin"));
  }
  for (const auto& f : files) {
    if (limit > 0 && out.size() >= limit) break;
    read_cifar_file(f, label_bytes, out.num_classes, spec, out, limit);
  }
  if (out.size() == 0) throw IngestionError("no samples read from " + root);
  return out;
}

Dataset synth_dataset(const DatasetSpec& spec, bool train) {
  spec.validate();
  Dataset out;
  out.num_classes = spec.n_classes;
  out.channels = 3;
  out.height = spec.height;
  out.width = spec.width;
  const int64_t n = train ? spec.n_train : spec.n_test;
  const int64_t step = out.sample_floats();

  // Fixed per-class patterns shared by both splits.
  std::vector<std::vector<float>> templates(size_t(spec.n_classes));
  for (int k = 0; k < spec.n_classes; ++k) {
    Rng trng = Rng::derive(spec.seed, {0xC1A55u, uint64_t(k)});
    templates[size_t(k)].resize(size_t(step));
    for (auto& v : templates[size_t(k)]) v = float(trng.next_double());
  }

  Rng rng = Rng::derive(spec.seed, {0x5A3Du, train ? 1u : 2u});
  out.images.reserve(size_t(n * step));
  out.labels.reserve(size_t(n));
  out.hard.reserve(size_t(n));
  for (int64_t i = 0; i < n; ++i) {
    const int label = int(i % spec.n_classes);
    const bool hard = rng.next_double() < spec.hard_fraction;
    const double sigma = hard ? spec.hard_sigma : spec.easy_sigma;
    out.labels.push_back(label);
    out.hard.push_back(hard ? 1 : 0);
    const auto& tpl = templates[size_t(label)];
    // Hard samples can be a convex blend with another class's pattern; the
    // true class keeps the majority weight, but confidence is capped.
    const float* alt = nullptr;
    double lam = 0.0;
    if (hard && spec.hard_mix > 0 && spec.n_classes > 1) {
      const int other = int((uint64_t(label) + 1 + rng.next_below(uint64_t(spec.n_classes - 1))) %
                            uint64_t(spec.n_classes));
      alt = templates[size_t(other)].data();
      lam = spec.hard_mix * rng.next_double();
    }
    for (int64_t j = 0; j < step; ++j) {
      double base = double(tpl[size_t(j)]);
      if (alt) base = (1.0 - lam) * base + lam * double(alt[j]);
      const double raw = base + sigma * rng.normal();
      const float v = float(std::clamp(raw, 0.0, 1.0));
      const int c = int(j / (out.height * out.width));
      out.images.push_back((v - spec.mean[size_t(c)]) / spec.stdev[size_t(c)]);
    }
  }
  return out;
}

Dataset load_dataset(const DatasetSpec& spec, bool train) {
  if (spec.source == DatasetSpec::Source::kSynthetic) return synth_dataset(spec, train);
  return load_cifar(spec, train);
}

}  // namespace sgad
