#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "sgad/rng.hpp"
#include "sgad/tensor.hpp"

namespace sgad {

// In-memory dataset, images already normalized.
struct Dataset {
  int num_classes = 0;
  int channels = 0, height = 0, width = 0;
  std::vector<float> images;  // n * channels*height*width, sample-major
  std::vector<int> labels;
  std::vector<uint8_t> hard;  // synthetic difficulty flag; empty otherwise

  int64_t size() const { return int64_t(labels.size()); }
  int64_t sample_floats() const { return int64_t(channels) * height * width; }

  Tensor gather(const std::vector<int64_t>& indices) const;
  std::vector<int> gather_labels(const std::vector<int64_t>& indices) const;
};

struct DatasetSpec {
  enum class Source { kCifar10, kCifar100, kSynthetic };

  Source source = Source::kSynthetic;
  std::string path;  // directory with the binary batches, under SGAD_DATA_DIR
  uint64_t seed = 1;

  // 0 = keep everything the files contain; synthetic sizes are exact.
  int64_t n_train = 5000;
  int64_t n_test = 1000;

  // Synthetic geometry.
  int n_classes = 10;
  int height = 16, width = 16;
  double hard_fraction = 0.5;
  double easy_sigma = 0.05;
  double hard_sigma = 0.6;
  // Blend weight cap for hard samples: each draws lambda in [0, hard_mix) and
  // mixes in a second class's pattern, so hardness survives training instead
  // of being memorized away. 0 keeps hardness purely noise-based.
  double hard_mix = 0.0;

  // Applied after scaling bytes to [0,1]. CIFAR-10 train statistics.
  std::array<float, 3> mean = {0.4914f, 0.4822f, 0.4465f};
  std::array<float, 3> stdev = {0.2470f, 0.2435f, 0.2616f};

  int num_classes() const;
  void validate() const;
};

// Reads CIFAR binary batches: per record, 1 label byte (CIFAR-10) or
// coarse+fine label bytes (CIFAR-100), then 3072 channel-major image bytes.
// `train` picks the split's file list. Malformed files fail with the byte
// offset of the problem.
Dataset load_cifar(const DatasetSpec& spec, bool train);

// Seeded class-template dataset: each class is a fixed random pattern, each
// sample is the pattern plus easy or hard Gaussian pixel noise, so a
// difficulty split exists by construction.
Dataset synth_dataset(const DatasetSpec& spec, bool train);

// Dispatch on spec.source.
Dataset load_dataset(const DatasetSpec& spec, bool train);

}  // namespace sgad
