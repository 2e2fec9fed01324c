#pragma once

#include <algorithm>
#include <cstdint>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

#include "sgad/common.hpp"

namespace sgad {

// Dense float32 tensor, row-major (last axis fastest). Activations use
// NCHW, matrices use (rows, cols).
struct Tensor {
  std::vector<int64_t> shape;
  std::vector<float> data;

  Tensor() = default;
  explicit Tensor(std::vector<int64_t> s) : shape(std::move(s)) {
    data.assign(size_t(numel_of(shape)), 0.f);
  }

  static int64_t numel_of(const std::vector<int64_t>& s) {
    int64_t n = 1;
    for (int64_t d : s) n *= d;
    return n;
  }

  int64_t numel() const { return int64_t(data.size()); }
  int64_t dim(size_t i) const { return shape[i]; }
  int ndim() const { return int(shape.size()); }

  float* ptr() { return data.data(); }
  const float* ptr() const { return data.data(); }

  float& operator[](int64_t i) { return data[size_t(i)]; }
  float operator[](int64_t i) const { return data[size_t(i)]; }

  // NCHW linear index.
  int64_t idx4(int64_t n, int64_t c, int64_t h, int64_t w) const {
    return ((n * shape[1] + c) * shape[2] + h) * shape[3] + w;
  }
  float& at4(int64_t n, int64_t c, int64_t h, int64_t w) { return data[size_t(idx4(n, c, h, w))]; }
  float at4(int64_t n, int64_t c, int64_t h, int64_t w) const { return data[size_t(idx4(n, c, h, w))]; }

  // 2-D (rows, cols) index.
  float& at2(int64_t r, int64_t c) { return data[size_t(r * shape[1] + c)]; }
  float at2(int64_t r, int64_t c) const { return data[size_t(r * shape[1] + c)]; }

  void zero() { std::fill(data.begin(), data.end(), 0.f); }
  void fill(float v) { std::fill(data.begin(), data.end(), v); }

  bool same_shape(const Tensor& o) const { return shape == o.shape; }

  static Tensor zeros_like(const Tensor& o) { return Tensor(o.shape); }

  std::string shape_str() const {
    std::ostringstream os;
    os << "(";
    for (size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
    os << ")";
    return os.str();
  }
};

inline void check_shape(const Tensor& t, const std::vector<int64_t>& want, const char* who) {
  if (t.shape != want) {
    Tensor w;
    w.shape = want;
    throw StructuralError(std::string(who) + ": expected shape " + w.shape_str() + ", got " + t.shape_str());
  }
}

}  // namespace sgad
