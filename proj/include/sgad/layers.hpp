#pragma once

#include <optional>
#include <string>
#include <vector>

#include "sgad/rng.hpp"
#include "sgad/tensor.hpp"

namespace sgad {

// Named handle to one parameter tensor and its gradient, used by the
// optimizer and the checkpoint writer.
struct ParamRef {
  std::string name;
  Tensor* value;
  Tensor* grad;
};

// 2-D convolution, square kernel, symmetric zero padding. Weight layout is
// (out_c, in_c*k*k); forward/backward run as im2col + GEMM per sample.
// Backward recomputes im2col instead of caching the column buffer.
class Conv2d {
 public:
  Conv2d() = default;
  Conv2d(int in_c, int out_c, int kernel, int stride, int pad, bool bias = true);

  void init_params(Rng& rng);  // He-normal, fan_in = in_c*k*k
  Tensor forward(const Tensor& x);
  Tensor backward(const Tensor& dy);  // accumulates into wgrad/bgrad
  void collect_params(std::vector<ParamRef>& out, const std::string& prefix);

  int out_size(int in) const { return (in + 2 * pad_ - kernel_) / stride_ + 1; }
  int in_channels() const { return in_c_; }
  int out_channels() const { return out_c_; }
  int kernel() const { return kernel_; }
  int stride() const { return stride_; }

  Tensor weight, bias, wgrad, bgrad;

 private:
  int in_c_ = 0, out_c_ = 0, kernel_ = 0, stride_ = 1, pad_ = 0;
  bool has_bias_ = true;
  Tensor x_cache_;
  mutable std::vector<float> col_;  // im2col scratch, reused
};

// Group normalization with affine parameters; statistics are per (sample,
// group), so samples in a batch never couple.
class GroupNorm {
 public:
  GroupNorm() = default;
  GroupNorm(int channels, int groups);

  void init_params();  // gamma = 1, beta = 0
  void init_gamma(float v) { gamma.fill(v); }
  Tensor forward(const Tensor& x);
  Tensor backward(const Tensor& dy);
  void collect_params(std::vector<ParamRef>& out, const std::string& prefix);

  Tensor gamma, beta, ggrad, bgrad;

 private:
  int channels_ = 0, groups_ = 0;
  float eps_ = 1e-5f;
  Tensor xhat_cache_;
  std::vector<float> invstd_cache_;  // per (n, g)
};

class ReLU {
 public:
  Tensor forward(const Tensor& x);
  Tensor backward(const Tensor& dy);

 private:
  std::vector<uint8_t> pos_;
};

// Fully connected layer; input (N, in), output (N, out).
class Linear {
 public:
  Linear() = default;
  Linear(int in_dim, int out_dim);

  void init_params(Rng& rng);
  void zero_weights() { weight.zero(); bias.zero(); }
  Tensor forward(const Tensor& x);
  Tensor backward(const Tensor& dy);
  void collect_params(std::vector<ParamRef>& out, const std::string& prefix);

  int in_dim() const { return in_; }
  int out_dim() const { return out_; }

  Tensor weight, bias, wgrad, bgrad;  // weight (out, in)

 private:
  int in_ = 0, out_ = 0;
  Tensor x_cache_;
};

// (N, C, H, W) -> (N, C) average over the spatial plane.
class GlobalAvgPool {
 public:
  Tensor forward(const Tensor& x);
  Tensor backward(const Tensor& dy);

 private:
  std::vector<int64_t> in_shape_;
};

// Non-overlapping k x k average pooling, stride k. H and W must divide.
class AvgPool2d {
 public:
  explicit AvgPool2d(int k = 2) : k_(k) {}
  Tensor forward(const Tensor& x);
  Tensor backward(const Tensor& dy);
  int k() const { return k_; }

 private:
  int k_ = 2;
  std::vector<int64_t> in_shape_;
};

}  // namespace sgad
