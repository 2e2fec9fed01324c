#include "sgad/layers.hpp"

#include <Eigen/Core>

#include <cmath>

namespace sgad {

namespace {

using RowMat = Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapRow = Eigen::Map<RowMat>;
using CMapRow = Eigen::Map<const RowMat>;

// col is (in_c*k*k) x (oh*ow), row-major: row r = (c, kh, kw), column = output position.
void im2col(const float* x, int c_in, int h, int w, int k, int stride, int pad,
            int oh, int ow, float* col) {
  for (int c = 0; c < c_in; ++c) {
    const float* xc = x + int64_t(c) * h * w;
    for (int kh = 0; kh < k; ++kh) {
      for (int kw = 0; kw < k; ++kw) {
        float* row = col + (int64_t(c) * k * k + kh * k + kw) * oh * ow;
        for (int y = 0; y < oh; ++y) {
          int iy = y * stride + kh - pad;
          if (iy < 0 || iy >= h) {
            for (int xo = 0; xo < ow; ++xo) row[y * ow + xo] = 0.f;
            continue;
          }
          const float* src = xc + int64_t(iy) * w;
          for (int xo = 0; xo < ow; ++xo) {
            int ix = xo * stride + kw - pad;
            row[y * ow + xo] = (ix >= 0 && ix < w) ? src[ix] : 0.f;
          }
        }
      }
    }
  }
}

void col2im(const float* col, int c_in, int h, int w, int k, int stride, int pad,
            int oh, int ow, float* dx) {
  for (int c = 0; c < c_in; ++c) {
    float* xc = dx + int64_t(c) * h * w;
    for (int kh = 0; kh < k; ++kh) {
      for (int kw = 0; kw < k; ++kw) {
        const float* row = col + (int64_t(c) * k * k + kh * k + kw) * oh * ow;
        for (int y = 0; y < oh; ++y) {
          int iy = y * stride + kh - pad;
          if (iy < 0 || iy >= h) continue;
          float* dst = xc + int64_t(iy) * w;
          for (int xo = 0; xo < ow; ++xo) {
            int ix = xo * stride + kw - pad;
            if (ix >= 0 && ix < w) dst[ix] += row[y * ow + xo];
          }
        }
      }
    }
  }
}

}  // namespace

Conv2d::Conv2d(int in_c, int out_c, int kernel, int stride, int pad, bool with_bias)
    : in_c_(in_c), out_c_(out_c), kernel_(kernel), stride_(stride), pad_(pad), has_bias_(with_bias) {
  weight = Tensor({out_c, int64_t(in_c) * kernel * kernel});
  wgrad = Tensor::zeros_like(weight);
  if (has_bias_) {
    bias = Tensor({out_c});
    bgrad = Tensor::zeros_like(bias);
  }
}

void Conv2d::init_params(Rng& rng) {
  const double std = std::sqrt(2.0 / double(in_c_ * kernel_ * kernel_));
  for (auto& v : weight.data) v = float(rng.normal() * std);
  if (has_bias_) bias.zero();
}

Tensor Conv2d::forward(const Tensor& x) {
  if (x.ndim() != 4 || x.dim(1) != in_c_) {
    throw StructuralError("Conv2d: bad input shape " + x.shape_str());
  }
  const int n = int(x.dim(0)), h = int(x.dim(2)), w = int(x.dim(3));
  const int oh = out_size(h), ow = out_size(w);
  if (oh <= 0 || ow <= 0) throw StructuralError("Conv2d: input too small " + x.shape_str());
  x_cache_ = x;

  const int kkc = in_c_ * kernel_ * kernel_;
  const int span = oh * ow;
  col_.resize(size_t(kkc) * span);
  Tensor out({n, out_c_, oh, ow});

  CMapRow wm(weight.ptr(), out_c_, kkc);
  for (int i = 0; i < n; ++i) {
    im2col(x.ptr() + x.idx4(i, 0, 0, 0), in_c_, h, w, kernel_, stride_, pad_, oh, ow, col_.data());
    CMapRow cm(col_.data(), kkc, span);
    MapRow om(out.ptr() + out.idx4(i, 0, 0, 0), out_c_, span);
    om.noalias() = wm * cm;
    if (has_bias_) om.colwise() += Eigen::Map<const Eigen::VectorXf>(bias.ptr(), out_c_);
  }
  return out;
}

Tensor Conv2d::backward(const Tensor& dy) {
  const Tensor& x = x_cache_;
  const int n = int(x.dim(0)), h = int(x.dim(2)), w = int(x.dim(3));
  const int oh = out_size(h), ow = out_size(w);
  check_shape(dy, {n, out_c_, oh, ow}, "Conv2d::backward");

  const int kkc = in_c_ * kernel_ * kernel_;
  const int span = oh * ow;
  col_.resize(size_t(kkc) * span);
  std::vector<float> dcol(size_t(kkc) * span);
  Tensor dx(x.shape);

  CMapRow wm(weight.ptr(), out_c_, kkc);
  MapRow dwm(wgrad.ptr(), out_c_, kkc);
  for (int i = 0; i < n; ++i) {
    CMapRow dym(dy.ptr() + dy.idx4(i, 0, 0, 0), out_c_, span);
    im2col(x.ptr() + x.idx4(i, 0, 0, 0), in_c_, h, w, kernel_, stride_, pad_, oh, ow, col_.data());
    CMapRow cm(col_.data(), kkc, span);
    dwm.noalias() += dym * cm.transpose();
    if (has_bias_) {
      // Fixed-order accumulation: Eigen reductions peel by buffer alignment,
      // which would make bitwise replay depend on where the tensor landed.
      for (int c = 0; c < out_c_; ++c) {
        float acc = 0.f;
        const float* row = dy.ptr() + dy.idx4(i, c, 0, 0);
        for (int s = 0; s < span; ++s) acc += row[s];
        bgrad.ptr()[c] += acc;
      }
    }
    MapRow dcm(dcol.data(), kkc, span);
    dcm.noalias() = wm.transpose() * dym;
    col2im(dcol.data(), in_c_, h, w, kernel_, stride_, pad_, oh, ow, dx.ptr() + dx.idx4(i, 0, 0, 0));
  }
  return dx;
}

void Conv2d::collect_params(std::vector<ParamRef>& out, const std::string& prefix) {
  out.push_back({prefix + ".weight", &weight, &wgrad});
  if (has_bias_) out.push_back({prefix + ".bias", &bias, &bgrad});
}

GroupNorm::GroupNorm(int channels, int groups) : channels_(channels), groups_(groups) {
  if (channels % groups != 0) {
    throw ConfigError("GroupNorm: channels " + std::to_string(channels) +
                      " not divisible by groups " + std::to_string(groups));
  }
  gamma = Tensor({channels});
  beta = Tensor({channels});
  ggrad = Tensor::zeros_like(gamma);
  bgrad = Tensor::zeros_like(beta);
  init_params();
}

void GroupNorm::init_params() {
  gamma.fill(1.f);
  beta.zero();
}

Tensor GroupNorm::forward(const Tensor& x) {
  if (x.ndim() != 4 || x.dim(1) != channels_) {
    throw StructuralError("GroupNorm: bad input shape " + x.shape_str());
  }
  const int n = int(x.dim(0)), h = int(x.dim(2)), w = int(x.dim(3));
  const int cpg = channels_ / groups_;
  const int64_t gsize = int64_t(cpg) * h * w;

  Tensor out(x.shape);
  xhat_cache_ = Tensor(x.shape);
  invstd_cache_.assign(size_t(n) * groups_, 0.f);

  for (int i = 0; i < n; ++i) {
    for (int g = 0; g < groups_; ++g) {
      const float* xs = x.ptr() + x.idx4(i, int64_t(g) * cpg, 0, 0);
      double sum = 0, sq = 0;
      for (int64_t j = 0; j < gsize; ++j) {
        sum += xs[j];
        sq += double(xs[j]) * xs[j];
      }
      const double mean = sum / double(gsize);
      const double var = sq / double(gsize) - mean * mean;
      const float invstd = float(1.0 / std::sqrt(var + eps_));
      invstd_cache_[size_t(i) * groups_ + g] = invstd;

      float* xh = xhat_cache_.ptr() + xhat_cache_.idx4(i, int64_t(g) * cpg, 0, 0);
      float* os = out.ptr() + out.idx4(i, int64_t(g) * cpg, 0, 0);
      const int64_t plane = int64_t(h) * w;
      for (int c = 0; c < cpg; ++c) {
        const float gm = gamma[int64_t(g) * cpg + c];
        const float bt = beta[int64_t(g) * cpg + c];
        for (int64_t j = 0; j < plane; ++j) {
          float v = (xs[c * plane + j] - float(mean)) * invstd;
          xh[c * plane + j] = v;
          os[c * plane + j] = gm * v + bt;
        }
      }
    }
  }
  return out;
}

Tensor GroupNorm::backward(const Tensor& dy) {
  const Tensor& xh = xhat_cache_;
  check_shape(dy, xh.shape, "GroupNorm::backward");
  const int n = int(dy.dim(0)), h = int(dy.dim(2)), w = int(dy.dim(3));
  const int cpg = channels_ / groups_;
  const int64_t plane = int64_t(h) * w;
  const int64_t gsize = int64_t(cpg) * plane;

  Tensor dx(dy.shape);
  for (int i = 0; i < n; ++i) {
    for (int g = 0; g < groups_; ++g) {
      const float* dys = dy.ptr() + dy.idx4(i, int64_t(g) * cpg, 0, 0);
      const float* xhs = xh.ptr() + xh.idx4(i, int64_t(g) * cpg, 0, 0);
      float* dxs = dx.ptr() + dx.idx4(i, int64_t(g) * cpg, 0, 0);
      const float invstd = invstd_cache_[size_t(i) * groups_ + g];

      // dxhat = dy * gamma; reduce within the group.
      double sum_dxh = 0, sum_dxh_xh = 0;
      for (int c = 0; c < cpg; ++c) {
        const float gm = gamma[int64_t(g) * cpg + c];
        for (int64_t j = 0; j < plane; ++j) {
          const float dxh = dys[c * plane + j] * gm;
          sum_dxh += dxh;
          sum_dxh_xh += double(dxh) * xhs[c * plane + j];
        }
      }
      const float m = float(gsize);
      for (int c = 0; c < cpg; ++c) {
        const float gm = gamma[int64_t(g) * cpg + c];
        for (int64_t j = 0; j < plane; ++j) {
          const float dxh = dys[c * plane + j] * gm;
          dxs[c * plane + j] =
              invstd / m * (m * dxh - float(sum_dxh) - xhs[c * plane + j] * float(sum_dxh_xh));
        }
      }
    }
  }

  // Affine parameter gradients.
  for (int c = 0; c < channels_; ++c) {
    double dg = 0, db = 0;
    for (int i = 0; i < n; ++i) {
      const float* dys = dy.ptr() + dy.idx4(i, c, 0, 0);
      const float* xhs = xh.ptr() + xh.idx4(i, c, 0, 0);
      for (int64_t j = 0; j < plane; ++j) {
        dg += double(dys[j]) * xhs[j];
        db += dys[j];
      }
    }
    ggrad[c] += float(dg);
    bgrad[c] += float(db);
  }
  return dx;
}

void GroupNorm::collect_params(std::vector<ParamRef>& out, const std::string& prefix) {
  out.push_back({prefix + ".gamma", &gamma, &ggrad});
  out.push_back({prefix + ".beta", &beta, &bgrad});
}

Tensor ReLU::forward(const Tensor& x) {
  Tensor out(x.shape);
  pos_.assign(x.data.size(), 0);
  for (size_t i = 0; i < x.data.size(); ++i) {
    if (x.data[i] > 0.f) {
      out.data[i] = x.data[i];
      pos_[i] = 1;
    }
  }
  return out;
}

Tensor ReLU::backward(const Tensor& dy) {
  Tensor dx(dy.shape);
  for (size_t i = 0; i < dy.data.size(); ++i) {
    dx.data[i] = pos_[i] ? dy.data[i] : 0.f;
  }
  return dx;
}

Linear::Linear(int in_dim, int out_dim) : in_(in_dim), out_(out_dim) {
  weight = Tensor({out_dim, in_dim});
  bias = Tensor({out_dim});
  wgrad = Tensor::zeros_like(weight);
  bgrad = Tensor::zeros_like(bias);
}

void Linear::init_params(Rng& rng) {
  const double std = std::sqrt(2.0 / double(in_));
  for (auto& v : weight.data) v = float(rng.normal() * std);
  bias.zero();
}

Tensor Linear::forward(const Tensor& x) {
  if (x.ndim() != 2 || x.dim(1) != in_) {
    throw StructuralError("Linear: bad input shape " + x.shape_str());
  }
  const int n = int(x.dim(0));
  x_cache_ = x;
  Tensor out({n, out_});
  CMapRow xm(x.ptr(), n, in_);
  CMapRow wm(weight.ptr(), out_, in_);
  MapRow om(out.ptr(), n, out_);
  om.noalias() = xm * wm.transpose();
  om.rowwise() += Eigen::Map<const Eigen::VectorXf>(bias.ptr(), out_).transpose();
  return out;
}

Tensor Linear::backward(const Tensor& dy) {
  const int n = int(x_cache_.dim(0));
  check_shape(dy, {n, out_}, "Linear::backward");
  CMapRow dym(dy.ptr(), n, out_);
  CMapRow xm(x_cache_.ptr(), n, in_);
  MapRow dwm(wgrad.ptr(), out_, in_);
  dwm.noalias() += dym.transpose() * xm;
  // Fixed-order accumulation; see Conv2d::backward.
  for (int j = 0; j < out_; ++j) {
    float acc = 0.f;
    for (int i = 0; i < n; ++i) acc += dy.ptr()[int64_t(i) * out_ + j];
    bgrad.ptr()[j] += acc;
  }

  Tensor dx({n, in_});
  MapRow dxm(dx.ptr(), n, in_);
  CMapRow wm(weight.ptr(), out_, in_);
  dxm.noalias() = dym * wm;
  return dx;
}

void Linear::collect_params(std::vector<ParamRef>& out, const std::string& prefix) {
  out.push_back({prefix + ".weight", &weight, &wgrad});
  out.push_back({prefix + ".bias", &bias, &bgrad});
}

Tensor GlobalAvgPool::forward(const Tensor& x) {
  if (x.ndim() != 4) throw StructuralError("GlobalAvgPool: need NCHW input");
  in_shape_ = x.shape;
  const int n = int(x.dim(0)), c = int(x.dim(1));
  const int64_t plane = x.dim(2) * x.dim(3);
  Tensor out({n, c});
  for (int i = 0; i < n; ++i) {
    for (int ch = 0; ch < c; ++ch) {
      const float* s = x.ptr() + x.idx4(i, ch, 0, 0);
      double acc = 0;
      for (int64_t j = 0; j < plane; ++j) acc += s[j];
      out.at2(i, ch) = float(acc / double(plane));
    }
  }
  return out;
}

Tensor GlobalAvgPool::backward(const Tensor& dy) {
  Tensor dx(in_shape_);
  const int n = int(in_shape_[0]), c = int(in_shape_[1]);
  const int64_t plane = in_shape_[2] * in_shape_[3];
  const float inv = 1.f / float(plane);
  for (int i = 0; i < n; ++i) {
    for (int ch = 0; ch < c; ++ch) {
      float* d = dx.ptr() + dx.idx4(i, ch, 0, 0);
      const float g = dy.at2(i, ch) * inv;
      for (int64_t j = 0; j < plane; ++j) d[j] = g;
    }
  }
  return dx;
}

Tensor AvgPool2d::forward(const Tensor& x) {
  if (x.ndim() != 4) throw StructuralError("AvgPool2d: need NCHW input");
  const int h = int(x.dim(2)), w = int(x.dim(3));
  const int k = std::min({k_, h, w});
  if (h % k != 0 || w % k != 0) {
    throw StructuralError("AvgPool2d: spatial dims must divide pool size");
  }
  in_shape_ = x.shape;
  const int n = int(x.dim(0)), c = int(x.dim(1));
  const int oh = h / k, ow = w / k;
  Tensor out({n, c, oh, ow});
  const float inv = 1.f / float(k * k);
  for (int i = 0; i < n; ++i) {
    for (int ch = 0; ch < c; ++ch) {
      const float* s = x.ptr() + x.idx4(i, ch, 0, 0);
      float* o = out.ptr() + out.idx4(i, ch, 0, 0);
      for (int y = 0; y < oh; ++y) {
        for (int z = 0; z < ow; ++z) {
          float acc = 0;
          for (int dy_ = 0; dy_ < k; ++dy_) {
            for (int dz = 0; dz < k; ++dz) acc += s[(y * k + dy_) * w + z * k + dz];
          }
          o[y * ow + z] = acc * inv;
        }
      }
    }
  }
  return out;
}

Tensor AvgPool2d::backward(const Tensor& dy) {
  Tensor dx(in_shape_);
  const int h = int(in_shape_[2]), w = int(in_shape_[3]);
  const int k = std::min({k_, h, w});
  const int n = int(in_shape_[0]), c = int(in_shape_[1]);
  const int oh = h / k, ow = w / k;
  const float inv = 1.f / float(k * k);
  for (int i = 0; i < n; ++i) {
    for (int ch = 0; ch < c; ++ch) {
      const float* g = dy.ptr() + dy.idx4(i, ch, 0, 0);
      float* d = dx.ptr() + dx.idx4(i, ch, 0, 0);
      for (int y = 0; y < oh; ++y) {
        for (int z = 0; z < ow; ++z) {
          const float v = g[y * ow + z] * inv;
          for (int dy_ = 0; dy_ < k; ++dy_) {
            for (int dz = 0; dz < k; ++dz) d[(y * k + dy_) * w + z * k + dz] = v;
          }
        }
      }
    }
  }
  return dx;
}

}  // namespace sgad
