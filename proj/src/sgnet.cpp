#include "sgad/sgnet.hpp"

#include <cmath>

namespace sgad {

double MappingConfig::scale() const {
  validate();
  if (mode == MappingMode::kConsistent) {
    return -double(num_classes) * std::log(1.0 - s_max) / std::log(double(num_blocks));
  }
  return -double(num_classes) * std::log(s_max) / std::log(double(num_blocks));
}

void MappingConfig::validate() const {
  if (!(s_max > 0.0 && s_max < 1.0)) throw ConfigError("mapping: s_max must be in (0, 1)");
  if (num_blocks < 2) throw ConfigError("mapping: L must be > 1");
  if (num_classes < 2) throw ConfigError("mapping: M must be >= 2");
}

SgNet::SgNet(const SgnetConfig& cfg, int in_channels, int num_classes) : cfg_(cfg) {
  if (cfg.widths.size() != 4) throw ConfigError("sgnet: expected 4 conv widths");
  int prev = in_channels;
  const int strides[4] = {1, 2, 1, 2};
  for (int i = 0; i < 4; ++i) {
    const int w = cfg.widths[size_t(i)];
    convs_.emplace_back(prev, w, 3, strides[i], 1);
    gns_.emplace_back(w, std::min(cfg.gn_groups, w));
    prev = w;
  }
  relus_.resize(4);
  fc_ = Linear(prev, num_classes);
}

void SgNet::init_params(Rng& rng) {
  for (auto& c : convs_) c.init_params(rng);
  for (auto& g : gns_) g.init_params();
  fc_.init_params(rng);
}

Tensor SgNet::forward(const Tensor& input) {
  Tensor z = input;
  for (size_t i = 0; i < convs_.size(); ++i) {
    z = relus_[i].forward(gns_[i].forward(convs_[i].forward(z)));
  }
  return fc_.forward(gap_.forward(z));
}

void SgNet::backward(const Tensor& dlogits) {
  Tensor dz = gap_.backward(fc_.backward(dlogits));
  for (int i = int(convs_.size()) - 1; i >= 0; --i) {
    dz = convs_[size_t(i)].backward(gns_[size_t(i)].backward(relus_[size_t(i)].backward(dz)));
  }
}

void SgNet::collect_params(std::vector<ParamRef>& out) {
  for (size_t i = 0; i < convs_.size(); ++i) {
    convs_[i].collect_params(out, "sgnet.conv" + std::to_string(i));
    gns_[i].collect_params(out, "sgnet.gn" + std::to_string(i));
  }
  fc_.collect_params(out, "sgnet.fc");
}

Tensor softmax_rows(const Tensor& logits) {
  const int n = int(logits.dim(0)), m = int(logits.dim(1));
  Tensor probs(logits.shape);
  for (int i = 0; i < n; ++i) {
    const float* row = logits.ptr() + int64_t(i) * m;
    float* out = probs.ptr() + int64_t(i) * m;
    float mx = row[0];
    for (int j = 1; j < m; ++j) mx = std::max(mx, row[j]);
    double denom = 0;
    for (int j = 0; j < m; ++j) denom += std::exp(double(row[j]) - mx);
    for (int j = 0; j < m; ++j) out[j] = float(std::exp(double(row[j]) - mx) / denom);
  }
  return probs;
}

std::vector<double> soft_target_variance(const Tensor& probs) {
  const int n = int(probs.dim(0)), m = int(probs.dim(1));
  std::vector<double> var(size_t(n), 0.0);
  const double u = 1.0 / double(m);
  for (int i = 0; i < n; ++i) {
    const float* row = probs.ptr() + int64_t(i) * m;
    double acc = 0;
    for (int j = 0; j < m; ++j) {
      const double d = double(row[j]) - u;
      acc += d * d;
    }
    var[size_t(i)] = acc / double(m);
  }
  return var;
}

std::vector<double> soft_target_variance_from_logits(const Tensor& logits) {
  const int n = int(logits.dim(0)), m = int(logits.dim(1));
  std::vector<double> var(size_t(n), 0.0);
  for (int i = 0; i < n; ++i) {
    const float* row = logits.ptr() + int64_t(i) * m;
    float mx = row[0];
    for (int j = 1; j < m; ++j) mx = std::max(mx, row[j]);
    double sum1 = 0, sum2 = 0;  // sum e^(s - mx), sum e^(2(s - mx))
    for (int j = 0; j < m; ++j) {
      const double e = std::exp(double(row[j]) - mx);
      sum1 += e;
      sum2 += e * e;
    }
    var[size_t(i)] = sum2 / (double(m) * sum1 * sum1) - 1.0 / (double(m) * m);
  }
  return var;
}

double map_one_variance(double var, const MappingConfig& cfg) {
  // Probability rows keep var < 1/M (max (M-1)/M^2 at one-hot), but the
  // mapping itself is defined on the closed interval so the s_max endpoint
  // is reachable.
  const double upper = 1.0 / double(cfg.num_classes);
  if (var < 0.0 || var > upper) {
    throw DomainError("variance " + std::to_string(var) + " outside [0, 1/M]");
  }
  // 1 - L^(1 - scale*var)/L == 1 - exp(-scale*ln(L)*var)
  return 1.0 - std::exp(-cfg.scale() * std::log(double(cfg.num_blocks)) * var);
}

std::vector<double> map_variance_to_drop_ratio(const std::vector<double>& var,
                                               const MappingConfig& cfg) {
  cfg.validate();
  std::vector<double> out(var.size());
  for (size_t i = 0; i < var.size(); ++i) out[i] = map_one_variance(var[i], cfg);
  return out;
}

GuidelineBatch guideline_batch(SgNet& net, const Tensor& input, const MappingConfig& cfg) {
  GuidelineBatch gb;
  Tensor logits = net.forward(input);
  gb.softmax_probs = softmax_rows(logits);
  gb.variance = soft_target_variance(gb.softmax_probs);
  gb.expected_drop = map_variance_to_drop_ratio(gb.variance, cfg);
  return gb;
}

}  // namespace sgad
