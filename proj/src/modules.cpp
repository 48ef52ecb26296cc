#include "shapectl/modules.hpp"

#include <cmath>

#include "shapectl/errors.hpp"

namespace shapectl::nn {

void kaiming_uniform_fill(Tensor& t, int fan_in, RngStream& rng) {
  double bound = std::sqrt(6.0 / static_cast<double>(fan_in));
  for (std::int64_t i = 0; i < t.numel(); ++i)
    t.set(i, rng.uniform(-bound, bound));
}

void normal_fill(Tensor& t, double stddev, RngStream& rng) {
  for (std::int64_t i = 0; i < t.numel(); ++i) t.set(i, stddev * rng.normal());
}

Conv2d::Conv2d(int in_ch, int out_ch, int ksize, int stride_, int pad_,
               DType dt, RngStream& rng, bool zero_init)
    : stride(stride_), pad(pad_) {
  w = Tensor::zeros({out_ch, in_ch, ksize, ksize}, dt, true);
  b = Tensor::zeros({out_ch}, dt, true);
  if (zero_init) {
    init_spec = "zeros";
  } else {
    int fan_in = in_ch * ksize * ksize;
    kaiming_uniform_fill(w, fan_in, rng);
    init_spec = "kaiming_uniform(fan_in=" + std::to_string(fan_in) + ")";
  }
}

void Conv2d::collect(const std::string& prefix, std::vector<ParamRef>& out) {
  out.push_back({prefix + ".w", w, false});
  out.push_back({prefix + ".b", b, false});
}

ZeroConv1x1::ZeroConv1x1(int in_ch, int out_ch, DType dt) {
  w = Tensor::zeros({out_ch, in_ch, 1, 1}, dt, true);
  b = Tensor::zeros({out_ch}, dt, true);
  init_spec = "zeros";
}

Tensor ZeroConv1x1::forward_modulated(const Tensor& x,
                                      const Tensor& scale_bc) const {
  Tensor zero_bias = Tensor::zeros({w.dim(0)}, w.dtype());
  Tensor y = conv2d(x, w, zero_bias, 1, 0);
  y = channel_scale(y, scale_bc);
  return bias_add_rows(y, b);
}

void ZeroConv1x1::collect(const std::string& prefix, std::vector<ParamRef>& out) {
  out.push_back({prefix + ".w", w, false});
  out.push_back({prefix + ".b", b, false});
}

Linear::Linear(int in_f, int out_f, DType dt, RngStream& rng, bool zero_init) {
  w = Tensor::zeros({out_f, in_f}, dt, true);
  b = Tensor::zeros({out_f}, dt, true);
  if (zero_init) {
    init_spec = "zeros";
  } else {
    kaiming_uniform_fill(w, in_f, rng);
    init_spec = "kaiming_uniform(fan_in=" + std::to_string(in_f) + ")";
  }
}

void Linear::collect(const std::string& prefix, std::vector<ParamRef>& out) {
  out.push_back({prefix + ".w", w, false});
  out.push_back({prefix + ".b", b, false});
}

GroupNorm::GroupNorm(int channels, int groups_, DType dt) : groups(groups_) {
  if (channels % groups != 0)
    throw InvariantError("GroupNorm: channels must divide into groups");
  gamma = Tensor::full({channels}, 1.0, dt, true);
  beta = Tensor::zeros({channels}, dt, true);
}

void GroupNorm::collect(const std::string& prefix, std::vector<ParamRef>& out) {
  out.push_back({prefix + ".gamma", gamma, false});
  out.push_back({prefix + ".beta", beta, false});
}

BatchNorm::BatchNorm(int channels, DType dt) {
  gamma = Tensor::full({channels}, 1.0, dt, true);
  beta = Tensor::zeros({channels}, dt, true);
  running_mean = Tensor::zeros({channels}, dt, false);
  running_var = Tensor::full({channels}, 1.0, dt, false);
}

void BatchNorm::collect(const std::string& prefix, std::vector<ParamRef>& out) {
  out.push_back({prefix + ".gamma", gamma, false});
  out.push_back({prefix + ".beta", beta, false});
  out.push_back({prefix + ".running_mean", running_mean, true});
  out.push_back({prefix + ".running_var", running_var, true});
}

Embedding::Embedding(int vocab, int dim, DType dt, RngStream& rng) {
  table = Tensor::zeros({vocab, dim}, dt, true);
  normal_fill(table, 0.1, rng);
  init_spec = "normal(std=0.1)";
}

void Embedding::collect(const std::string& prefix, std::vector<ParamRef>& out) {
  out.push_back({prefix + ".table", table, false});
}

std::vector<Tensor> trainable(const std::vector<ParamRef>& params) {
  std::vector<Tensor> out;
  for (const auto& p : params)
    if (!p.is_buffer) out.push_back(p.tensor);
  return out;
}

}  // namespace shapectl::nn
