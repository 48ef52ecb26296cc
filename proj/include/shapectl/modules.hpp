#pragma once

// Layer modules: thin param holders over the ops. Construction records the
// initializer in init_spec. Zero convolutions are exactly zero at init
// (weights and bias), which is what makes a freshly attached adapter
// transparent.

#include <string>
#include <vector>

#include "shapectl/ops.hpp"
#include "shapectl/rng.hpp"
#include "shapectl/tensor.hpp"

namespace shapectl::nn {

struct ParamRef {
  std::string name;
  Tensor tensor;
  bool is_buffer = false;  // buffers: saved state, never optimized
};

void kaiming_uniform_fill(Tensor& t, int fan_in, RngStream& rng);
void normal_fill(Tensor& t, double stddev, RngStream& rng);

class Conv2d {
 public:
  Conv2d() = default;
  Conv2d(int in_ch, int out_ch, int ksize, int stride, int pad, DType dt,
         RngStream& rng, bool zero_init = false);

  Tensor forward(const Tensor& x) const { return conv2d(x, w, b, stride, pad); }
  void collect(const std::string& prefix, std::vector<ParamRef>& out);

  Tensor w, b;
  int stride = 1, pad = 0;
  std::string init_spec;
};

// 1x1 convolution with weights and bias exactly zero at construction.
class ZeroConv1x1 {
 public:
  ZeroConv1x1() = default;
  ZeroConv1x1(int in_ch, int out_ch, DType dt);

  Tensor forward(const Tensor& x) const { return conv2d(x, w, b, 1, 0); }
  // Shape-prior modulated variant: per-output-channel scale applied between
  // the (bias-free) convolution and the bias. For a 1x1 conv this equals
  // convolving with (1+dW)*w, per sample. scale_bc is [B,out_ch].
  Tensor forward_modulated(const Tensor& x, const Tensor& scale_bc) const;
  void collect(const std::string& prefix, std::vector<ParamRef>& out);

  Tensor w, b;
  std::string init_spec;
};

class Linear {
 public:
  Linear() = default;
  Linear(int in_f, int out_f, DType dt, RngStream& rng, bool zero_init = false);

  Tensor forward(const Tensor& x) const { return linear(x, w, b); }
  void collect(const std::string& prefix, std::vector<ParamRef>& out);

  Tensor w, b;
  std::string init_spec;
};

class GroupNorm {
 public:
  GroupNorm() = default;
  GroupNorm(int channels, int groups, DType dt);

  Tensor forward(const Tensor& x) const {
    return group_norm(x, groups, gamma, beta);
  }
  void collect(const std::string& prefix, std::vector<ParamRef>& out);

  Tensor gamma, beta;
  int groups = 1;
};

class BatchNorm {
 public:
  BatchNorm() = default;
  BatchNorm(int channels, DType dt);

  // training=false uses frozen running statistics
  Tensor forward(const Tensor& x, bool training) const {
    return batch_norm(x, gamma, beta, running_mean, running_var, training);
  }
  void collect(const std::string& prefix, std::vector<ParamRef>& out);

  Tensor gamma, beta;
  Tensor running_mean, running_var;
};

class Embedding {
 public:
  Embedding() = default;
  Embedding(int vocab, int dim, DType dt, RngStream& rng);

  Tensor forward(const std::vector<int>& idx) const {
    return embedding(table, idx);
  }
  void collect(const std::string& prefix, std::vector<ParamRef>& out);

  Tensor table;
  std::string init_spec;
};

// Trainable (non-buffer) tensors from a collected list.
std::vector<Tensor> trainable(const std::vector<ParamRef>& params);

}  // namespace shapectl::nn
