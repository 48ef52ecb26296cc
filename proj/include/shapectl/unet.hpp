#pragma once

// The toy denoising UNet: three encoder blocks (c1/c2/c3), a middle block,
// and a mirrored decoder fed by skip connections. The encoder+middle is
// factored out so the adapter can own a trainable copy of it. Conditioning
// (timestep + class set) enters every block as a per-sample bias.

#include <array>

#include "shapectl/modules.hpp"

namespace shapectl::nn {

struct UNetConfig {
  int in_ch = 1;
  int c1 = 16, c2 = 32, c3 = 64;
  int emb_dim = 64;
  int groups = 8;
  int num_classes = 6;  // class-embedding table has one extra null token
  int canvas = 32;
};

// conv-gn-silu, +emb projection, conv-gn-silu
class ConvBlock {
 public:
  ConvBlock() = default;
  ConvBlock(int in_ch, int out_ch, int emb_dim, int groups, DType dt,
            RngStream& rng);
  Tensor forward(const Tensor& x, const Tensor& emb) const;
  void collect(const std::string& prefix, std::vector<ParamRef>& out);

  Conv2d conv1, conv2;
  GroupNorm gn1, gn2;
  Linear emb_proj;
};

class Downsample {
 public:
  Downsample() = default;
  Downsample(int in_ch, int out_ch, DType dt, RngStream& rng);
  Tensor forward(const Tensor& x) const { return conv.forward(x); }
  void collect(const std::string& prefix, std::vector<ParamRef>& out);
  Conv2d conv;  // 3x3 stride 2
};

class Upsample {
 public:
  Upsample() = default;
  Upsample(int in_ch, int out_ch, DType dt, RngStream& rng);
  Tensor forward(const Tensor& x) const {
    return conv.forward(upsample_nearest2(x));
  }
  void collect(const std::string& prefix, std::vector<ParamRef>& out);
  Conv2d conv;
};

// Sinusoidal timestep features -> MLP, plus label-set embedding. Labels are
// summarized by averaging class-embedding rows through a weight matrix, so a
// sample may carry several labels or the null token.
class TimeClassEmbed {
 public:
  TimeClassEmbed() = default;
  TimeClassEmbed(int emb_dim, int num_classes, DType dt, RngStream& rng);

  // label_weights: [B, num_classes+1] rows summing to 1 (or a null one-hot)
  Tensor forward(const std::vector<int>& t_steps, const Tensor& label_weights,
                 int T) const;
  void collect(const std::string& prefix, std::vector<ParamRef>& out);

  Linear t1, t2;
  Embedding class_table;
  int emb_dim = 0;
  int num_classes = 0;
};

// Rows for TimeClassEmbed: each sample's labels averaged; dropped samples
// get the null-token one-hot.
Tensor make_label_weights(const std::vector<std::vector<int>>& labels,
                          const std::vector<bool>& dropped, int num_classes,
                          DType dt);

struct UNetFeats {
  Tensor s1, s2, s3, mid;
};

class UNetEncoder {
 public:
  UNetEncoder() = default;
  UNetEncoder(const UNetConfig& cfg, DType dt, RngStream& rng);
  UNetFeats encode(const Tensor& x, const Tensor& emb) const;
  void collect(const std::string& prefix, std::vector<ParamRef>& out);

  ConvBlock enc1, enc2, enc3, mid_block;
  Downsample down1, down2;
};

class UNet {
 public:
  UNet() = default;
  UNet(const UNetConfig& cfg, DType dt, RngStream& rng);

  Tensor embed(const std::vector<int>& t_steps, const Tensor& label_weights) const {
    return time_class.forward(t_steps, label_weights, time_scale);
  }
  UNetFeats encode(const Tensor& x, const Tensor& emb) const {
    return encoder.encode(x, emb);
  }
  Tensor decode(const UNetFeats& f, const Tensor& emb) const;
  // eps prediction; `residuals` (adapter features) are injected into the
  // skip connections and middle with strength lambda when present.
  Tensor forward(const Tensor& x, const Tensor& emb,
                 const UNetFeats* residuals = nullptr, double lambda = 1.0,
                 bool skip_zero_inject = false) const;
  void collect(const std::string& prefix, std::vector<ParamRef>& out);

  UNetConfig cfg;
  int time_scale = 200;  // timestep normalization for the sinusoidal features
  TimeClassEmbed time_class;
  UNetEncoder encoder;
  ConvBlock dec3, dec2, dec1;
  Upsample up2, up1;
  Conv2d out_conv;
};

// Copies tensor data between identically-shaped param lists (by position;
// names must agree apart from the prefix).
void copy_param_data(const std::vector<ParamRef>& src,
                     const std::vector<ParamRef>& dst);
// SHA-256 over the raw little-endian f32/f64 bytes of all tensors, in order.
std::string params_content_hash(const std::vector<ParamRef>& params);

}  // namespace shapectl::nn
