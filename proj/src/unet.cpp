#include "shapectl/unet.hpp"

#include <cmath>

#include "shapectl/errors.hpp"
#include "shapectl/sha256.hpp"

namespace shapectl::nn {

ConvBlock::ConvBlock(int in_ch, int out_ch, int emb_dim, int groups, DType dt,
                     RngStream& rng)
    : conv1(in_ch, out_ch, 3, 1, 1, dt, rng),
      conv2(out_ch, out_ch, 3, 1, 1, dt, rng),
      gn1(out_ch, std::min(groups, out_ch), dt),
      gn2(out_ch, std::min(groups, out_ch), dt),
      emb_proj(emb_dim, out_ch, dt, rng) {}

Tensor ConvBlock::forward(const Tensor& x, const Tensor& emb) const {
  Tensor h = silu(gn1.forward(conv1.forward(x)));
  h = bias_add_rows(h, emb_proj.forward(silu(emb)));
  h = silu(gn2.forward(conv2.forward(h)));
  return h;
}

void ConvBlock::collect(const std::string& prefix, std::vector<ParamRef>& out) {
  conv1.collect(prefix + ".conv1", out);
  gn1.collect(prefix + ".gn1", out);
  emb_proj.collect(prefix + ".emb_proj", out);
  conv2.collect(prefix + ".conv2", out);
  gn2.collect(prefix + ".gn2", out);
}

Downsample::Downsample(int in_ch, int out_ch, DType dt, RngStream& rng)
    : conv(in_ch, out_ch, 3, 2, 1, dt, rng) {}

void Downsample::collect(const std::string& prefix, std::vector<ParamRef>& out) {
  conv.collect(prefix + ".conv", out);
}

Upsample::Upsample(int in_ch, int out_ch, DType dt, RngStream& rng)
    : conv(in_ch, out_ch, 3, 1, 1, dt, rng) {}

void Upsample::collect(const std::string& prefix, std::vector<ParamRef>& out) {
  conv.collect(prefix + ".conv", out);
}

TimeClassEmbed::TimeClassEmbed(int emb_dim_, int num_classes_, DType dt,
                               RngStream& rng)
    : t1(emb_dim_, emb_dim_, dt, rng),
      t2(emb_dim_, emb_dim_, dt, rng),
      class_table(num_classes_ + 1, emb_dim_, dt, rng),
      emb_dim(emb_dim_),
      num_classes(num_classes_) {}

namespace {

Tensor sinusoidal_time_features(const std::vector<int>& t_steps, int dim, int T,
                                DType dt) {
  int B = static_cast<int>(t_steps.size());
  int half = dim / 2;
  Tensor out = Tensor::zeros({B, dim}, dt);
  for (int b = 0; b < B; ++b) {
    double t = static_cast<double>(t_steps[static_cast<std::size_t>(b)]) /
               static_cast<double>(T);
    for (int i = 0; i < half; ++i) {
      double freq = std::exp(-std::log(10000.0) * i / half);
      double arg = t * 1000.0 * freq;
      out.set(static_cast<std::int64_t>(b) * dim + i, std::sin(arg));
      out.set(static_cast<std::int64_t>(b) * dim + half + i, std::cos(arg));
    }
  }
  return out;
}

}  // namespace

Tensor TimeClassEmbed::forward(const std::vector<int>& t_steps,
                               const Tensor& label_weights, int T) const {
  Tensor tf = sinusoidal_time_features(t_steps, emb_dim, T, t1.w.dtype());
  Tensor te = t2.forward(silu(t1.forward(tf)));
  Tensor ce = matmul(label_weights, class_table.table);
  return add(te, ce);
}

void TimeClassEmbed::collect(const std::string& prefix,
                             std::vector<ParamRef>& out) {
  t1.collect(prefix + ".t1", out);
  t2.collect(prefix + ".t2", out);
  class_table.collect(prefix + ".class_table", out);
}

Tensor make_label_weights(const std::vector<std::vector<int>>& labels,
                          const std::vector<bool>& dropped, int num_classes,
                          DType dt) {
  int B = static_cast<int>(labels.size());
  int V = num_classes + 1;
  Tensor w = Tensor::zeros({B, V}, dt);
  for (int b = 0; b < B; ++b) {
    if (dropped[static_cast<std::size_t>(b)] ||
        labels[static_cast<std::size_t>(b)].empty()) {
      w.set(static_cast<std::int64_t>(b) * V + num_classes, 1.0);
      continue;
    }
    const auto& ls = labels[static_cast<std::size_t>(b)];
    double share = 1.0 / static_cast<double>(ls.size());
    for (int cls : ls) {
      if (cls < 0 || cls >= num_classes)
        throw InvariantError("make_label_weights: class id out of range");
      std::int64_t at = static_cast<std::int64_t>(b) * V + cls;
      w.set(at, w.at(at) + share);
    }
  }
  return w;
}

UNetEncoder::UNetEncoder(const UNetConfig& cfg, DType dt, RngStream& rng)
    : enc1(cfg.in_ch, cfg.c1, cfg.emb_dim, cfg.groups, dt, rng),
      enc2(cfg.c2, cfg.c2, cfg.emb_dim, cfg.groups, dt, rng),
      enc3(cfg.c3, cfg.c3, cfg.emb_dim, cfg.groups, dt, rng),
      mid_block(cfg.c3, cfg.c3, cfg.emb_dim, cfg.groups, dt, rng),
      down1(cfg.c1, cfg.c2, dt, rng),
      down2(cfg.c2, cfg.c3, dt, rng) {}

UNetFeats UNetEncoder::encode(const Tensor& x, const Tensor& emb) const {
  UNetFeats f;
  f.s1 = enc1.forward(x, emb);
  f.s2 = enc2.forward(down1.forward(f.s1), emb);
  f.s3 = enc3.forward(down2.forward(f.s2), emb);
  f.mid = mid_block.forward(f.s3, emb);
  return f;
}

void UNetEncoder::collect(const std::string& prefix, std::vector<ParamRef>& out) {
  enc1.collect(prefix + ".enc1", out);
  down1.collect(prefix + ".down1", out);
  enc2.collect(prefix + ".enc2", out);
  down2.collect(prefix + ".down2", out);
  enc3.collect(prefix + ".enc3", out);
  mid_block.collect(prefix + ".mid", out);
}

UNet::UNet(const UNetConfig& cfg_, DType dt, RngStream& rng)
    : cfg(cfg_),
      time_class(cfg_.emb_dim, cfg_.num_classes, dt, rng),
      encoder(cfg_, dt, rng),
      dec3(2 * cfg_.c3, cfg_.c3, cfg_.emb_dim, cfg_.groups, dt, rng),
      dec2(2 * cfg_.c2, cfg_.c2, cfg_.emb_dim, cfg_.groups, dt, rng),
      dec1(2 * cfg_.c1, cfg_.c1, cfg_.emb_dim, cfg_.groups, dt, rng),
      up2(cfg_.c3, cfg_.c2, dt, rng),
      up1(cfg_.c2, cfg_.c1, dt, rng),
      out_conv(cfg_.c1, cfg_.in_ch, 3, 1, 1, dt, rng, /*zero_init=*/true) {}

Tensor UNet::decode(const UNetFeats& f, const Tensor& emb) const {
  Tensor h = dec3.forward(concat_channels(f.mid, f.s3), emb);
  h = dec2.forward(concat_channels(up2.forward(h), f.s2), emb);
  h = dec1.forward(concat_channels(up1.forward(h), f.s1), emb);
  return out_conv.forward(h);
}

Tensor UNet::forward(const Tensor& x, const Tensor& emb,
                     const UNetFeats* residuals, double lambda,
                     bool skip_zero_inject) const {
  UNetFeats f = encoder.encode(x, emb);
  if (residuals != nullptr && lambda != 0.0) {
    f.s1 = residual_inject(f.s1, residuals->s1, lambda, skip_zero_inject);
    f.s2 = residual_inject(f.s2, residuals->s2, lambda, skip_zero_inject);
    f.s3 = residual_inject(f.s3, residuals->s3, lambda, skip_zero_inject);
    f.mid = residual_inject(f.mid, residuals->mid, lambda, skip_zero_inject);
  }
  return decode(f, emb);
}

void UNet::collect(const std::string& prefix, std::vector<ParamRef>& out) {
  time_class.collect(prefix + ".embed", out);
  encoder.collect(prefix + ".encoder", out);
  dec3.collect(prefix + ".dec3", out);
  up2.collect(prefix + ".up2", out);
  dec2.collect(prefix + ".dec2", out);
  up1.collect(prefix + ".up1", out);
  dec1.collect(prefix + ".dec1", out);
  out_conv.collect(prefix + ".out_conv", out);
}

void copy_param_data(const std::vector<ParamRef>& src,
                     const std::vector<ParamRef>& dst) {
  if (src.size() != dst.size())
    throw InvariantError("copy_param_data: param count mismatch");
  for (std::size_t i = 0; i < src.size(); ++i) {
    const Tensor& s = src[i].tensor;
    const Tensor& d = dst[i].tensor;
    if (s.shape() != d.shape() || s.dtype() != d.dtype())
      throw InvariantError("copy_param_data: tensor mismatch at " + src[i].name);
    for (std::int64_t j = 0; j < s.numel(); ++j)
      const_cast<Tensor&>(d).set(j, s.at(j));
  }
}

std::string params_content_hash(const std::vector<ParamRef>& params) {
  Sha256 h;
  for (const auto& p : params) {
    const Tensor& t = p.tensor;
    h.update(p.name.data(), p.name.size());
    if (t.dtype() == DType::kF32)
      h.update(t.f32(), static_cast<std::size_t>(t.numel()) * sizeof(float));
    else
      h.update(t.f64(), static_cast<std::size_t>(t.numel()) * sizeof(double));
  }
  return h.hex_digest();
}

}  // namespace shapectl::nn
