#include "shapectl/adapter.hpp"

#include "shapectl/errors.hpp"

namespace shapectl::adapter {

using nn::Tensor;

HyperMlp::HyperMlp(int in_dim, int hidden, int out_dim, nn::DType dt,
                   RngStream& rng)
    : l1(in_dim, hidden, dt, rng), l2(hidden, out_dim, dt, rng, /*zero_init=*/true) {}

Tensor HyperMlp::forward(const Tensor& fourier) const {
  return l2.forward(nn::silu(l1.forward(fourier)));
}

void HyperMlp::collect(const std::string& prefix, std::vector<nn::ParamRef>& out) {
  l1.collect(prefix + ".l1", out);
  l2.collect(prefix + ".l2", out);
}

EstimatorHead::EstimatorHead(const nn::UNetConfig& cfg, nn::DType dt,
                             RngStream& rng)
    : c1(cfg.c1, 16, 3, 2, 1, dt, rng),
      c2(16 + cfg.c2, 32, 3, 2, 1, dt, rng),
      c3(32 + cfg.c3, 48, 3, 1, 1, dt, rng),
      c4(48, 48, 3, 2, 1, dt, rng),
      bn1(16, dt),
      bn2(32, dt),
      bn3(48, dt),
      bn4(48, dt),
      bn_l(24, dt),
      l1(48, 24, dt, rng),
      l2(24, 1, dt, rng) {}

Tensor EstimatorHead::forward(const Tensor& f1, const Tensor& f2,
                              const Tensor& f3, bool training) const {
  Tensor h = nn::silu(bn1.forward(c1.forward(f1), training));
  h = nn::silu(bn2.forward(c2.forward(nn::concat_channels(h, f2)), training));
  h = nn::silu(bn3.forward(c3.forward(nn::concat_channels(h, f3)), training));
  h = nn::silu(bn4.forward(c4.forward(h), training));
  Tensor v = nn::global_avg_pool(h);
  v = nn::silu(bn_l.forward(l1.forward(v), training));
  return l2.forward(v);  // [B,1]
}

void EstimatorHead::collect(const std::string& prefix,
                            std::vector<nn::ParamRef>& out) {
  c1.collect(prefix + ".c1", out);
  bn1.collect(prefix + ".bn1", out);
  c2.collect(prefix + ".c2", out);
  bn2.collect(prefix + ".bn2", out);
  c3.collect(prefix + ".c3", out);
  bn3.collect(prefix + ".bn3", out);
  c4.collect(prefix + ".c4", out);
  bn4.collect(prefix + ".bn4", out);
  l1.collect(prefix + ".l1", out);
  bn_l.collect(prefix + ".bn_l", out);
  l2.collect(prefix + ".l2", out);
}

AdapterBundle::AdapterBundle(const nn::UNet& base, const AdapterConfig& cfg_,
                             nn::DType dt, RngStream& rng)
    : cfg(cfg_),
      unet_cfg(base.cfg),
      copy_encoder(base.cfg, dt, rng),
      in_zero(1, base.cfg.in_ch, dt),
      z1(base.cfg.c1, base.cfg.c1, dt),
      z2(base.cfg.c2, base.cfg.c2, dt),
      z3(base.cfg.c3, base.cfg.c3, dt),
      zmid(base.cfg.c3, base.cfg.c3, dt),
      estimator(base.cfg, dt, rng) {
  // theta' starts as an exact copy of the frozen base encoder
  std::vector<nn::ParamRef> src, dst;
  const_cast<nn::UNet&>(base).encoder.collect("base", src);
  copy_encoder.collect("copy", dst);
  nn::copy_param_data(src, dst);

  int in_dim = 2 * cfg.n_freqs;
  auto out_dim = [&](int ch) {
    return cfg.modulation_shape == ModulationShape::kElementwise ? ch * ch : ch;
  };
  h1 = HyperMlp(in_dim, cfg.hyper_hidden, out_dim(base.cfg.c1), dt, rng);
  h2 = HyperMlp(in_dim, cfg.hyper_hidden, out_dim(base.cfg.c2), dt, rng);
  h3 = HyperMlp(in_dim, cfg.hyper_hidden, out_dim(base.cfg.c3), dt, rng);
  hmid = HyperMlp(in_dim, cfg.hyper_hidden, out_dim(base.cfg.c3), dt, rng);
}

Tensor AdapterBundle::modulated(const nn::ZeroConv1x1& z, const HyperMlp& h,
                                const Tensor& feat,
                                const std::vector<double>& rho) const {
  if (!cfg.modulation) return z.forward(feat);
  Tensor femb =
      nn::fourier_embed_batch(rho, cfg.n_freqs, z.w.dtype());
  Tensor dw = h.forward(femb);
  if (cfg.modulation_shape == ModulationShape::kPerChannel) {
    return z.forward_modulated(feat, nn::add_const(dw, 1.0));
  }
  // full elementwise dW: Z(F;(1+dW)w) = Z(F;w) + sum_c dW*w mixed per sample
  int O = z.w.dim(0), C = z.w.dim(1);
  Tensor base_out = z.forward(feat);
  Tensor w_flat = nn::reshape(z.w, {O * C});
  Tensor mix = nn::mul(dw, nn::broadcast_rows(w_flat, feat.dim(0)));
  return nn::add(base_out, nn::bmm_channel_mix(mix, feat, O));
}

nn::UNetFeats AdapterBundle::residuals(const Tensor& x, const Tensor& cond,
                                       const Tensor& emb,
                                       const std::vector<double>& rho) const {
  if (cond.dim(2) != x.dim(2) || cond.dim(3) != x.dim(3))
    throw InvariantError("adapter: condition dims " + cond.shape_str() +
                         " do not match model input " + x.shape_str());
  Tensor h = nn::add(x, in_zero.forward(cond));
  nn::UNetFeats f = copy_encoder.encode(h, emb);
  nn::UNetFeats r;
  r.s1 = modulated(z1, h1, f.s1, rho);
  r.s2 = modulated(z2, h2, f.s2, rho);
  r.s3 = modulated(z3, h3, f.s3, rho);
  r.mid = modulated(zmid, hmid, f.mid, rho);
  return r;
}

Tensor AdapterBundle::estimate_rho(const nn::UNet& base,
                                   const diffusion::NoiseSchedule& sched,
                                   const Tensor& cond,
                                   const Tensor& label_weights,
                                   bool training) const {
  int B = cond.dim(0);
  Tensor x = Tensor::zeros({B, unet_cfg.in_ch, cond.dim(2), cond.dim(3)},
                           cond.dtype());
  std::vector<int> t_subset = {sched.T / 4, sched.T / 2, (3 * sched.T) / 4};
  Tensor f1, f2, f3;
  {
    // encoder features are estimator input only; gradients stay detached
    nn::NoGradScope no_grad;
    Tensor h = nn::add(x, in_zero.forward(cond));
    for (std::size_t i = 0; i < t_subset.size(); ++i) {
      std::vector<int> tv(static_cast<std::size_t>(B), t_subset[i]);
      Tensor emb = base.embed(tv, label_weights);
      nn::UNetFeats f = copy_encoder.encode(h, emb);
      if (i == 0) {
        f1 = f.s1;
        f2 = f.s2;
        f3 = f.s3;
      } else {
        f1 = nn::add(f1, f.s1);
        f2 = nn::add(f2, f.s2);
        f3 = nn::add(f3, f.s3);
      }
    }
    double inv = 1.0 / static_cast<double>(t_subset.size());
    f1 = nn::scale(f1, inv);
    f2 = nn::scale(f2, inv);
    f3 = nn::scale(f3, inv);
  }
  return estimator.forward(f1.detach(), f2.detach(), f3.detach(), training);
}

double AdapterBundle::estimate_rho_scalar(const nn::UNet& base,
                                          const diffusion::NoiseSchedule& sched,
                                          const synth::ConditionImage& cond,
                                          const std::vector<int>& labels) const {
  nn::NoGradScope no_grad;
  Tensor c = synth::render_condition(cond);
  Tensor cb = nn::reshape(c, {1, 1, c.dim(1), c.dim(2)});
  Tensor lw = nn::make_label_weights({labels}, {false}, unet_cfg.num_classes,
                                     cb.dtype());
  Tensor rho = estimate_rho(base, sched, cb, lw, /*training=*/false);
  return rho.at(0);
}

void AdapterBundle::collect(const std::string& prefix,
                            std::vector<nn::ParamRef>& out) {
  copy_encoder.collect(prefix + ".copy", out);
  in_zero.collect(prefix + ".in_zero", out);
  z1.collect(prefix + ".z1", out);
  z2.collect(prefix + ".z2", out);
  z3.collect(prefix + ".z3", out);
  zmid.collect(prefix + ".zmid", out);
  h1.collect(prefix + ".h1", out);
  h2.collect(prefix + ".h2", out);
  h3.collect(prefix + ".h3", out);
  hmid.collect(prefix + ".hmid", out);
  estimator.collect(prefix + ".estimator", out);
}

std::vector<nn::ParamRef> AdapterBundle::adapter_params() {
  std::vector<nn::ParamRef> out;
  copy_encoder.collect("adapter.copy", out);
  in_zero.collect("adapter.in_zero", out);
  z1.collect("adapter.z1", out);
  z2.collect("adapter.z2", out);
  z3.collect("adapter.z3", out);
  zmid.collect("adapter.zmid", out);
  h1.collect("adapter.h1", out);
  h2.collect("adapter.h2", out);
  h3.collect("adapter.h3", out);
  hmid.collect("adapter.hmid", out);
  return out;
}

std::vector<nn::ParamRef> AdapterBundle::estimator_params() {
  std::vector<nn::ParamRef> out;
  estimator.collect("estimator", out);
  return out;
}

std::optional<nn::UNetFeats> compose(const std::vector<AdapterUse>& adapters,
                                     const Tensor& x, const Tensor& emb) {
  std::optional<nn::UNetFeats> combined;
  for (const auto& use : adapters) {
    if (use.bundle == nullptr || use.lambda == 0.0) continue;
    std::vector<double> rho(static_cast<std::size_t>(x.dim(0)), use.rho);
    nn::UNetFeats r = use.bundle->residuals(x, use.cond, emb, rho);
    if (!combined) {
      combined = nn::UNetFeats{};
      combined->s1 = nn::scale(r.s1, use.lambda);
      combined->s2 = nn::scale(r.s2, use.lambda);
      combined->s3 = nn::scale(r.s3, use.lambda);
      combined->mid = nn::scale(r.mid, use.lambda);
    } else {
      combined->s1 = nn::add_scaled(combined->s1, r.s1, use.lambda);
      combined->s2 = nn::add_scaled(combined->s2, r.s2, use.lambda);
      combined->s3 = nn::add_scaled(combined->s3, r.s3, use.lambda);
      combined->mid = nn::add_scaled(combined->mid, r.mid, use.lambda);
    }
  }
  return combined;
}

}  // namespace shapectl::adapter
