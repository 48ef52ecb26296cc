#pragma once

// ControlNet-style adapter around the toy UNet: a trainable copy of the
// encoder+middle, an input zero conv that injects the spatial condition,
// one output zero conv per injected feature, and a per-zero-conv
// hypernetwork that turns the deterioration ratio into a (1+dW) scale on
// the zero-conv weights. For 1x1 convolutions the per-output-channel
// modulation commutes with the convolution, so it is applied as a
// per-sample channel scale between the conv and its bias.
//
// Also houses the deterioration estimator: Conv+BN+SiLU units fused across
// the copy-encoder feature pyramid, then Linear+BN units to a scalar. The
// estimator only ever sees gradient-detached encoder features.

#include <functional>
#include <optional>

#include "shapectl/schedule.hpp"
#include "shapectl/synth.hpp"
#include "shapectl/unet.hpp"

namespace shapectl::adapter {

enum class ModulationShape { kPerChannel, kElementwise };

struct AdapterConfig {
  int n_freqs = 8;       // Fourier embedding size knob (2*n_freqs features)
  int hyper_hidden = 32;
  bool modulation = true;  // false: vanilla adapter, no shape-prior block
  ModulationShape modulation_shape = ModulationShape::kPerChannel;
};

// Two-layer MLP with SiLU; output layer zero-initialized so dW=H(rho)=0 at
// construction and the modulated zero conv equals the plain one.
class HyperMlp {
 public:
  HyperMlp() = default;
  HyperMlp(int in_dim, int hidden, int out_dim, nn::DType dt, RngStream& rng);
  nn::Tensor forward(const nn::Tensor& fourier) const;  // [B,2nf] -> [B,out]
  void collect(const std::string& prefix, std::vector<nn::ParamRef>& out);
  nn::Linear l1, l2;
};

class EstimatorHead {
 public:
  EstimatorHead() = default;
  EstimatorHead(const nn::UNetConfig& cfg, nn::DType dt, RngStream& rng);
  // feats must already be detached; training toggles BatchNorm mode
  nn::Tensor forward(const nn::Tensor& f1, const nn::Tensor& f2,
                     const nn::Tensor& f3, bool training) const;
  void collect(const std::string& prefix, std::vector<nn::ParamRef>& out);

  nn::Conv2d c1, c2, c3, c4;
  nn::BatchNorm bn1, bn2, bn3, bn4, bn_l;
  nn::Linear l1, l2;
};

class AdapterBundle {
 public:
  AdapterBundle() = default;
  // The trainable copy is initialized from the base encoder's params.
  AdapterBundle(const nn::UNet& base, const AdapterConfig& cfg, nn::DType dt,
                RngStream& rng);

  // Residual features Z_mod(F(x + Z(c;w1); theta')) for each injected
  // feature, per Eq. 1 with Eq. 6 modulation. rho is per batch sample.
  nn::UNetFeats residuals(const nn::Tensor& x, const nn::Tensor& cond,
                          const nn::Tensor& emb,
                          const std::vector<double>& rho) const;

  // Spatially-pooled copy-encoder features at the fixed timestep subset
  // {T/4, T/2, 3T/4}, averaged, over a neutral (zero) latent; detached, then
  // passed through the estimator head. Returns [B,1] rho-hat.
  nn::Tensor estimate_rho(const nn::UNet& base,
                          const diffusion::NoiseSchedule& sched,
                          const nn::Tensor& cond,
                          const nn::Tensor& label_weights,
                          bool training) const;
  double estimate_rho_scalar(const nn::UNet& base,
                             const diffusion::NoiseSchedule& sched,
                             const synth::ConditionImage& cond,
                             const std::vector<int>& labels) const;

  void collect(const std::string& prefix, std::vector<nn::ParamRef>& out);
  std::vector<nn::ParamRef> adapter_params();    // theta', zero convs, H
  std::vector<nn::ParamRef> estimator_params();  // estimator only

  AdapterConfig cfg;
  nn::UNetConfig unet_cfg;
  nn::UNetEncoder copy_encoder;          // theta'
  nn::ZeroConv1x1 in_zero;               // w1
  nn::ZeroConv1x1 z1, z2, z3, zmid;      // w2 per injected encoder feature
  HyperMlp h1, h2, h3, hmid;             // dW = H(fourier(rho)) per zero conv
  EstimatorHead estimator;

 private:
  nn::Tensor modulated(const nn::ZeroConv1x1& z, const HyperMlp& h,
                       const nn::Tensor& feat,
                       const std::vector<double>& rho) const;
};

// One entry per adapter for composed generation; residuals are summed with
// per-adapter conditioning scale and per-adapter rho.
struct AdapterUse {
  const AdapterBundle* bundle = nullptr;
  nn::Tensor cond;     // [B,1,H,W]
  double rho = 0.0;
  double lambda = 1.0;
};

// Summed lambda-weighted residuals ("features are additive"); adapters with
// lambda == 0 are skipped entirely. Returns nullopt when nothing injects.
std::optional<nn::UNetFeats> compose(const std::vector<AdapterUse>& adapters,
                                     const nn::Tensor& x,
                                     const nn::Tensor& emb);

}  // namespace shapectl::adapter
