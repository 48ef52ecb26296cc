#pragma once

// Forward process, epsilon-MSE objective, CFG combination (Eq. 2 anchored on
// the conditional branch, exactly as printed), and reverse samplers with
// ten-stage condition-injection gating. Spatial conditions are injected into
// both CFG branches.

#include <functional>

#include "shapectl/adapter.hpp"
#include "shapectl/schedule.hpp"
#include "shapectl/unet.hpp"

namespace shapectl::diffusion {

// sqrt(abar_t)*x0 + sqrt(1-abar_t)*noise, per-sample t.
nn::Tensor q_sample(const nn::Tensor& x0, const std::vector<int>& t,
                    const nn::Tensor& noise, const NoiseSchedule& sched);

struct DenoisePrediction {
  nn::Tensor eps_cond, eps_uncond, eps_guided;
};

// eps_cond + omega * (eps_cond - eps_uncond)
nn::Tensor cfg_combine(const nn::Tensor& eps_cond, const nn::Tensor& eps_uncond,
                       double omega);

using DenoiseFn = std::function<nn::Tensor(
    const nn::Tensor& x_t, const std::vector<int>& t_steps,
    const nn::Tensor& label_weights)>;

// MSE between `noise` and the model prediction at q_sample(x0,t,noise).
// Differentiable under an active tape; the (t, noise, dropout) draws live in
// the caller so a test can substitute a known-noise oracle.
nn::Tensor ddpm_loss_core(const DenoiseFn& model, const nn::Tensor& x0,
                          const NoiseSchedule& sched, const std::vector<int>& t,
                          const nn::Tensor& noise,
                          const nn::Tensor& label_weights);

struct SampleRequest {
  int batch = 1;
  int height = 32, width = 32;
  std::vector<std::vector<int>> labels;          // one label set per image
  std::vector<adapter::AdapterUse> adapters;     // conds already [B,1,H,W]
};

// Reverse diffusion; DDIM (eta=0) is deterministic given config.seed.
// Output clamped to [0,1]. Per-step gating drops all adapter injection when
// the stage gate is closed; lambda scaling lives inside AdapterUse.
nn::Tensor sample(const nn::UNet& base, const SampleRequest& req,
                  const NoiseSchedule& sched, const SamplerConfig& cfg);

// Replicates one [1,H,W] condition across a batch -> [B,1,H,W].
nn::Tensor replicate_condition(const nn::Tensor& cond, int batch);

}  // namespace shapectl::diffusion
