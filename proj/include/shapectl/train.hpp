#pragma once

// Training loops for the three stages: base model (unconditional +
// class-conditional with prompt dropout), adapter (vanilla or shape-aware),
// and the deterioration estimator (L2, everything else frozen).

#include "shapectl/diffusion.hpp"
#include "shapectl/synth.hpp"

namespace shapectl::train {

struct StageOpts {
  int epochs = 10;
  int batch = 16;
  double lr = 2e-3;
  double prompt_dropout = 0.5;
};

struct AdapterStageOpts : StageOpts {
  bool vanilla_r0 = false;  // true: train on precise masks only (r = 0)
  synth::ConditionImage::Kind condition_kind = synth::ConditionImage::Kind::kMask;
};

struct TrainReport {
  std::vector<double> step_losses;
  std::vector<double> epoch_losses;
  double initial_loss = 0.0;   // mean over the first up-to-10 steps
  double final_smoothed = 0.0; // mean over the last epoch
  int steps = 0;
};

TrainReport train_base(nn::UNet& model, const synth::Dataset& ds,
                       const diffusion::NoiseSchedule& sched,
                       const StageOpts& opts, std::uint64_t seed);

// Base params must already be frozen (requires_grad == false); verified by
// hashing theta before/after. Divergence (non-finite loss) aborts.
TrainReport train_adapter(const nn::UNet& base, adapter::AdapterBundle& bundle,
                          const synth::Dataset& ds,
                          const diffusion::NoiseSchedule& sched,
                          const AdapterStageOpts& opts, std::uint64_t seed);

TrainReport train_estimator(const nn::UNet& base,
                            adapter::AdapterBundle& bundle,
                            const synth::Dataset& ds,
                            const diffusion::NoiseSchedule& sched,
                            const AdapterStageOpts& opts, std::uint64_t seed);

void set_requires_grad(std::vector<nn::ParamRef>& params, bool value);
void freeze_model(nn::UNet& model);

struct EstimatorEval {
  std::vector<masks::Radius> radii;
  std::vector<double> mean_abs_err;   // per radius, vs Eq. 5 ground truth
  std::vector<double> mean_predicted; // per radius
  double overall_l1 = 0.0;
  double constant_baseline_l1 = 0.0;  // best constant (median of train rhos)
};

EstimatorEval evaluate_estimator(const nn::UNet& base,
                                 const adapter::AdapterBundle& bundle,
                                 const synth::Dataset& ds,
                                 const diffusion::NoiseSchedule& sched,
                                 const std::vector<masks::Radius>& radii,
                                 int max_samples);

}  // namespace shapectl::train
