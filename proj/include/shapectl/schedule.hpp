#pragma once

// DDPM noise schedule and sampler configuration.

#include <array>
#include <cstdint>
#include <string>
#include <vector>

namespace shapectl::diffusion {

struct NoiseSchedule {
  int T = 0;
  std::vector<double> betas;       // 0 < beta_t < 1, increasing
  std::vector<double> alphas;      // 1 - beta_t
  std::vector<double> alpha_bars;  // cumulative product, strictly decreasing

  // Linear betas from beta_start to beta_end over T steps.
  static NoiseSchedule linear(int T, double beta_start, double beta_end);
  void validate() const;  // throws InvariantError on any broken invariant
};

enum class SamplerKind { kDdpm, kDdim };

struct SamplerConfig {
  double cfg_scale = 3.0;          // omega
  double conditioning_scale = 1.0; // lambda, >= 0
  int steps = 50;
  std::array<bool, 10> injection_gates{true, true, true, true, true,
                                       true, true, true, true, true};
  SamplerKind sampler = SamplerKind::kDdim;
  std::uint64_t seed = 0;

  void validate() const;
  // Stage of sampling step i out of n (ten stages over the reverse pass;
  // stage 0 covers the first, highest-noise steps).
  static int stage_of_step(int i, int n_steps);
  bool gate_open(int i, int n_steps) const {
    return injection_gates[static_cast<std::size_t>(stage_of_step(i, n_steps))];
  }
};

}  // namespace shapectl::diffusion
