#include "shapectl/schedule.hpp"

#include <cmath>

#include "shapectl/errors.hpp"

namespace shapectl::diffusion {

NoiseSchedule NoiseSchedule::linear(int T, double beta_start, double beta_end) {
  if (T < 2) throw ConfigError("schedule: T must be >= 2");
  NoiseSchedule s;
  s.T = T;
  s.betas.resize(static_cast<std::size_t>(T));
  s.alphas.resize(static_cast<std::size_t>(T));
  s.alpha_bars.resize(static_cast<std::size_t>(T));
  double cum = 1.0;
  for (int t = 0; t < T; ++t) {
    double beta = beta_start + (beta_end - beta_start) * t / (T - 1);
    s.betas[static_cast<std::size_t>(t)] = beta;
    s.alphas[static_cast<std::size_t>(t)] = 1.0 - beta;
    cum *= 1.0 - beta;
    s.alpha_bars[static_cast<std::size_t>(t)] = cum;
  }
  s.validate();
  return s;
}

void NoiseSchedule::validate() const {
  if (T < 2 || betas.size() != static_cast<std::size_t>(T))
    throw InvariantError("schedule: inconsistent sizes");
  for (int t = 0; t < T; ++t) {
    double b = betas[static_cast<std::size_t>(t)];
    if (!(b > 0.0 && b < 1.0))
      throw InvariantError("schedule: beta out of (0,1) at t=" + std::to_string(t));
    if (t > 0 && b < betas[static_cast<std::size_t>(t - 1)])
      throw InvariantError("schedule: betas must be non-decreasing");
    if (t > 0 && !(alpha_bars[static_cast<std::size_t>(t)] <
                   alpha_bars[static_cast<std::size_t>(t - 1)]))
      throw InvariantError("schedule: alpha_bar must be strictly decreasing");
  }
  if (alpha_bars[0] < 0.99)
    throw InvariantError("schedule: alpha_bar_0 must be ~1");
}

void SamplerConfig::validate() const {
  if (conditioning_scale < 0.0)
    throw ConfigError("sampler: conditioning_scale must be >= 0");
  if (steps < 1) throw ConfigError("sampler: steps must be >= 1");
}

int SamplerConfig::stage_of_step(int i, int n_steps) {
  int stage = (i * 10) / n_steps;
  if (stage > 9) stage = 9;
  return stage;
}

}  // namespace shapectl::diffusion
