#pragma once

// Experiment configuration: one JSON file with a strict schema (unknown keys
// are rejected so sweep-axis typos fail loudly), flag overrides on top, and
// a canonical hash for manifests.

#include <array>
#include <string>
#include <vector>

#include "shapectl/adapter.hpp"
#include "shapectl/schedule.hpp"
#include "shapectl/synth.hpp"
#include "shapectl/unet.hpp"

namespace shapectl::cli {

struct StageConfig {
  int epochs = 0;
  int batch = 16;
  double lr = 1e-3;
  double prompt_dropout = 0.5;
};

struct EvalConfig {
  int n_conditions = 50;
  int images_per_condition = 4;
  std::vector<masks::Radius> radii = {
      masks::Radius::finite(0), masks::Radius::finite(2),
      masks::Radius::finite(4), masks::Radius::finite(8),
      masks::Radius::finite(10), masks::Radius::inf()};
  std::string rho_mode = "predicted";  // oracle | predicted | manual
  double manual_rho = 0.0;
  int cr_tolerance_sigma = 2;
  double detector_threshold = 0.1;
};

struct ExperimentConfig {
  std::uint64_t seed = 1;
  int threads = 0;  // 0 = auto (SHAPECTL_THREADS still wins)
  std::string kernel_backend = "auto";
  std::string out_dir = "runs/default";

  synth::DatasetConfig dataset;

  // model
  std::array<int, 3> channels = {16, 32, 64};
  int emb_dim = 64;
  int groups = 8;
  int n_freqs = 8;
  int hyper_hidden = 32;
  std::string modulation_shape = "per_channel";  // per_channel | elementwise

  // schedule
  int T = 200;
  double beta_start = 6e-4;
  double beta_end = 0.05;

  diffusion::SamplerConfig sampler;

  StageConfig train_base{8, 16, 2e-3, 0.5};
  StageConfig train_adapter{10, 16, 1e-3, 0.5};
  StageConfig train_estimator{10, 32, 2e-3, 0.5};
  std::string adapter_variant = "shape_aware";  // shape_aware | vanilla
  std::string condition_kind = "mask";          // mask | edge

  EvalConfig eval;

  nn::UNetConfig unet_config() const;
  adapter::AdapterConfig adapter_config(bool vanilla) const;
  diffusion::NoiseSchedule schedule() const;

  std::string to_json() const;       // canonical echo
  std::string config_hash() const;   // sha256 of the canonical echo
};

ExperimentConfig default_config();
// Strict parse: any unknown key anywhere raises ConfigError with its path.
ExperimentConfig parse_config_json(const std::string& text);
ExperimentConfig load_config_file(const std::string& path);

masks::Radius radius_from_string(const std::string& s);  // "7" or "inf"
std::string radius_to_string(const masks::Radius& r);

}  // namespace shapectl::cli
