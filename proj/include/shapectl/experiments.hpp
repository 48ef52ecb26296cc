#pragma once

// Experiment orchestration behind the CLI: dataset builds, staged training
// with checkpoints and loss CSVs, evaluation with metric reports, sweeps
// with CSV+plots, the standalone deteriorate tool, and run manifests that
// name the hashes of their inputs.

#include <map>
#include <optional>

#include "shapectl/checkpoint.hpp"
#include "shapectl/config.hpp"
#include "shapectl/metrics.hpp"
#include "shapectl/train.hpp"

namespace shapectl::cli {

// Applies threads/kernel-backend settings; call once before tensor work.
void apply_runtime_config(const ExperimentConfig& cfg);

std::string dataset_dir(const ExperimentConfig& cfg);
std::string checkpoint_path(const ExperimentConfig& cfg, const std::string& name);

struct RunManifest {
  std::string command;
  std::string config_json;
  std::string config_hash;
  std::map<std::string, std::string> inputs;   // name -> content hash
  std::map<std::string, std::string> outputs;  // path -> content hash
  double wall_clock_sec = 0.0;
  std::string kernel_backend;
  int worker_threads = 0;

  void add_output_file(const std::string& path);
  // Atomic write to <out_dir>/<command>.manifest.json.
  void write(const std::string& out_dir) const;
};

struct LoadedSystem {
  nn::UNet base;
  diffusion::NoiseSchedule sched;
  std::optional<adapter::AdapterBundle> shape_aware;
  std::optional<adapter::AdapterBundle> vanilla;
};

nn::UNet build_base_model(const ExperimentConfig& cfg);
adapter::AdapterBundle build_bundle(const ExperimentConfig& cfg,
                                    const nn::UNet& base, bool vanilla);
// Loads base (+ requested adapters, preferring the estimator-trained
// checkpoint for the shape-aware bundle). Verifies checkpoint hashes.
LoadedSystem load_system(const ExperimentConfig& cfg, bool want_shape,
                         bool want_vanilla);

// One radius point: samples images_per_condition images for n_conditions
// test conditions and aggregates CR/LC/SR. bundle may be null (base only).
metrics::MetricsReport evaluate_at_radius(
    const nn::UNet& base, const adapter::AdapterBundle* bundle,
    const synth::Dataset& ds, const diffusion::NoiseSchedule& sched,
    masks::Radius radius, const diffusion::SamplerConfig& sampler_cfg,
    const EvalConfig& eval_cfg, const std::string& rho_mode, double manual_rho,
    synth::ConditionImage::Kind kind, std::uint64_t eval_seed);

std::string metrics_table(const std::vector<masks::Radius>& radii,
                          const std::vector<metrics::MetricsReport>& rows);

int cmd_synth(const ExperimentConfig& cfg, bool regenerate);
int cmd_train(const ExperimentConfig& cfg, const std::string& stage);
int cmd_sample(const ExperimentConfig& cfg, const std::string& adapter_name,
               const std::string& radius, int count);
int cmd_eval(const ExperimentConfig& cfg, const std::string& adapter_name);
int cmd_sweep(const ExperimentConfig& cfg, const std::string& axis);
int cmd_deteriorate(const std::vector<std::string>& mask_paths,
                    const std::string& radius_str, const std::string& out_path);
int cmd_gradcheck(bool verbose);

}  // namespace shapectl::cli
