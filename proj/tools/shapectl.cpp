// shapectl: desk-scale shape-aware conditional diffusion laboratory.
//
// Subcommands: synth, train, sample, eval, sweep, deteriorate, gradcheck.
// Exit codes: 0 ok, 2 config error, 3 invariant violation, 1 other failure.

#include <CLI11.hpp>

#include <iostream>

#include "shapectl/errors.hpp"
#include "shapectl/experiments.hpp"

using namespace shapectl;

namespace {

struct CommonArgs {
  std::string config_path;
  std::string out_dir;
  std::int64_t seed = -1;
  int threads = -1;
  std::string kernel_backend;
};

void add_common(CLI::App* cmd, CommonArgs& args) {
  cmd->add_option("-c,--config", args.config_path, "JSON config file");
  cmd->add_option("--out-dir", args.out_dir, "output directory (overrides config)");
  cmd->add_option("--seed", args.seed, "experiment seed (overrides config)");
  cmd->add_option("--threads", args.threads, "worker threads (overrides config)");
  cmd->add_option("--kernels", args.kernel_backend,
                  "kernel backend: auto|scalar|avx2 (overrides config)");
}

cli::ExperimentConfig resolve_config(const CommonArgs& args) {
  cli::ExperimentConfig cfg = args.config_path.empty()
                                  ? cli::default_config()
                                  : cli::load_config_file(args.config_path);
  if (!args.out_dir.empty()) cfg.out_dir = args.out_dir;
  if (args.seed >= 0) {
    cfg.seed = static_cast<std::uint64_t>(args.seed);
    cfg.dataset.seed = cfg.seed;
    cfg.sampler.seed = cfg.seed;
  }
  if (args.threads >= 0) cfg.threads = args.threads;
  if (!args.kernel_backend.empty()) cfg.kernel_backend = args.kernel_backend;
  cli::apply_runtime_config(cfg);
  return cfg;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"shapectl: shape-aware conditional diffusion laboratory"};
  app.require_subcommand(1);

  CommonArgs synth_args;
  bool regenerate = false;
  std::vector<std::string> synth_classes;
  auto* synth_cmd = app.add_subcommand("synth", "generate the synthetic dataset");
  add_common(synth_cmd, synth_args);
  synth_cmd->add_flag("--regenerate", regenerate,
                      "rebuild bit-identically from the dataset manifest");
  synth_cmd->add_option("--classes", synth_classes,
                        "restrict the class pool (names)");

  CommonArgs train_args;
  std::string stage = "base";
  std::string variant;
  auto* train_cmd = app.add_subcommand("train", "train a pipeline stage");
  add_common(train_cmd, train_args);
  train_cmd->add_option("--stage", stage, "base|adapter|estimator")->required();
  train_cmd->add_option("--variant", variant,
                        "adapter variant: shape_aware|vanilla (overrides config)");

  CommonArgs sample_args;
  std::string sample_adapter = "shape_aware";
  std::string sample_radius = "0";
  int sample_count = 8;
  auto* sample_cmd = app.add_subcommand("sample", "generate images from a checkpoint");
  add_common(sample_cmd, sample_args);
  sample_cmd->add_option("--adapter", sample_adapter, "shape_aware|vanilla|none");
  sample_cmd->add_option("--radius", sample_radius, "deterioration radius or 'inf'");
  sample_cmd->add_option("--count", sample_count, "number of test conditions");

  CommonArgs eval_args;
  std::string eval_adapter = "shape_aware";
  std::string rho_mode;
  std::vector<std::string> eval_radii;
  auto* eval_cmd = app.add_subcommand("eval", "evaluate CR/LC/SR over radii");
  add_common(eval_cmd, eval_args);
  eval_cmd->add_option("--adapter", eval_adapter, "shape_aware|vanilla|none");
  eval_cmd->add_option("--rho-mode", rho_mode,
                       "oracle|predicted|manual:<v> (overrides config)");
  eval_cmd->add_option("--radii", eval_radii, "radii list (overrides config)");

  CommonArgs sweep_args;
  std::string axis;
  auto* sweep_cmd = app.add_subcommand("sweep", "metric curves along an axis");
  add_common(sweep_cmd, sweep_args);
  sweep_cmd->add_option("--axis", axis, "radius|lambda|omega|gates|rho")->required();

  std::vector<std::string> det_masks;
  std::string det_radius = "0";
  std::string det_out;
  auto* det_cmd = app.add_subcommand(
      "deteriorate", "apply the deterioration operator to mask files (P1 PBM)");
  det_cmd->add_option("masks", det_masks, "instance mask files")->required();
  det_cmd->add_option("--radius", det_radius, "dilation radius or 'inf'");
  det_cmd->add_option("--out", det_out, "output PBM path for the degraded mask");

  bool gradcheck_verbose = false;
  auto* grad_cmd = app.add_subcommand("gradcheck",
                                      "finite-difference checks for every layer");
  grad_cmd->add_flag("-v,--verbose", gradcheck_verbose, "per-parameter errors");

  CLI11_PARSE(app, argc, argv);

  try {
    if (*synth_cmd) {
      cli::ExperimentConfig cfg = resolve_config(synth_args);
      if (!synth_classes.empty()) cfg.dataset.classes = synth_classes;
      return cli::cmd_synth(cfg, regenerate);
    }
    if (*train_cmd) {
      cli::ExperimentConfig cfg = resolve_config(train_args);
      if (!variant.empty()) {
        if (variant != "shape_aware" && variant != "vanilla")
          throw ConfigError("--variant must be shape_aware|vanilla");
        cfg.adapter_variant = variant;
      }
      return cli::cmd_train(cfg, stage);
    }
    if (*sample_cmd) {
      cli::ExperimentConfig cfg = resolve_config(sample_args);
      return cli::cmd_sample(cfg, sample_adapter, sample_radius, sample_count);
    }
    if (*eval_cmd) {
      cli::ExperimentConfig cfg = resolve_config(eval_args);
      if (!rho_mode.empty()) {
        if (rho_mode.rfind("manual:", 0) == 0) {
          cfg.eval.rho_mode = "manual";
          cfg.eval.manual_rho = std::stod(rho_mode.substr(7));
        } else if (rho_mode == "oracle" || rho_mode == "predicted") {
          cfg.eval.rho_mode = rho_mode;
        } else {
          throw ConfigError("--rho-mode must be oracle|predicted|manual:<v>");
        }
      }
      if (!eval_radii.empty()) {
        cfg.eval.radii.clear();
        for (const auto& r : eval_radii)
          cfg.eval.radii.push_back(cli::radius_from_string(r));
      }
      return cli::cmd_eval(cfg, eval_adapter);
    }
    if (*sweep_cmd) {
      cli::ExperimentConfig cfg = resolve_config(sweep_args);
      return cli::cmd_sweep(cfg, axis);
    }
    if (*det_cmd) {
      return cli::cmd_deteriorate(det_masks, det_radius, det_out);
    }
    if (*grad_cmd) {
      return cli::cmd_gradcheck(gradcheck_verbose);
    }
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const InvariantError& e) {
    std::cerr << "invariant violation: " << e.what() << "\n";
    return 3;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
