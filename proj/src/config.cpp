#include "shapectl/config.hpp"

#include <json.hpp>

#include <fstream>
#include <set>

#include "shapectl/errors.hpp"
#include "shapectl/sha256.hpp"

namespace shapectl::cli {

using nlohmann::json;

masks::Radius radius_from_string(const std::string& s) {
  if (s == "inf" || s == "infinity") return masks::Radius::inf();
  try {
    std::size_t used = 0;
    int v = std::stoi(s, &used);
    if (used != s.size() || v < 0) throw std::invalid_argument(s);
    return masks::Radius::finite(v);
  } catch (const std::exception&) {
    throw ConfigError("bad radius '" + s + "' (expected non-negative integer or 'inf')");
  }
}

std::string radius_to_string(const masks::Radius& r) { return r.str(); }

nn::UNetConfig ExperimentConfig::unet_config() const {
  nn::UNetConfig c;
  c.in_ch = 1;
  c.c1 = channels[0];
  c.c2 = channels[1];
  c.c3 = channels[2];
  c.emb_dim = emb_dim;
  c.groups = groups;
  c.num_classes = synth::kNumShapeClasses;
  c.canvas = dataset.canvas;
  return c;
}

adapter::AdapterConfig ExperimentConfig::adapter_config(bool vanilla) const {
  adapter::AdapterConfig c;
  c.n_freqs = n_freqs;
  c.hyper_hidden = hyper_hidden;
  c.modulation = !vanilla;
  c.modulation_shape = modulation_shape == "elementwise"
                           ? adapter::ModulationShape::kElementwise
                           : adapter::ModulationShape::kPerChannel;
  return c;
}

diffusion::NoiseSchedule ExperimentConfig::schedule() const {
  return diffusion::NoiseSchedule::linear(T, beta_start, beta_end);
}

ExperimentConfig default_config() { return ExperimentConfig{}; }

namespace {

void check_keys(const json& j, const std::string& path,
                const std::set<std::string>& allowed) {
  if (!j.is_object()) throw ConfigError("config: expected object at " + path);
  for (auto it = j.begin(); it != j.end(); ++it) {
    if (!allowed.count(it.key()))
      throw ConfigError("config: unknown key '" + path + it.key() + "'");
  }
}

template <typename T>
void read_field(const json& j, const char* key, T& out) {
  if (j.contains(key)) out = j.at(key).get<T>();
}

void read_stage(const json& j, const std::string& path, StageConfig& st,
                bool allow_dropout) {
  std::set<std::string> keys = {"epochs", "batch", "lr"};
  if (allow_dropout) keys.insert("prompt_dropout");
  check_keys(j, path, keys);
  read_field(j, "epochs", st.epochs);
  read_field(j, "batch", st.batch);
  read_field(j, "lr", st.lr);
  if (allow_dropout) read_field(j, "prompt_dropout", st.prompt_dropout);
  if (st.epochs < 0 || st.batch < 1 || st.lr <= 0)
    throw ConfigError("config: bad training stage values at " + path);
  if (st.prompt_dropout < 0 || st.prompt_dropout > 1)
    throw ConfigError("config: prompt_dropout must be in [0,1] at " + path);
}

}  // namespace

ExperimentConfig parse_config_json(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const std::exception& e) {
    throw ConfigError(std::string("config: invalid JSON: ") + e.what());
  }
  ExperimentConfig cfg;
  check_keys(j, "", {"seed", "threads", "kernel_backend", "out_dir", "dataset",
                     "model", "schedule", "sampler", "train", "eval"});
  read_field(j, "seed", cfg.seed);
  read_field(j, "threads", cfg.threads);
  read_field(j, "kernel_backend", cfg.kernel_backend);
  read_field(j, "out_dir", cfg.out_dir);
  if (cfg.kernel_backend != "auto" && cfg.kernel_backend != "scalar" &&
      cfg.kernel_backend != "avx2")
    throw ConfigError("config: kernel_backend must be auto|scalar|avx2");

  if (j.contains("dataset")) {
    const json& d = j.at("dataset");
    check_keys(d, "dataset.", {"seed", "canvas", "n_train", "n_test",
                               "n_instances", "classes", "radius_max",
                               "infinity_prob"});
    read_field(d, "seed", cfg.dataset.seed);
    read_field(d, "canvas", cfg.dataset.canvas);
    read_field(d, "n_train", cfg.dataset.n_train);
    read_field(d, "n_test", cfg.dataset.n_test);
    if (d.contains("n_instances")) {
      cfg.dataset.n_instances_min = d.at("n_instances").at(0).get<int>();
      cfg.dataset.n_instances_max = d.at("n_instances").at(1).get<int>();
    }
    read_field(d, "classes", cfg.dataset.classes);
    read_field(d, "radius_max", cfg.dataset.radius_max);
    read_field(d, "infinity_prob", cfg.dataset.infinity_prob);
    if (cfg.dataset.canvas < 16 || cfg.dataset.canvas > 64)
      throw ConfigError("config: dataset.canvas must be in [16,64]");
    if (cfg.dataset.classes.empty())
      throw ConfigError("config: dataset.classes must not be empty");
    for (const auto& name : cfg.dataset.classes) synth::class_id_by_name(name);
    if (cfg.dataset.n_instances_min < 1 ||
        cfg.dataset.n_instances_max < cfg.dataset.n_instances_min)
      throw ConfigError("config: bad dataset.n_instances");
    if (cfg.dataset.infinity_prob < 0 || cfg.dataset.infinity_prob > 1)
      throw ConfigError("config: dataset.infinity_prob must be in [0,1]");
  }

  if (j.contains("model")) {
    const json& m = j.at("model");
    check_keys(m, "model.", {"channels", "emb_dim", "groups", "n_freqs",
                             "hyper_hidden", "modulation_shape"});
    if (m.contains("channels")) {
      auto ch = m.at("channels").get<std::vector<int>>();
      if (ch.size() != 3) throw ConfigError("config: model.channels needs 3 entries");
      cfg.channels = {ch[0], ch[1], ch[2]};
    }
    read_field(m, "emb_dim", cfg.emb_dim);
    read_field(m, "groups", cfg.groups);
    read_field(m, "n_freqs", cfg.n_freqs);
    read_field(m, "hyper_hidden", cfg.hyper_hidden);
    read_field(m, "modulation_shape", cfg.modulation_shape);
    if (cfg.modulation_shape != "per_channel" && cfg.modulation_shape != "elementwise")
      throw ConfigError("config: model.modulation_shape must be per_channel|elementwise");
    if (cfg.n_freqs < 1) throw ConfigError("config: model.n_freqs must be >= 1");
  }

  if (j.contains("schedule")) {
    const json& s = j.at("schedule");
    check_keys(s, "schedule.", {"T", "beta_start", "beta_end"});
    read_field(s, "T", cfg.T);
    read_field(s, "beta_start", cfg.beta_start);
    read_field(s, "beta_end", cfg.beta_end);
  }

  if (j.contains("sampler")) {
    const json& s = j.at("sampler");
    check_keys(s, "sampler.", {"method", "steps", "cfg_scale",
                               "conditioning_scale", "gates", "seed"});
    if (s.contains("method")) {
      std::string m = s.at("method").get<std::string>();
      if (m == "ddim")
        cfg.sampler.sampler = diffusion::SamplerKind::kDdim;
      else if (m == "ddpm")
        cfg.sampler.sampler = diffusion::SamplerKind::kDdpm;
      else
        throw ConfigError("config: sampler.method must be ddim|ddpm");
    }
    read_field(s, "steps", cfg.sampler.steps);
    read_field(s, "cfg_scale", cfg.sampler.cfg_scale);
    read_field(s, "conditioning_scale", cfg.sampler.conditioning_scale);
    if (s.contains("gates")) {
      auto g = s.at("gates").get<std::vector<bool>>();
      if (g.size() != 10)
        throw ConfigError("config: sampler.gates must have exactly 10 entries");
      for (int i = 0; i < 10; ++i) cfg.sampler.injection_gates[static_cast<std::size_t>(i)] = g[static_cast<std::size_t>(i)];
    }
    read_field(s, "seed", cfg.sampler.seed);
    cfg.sampler.validate();
  }

  if (j.contains("train")) {
    const json& t = j.at("train");
    check_keys(t, "train.", {"base", "adapter", "estimator", "adapter_variant",
                             "condition_kind"});
    if (t.contains("base")) read_stage(t.at("base"), "train.base.", cfg.train_base, true);
    if (t.contains("adapter"))
      read_stage(t.at("adapter"), "train.adapter.", cfg.train_adapter, true);
    if (t.contains("estimator"))
      read_stage(t.at("estimator"), "train.estimator.", cfg.train_estimator, false);
    read_field(t, "adapter_variant", cfg.adapter_variant);
    read_field(t, "condition_kind", cfg.condition_kind);
    if (cfg.adapter_variant != "shape_aware" && cfg.adapter_variant != "vanilla")
      throw ConfigError("config: train.adapter_variant must be shape_aware|vanilla");
    if (cfg.condition_kind != "mask" && cfg.condition_kind != "edge")
      throw ConfigError("config: train.condition_kind must be mask|edge");
  }

  if (j.contains("eval")) {
    const json& e = j.at("eval");
    check_keys(e, "eval.", {"n_conditions", "images_per_condition", "radii",
                            "rho_mode", "manual_rho", "cr_tolerance_sigma",
                            "detector_threshold"});
    read_field(e, "n_conditions", cfg.eval.n_conditions);
    read_field(e, "images_per_condition", cfg.eval.images_per_condition);
    if (e.contains("radii")) {
      cfg.eval.radii.clear();
      for (const auto& r : e.at("radii"))
        cfg.eval.radii.push_back(radius_from_string(
            r.is_string() ? r.get<std::string>() : std::to_string(r.get<int>())));
    }
    read_field(e, "rho_mode", cfg.eval.rho_mode);
    read_field(e, "manual_rho", cfg.eval.manual_rho);
    read_field(e, "cr_tolerance_sigma", cfg.eval.cr_tolerance_sigma);
    read_field(e, "detector_threshold", cfg.eval.detector_threshold);
    if (cfg.eval.rho_mode != "oracle" && cfg.eval.rho_mode != "predicted" &&
        cfg.eval.rho_mode != "manual")
      throw ConfigError("config: eval.rho_mode must be oracle|predicted|manual");
    if (cfg.eval.n_conditions < 1 || cfg.eval.images_per_condition < 1)
      throw ConfigError("config: eval sample counts must be >= 1");
  }

  // constructing the schedule validates beta/alpha_bar invariants
  cfg.schedule();
  return cfg;
}

ExperimentConfig load_config_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file: " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse_config_json(ss.str());
}

std::string ExperimentConfig::to_json() const {
  json j;
  j["seed"] = seed;
  j["threads"] = threads;
  j["kernel_backend"] = kernel_backend;
  j["out_dir"] = out_dir;
  j["dataset"] = {{"seed", dataset.seed},
                  {"canvas", dataset.canvas},
                  {"n_train", dataset.n_train},
                  {"n_test", dataset.n_test},
                  {"n_instances", {dataset.n_instances_min, dataset.n_instances_max}},
                  {"classes", dataset.classes},
                  {"radius_max", dataset.radius_max},
                  {"infinity_prob", dataset.infinity_prob}};
  j["model"] = {{"channels", {channels[0], channels[1], channels[2]}},
                {"emb_dim", emb_dim},
                {"groups", groups},
                {"n_freqs", n_freqs},
                {"hyper_hidden", hyper_hidden},
                {"modulation_shape", modulation_shape}};
  j["schedule"] = {{"T", T}, {"beta_start", beta_start}, {"beta_end", beta_end}};
  std::vector<bool> gates(sampler.injection_gates.begin(),
                          sampler.injection_gates.end());
  j["sampler"] = {{"method", sampler.sampler == diffusion::SamplerKind::kDdim
                                 ? "ddim"
                                 : "ddpm"},
                  {"steps", sampler.steps},
                  {"cfg_scale", sampler.cfg_scale},
                  {"conditioning_scale", sampler.conditioning_scale},
                  {"gates", gates},
                  {"seed", sampler.seed}};
  j["train"] = {
      {"base",
       {{"epochs", train_base.epochs},
        {"batch", train_base.batch},
        {"lr", train_base.lr},
        {"prompt_dropout", train_base.prompt_dropout}}},
      {"adapter",
       {{"epochs", train_adapter.epochs},
        {"batch", train_adapter.batch},
        {"lr", train_adapter.lr},
        {"prompt_dropout", train_adapter.prompt_dropout}}},
      {"estimator",
       {{"epochs", train_estimator.epochs},
        {"batch", train_estimator.batch},
        {"lr", train_estimator.lr}}},
      {"adapter_variant", adapter_variant},
      {"condition_kind", condition_kind}};
  std::vector<std::string> radii;
  for (const auto& r : eval.radii) radii.push_back(r.str());
  j["eval"] = {{"n_conditions", eval.n_conditions},
               {"images_per_condition", eval.images_per_condition},
               {"radii", radii},
               {"rho_mode", eval.rho_mode},
               {"manual_rho", eval.manual_rho},
               {"cr_tolerance_sigma", eval.cr_tolerance_sigma},
               {"detector_threshold", eval.detector_threshold}};
  return j.dump(2);
}

std::string ExperimentConfig::config_hash() const {
  return Sha256::of_string(to_json());
}

}  // namespace shapectl::cli
