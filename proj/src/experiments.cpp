#include "shapectl/experiments.hpp"

#include <json.hpp>

#include <chrono>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>

#include "shapectl/errors.hpp"
#include "shapectl/image_io.hpp"
#include "shapectl/kernels.hpp"
#include "shapectl/optim.hpp"
#include "shapectl/sha256.hpp"
#include "shapectl/threadpool.hpp"

namespace shapectl::cli {

namespace fs = std::filesystem;
using adapter::AdapterBundle;
using diffusion::NoiseSchedule;
using masks::Radius;
using metrics::MetricsReport;
using nn::Tensor;
using nlohmann::json;
using synth::ConditionImage;
using synth::Dataset;

void apply_runtime_config(const ExperimentConfig& cfg) {
  if (cfg.threads > 0 && std::getenv("SHAPECTL_THREADS") == nullptr) {
    setenv("SHAPECTL_THREADS", std::to_string(cfg.threads).c_str(), 0);
  }
  if (std::getenv("SHAPECTL_KERNELS") == nullptr)
    kern::set_backend_by_name(cfg.kernel_backend);
}

std::string dataset_dir(const ExperimentConfig& cfg) {
  return (fs::path(cfg.out_dir) / "dataset").string();
}

std::string checkpoint_path(const ExperimentConfig& cfg, const std::string& name) {
  return (fs::path(cfg.out_dir) / "checkpoints" / (name + ".sacn")).string();
}

void RunManifest::add_output_file(const std::string& path) {
  outputs[path] = Sha256::of_file(path);
}

void RunManifest::write(const std::string& out_dir) const {
  json j;
  j["command"] = command;
  j["config"] = json::parse(config_json);
  j["config_hash"] = config_hash;
  j["inputs"] = json::object();
  for (const auto& [k, v] : inputs) j["inputs"][k] = v;
  j["outputs"] = json::object();
  for (const auto& [k, v] : outputs) j["outputs"][k] = v;
  j["wall_clock_sec"] = wall_clock_sec;
  j["versions"] = {{"manifest_format", 1},
                   {"kernel_backend", kernel_backend},
                   {"worker_threads", worker_threads}};
  fs::create_directories(out_dir);
  fs::path final_path = fs::path(out_dir) / (command + ".manifest.json");
  fs::path tmp = final_path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp);
    if (!out) throw ConfigError("cannot write manifest: " + final_path.string());
    out << j.dump(2) << "\n";
  }
  fs::rename(tmp, final_path);
}

namespace {

struct Stopwatch {
  std::chrono::steady_clock::time_point start = std::chrono::steady_clock::now();
  double seconds() const {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - start)
        .count();
  }
};

RunManifest make_manifest(const ExperimentConfig& cfg, const std::string& command) {
  RunManifest m;
  m.command = command;
  m.config_json = cfg.to_json();
  m.config_hash = cfg.config_hash();
  m.kernel_backend = kern::backend_name(kern::active_backend());
  m.worker_threads = ThreadPool::instance().workers();
  return m;
}

void write_loss_csv(const std::string& path, const train::TrainReport& rep) {
  std::ofstream out(path);
  if (!out) throw ConfigError("cannot write loss curve: " + path);
  out << "step,loss\n";
  for (std::size_t i = 0; i < rep.step_losses.size(); ++i)
    out << i << "," << rep.step_losses[i] << "\n";
}

ConditionImage::Kind condition_kind_of(const ExperimentConfig& cfg) {
  return cfg.condition_kind == "edge" ? ConditionImage::Kind::kEdge
                                      : ConditionImage::Kind::kMask;
}

}  // namespace

nn::UNet build_base_model(const ExperimentConfig& cfg) {
  RngStream rng = RngStream(cfg.seed).derive(0x6261u);
  return nn::UNet(cfg.unet_config(), nn::DType::kF32, rng);
}

AdapterBundle build_bundle(const ExperimentConfig& cfg, const nn::UNet& base,
                           bool vanilla) {
  RngStream rng = RngStream(cfg.seed).derive(vanilla ? 0x7661u : 0x6164u);
  return AdapterBundle(base, cfg.adapter_config(vanilla), nn::DType::kF32, rng);
}

LoadedSystem load_system(const ExperimentConfig& cfg, bool want_shape,
                         bool want_vanilla) {
  LoadedSystem sys{build_base_model(cfg), cfg.schedule(), std::nullopt,
                   std::nullopt};
  std::string base_path = checkpoint_path(cfg, "base");
  if (!fs::exists(base_path))
    throw ConfigError("missing base checkpoint " + base_path +
                      "; run `shapectl train --stage base` first");
  ckpt::verify_checkpoint(base_path);
  std::vector<nn::ParamRef> base_params;
  sys.base.collect("base", base_params);
  ckpt::load_checkpoint(base_path, base_params);
  train::freeze_model(sys.base);

  if (want_shape) {
    std::string est_path = checkpoint_path(cfg, "estimator");
    std::string ad_path = checkpoint_path(cfg, "adapter_shape_aware");
    std::string path = fs::exists(est_path) ? est_path : ad_path;
    if (!fs::exists(path))
      throw ConfigError("missing shape-aware adapter checkpoint " + ad_path +
                        "; run `shapectl train --stage adapter` first");
    ckpt::verify_checkpoint(path);
    sys.shape_aware.emplace(build_bundle(cfg, sys.base, false));
    std::vector<nn::ParamRef> params;
    sys.shape_aware->collect("bundle", params);
    ckpt::load_checkpoint(path, params);
  }
  if (want_vanilla) {
    std::string path = checkpoint_path(cfg, "adapter_vanilla");
    if (!fs::exists(path))
      throw ConfigError(
          "missing vanilla adapter checkpoint " + path +
          "; run `shapectl train --stage adapter --variant vanilla` first");
    ckpt::verify_checkpoint(path);
    sys.vanilla.emplace(build_bundle(cfg, sys.base, true));
    std::vector<nn::ParamRef> params;
    sys.vanilla->collect("bundle", params);
    ckpt::load_checkpoint(path, params);
  }
  return sys;
}

MetricsReport evaluate_at_radius(const nn::UNet& base,
                                 const AdapterBundle* bundle, const Dataset& ds,
                                 const NoiseSchedule& sched, Radius radius,
                                 const diffusion::SamplerConfig& sampler_cfg,
                                 const EvalConfig& eval_cfg,
                                 const std::string& rho_mode, double manual_rho,
                                 ConditionImage::Kind kind,
                                 std::uint64_t eval_seed) {
  metrics::MetricParams mp;
  mp.cr_tolerance_sigma = eval_cfg.cr_tolerance_sigma;
  mp.detector_threshold = eval_cfg.detector_threshold;
  mp.images_per_condition = eval_cfg.images_per_condition;

  MetricsReport report;
  report.params = mp;
  int n_cond = std::min<int>(eval_cfg.n_conditions,
                             static_cast<int>(ds.test.size()));
  if (n_cond == 0) throw ConfigError("evaluate: empty test split");
  int canvas = ds.config.canvas;
  std::uint64_t radius_key = radius.infinite ? 0xFFFFu
                                             : static_cast<std::uint64_t>(radius.value);

  for (int ci = 0; ci < n_cond; ++ci) {
    const synth::SampleTriplet& s = ds.test[static_cast<std::size_t>(ci)];
    ConditionImage cond = synth::make_condition(s, radius, kind);

    double rho = cond.rho_true;
    if (bundle != nullptr && bundle->cfg.modulation) {
      if (rho_mode == "predicted")
        rho = bundle->estimate_rho_scalar(base, sched, cond, s.labels);
      else if (rho_mode == "manual")
        rho = manual_rho;
    }

    int B = eval_cfg.images_per_condition;
    diffusion::SampleRequest req;
    req.batch = B;
    req.height = canvas;
    req.width = canvas;
    req.labels.assign(static_cast<std::size_t>(B), s.labels);
    Tensor cond_t = synth::render_condition(cond);
    if (bundle != nullptr) {
      adapter::AdapterUse use;
      use.bundle = bundle;
      use.cond = diffusion::replicate_condition(cond_t, B);
      use.rho = rho;
      use.lambda = 1.0;
      req.adapters.push_back(use);
    }
    diffusion::SamplerConfig scfg = sampler_cfg;
    scfg.seed = RngStream(eval_seed)
                    .derive(radius_key)
                    .derive(static_cast<std::uint64_t>(ci))
                    .next_u64();
    Tensor gen = diffusion::sample(base, req, sched, scfg);

    std::vector<Tensor> images;
    std::int64_t per = static_cast<std::int64_t>(canvas) * canvas;
    for (int b = 0; b < B; ++b) {
      Tensor img = Tensor::zeros({1, canvas, canvas}, nn::DType::kF32);
      std::copy(gen.f32() + b * per, gen.f32() + (b + 1) * per, img.f32());
      images.push_back(img);
    }

    metrics::PerSample ps;
    ps.index = ci;
    ps.rho_used = rho;
    ps.cr = metrics::contour_recall(images, synth::render_condition(cond), mp);
    std::vector<masks::Box> cond_boxes;
    for (const auto& inst : s.instances.instances) cond_boxes.push_back(inst.bbox);
    double lc_acc = 0.0, sr_acc = 0.0;
    for (const auto& img : images) {
      auto dets = metrics::oracle_detect(img, mp);
      lc_acc += metrics::layout_consistency(dets, cond_boxes, canvas, canvas).value;
      sr_acc += metrics::semantic_retrieval(dets, s.labels);
    }
    ps.lc = lc_acc / B;
    ps.sr = sr_acc / B;
    report.per_sample.push_back(ps);
  }
  report.finalize();
  return report;
}

std::string metrics_table(const std::vector<Radius>& radii,
                          const std::vector<MetricsReport>& rows) {
  std::ostringstream os;
  os << "  r      CR      LC      SR\n";
  for (std::size_t i = 0; i < radii.size(); ++i) {
    char buf[96];
    std::snprintf(buf, sizeof(buf), "%5s  %6.3f  %6.3f  %6.3f\n",
                  radii[i].str().c_str(), rows[i].cr, rows[i].lc, rows[i].sr);
    os << buf;
  }
  return os.str();
}

int cmd_synth(const ExperimentConfig& cfg, bool regenerate) {
  Stopwatch watch;
  RunManifest manifest = make_manifest(cfg, "synth");
  std::string dir = dataset_dir(cfg);

  synth::DatasetConfig dcfg = cfg.dataset;
  if (regenerate) {
    // rebuild bit-identically from the manifest already in the directory
    Dataset existing = synth::load_dataset(dir);
    dcfg = existing.config;
  }
  Dataset ds = synth::generate_dataset(dcfg);
  save_dataset(ds, dir);

  // sample grid for eyeballing
  std::vector<img::ImageU8> tiles;
  int canvas = dcfg.canvas;
  for (int i = 0; i < std::min(36, dcfg.n_train); ++i)
    tiles.push_back(img::gray_from_float(ds.train[static_cast<std::size_t>(i)].image.f32(),
                                         canvas, canvas));
  fs::create_directories(dir);
  img::save_png(img::tile_grid(tiles, 6), (fs::path(dir) / "grid.png").string());

  std::string hash = synth::dataset_content_hash(dir);
  manifest.outputs["dataset"] = hash;
  manifest.wall_clock_sec = watch.seconds();
  manifest.write(cfg.out_dir);
  std::cout << "dataset: " << dir << "\n"
            << "samples: " << dcfg.n_train << " train + " << dcfg.n_test
            << " test\n"
            << "content hash: " << hash << "\n";
  return 0;
}

int cmd_train(const ExperimentConfig& cfg, const std::string& stage) {
  Stopwatch watch;
  RunManifest manifest = make_manifest(cfg, "train_" + stage);
  std::string ddir = dataset_dir(cfg);
  if (!fs::exists(fs::path(ddir) / "manifest.json"))
    throw ConfigError("missing dataset at " + ddir + "; run `shapectl synth` first");
  Dataset ds = synth::load_dataset(ddir);
  manifest.inputs["dataset"] = synth::dataset_content_hash(ddir);
  NoiseSchedule sched = cfg.schedule();
  fs::create_directories(fs::path(cfg.out_dir) / "checkpoints");

  if (stage == "base") {
    nn::UNet base = build_base_model(cfg);
    train::StageOpts opts{cfg.train_base.epochs, cfg.train_base.batch,
                          cfg.train_base.lr, cfg.train_base.prompt_dropout};
    train::TrainReport rep = train::train_base(base, ds, sched, opts, cfg.seed);
    std::vector<nn::ParamRef> params;
    base.collect("base", params);
    std::string path = checkpoint_path(cfg, "base");
    ckpt::save_checkpoint(path, params);
    ckpt::write_checkpoint_manifest(path, nn::params_content_hash(params),
                                    {{"dataset", manifest.inputs["dataset"]},
                                     {"config", manifest.config_hash}});
    write_loss_csv((fs::path(cfg.out_dir) / "loss_base.csv").string(), rep);
    manifest.add_output_file(path);
    manifest.add_output_file((fs::path(cfg.out_dir) / "loss_base.csv").string());
    std::cout << "base: initial loss " << rep.initial_loss << ", final "
              << rep.final_smoothed << " over " << rep.steps << " steps\n";
  } else if (stage == "adapter") {
    bool vanilla = cfg.adapter_variant == "vanilla";
    LoadedSystem sys = load_system(cfg, false, false);
    manifest.inputs["base_checkpoint"] =
        Sha256::of_file(checkpoint_path(cfg, "base"));
    AdapterBundle bundle = build_bundle(cfg, sys.base, vanilla);
    train::AdapterStageOpts opts;
    opts.epochs = cfg.train_adapter.epochs;
    opts.batch = cfg.train_adapter.batch;
    opts.lr = cfg.train_adapter.lr;
    opts.prompt_dropout = cfg.train_adapter.prompt_dropout;
    opts.vanilla_r0 = vanilla;
    opts.condition_kind = condition_kind_of(cfg);
    train::TrainReport rep =
        train::train_adapter(sys.base, bundle, ds, sched, opts, cfg.seed);
    std::string name = vanilla ? "adapter_vanilla" : "adapter_shape_aware";
    std::vector<nn::ParamRef> params;
    bundle.collect("bundle", params);
    std::string path = checkpoint_path(cfg, name);
    ckpt::save_checkpoint(path, params);
    ckpt::write_checkpoint_manifest(
        path, nn::params_content_hash(params),
        {{"dataset", manifest.inputs["dataset"]},
         {"base_checkpoint", manifest.inputs["base_checkpoint"]},
         {"config", manifest.config_hash}});
    write_loss_csv((fs::path(cfg.out_dir) / ("loss_" + name + ".csv")).string(), rep);
    manifest.add_output_file(path);
    std::cout << name << ": initial loss " << rep.initial_loss << ", final "
              << rep.final_smoothed << " over " << rep.steps << " steps\n";
  } else if (stage == "estimator") {
    std::string ad_path = checkpoint_path(cfg, "adapter_shape_aware");
    if (!fs::exists(ad_path))
      throw ConfigError("missing prerequisite " + ad_path +
                        "; run `shapectl train --stage adapter` before the estimator stage");
    LoadedSystem sys = load_system(cfg, true, false);
    manifest.inputs["base_checkpoint"] =
        Sha256::of_file(checkpoint_path(cfg, "base"));
    manifest.inputs["adapter_checkpoint"] = Sha256::of_file(ad_path);
    train::AdapterStageOpts opts;
    opts.epochs = cfg.train_estimator.epochs;
    opts.batch = cfg.train_estimator.batch;
    opts.lr = cfg.train_estimator.lr;
    opts.condition_kind = condition_kind_of(cfg);
    train::TrainReport rep = train::train_estimator(sys.base, *sys.shape_aware,
                                                    ds, sched, opts, cfg.seed);
    std::vector<nn::ParamRef> params;
    sys.shape_aware->collect("bundle", params);
    std::string path = checkpoint_path(cfg, "estimator");
    ckpt::save_checkpoint(path, params);
    ckpt::write_checkpoint_manifest(
        path, nn::params_content_hash(params),
        {{"dataset", manifest.inputs["dataset"]},
         {"adapter_checkpoint", manifest.inputs["adapter_checkpoint"]},
         {"config", manifest.config_hash}});
    write_loss_csv((fs::path(cfg.out_dir) / "loss_estimator.csv").string(), rep);
    manifest.add_output_file(path);
    std::cout << "estimator: initial loss " << rep.initial_loss << ", final "
              << rep.final_smoothed << " over " << rep.steps << " steps\n";
  } else {
    throw ConfigError("unknown training stage '" + stage +
                      "' (expected base|adapter|estimator)");
  }
  manifest.wall_clock_sec = watch.seconds();
  manifest.write(cfg.out_dir);
  return 0;
}

int cmd_sample(const ExperimentConfig& cfg, const std::string& adapter_name,
               const std::string& radius_str, int count) {
  Stopwatch watch;
  RunManifest manifest = make_manifest(cfg, "sample");
  Radius radius = radius_from_string(radius_str);
  bool want_shape = adapter_name == "shape_aware";
  bool want_vanilla = adapter_name == "vanilla";
  if (!want_shape && !want_vanilla && adapter_name != "none")
    throw ConfigError("sample: adapter must be shape_aware|vanilla|none");
  LoadedSystem sys = load_system(cfg, want_shape, want_vanilla);
  const AdapterBundle* bundle = want_shape ? &*sys.shape_aware
                               : want_vanilla ? &*sys.vanilla
                                              : nullptr;
  Dataset ds = synth::load_dataset(dataset_dir(cfg));
  int canvas = ds.config.canvas;
  count = std::min<int>(count, static_cast<int>(ds.test.size()));

  std::vector<img::ImageU8> tiles;
  json sidecar;
  sidecar["config"] = json::parse(cfg.to_json());
  sidecar["radius"] = radius.str();
  sidecar["adapter"] = adapter_name;
  sidecar["samples"] = json::array();
  for (int ci = 0; ci < count; ++ci) {
    const synth::SampleTriplet& s = ds.test[static_cast<std::size_t>(ci)];
    ConditionImage cond = synth::make_condition(s, radius, condition_kind_of(cfg));
    double rho = cond.rho_true;
    if (bundle && bundle->cfg.modulation) {
      if (cfg.eval.rho_mode == "predicted")
        rho = bundle->estimate_rho_scalar(sys.base, sys.sched, cond, s.labels);
      else if (cfg.eval.rho_mode == "manual")
        rho = cfg.eval.manual_rho;
    }
    diffusion::SampleRequest req;
    req.batch = 1;
    req.height = canvas;
    req.width = canvas;
    req.labels = {s.labels};
    Tensor cond_t = synth::render_condition(cond);
    if (bundle) {
      adapter::AdapterUse use;
      use.bundle = bundle;
      use.cond = diffusion::replicate_condition(cond_t, 1);
      use.rho = rho;
      use.lambda = 1.0;
      req.adapters.push_back(use);
    }
    diffusion::SamplerConfig scfg = cfg.sampler;
    scfg.seed = RngStream(cfg.sampler.seed).derive(static_cast<std::uint64_t>(ci)).next_u64();
    Tensor gen = diffusion::sample(sys.base, req, sys.sched, scfg);
    tiles.push_back(img::gray_from_float(cond_t.f32(), canvas, canvas));
    tiles.push_back(img::gray_from_float(gen.f32(), canvas, canvas));
    sidecar["samples"].push_back(
        {{"index", ci}, {"rho_used", rho}, {"labels", s.labels}, {"seed", scfg.seed}});
  }
  fs::create_directories(fs::path(cfg.out_dir) / "samples");
  std::string grid_path =
      (fs::path(cfg.out_dir) / "samples" /
       ("samples_" + adapter_name + "_r" + radius.str() + ".png")).string();
  img::save_png(img::tile_grid(tiles, 8), grid_path);
  std::string sidecar_path = grid_path + ".json";
  {
    std::ofstream out(sidecar_path);
    out << sidecar.dump(2) << "\n";
  }
  manifest.add_output_file(grid_path);
  manifest.add_output_file(sidecar_path);
  manifest.wall_clock_sec = watch.seconds();
  manifest.write(cfg.out_dir);
  std::cout << "wrote " << grid_path << "\n";
  return 0;
}

int cmd_eval(const ExperimentConfig& cfg, const std::string& adapter_name) {
  Stopwatch watch;
  RunManifest manifest = make_manifest(cfg, "eval_" + adapter_name);
  bool want_shape = adapter_name == "shape_aware";
  bool want_vanilla = adapter_name == "vanilla";
  if (!want_shape && !want_vanilla && adapter_name != "none")
    throw ConfigError("eval: adapter must be shape_aware|vanilla|none");
  LoadedSystem sys = load_system(cfg, want_shape, want_vanilla);
  const AdapterBundle* bundle = want_shape ? &*sys.shape_aware
                               : want_vanilla ? &*sys.vanilla
                                              : nullptr;
  Dataset ds = synth::load_dataset(dataset_dir(cfg));
  manifest.inputs["dataset"] = synth::dataset_content_hash(dataset_dir(cfg));

  std::string ckpt_hash;
  if (want_shape) {
    std::string p = fs::exists(checkpoint_path(cfg, "estimator"))
                        ? checkpoint_path(cfg, "estimator")
                        : checkpoint_path(cfg, "adapter_shape_aware");
    ckpt_hash = Sha256::of_file(p);
  } else if (want_vanilla) {
    ckpt_hash = Sha256::of_file(checkpoint_path(cfg, "adapter_vanilla"));
  } else {
    ckpt_hash = Sha256::of_file(checkpoint_path(cfg, "base"));
  }

  std::vector<MetricsReport> rows;
  fs::create_directories(fs::path(cfg.out_dir) / "reports");
  for (const Radius& r : cfg.eval.radii) {
    MetricsReport rep = evaluate_at_radius(
        sys.base, bundle, ds, sys.sched, r, cfg.sampler, cfg.eval,
        cfg.eval.rho_mode, cfg.eval.manual_rho, condition_kind_of(cfg),
        cfg.sampler.seed);
    rep.config_echo = cfg.to_json();
    rep.checkpoint_hash = ckpt_hash;
    std::string path = (fs::path(cfg.out_dir) / "reports" /
                        ("metrics_" + adapter_name + "_r" + r.str() + ".json"))
                           .string();
    std::ofstream out(path);
    out << rep.to_json() << "\n";
    out.close();
    manifest.add_output_file(path);
    rows.push_back(std::move(rep));
  }
  std::string table = metrics_table(cfg.eval.radii, rows);
  std::cout << "model: " << adapter_name << "  rho_mode: " << cfg.eval.rho_mode
            << "\n" << table;
  manifest.wall_clock_sec = watch.seconds();
  manifest.write(cfg.out_dir);
  return 0;
}

namespace {

struct SweepRow {
  double axis_value = 0.0;
  std::string radius;
  double cr = 0.0, lc = 0.0, sr = 0.0;
};

}  // namespace

int cmd_sweep(const ExperimentConfig& cfg, const std::string& axis) {
  Stopwatch watch;
  RunManifest manifest = make_manifest(cfg, "sweep_" + axis);
  bool vanilla_axis = axis == "lambda" || axis == "omega" || axis == "gates";
  bool want_shape = !vanilla_axis;
  LoadedSystem sys = load_system(cfg, want_shape, vanilla_axis);
  Dataset ds = synth::load_dataset(dataset_dir(cfg));

  struct Point {
    double value;
    diffusion::SamplerConfig scfg;
    std::string rho_mode;
    double manual_rho;
    Radius radius;
    const AdapterBundle* bundle;
  };
  std::vector<Point> points;
  auto bundle_shape = sys.shape_aware ? &*sys.shape_aware : nullptr;
  auto bundle_van = sys.vanilla ? &*sys.vanilla : nullptr;

  std::vector<Radius> extreme = {Radius::finite(0), Radius::inf()};
  if (axis == "lambda") {
    for (double v : {0.0, 0.25, 0.5, 0.75, 1.0, 1.25, 1.5})
      for (const Radius& r : extreme) {
        Point p{v, cfg.sampler, "oracle", 0.0, r, bundle_van};
        p.scfg.conditioning_scale = v;
        points.push_back(p);
      }
  } else if (axis == "omega") {
    for (double v : {0.0, 1.0, 2.0, 3.0, 5.0, 7.5})
      for (const Radius& r : extreme) {
        Point p{v, cfg.sampler, "oracle", 0.0, r, bundle_van};
        p.scfg.cfg_scale = v;
        points.push_back(p);
      }
  } else if (axis == "gates") {
    for (int k = 0; k <= 10; ++k)
      for (const Radius& r : extreme) {
        Point p{static_cast<double>(k), cfg.sampler, "oracle", 0.0, r, bundle_van};
        for (int i = 0; i < 10; ++i)
          p.scfg.injection_gates[static_cast<std::size_t>(i)] = i >= k;
        points.push_back(p);
      }
  } else if (axis == "rho") {
    for (double v : {0.0, 0.25, 0.5, 0.75, 1.0}) {
      Point p{v, cfg.sampler, "manual", v, Radius::finite(4), bundle_shape};
      points.push_back(p);
    }
  } else if (axis == "radius") {
    for (const Radius& r : cfg.eval.radii) {
      Point p{r.infinite ? -1.0 : static_cast<double>(r.value), cfg.sampler,
              cfg.eval.rho_mode, cfg.eval.manual_rho, r, bundle_shape};
      points.push_back(p);
    }
  } else {
    throw ConfigError("unknown sweep axis '" + axis +
                      "' (expected radius|lambda|omega|gates|rho)");
  }

  // fan out across worker threads, one axis point each; results land in a
  // pre-sized vector so merge order is deterministic
  std::vector<SweepRow> rows(points.size());
  ThreadPool::instance().parallel_for(
      points.size(), 1, [&](std::size_t i0, std::size_t i1) {
        for (std::size_t i = i0; i < i1; ++i) {
          const Point& p = points[i];
          MetricsReport rep = evaluate_at_radius(
              sys.base, p.bundle, ds, sys.sched, p.radius, p.scfg, cfg.eval,
              p.rho_mode, p.manual_rho, condition_kind_of(cfg),
              cfg.sampler.seed);
          rows[i] = SweepRow{p.value, p.radius.str(), rep.cr, rep.lc, rep.sr};
        }
      });

  fs::create_directories(fs::path(cfg.out_dir) / "sweeps");
  std::string csv_path =
      (fs::path(cfg.out_dir) / "sweeps" / ("sweep_" + axis + ".csv")).string();
  {
    std::ofstream out(csv_path);
    out << axis << ",radius,cr,lc,sr\n";
    for (const auto& r : rows)
      out << r.axis_value << "," << r.radius << "," << r.cr << "," << r.lc
          << "," << r.sr << "\n";
  }
  manifest.add_output_file(csv_path);

  // one plot per metric, series per radius
  std::vector<std::string> radii_seen;
  for (const auto& r : rows)
    if (std::find(radii_seen.begin(), radii_seen.end(), r.radius) ==
        radii_seen.end())
      radii_seen.push_back(r.radius);
  const std::array<std::array<std::uint8_t, 3>, 4> colors = {
      {{200, 40, 40}, {40, 60, 200}, {30, 140, 60}, {150, 60, 160}}};
  auto metric_of = [](const SweepRow& r, int m) {
    return m == 0 ? r.cr : m == 1 ? r.lc : r.sr;
  };
  const char* metric_names[3] = {"cr", "lc", "sr"};
  for (int m = 0; m < 3; ++m) {
    std::vector<img::PlotSeries> series;
    for (std::size_t si = 0; si < radii_seen.size(); ++si) {
      img::PlotSeries ps;
      ps.label = "R=" + radii_seen[si];
      auto col = colors[si % colors.size()];
      ps.r = col[0];
      ps.g = col[1];
      ps.b = col[2];
      for (const auto& row : rows)
        if (row.radius == radii_seen[si]) {
          ps.x.push_back(row.axis_value);
          ps.y.push_back(metric_of(row, m));
        }
      series.push_back(std::move(ps));
    }
    std::string plot_path =
        (fs::path(cfg.out_dir) / "sweeps" /
         ("sweep_" + axis + "_" + metric_names[m] + ".png")).string();
    img::save_png(img::render_line_plot(std::string(metric_names[m]) + " VS " + axis,
                                        series),
                  plot_path);
    manifest.add_output_file(plot_path);
  }
  manifest.wall_clock_sec = watch.seconds();
  manifest.write(cfg.out_dir);
  std::cout << "wrote " << csv_path << "\n";
  return 0;
}

int cmd_deteriorate(const std::vector<std::string>& mask_paths,
                    const std::string& radius_str, const std::string& out_path) {
  if (mask_paths.empty())
    throw ConfigError("deteriorate: need at least one mask file");
  Radius r = radius_from_string(radius_str);
  masks::InstanceMaskSet set;
  for (std::size_t i = 0; i < mask_paths.size(); ++i) {
    masks::BinaryMask m = masks::load_pbm(mask_paths[i]);
    if (i == 0) {
      set.height = m.height;
      set.width = m.width;
    } else if (m.height != set.height || m.width != set.width) {
      throw ConfigError("deteriorate: mask dimensions disagree across files");
    }
    if (m.empty()) throw ConfigError("deteriorate: empty instance mask in " + mask_paths[i]);
    masks::Instance inst;
    inst.bbox = masks::tight_bbox(m);
    inst.mask = std::move(m);
    set.instances.push_back(std::move(inst));
  }
  masks::BinaryMask result = masks::deteriorate(set, r);
  double rho = masks::deterioration_ratio_aggregate(set, r);
  if (!out_path.empty()) masks::save_pbm(result, out_path);
  json j;
  j["radius"] = r.str();
  j["rho"] = rho;
  j["area_m_r"] = result.area();
  j["instances"] = mask_paths.size();
  if (!out_path.empty()) j["output"] = out_path;
  std::cout << j.dump(2) << "\n";
  return 0;
}

int cmd_gradcheck(bool verbose) {
  auto frags = nn::standard_fragments(nn::DType::kF64, 17);
  bool ok = true;
  for (auto& frag : frags) {
    nn::GradcheckOptions opts;
    opts.h = frag.fd_step;
    nn::GradReport rep = nn::gradcheck(frag.params, frag.forward, opts);
    bool pass = rep.max_rel_error < 1e-4;
    ok = ok && pass;
    std::cout << (pass ? "[pass] " : "[FAIL] ") << frag.name
              << "  max_rel_error=" << rep.max_rel_error << "\n";
    if (verbose) {
      for (const auto& [name, err] : rep.per_param_errors)
        std::cout << "         " << name << ": " << err << "\n";
    }
  }
  if (!ok) throw InvariantError("gradcheck failed");
  return 0;
}

}  // namespace shapectl::cli
