#include "shapectl/train.hpp"

#include <algorithm>
#include <cmath>

#include "shapectl/errors.hpp"
#include "shapectl/optim.hpp"

namespace shapectl::train {

using adapter::AdapterBundle;
using diffusion::NoiseSchedule;
using nn::Tensor;
using synth::Dataset;
using synth::SampleTriplet;

namespace {

std::vector<std::size_t> shuffled_indices(std::size_t n, RngStream& rng) {
  std::vector<std::size_t> idx(n);
  for (std::size_t i = 0; i < n; ++i) idx[i] = i;
  for (std::size_t i = n; i > 1; --i) {
    std::size_t j = static_cast<std::size_t>(
        rng.uniform_int(0, static_cast<std::int64_t>(i) - 1));
    std::swap(idx[i - 1], idx[j]);
  }
  return idx;
}

Tensor batch_images(const Dataset& ds, const std::vector<std::size_t>& idx,
                    std::size_t b0, std::size_t b1) {
  int canvas = ds.config.canvas;
  int B = static_cast<int>(b1 - b0);
  Tensor out = Tensor::zeros({B, 1, canvas, canvas}, nn::DType::kF32);
  float* p = out.f32();
  std::int64_t per = static_cast<std::int64_t>(canvas) * canvas;
  for (int b = 0; b < B; ++b) {
    const SampleTriplet& s = ds.train[idx[b0 + static_cast<std::size_t>(b)]];
    const float* src = s.image.f32();
    std::copy(src, src + per, p + static_cast<std::int64_t>(b) * per);
  }
  return out;
}

Tensor gaussian_like(const Tensor& x, RngStream& rng) {
  Tensor out = Tensor::zeros(x.shape(), x.dtype());
  for (std::int64_t j = 0; j < out.numel(); ++j) out.set(j, rng.normal());
  return out;
}

void finalize_report(TrainReport& rep, int steps_per_epoch) {
  rep.steps = static_cast<int>(rep.step_losses.size());
  int head = std::min<int>(10, rep.steps);
  double acc = 0.0;
  for (int i = 0; i < head; ++i) acc += rep.step_losses[static_cast<std::size_t>(i)];
  rep.initial_loss = head > 0 ? acc / head : 0.0;
  int tail = std::min<int>(std::max(1, steps_per_epoch), rep.steps);
  acc = 0.0;
  for (int i = rep.steps - tail; i < rep.steps; ++i)
    acc += rep.step_losses[static_cast<std::size_t>(i)];
  rep.final_smoothed = tail > 0 ? acc / tail : 0.0;
}

}  // namespace

void set_requires_grad(std::vector<nn::ParamRef>& params, bool value) {
  for (auto& p : params)
    if (!p.is_buffer) p.tensor.set_requires_grad(value);
}

void freeze_model(nn::UNet& model) {
  std::vector<nn::ParamRef> params;
  model.collect("base", params);
  set_requires_grad(params, false);
}

TrainReport train_base(nn::UNet& model, const Dataset& ds,
                       const NoiseSchedule& sched, const StageOpts& opts,
                       std::uint64_t seed) {
  if (ds.train.empty()) throw ConfigError("train_base: empty training set");
  std::vector<nn::ParamRef> params;
  model.collect("base", params);
  nn::Adam adam(nn::trainable(params), {opts.lr, 0.9, 0.999, 1e-8});
  RngStream rng = RngStream(seed).derive(0xBA5Eu);

  TrainReport rep;
  std::size_t n = ds.train.size();
  int steps_per_epoch = static_cast<int>((n + opts.batch - 1) / opts.batch);
  for (int epoch = 0; epoch < opts.epochs; ++epoch) {
    auto idx = shuffled_indices(n, rng);
    double epoch_acc = 0.0;
    int epoch_steps = 0;
    for (std::size_t b0 = 0; b0 < n; b0 += static_cast<std::size_t>(opts.batch)) {
      std::size_t b1 = std::min(n, b0 + static_cast<std::size_t>(opts.batch));
      int B = static_cast<int>(b1 - b0);
      Tensor x0 = batch_images(ds, idx, b0, b1);
      std::vector<int> t(static_cast<std::size_t>(B));
      for (auto& tv : t) tv = static_cast<int>(rng.uniform_int(0, sched.T - 1));
      Tensor noise = gaussian_like(x0, rng);
      std::vector<std::vector<int>> labels(static_cast<std::size_t>(B));
      std::vector<bool> dropped(static_cast<std::size_t>(B));
      for (int b = 0; b < B; ++b) {
        labels[static_cast<std::size_t>(b)] =
            ds.train[idx[b0 + static_cast<std::size_t>(b)]].labels;
        dropped[static_cast<std::size_t>(b)] = rng.bernoulli(opts.prompt_dropout);
      }
      Tensor lw = nn::make_label_weights(labels, dropped, model.cfg.num_classes,
                                         nn::DType::kF32);
      double loss_val = 0.0;
      {
        nn::TapeScope tape;
        Tensor loss = diffusion::ddpm_loss_core(
            [&](const Tensor& x_t, const std::vector<int>& tv,
                const Tensor& lwv) {
              Tensor emb = model.embed(tv, lwv);
              return model.forward(x_t, emb);
            },
            x0, sched, t, noise, lw);
        loss_val = loss.at(0);
        if (!std::isfinite(loss_val))
          throw InvariantError("train_base: loss diverged (non-finite)");
        tape.backward(loss);
      }
      adam.step();
      adam.zero_grad();
      rep.step_losses.push_back(loss_val);
      epoch_acc += loss_val;
      ++epoch_steps;
    }
    rep.epoch_losses.push_back(epoch_acc / std::max(1, epoch_steps));
  }
  finalize_report(rep, steps_per_epoch);
  return rep;
}

TrainReport train_adapter(const nn::UNet& base, AdapterBundle& bundle,
                          const Dataset& ds, const NoiseSchedule& sched,
                          const AdapterStageOpts& opts, std::uint64_t seed) {
  if (ds.train.empty()) throw ConfigError("train_adapter: empty training set");
  std::vector<nn::ParamRef> base_params;
  const_cast<nn::UNet&>(base).collect("base", base_params);
  for (const auto& p : base_params)
    if (!p.is_buffer && p.tensor.requires_grad())
      throw InvariantError("train_adapter: base model must be frozen");
  std::string theta_hash_before = nn::params_content_hash(base_params);

  auto adapter_params = bundle.adapter_params();
  nn::Adam adam(nn::trainable(adapter_params), {opts.lr, 0.9, 0.999, 1e-8});
  RngStream rng = RngStream(seed).derive(0xADA7u);

  TrainReport rep;
  std::size_t n = ds.train.size();
  int steps_per_epoch = static_cast<int>((n + opts.batch - 1) / opts.batch);
  int canvas = ds.config.canvas;
  for (int epoch = 0; epoch < opts.epochs; ++epoch) {
    auto idx = shuffled_indices(n, rng);
    double epoch_acc = 0.0;
    int epoch_steps = 0;
    for (std::size_t b0 = 0; b0 < n; b0 += static_cast<std::size_t>(opts.batch)) {
      std::size_t b1 = std::min(n, b0 + static_cast<std::size_t>(opts.batch));
      int B = static_cast<int>(b1 - b0);
      Tensor x0 = batch_images(ds, idx, b0, b1);
      Tensor cond = Tensor::zeros({B, 1, canvas, canvas}, nn::DType::kF32);
      std::vector<double> rho(static_cast<std::size_t>(B), 0.0);
      std::vector<std::vector<int>> labels(static_cast<std::size_t>(B));
      std::vector<bool> dropped(static_cast<std::size_t>(B));
      std::vector<int> t(static_cast<std::size_t>(B));
      for (int b = 0; b < B; ++b) {
        const SampleTriplet& s = ds.train[idx[b0 + static_cast<std::size_t>(b)]];
        masks::Radius r = opts.vanilla_r0
                              ? masks::Radius::finite(0)
                              : synth::sample_training_radius(ds.config, rng);
        synth::ConditionImage ci =
            synth::make_condition(s, r, opts.condition_kind);
        rho[static_cast<std::size_t>(b)] = ci.rho_true;
        float* dst = cond.f32() +
                     static_cast<std::int64_t>(b) * canvas * canvas;
        for (std::size_t j = 0; j < ci.data.bits.size(); ++j)
          dst[j] = ci.data.bits[j] ? 1.0f : 0.0f;
        labels[static_cast<std::size_t>(b)] = s.labels;
        dropped[static_cast<std::size_t>(b)] = rng.bernoulli(opts.prompt_dropout);
        t[static_cast<std::size_t>(b)] =
            static_cast<int>(rng.uniform_int(0, sched.T - 1));
      }
      Tensor noise = gaussian_like(x0, rng);
      Tensor lw = nn::make_label_weights(labels, dropped, base.cfg.num_classes,
                                         nn::DType::kF32);
      double loss_val = 0.0;
      {
        nn::TapeScope tape;
        Tensor loss = diffusion::ddpm_loss_core(
            [&](const Tensor& x_t, const std::vector<int>& tv,
                const Tensor& lwv) {
              Tensor emb = base.embed(tv, lwv);
              nn::UNetFeats res = bundle.residuals(x_t, cond, emb, rho);
              return base.forward(x_t, emb, &res, 1.0, false);
            },
            x0, sched, t, noise, lw);
        loss_val = loss.at(0);
        if (!std::isfinite(loss_val))
          throw InvariantError("train_adapter: loss diverged (non-finite)");
        tape.backward(loss);
      }
      adam.step();
      adam.zero_grad();
      rep.step_losses.push_back(loss_val);
      epoch_acc += loss_val;
      ++epoch_steps;
    }
    rep.epoch_losses.push_back(epoch_acc / std::max(1, epoch_steps));
  }
  finalize_report(rep, steps_per_epoch);

  if (nn::params_content_hash(base_params) != theta_hash_before)
    throw InvariantError("train_adapter: frozen base parameters changed");
  return rep;
}

TrainReport train_estimator(const nn::UNet& base, AdapterBundle& bundle,
                            const Dataset& ds, const NoiseSchedule& sched,
                            const AdapterStageOpts& opts, std::uint64_t seed) {
  if (ds.train.empty()) throw ConfigError("train_estimator: empty training set");
  auto adapter_params = bundle.adapter_params();
  std::string adapter_hash_before = nn::params_content_hash(adapter_params);

  auto est_params = bundle.estimator_params();
  nn::Adam adam(nn::trainable(est_params), {opts.lr, 0.9, 0.999, 1e-8});
  RngStream rng = RngStream(seed).derive(0xE571u);

  TrainReport rep;
  std::size_t n = ds.train.size();
  int steps_per_epoch = static_cast<int>((n + opts.batch - 1) / opts.batch);
  int canvas = ds.config.canvas;
  for (int epoch = 0; epoch < opts.epochs; ++epoch) {
    auto idx = shuffled_indices(n, rng);
    double epoch_acc = 0.0;
    int epoch_steps = 0;
    for (std::size_t b0 = 0; b0 < n; b0 += static_cast<std::size_t>(opts.batch)) {
      std::size_t b1 = std::min(n, b0 + static_cast<std::size_t>(opts.batch));
      int B = static_cast<int>(b1 - b0);
      Tensor cond = Tensor::zeros({B, 1, canvas, canvas}, nn::DType::kF32);
      Tensor target = Tensor::zeros({B, 1}, nn::DType::kF32);
      std::vector<std::vector<int>> labels(static_cast<std::size_t>(B));
      for (int b = 0; b < B; ++b) {
        const SampleTriplet& s = ds.train[idx[b0 + static_cast<std::size_t>(b)]];
        masks::Radius r = synth::sample_training_radius(ds.config, rng);
        synth::ConditionImage ci =
            synth::make_condition(s, r, opts.condition_kind);
        target.set(b, ci.rho_true);
        float* dst = cond.f32() +
                     static_cast<std::int64_t>(b) * canvas * canvas;
        for (std::size_t j = 0; j < ci.data.bits.size(); ++j)
          dst[j] = ci.data.bits[j] ? 1.0f : 0.0f;
        labels[static_cast<std::size_t>(b)] = s.labels;
      }
      Tensor lw = nn::make_label_weights(
          labels, std::vector<bool>(static_cast<std::size_t>(B), false),
          base.cfg.num_classes, nn::DType::kF32);
      double loss_val = 0.0;
      {
        nn::TapeScope tape;
        Tensor pred = bundle.estimate_rho(base, sched, cond, lw, /*training=*/true);
        Tensor loss = nn::mse_loss(pred, target);
        loss_val = loss.at(0);
        if (!std::isfinite(loss_val))
          throw InvariantError("train_estimator: loss diverged (non-finite)");
        tape.backward(loss);
      }
      adam.step();
      adam.zero_grad();
      rep.step_losses.push_back(loss_val);
      epoch_acc += loss_val;
      ++epoch_steps;
    }
    rep.epoch_losses.push_back(epoch_acc / std::max(1, epoch_steps));
  }
  finalize_report(rep, steps_per_epoch);

  if (nn::params_content_hash(adapter_params) != adapter_hash_before)
    throw InvariantError(
        "train_estimator: adapter/base parameters changed during estimator stage");
  return rep;
}

EstimatorEval evaluate_estimator(const nn::UNet& base,
                                 const AdapterBundle& bundle,
                                 const Dataset& ds, const NoiseSchedule& sched,
                                 const std::vector<masks::Radius>& radii,
                                 int max_samples) {
  nn::NoGradScope no_grad;
  EstimatorEval ev;
  ev.radii = radii;
  int n = std::min<int>(max_samples, static_cast<int>(ds.test.size()));
  if (n == 0) throw ConfigError("evaluate_estimator: empty test set");

  // best constant predictor (L1-optimal): median of training ratios over the
  // same radius grid
  std::vector<double> train_rhos;
  int train_n = std::min<int>(static_cast<int>(ds.train.size()), 512);
  for (int i = 0; i < train_n; ++i)
    for (const auto& r : radii)
      train_rhos.push_back(
          masks::deterioration_ratio_aggregate(ds.train[static_cast<std::size_t>(i)].instances, r));
  std::sort(train_rhos.begin(), train_rhos.end());
  double constant = train_rhos.empty() ? 0.5 : train_rhos[train_rhos.size() / 2];

  double overall_acc = 0.0;
  double baseline_acc = 0.0;
  std::int64_t count = 0;
  for (const auto& r : radii) {
    double err_acc = 0.0, pred_acc = 0.0;
    for (int i = 0; i < n; ++i) {
      const SampleTriplet& s = ds.test[static_cast<std::size_t>(i)];
      synth::ConditionImage ci =
          synth::make_condition(s, r, synth::ConditionImage::Kind::kMask);
      double pred = bundle.estimate_rho_scalar(base, sched, ci, s.labels);
      err_acc += std::fabs(pred - ci.rho_true);
      baseline_acc += std::fabs(constant - ci.rho_true);
      pred_acc += pred;
      ++count;
    }
    ev.mean_abs_err.push_back(err_acc / n);
    ev.mean_predicted.push_back(pred_acc / n);
    overall_acc += err_acc;
  }
  ev.overall_l1 = overall_acc / static_cast<double>(count);
  ev.constant_baseline_l1 = baseline_acc / static_cast<double>(count);
  return ev;
}

}  // namespace shapectl::train
