#include "shapectl/diffusion.hpp"

#include <cmath>

#include "shapectl/errors.hpp"
#include "shapectl/rng.hpp"

namespace shapectl::diffusion {

using nn::Tensor;

Tensor q_sample(const Tensor& x0, const std::vector<int>& t,
                const Tensor& noise, const NoiseSchedule& sched) {
  if (x0.shape() != noise.shape())
    throw InvariantError("q_sample: x0/noise shape mismatch");
  int B = x0.dim(0);
  if (static_cast<int>(t.size()) != B)
    throw InvariantError("q_sample: t size must equal batch");
  std::int64_t per = x0.numel() / B;
  Tensor out = Tensor::zeros(x0.shape(), x0.dtype());
  for (int b = 0; b < B; ++b) {
    int tb = t[static_cast<std::size_t>(b)];
    if (tb < 0 || tb >= sched.T)
      throw InvariantError("q_sample: t out of range: " + std::to_string(tb));
    double abar = sched.alpha_bars[static_cast<std::size_t>(tb)];
    double sa = std::sqrt(abar);
    double sn = std::sqrt(1.0 - abar);
    for (std::int64_t j = 0; j < per; ++j) {
      std::int64_t at = static_cast<std::int64_t>(b) * per + j;
      out.set(at, sa * x0.at(at) + sn * noise.at(at));
    }
  }
  return out;
}

Tensor cfg_combine(const Tensor& eps_cond, const Tensor& eps_uncond,
                   double omega) {
  if (eps_cond.shape() != eps_uncond.shape())
    throw InvariantError("cfg_combine: shape mismatch " + eps_cond.shape_str() +
                         " vs " + eps_uncond.shape_str());
  if (omega == 0.0) return eps_cond.clone();
  // eps_cond + omega*(eps_cond - eps_uncond), as printed
  return nn::add_scaled(eps_cond, nn::sub(eps_cond, eps_uncond), omega);
}

Tensor ddpm_loss_core(const DenoiseFn& model, const Tensor& x0,
                      const NoiseSchedule& sched, const std::vector<int>& t,
                      const Tensor& noise, const Tensor& label_weights) {
  Tensor x_t = q_sample(x0, t, noise, sched);
  Tensor pred = model(x_t, t, label_weights);
  return nn::mse_loss(pred, noise);
}

Tensor replicate_condition(const Tensor& cond, int batch) {
  if (cond.ndim() != 3)
    throw InvariantError("replicate_condition: expected [C,H,W]");
  int C = cond.dim(0), H = cond.dim(1), W = cond.dim(2);
  Tensor out = Tensor::zeros({batch, C, H, W}, cond.dtype());
  std::int64_t per = cond.numel();
  for (int b = 0; b < batch; ++b)
    for (std::int64_t j = 0; j < per; ++j)
      out.set(static_cast<std::int64_t>(b) * per + j, cond.at(j));
  return out;
}

namespace {

std::vector<int> step_sequence(int T, int steps) {
  if (steps < 1) throw ConfigError("sampler: steps must be >= 1");
  steps = std::min(steps, T);
  std::vector<int> taus(static_cast<std::size_t>(steps));
  if (steps == 1) {
    taus[0] = T - 1;
    return taus;
  }
  for (int i = 0; i < steps; ++i) {
    double frac = static_cast<double>(steps - 1 - i) / (steps - 1);
    taus[static_cast<std::size_t>(i)] =
        static_cast<int>(std::lround(frac * (T - 1)));
  }
  return taus;
}

}  // namespace

Tensor sample(const nn::UNet& base, const SampleRequest& req,
              const NoiseSchedule& sched, const SamplerConfig& cfg) {
  cfg.validate();
  if (static_cast<int>(req.labels.size()) != req.batch)
    throw InvariantError("sample: labels size must equal batch");
  nn::NoGradScope no_grad;
  RngStream rng = RngStream(cfg.seed).derive(0x5341u);

  int B = req.batch;
  Tensor x = Tensor::zeros({B, base.cfg.in_ch, req.height, req.width},
                           nn::DType::kF32);
  for (std::int64_t j = 0; j < x.numel(); ++j) x.set(j, rng.normal());

  Tensor lw_cond = nn::make_label_weights(
      req.labels, std::vector<bool>(static_cast<std::size_t>(B), false),
      base.cfg.num_classes, nn::DType::kF32);
  Tensor lw_null = nn::make_label_weights(
      req.labels, std::vector<bool>(static_cast<std::size_t>(B), true),
      base.cfg.num_classes, nn::DType::kF32);

  std::vector<int> taus = step_sequence(sched.T, cfg.steps);
  int S = static_cast<int>(taus.size());

  for (int i = 0; i < S; ++i) {
    int t = taus[static_cast<std::size_t>(i)];
    int t_prev = (i + 1 < S) ? taus[static_cast<std::size_t>(i + 1)] : -1;
    std::vector<int> tv(static_cast<std::size_t>(B), t);
    bool gate = cfg.gate_open(i, S);

    // lambda scales each adapter's residual; gates drop injection entirely
    std::vector<adapter::AdapterUse> uses;
    if (gate && cfg.conditioning_scale != 0.0) {
      for (const auto& use : req.adapters) {
        adapter::AdapterUse scaled = use;
        scaled.lambda = use.lambda * cfg.conditioning_scale;
        uses.push_back(scaled);
      }
    }

    DenoisePrediction pred;
    {
      Tensor emb_c = base.embed(tv, lw_cond);
      auto res_c = adapter::compose(uses, x, emb_c);
      pred.eps_cond = base.forward(x, emb_c, res_c ? &*res_c : nullptr, 1.0,
                                   /*skip_zero_inject=*/true);
      Tensor emb_u = base.embed(tv, lw_null);
      auto res_u = adapter::compose(uses, x, emb_u);
      pred.eps_uncond = base.forward(x, emb_u, res_u ? &*res_u : nullptr, 1.0,
                                     /*skip_zero_inject=*/true);
    }
    pred.eps_guided = cfg_combine(pred.eps_cond, pred.eps_uncond, cfg.cfg_scale);

    double abar_t = sched.alpha_bars[static_cast<std::size_t>(t)];
    double abar_prev =
        t_prev >= 0 ? sched.alpha_bars[static_cast<std::size_t>(t_prev)] : 1.0;
    double sa_t = std::sqrt(abar_t);
    double sn_t = std::sqrt(1.0 - abar_t);

    Tensor x_next = Tensor::zeros(x.shape(), x.dtype());
    const float* px = x.f32();
    const float* pe = pred.eps_guided.f32();
    float* pn = x_next.f32();
    std::int64_t n = x.numel();

    if (cfg.sampler == SamplerKind::kDdim) {
      double c0 = std::sqrt(abar_prev) / sa_t;
      double c1 = std::sqrt(1.0 - abar_prev) - std::sqrt(abar_prev) * sn_t / sa_t;
      for (std::int64_t j = 0; j < n; ++j)
        pn[j] = static_cast<float>(c0 * px[j] + c1 * pe[j]);
    } else {
      double alpha_eff = abar_t / abar_prev;
      double var = (1.0 - abar_prev) / (1.0 - abar_t) * (1.0 - alpha_eff);
      if (var < 0.0) var = 0.0;
      double sigma = t_prev >= 0 ? std::sqrt(var) : 0.0;
      double dir = 1.0 - abar_prev - sigma * sigma;
      if (dir < 0.0) dir = 0.0;
      double c0 = std::sqrt(abar_prev) / sa_t;
      double c1 = std::sqrt(dir) - std::sqrt(abar_prev) * sn_t / sa_t;
      for (std::int64_t j = 0; j < n; ++j) {
        double z = t_prev >= 0 ? rng.normal() : 0.0;
        pn[j] = static_cast<float>(c0 * px[j] + c1 * pe[j] + sigma * z);
      }
    }
    x = x_next;
  }

  // clamp to [0,1]; zero canonicalized to +0 so bit-identity checks are stable
  float* p = x.f32();
  for (std::int64_t j = 0; j < x.numel(); ++j) {
    float v = p[j];
    p[j] = (v <= 0.0f) ? 0.0f : (v >= 1.0f ? 1.0f : v);
  }
  return x;
}

}  // namespace shapectl::diffusion
