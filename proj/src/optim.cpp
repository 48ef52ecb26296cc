#include "shapectl/optim.hpp"

#include <cmath>

#include "shapectl/errors.hpp"

namespace shapectl::nn {

Adam::Adam(std::vector<Tensor> params, AdamConfig cfg)
    : params_(std::move(params)), cfg_(cfg) {
  m_.resize(params_.size());
  v_.resize(params_.size());
  for (std::size_t i = 0; i < params_.size(); ++i) {
    m_[i].assign(static_cast<std::size_t>(params_[i].numel()), 0.0);
    v_[i].assign(static_cast<std::size_t>(params_[i].numel()), 0.0);
  }
}

void Adam::step() {
  ++t_;
  double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
  double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
  for (std::size_t i = 0; i < params_.size(); ++i) {
    Tensor& p = params_[i];
    std::int64_t n = p.numel();
    for (std::int64_t j = 0; j < n; ++j) {
      double g = p.has_grad() ? p.grad_at(j) : 0.0;
      double& m = m_[i][static_cast<std::size_t>(j)];
      double& v = v_[i][static_cast<std::size_t>(j)];
      m = cfg_.beta1 * m + (1.0 - cfg_.beta1) * g;
      v = cfg_.beta2 * v + (1.0 - cfg_.beta2) * g * g;
      double mhat = m / bc1;
      double vhat = v / bc2;
      p.set(j, p.at(j) - cfg_.lr * mhat / (std::sqrt(vhat) + cfg_.eps));
    }
  }
}

void Adam::zero_grad() {
  for (auto& p : params_) p.zero_grad();
}

GradReport gradcheck(const std::vector<ParamRef>& params,
                     const std::function<Tensor()>& forward,
                     const GradcheckOptions& opts) {
  // analytic gradients from one taped pass
  for (const auto& p : params) p.tensor.zero_grad();
  {
    TapeScope tape;
    Tensor loss = forward();
    tape.backward(loss);
  }
  std::vector<std::vector<double>> analytic(params.size());
  for (std::size_t i = 0; i < params.size(); ++i) {
    const Tensor& t = params[i].tensor;
    analytic[i].resize(static_cast<std::size_t>(t.numel()));
    for (std::int64_t j = 0; j < t.numel(); ++j)
      analytic[i][static_cast<std::size_t>(j)] = t.grad_at(j);
  }

  GradReport report;
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (params[i].is_buffer) continue;
    Tensor t = params[i].tensor;
    std::int64_t n = t.numel();
    std::int64_t stride = 1;
    if (n > opts.max_checks_per_tensor)
      stride = n / opts.max_checks_per_tensor;
    double worst = 0.0;
    for (std::int64_t j = 0; j < n; j += stride) {
      double orig = t.at(j);
      t.set(j, orig + opts.h);
      double lp = forward().at(0);
      t.set(j, orig - opts.h);
      double lm = forward().at(0);
      t.set(j, orig);
      double fd = (lp - lm) / (2.0 * opts.h);
      double an = analytic[i][static_cast<std::size_t>(j)];
      double denom = std::max({std::fabs(an), std::fabs(fd), opts.rel_floor});
      double rel = std::fabs(an - fd) / denom;
      worst = std::max(worst, rel);
    }
    report.per_param_errors[params[i].name] = worst;
    if (worst > report.max_rel_error) {
      report.max_rel_error = worst;
      report.worst_param = params[i].name;
    }
  }
  if (report.max_rel_error < 0)
    throw InvariantError("gradcheck: negative max_rel_error");
  return report;
}

}  // namespace shapectl::nn
