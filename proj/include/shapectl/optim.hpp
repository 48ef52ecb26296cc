#pragma once

// Adam and the finite-difference gradient checker.

#include <functional>
#include <map>
#include <string>
#include <vector>

#include "shapectl/modules.hpp"
#include "shapectl/tensor.hpp"

namespace shapectl::nn {

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

// Standard Adam with bias correction. Updates are bit-deterministic given
// identical parameter/gradient streams; params without a live gradient
// buffer are treated as zero-gradient.
class Adam {
 public:
  Adam(std::vector<Tensor> params, AdamConfig cfg);

  void step();
  void zero_grad();
  std::int64_t steps_taken() const { return t_; }

 private:
  std::vector<Tensor> params_;
  std::vector<std::vector<double>> m_, v_;
  AdamConfig cfg_;
  std::int64_t t_ = 0;
};

struct GradReport {
  double max_rel_error = 0.0;
  std::map<std::string, double> per_param_errors;
  std::string worst_param;
};

struct GradcheckOptions {
  double h = 1e-3;          // central-difference step
  int max_checks_per_tensor = 24;
  double rel_floor = 1e-6;  // denominator floor for near-zero gradients
};

// Checks analytic tape gradients of `forward` (a deterministic scalar-loss
// builder over `params`) against central finite differences. The FD oracle
// is just two forward evaluations per probed element; losses are read in
// double. Use f64 fragments for tight thresholds.
GradReport gradcheck(const std::vector<ParamRef>& params,
                     const std::function<Tensor()>& forward,
                     const GradcheckOptions& opts = {});

// Named fragment registry used by the `gradcheck` CLI command, tests and
// the acceptance suite: every layer type plus the full toy UNet.
struct NamedFragment {
  std::string name;
  std::vector<ParamRef> params;
  std::function<Tensor()> forward;
  // FD step; the composite UNet fragment uses a tighter step because plain
  // h=1e-3 truncation already exceeds the 1e-4 gate on a deep composition.
  double fd_step = 1e-3;
};

std::vector<NamedFragment> standard_fragments(DType dt, std::uint64_t seed);

}  // namespace shapectl::nn
