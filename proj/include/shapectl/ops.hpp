#pragma once

// Differentiable tensor ops. Shapes are checked eagerly; mismatches throw
// InvariantError with a dimension report. All reductions accumulate in
// double. Forward math is identical with or without an active TapeScope.

#include <vector>

#include "shapectl/tensor.hpp"

namespace shapectl::nn {

// Elementwise / scalar
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double s);
Tensor add_scaled(const Tensor& a, const Tensor& b, double s);  // a + s*b
Tensor add_const(const Tensor& a, double c);
Tensor silu(const Tensor& x);

// y + lambda*r. With skip_zero the add is skipped wherever r==0 so a
// zero residual preserves y bit-for-bit (sampler injection path).
Tensor residual_inject(const Tensor& y, const Tensor& r, double lambda,
                       bool skip_zero);

// Layers
Tensor conv2d(const Tensor& x, const Tensor& w, const Tensor& b, int stride,
              int pad);
Tensor linear(const Tensor& x, const Tensor& w, const Tensor& b);
Tensor group_norm(const Tensor& x, int groups, const Tensor& gamma,
                  const Tensor& beta, double eps = 1e-5);
// x is [B,C] or [B,C,H,W]; running stats are mutated in training mode and
// frozen in eval mode.
Tensor batch_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta,
                  Tensor running_mean, Tensor running_var, bool training,
                  double momentum = 0.1, double eps = 1e-5);
Tensor embedding(const Tensor& table, const std::vector<int>& idx);
Tensor matmul(const Tensor& a, const Tensor& b);  // [M,K]x[K,N] -> [M,N]

// Structure
Tensor concat_channels(const Tensor& a, const Tensor& b);
Tensor upsample_nearest2(const Tensor& x);
Tensor global_avg_pool(const Tensor& x);          // [B,C,H,W] -> [B,C]
Tensor bias_add_rows(const Tensor& x, const Tensor& v);  // v: [B,C] or [C]
Tensor channel_scale(const Tensor& x, const Tensor& s);  // s: [B,C]
Tensor reshape(const Tensor& x, std::vector<int> shape);
Tensor broadcast_rows(const Tensor& v, int rows);  // [K] -> [rows,K]
// Per-sample channel mix: out[b,o,:] = sum_c m[b, o*C+c] * x[b,c,:].
// Backs the full-elementwise modulation option of the zero convs.
Tensor bmm_channel_mix(const Tensor& m, const Tensor& x, int out_ch);

// Reductions
Tensor sum_all(const Tensor& x);
Tensor mean_all(const Tensor& x);
Tensor mse_loss(const Tensor& a, const Tensor& b);

// Graph control
Tensor detach(const Tensor& x);

// [sin(2^k*pi*rho) for k<n] ++ [cos(2^k*pi*rho) for k<n]; constant leaf
Tensor fourier_embed(double rho, int n_freqs, DType dt = DType::kF32);
Tensor fourier_embed_batch(const std::vector<double>& rho, int n_freqs,
                           DType dt = DType::kF32);

// When enabled, every op forward verifies its output is finite and throws
// InvariantError otherwise. Test hook; off by default.
void set_check_finite(bool enabled);
bool check_finite_enabled();

}  // namespace shapectl::nn
