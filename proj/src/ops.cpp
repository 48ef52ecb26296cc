#include "shapectl/ops.hpp"

#include <atomic>
#include <cmath>
#include <cstring>

#include "shapectl/errors.hpp"
#include "shapectl/kernels.hpp"
#include "shapectl/threadpool.hpp"

namespace shapectl::nn {

namespace {

std::atomic<bool> g_check_finite{false};

// scratch storage that skips value-initialization; callers overwrite fully
template <typename T>
struct Scratch {
  explicit Scratch(std::size_t n) : data(new T[n]) {}
  T* get() { return data.get(); }
  std::unique_ptr<T[]> data;
};

template <typename T>
struct Buf;

template <>
struct Buf<float> {
  static float* data(TensorImpl* t) { return t->d32.data(); }
  static const float* data(const TensorImpl* t) { return t->d32.data(); }
  static float* grad(TensorImpl* t) { return t->g32.data(); }
};

template <>
struct Buf<double> {
  static double* data(TensorImpl* t) { return t->d64.data(); }
  static const double* data(const TensorImpl* t) { return t->d64.data(); }
  static double* grad(TensorImpl* t) { return t->g64.data(); }
};

void require(bool cond, const std::string& msg) {
  if (!cond) throw InvariantError(msg);
}

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape())
    throw InvariantError(std::string(op) + ": shape mismatch " + a.shape_str() +
                         " vs " + b.shape_str());
  if (a.dtype() != b.dtype())
    throw InvariantError(std::string(op) + ": dtype mismatch");
}

Tensor make_out(std::vector<int> shape, const Tensor& like,
                std::initializer_list<const Tensor*> inputs) {
  Tensor out = Tensor::zeros(std::move(shape), like.dtype());
  out.set_requires_grad(tracing(inputs));
  return out;
}

void finish_op(const Tensor& out, const char* op) {
  if (g_check_finite.load(std::memory_order_relaxed) && !out.all_finite())
    throw InvariantError(std::string(op) + ": non-finite output");
}

// ---- generic elementwise machinery --------------------------------------

template <typename T, typename FwdFn, typename BwdFn>
Tensor elementwise2_t(const Tensor& a, const Tensor& b, Tensor out, FwdFn fwd,
                      BwdFn bwd) {
  auto ai = a.impl().get();
  auto bi = b.impl().get();
  auto oi = out.impl().get();
  fwd(Buf<T>::data(ai), Buf<T>::data(bi), Buf<T>::data(oi),
      static_cast<std::size_t>(out.numel()));
  if (out.requires_grad() && TapeScope::current()) {
    auto a_impl = a.impl();
    auto b_impl = b.impl();
    auto o_impl = out.impl();
    TapeScope::current()->record([a_impl, b_impl, o_impl, bwd] {
      if (!o_impl->grad_live) return;
      bwd(a_impl.get(), b_impl.get(), o_impl.get());
    });
  }
  return out;
}

}  // namespace

void set_check_finite(bool enabled) { g_check_finite.store(enabled); }
bool check_finite_enabled() { return g_check_finite.load(); }

// ---- add / sub / mul / scale ---------------------------------------------

namespace {

template <typename T>
Tensor add_t(const Tensor& a, const Tensor& b) {
  Tensor out = make_out(a.shape(), a, {&a, &b});
  return elementwise2_t<T>(
      a, b, out,
      [](const T* pa, const T* pb, T* po, std::size_t n) {
        if constexpr (std::is_same_v<T, float>)
          kern::add(pa, pb, po, n);
        else
          for (std::size_t i = 0; i < n; ++i) po[i] = pa[i] + pb[i];
      },
      [](TensorImpl* ai, TensorImpl* bi, TensorImpl* oi) {
        std::size_t n = static_cast<std::size_t>(oi->numel);
        const T* g = Buf<T>::grad(oi);
        if (ai->requires_grad) {
          ai->ensure_grad();
          T* ga = Buf<T>::grad(ai);
          for (std::size_t i = 0; i < n; ++i) ga[i] += g[i];
        }
        if (bi->requires_grad) {
          bi->ensure_grad();
          T* gb = Buf<T>::grad(bi);
          for (std::size_t i = 0; i < n; ++i) gb[i] += g[i];
        }
      });
}

template <typename T>
Tensor sub_t(const Tensor& a, const Tensor& b) {
  Tensor out = make_out(a.shape(), a, {&a, &b});
  return elementwise2_t<T>(
      a, b, out,
      [](const T* pa, const T* pb, T* po, std::size_t n) {
        for (std::size_t i = 0; i < n; ++i) po[i] = pa[i] - pb[i];
      },
      [](TensorImpl* ai, TensorImpl* bi, TensorImpl* oi) {
        std::size_t n = static_cast<std::size_t>(oi->numel);
        const T* g = Buf<T>::grad(oi);
        if (ai->requires_grad) {
          ai->ensure_grad();
          T* ga = Buf<T>::grad(ai);
          for (std::size_t i = 0; i < n; ++i) ga[i] += g[i];
        }
        if (bi->requires_grad) {
          bi->ensure_grad();
          T* gb = Buf<T>::grad(bi);
          for (std::size_t i = 0; i < n; ++i) gb[i] -= g[i];
        }
      });
}

template <typename T>
Tensor mul_t(const Tensor& a, const Tensor& b) {
  Tensor out = make_out(a.shape(), a, {&a, &b});
  return elementwise2_t<T>(
      a, b, out,
      [](const T* pa, const T* pb, T* po, std::size_t n) {
        if constexpr (std::is_same_v<T, float>)
          kern::mul(pa, pb, po, n);
        else
          for (std::size_t i = 0; i < n; ++i) po[i] = pa[i] * pb[i];
      },
      [](TensorImpl* ai, TensorImpl* bi, TensorImpl* oi) {
        std::size_t n = static_cast<std::size_t>(oi->numel);
        const T* g = Buf<T>::grad(oi);
        const T* pa = Buf<T>::data(ai);
        const T* pb = Buf<T>::data(bi);
        if (ai->requires_grad) {
          ai->ensure_grad();
          T* ga = Buf<T>::grad(ai);
          for (std::size_t i = 0; i < n; ++i) ga[i] += g[i] * pb[i];
        }
        if (bi->requires_grad) {
          bi->ensure_grad();
          T* gb = Buf<T>::grad(bi);
          for (std::size_t i = 0; i < n; ++i) gb[i] += g[i] * pa[i];
        }
      });
}

template <typename T>
Tensor scale_t(const Tensor& a, double s) {
  Tensor out = make_out(a.shape(), a, {&a});
  std::size_t n = static_cast<std::size_t>(a.numel());
  const T* pa = Buf<T>::data(a.impl().get());
  T* po = Buf<T>::data(out.impl().get());
  T sv = static_cast<T>(s);
  for (std::size_t i = 0; i < n; ++i) po[i] = pa[i] * sv;
  if (out.requires_grad() && TapeScope::current()) {
    auto ai = a.impl();
    auto oi = out.impl();
    TapeScope::current()->record([ai, oi, sv] {
      if (!oi->grad_live || !ai->requires_grad) return;
      ai->ensure_grad();
      const T* g = Buf<T>::grad(oi.get());
      T* ga = Buf<T>::grad(ai.get());
      std::size_t n = static_cast<std::size_t>(oi->numel);
      for (std::size_t i = 0; i < n; ++i) ga[i] += g[i] * sv;
    });
  }
  return out;
}

template <typename T>
Tensor add_scaled_t(const Tensor& a, const Tensor& b, double s) {
  Tensor out = make_out(a.shape(), a, {&a, &b});
  T sv = static_cast<T>(s);
  return elementwise2_t<T>(
      a, b, out,
      [sv](const T* pa, const T* pb, T* po, std::size_t n) {
        for (std::size_t i = 0; i < n; ++i) po[i] = pa[i] + sv * pb[i];
      },
      [sv](TensorImpl* ai, TensorImpl* bi, TensorImpl* oi) {
        std::size_t n = static_cast<std::size_t>(oi->numel);
        const T* g = Buf<T>::grad(oi);
        if (ai->requires_grad) {
          ai->ensure_grad();
          T* ga = Buf<T>::grad(ai);
          for (std::size_t i = 0; i < n; ++i) ga[i] += g[i];
        }
        if (bi->requires_grad) {
          bi->ensure_grad();
          T* gb = Buf<T>::grad(bi);
          for (std::size_t i = 0; i < n; ++i) gb[i] += sv * g[i];
        }
      });
}

template <typename T>
Tensor add_const_t(const Tensor& a, double c) {
  Tensor out = make_out(a.shape(), a, {&a});
  std::size_t n = static_cast<std::size_t>(a.numel());
  const T* pa = Buf<T>::data(a.impl().get());
  T* po = Buf<T>::data(out.impl().get());
  T cv = static_cast<T>(c);
  for (std::size_t i = 0; i < n; ++i) po[i] = pa[i] + cv;
  if (out.requires_grad() && TapeScope::current()) {
    auto ai = a.impl();
    auto oi = out.impl();
    TapeScope::current()->record([ai, oi] {
      if (!oi->grad_live || !ai->requires_grad) return;
      ai->ensure_grad();
      const T* g = Buf<T>::grad(oi.get());
      T* ga = Buf<T>::grad(ai.get());
      std::size_t n = static_cast<std::size_t>(oi->numel);
      for (std::size_t i = 0; i < n; ++i) ga[i] += g[i];
    });
  }
  return out;
}

template <typename T>
Tensor silu_t(const Tensor& x) {
  Tensor out = make_out(x.shape(), x, {&x});
  std::size_t n = static_cast<std::size_t>(x.numel());
  const T* px = Buf<T>::data(x.impl().get());
  T* po = Buf<T>::data(out.impl().get());
  if constexpr (std::is_same_v<T, float>) {
    ThreadPool::instance().parallel_for(n, 1 << 14, [&](std::size_t i0, std::size_t i1) {
      kern::silu(px + i0, po + i0, i1 - i0);
    });
  } else {
    for (std::size_t i = 0; i < n; ++i) {
      double s = 1.0 / (1.0 + std::exp(-px[i]));
      po[i] = px[i] * s;
    }
  }
  if (out.requires_grad() && TapeScope::current()) {
    auto xi = x.impl();
    auto oi = out.impl();
    TapeScope::current()->record([xi, oi] {
      if (!oi->grad_live || !xi->requires_grad) return;
      xi->ensure_grad();
      const T* g = Buf<T>::grad(oi.get());
      const T* px = Buf<T>::data(xi.get());
      T* gx = Buf<T>::grad(xi.get());
      std::size_t n = static_cast<std::size_t>(oi->numel);
      ThreadPool::instance().parallel_for(n, 1 << 14, [&](std::size_t i0, std::size_t i1) {
        for (std::size_t i = i0; i < i1; ++i) {
          T s = T(1) / (T(1) + std::exp(-px[i]));
          T d = s * (T(1) + px[i] * (T(1) - s));
          gx[i] += g[i] * d;
        }
      });
    });
  }
  return out;
}

template <typename T>
Tensor residual_inject_t(const Tensor& y, const Tensor& r, double lambda,
                         bool skip_zero) {
  Tensor out = make_out(y.shape(), y, {&y, &r});
  std::size_t n = static_cast<std::size_t>(y.numel());
  const T* py = Buf<T>::data(y.impl().get());
  const T* pr = Buf<T>::data(r.impl().get());
  T* po = Buf<T>::data(out.impl().get());
  T lv = static_cast<T>(lambda);
  if (skip_zero) {
    if constexpr (std::is_same_v<T, float>) {
      kern::residual_add_skipzero(py, pr, lv, po, n);
    } else {
      for (std::size_t i = 0; i < n; ++i)
        po[i] = (pr[i] == T(0)) ? py[i] : py[i] + lv * pr[i];
    }
  } else {
    for (std::size_t i = 0; i < n; ++i) po[i] = py[i] + lv * pr[i];
  }
  if (out.requires_grad() && TapeScope::current()) {
    auto yi = y.impl();
    auto ri = r.impl();
    auto oi = out.impl();
    TapeScope::current()->record([yi, ri, oi, lv] {
      if (!oi->grad_live) return;
      const T* g = Buf<T>::grad(oi.get());
      std::size_t n = static_cast<std::size_t>(oi->numel);
      if (yi->requires_grad) {
        yi->ensure_grad();
        T* gy = Buf<T>::grad(yi.get());
        for (std::size_t i = 0; i < n; ++i) gy[i] += g[i];
      }
      if (ri->requires_grad) {
        ri->ensure_grad();
        T* gr = Buf<T>::grad(ri.get());
        for (std::size_t i = 0; i < n; ++i) gr[i] += lv * g[i];
      }
    });
  }
  return out;
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "add");
  Tensor out = a.dtype() == DType::kF32 ? add_t<float>(a, b) : add_t<double>(a, b);
  finish_op(out, "add");
  return out;
}

Tensor sub(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "sub");
  Tensor out = a.dtype() == DType::kF32 ? sub_t<float>(a, b) : sub_t<double>(a, b);
  finish_op(out, "sub");
  return out;
}

Tensor mul(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "mul");
  Tensor out = a.dtype() == DType::kF32 ? mul_t<float>(a, b) : mul_t<double>(a, b);
  finish_op(out, "mul");
  return out;
}

Tensor scale(const Tensor& a, double s) {
  Tensor out = a.dtype() == DType::kF32 ? scale_t<float>(a, s) : scale_t<double>(a, s);
  finish_op(out, "scale");
  return out;
}

Tensor add_scaled(const Tensor& a, const Tensor& b, double s) {
  require_same_shape(a, b, "add_scaled");
  Tensor out = a.dtype() == DType::kF32 ? add_scaled_t<float>(a, b, s)
                                        : add_scaled_t<double>(a, b, s);
  finish_op(out, "add_scaled");
  return out;
}

Tensor add_const(const Tensor& a, double c) {
  Tensor out = a.dtype() == DType::kF32 ? add_const_t<float>(a, c)
                                        : add_const_t<double>(a, c);
  finish_op(out, "add_const");
  return out;
}

Tensor silu(const Tensor& x) {
  Tensor out = x.dtype() == DType::kF32 ? silu_t<float>(x) : silu_t<double>(x);
  finish_op(out, "silu");
  return out;
}

Tensor residual_inject(const Tensor& y, const Tensor& r, double lambda,
                       bool skip_zero) {
  require_same_shape(y, r, "residual_inject");
  Tensor out = y.dtype() == DType::kF32
                   ? residual_inject_t<float>(y, r, lambda, skip_zero)
                   : residual_inject_t<double>(y, r, lambda, skip_zero);
  finish_op(out, "residual_inject");
  return out;
}

// ---- conv2d ---------------------------------------------------------------

namespace {

template <typename T>
void im2col(const T* x, int B, int C, int H, int W, int kh, int kw, int stride,
            int pad, int OH, int OW, T* col) {
  int K = C * kh * kw;
  std::int64_t P = static_cast<std::int64_t>(OH) * OW;
  std::int64_t N = static_cast<std::int64_t>(B) * P;
  ThreadPool::instance().parallel_for(
      static_cast<std::size_t>(K), 4, [&](std::size_t k0, std::size_t k1) {
        for (std::size_t k = k0; k < k1; ++k) {
          int c = static_cast<int>(k) / (kh * kw);
          int ky = (static_cast<int>(k) / kw) % kh;
          int kx = static_cast<int>(k) % kw;
          T* crow = col + static_cast<std::int64_t>(k) * N;
          for (int b = 0; b < B; ++b) {
            const T* xc = x + (static_cast<std::int64_t>(b) * C + c) * H * W;
            T* dst = crow + static_cast<std::int64_t>(b) * P;
            for (int oy = 0; oy < OH; ++oy) {
              int iy = oy * stride + ky - pad;
              T* drow = dst + static_cast<std::int64_t>(oy) * OW;
              if (iy < 0 || iy >= H) {
                for (int ox = 0; ox < OW; ++ox) drow[ox] = T(0);
                continue;
              }
              const T* xrow = xc + static_cast<std::int64_t>(iy) * W;
              for (int ox = 0; ox < OW; ++ox) {
                int ix = ox * stride + kx - pad;
                drow[ox] = (ix >= 0 && ix < W) ? xrow[ix] : T(0);
              }
            }
          }
        }
      });
}

template <typename T>
void col2im_add(const T* dcol, int B, int C, int H, int W, int kh, int kw,
                int stride, int pad, int OH, int OW, T* dx) {
  int K = C * kh * kw;
  std::int64_t P = static_cast<std::int64_t>(OH) * OW;
  std::int64_t N = static_cast<std::int64_t>(B) * P;
  ThreadPool::instance().parallel_for(
      static_cast<std::size_t>(B), 1, [&](std::size_t b0, std::size_t b1) {
        for (std::size_t b = b0; b < b1; ++b) {
          for (int k = 0; k < K; ++k) {
            int c = k / (kh * kw);
            int ky = (k / kw) % kh;
            int kx = k % kw;
            const T* crow =
                dcol + static_cast<std::int64_t>(k) * N + static_cast<std::int64_t>(b) * P;
            T* xc = dx + (static_cast<std::int64_t>(b) * C + c) * H * W;
            for (int oy = 0; oy < OH; ++oy) {
              int iy = oy * stride + ky - pad;
              if (iy < 0 || iy >= H) continue;
              const T* srow = crow + static_cast<std::int64_t>(oy) * OW;
              T* xrow = xc + static_cast<std::int64_t>(iy) * W;
              for (int ox = 0; ox < OW; ++ox) {
                int ix = ox * stride + kx - pad;
                if (ix >= 0 && ix < W) xrow[ix] += srow[ox];
              }
            }
          }
        }
      });
}

// out_mat[O][N] -> y[B][O][P]
template <typename T>
void unpermute_out(const T* out_mat, int B, int O, std::int64_t P, T* y) {
  std::int64_t N = static_cast<std::int64_t>(B) * P;
  ThreadPool::instance().parallel_for(
      static_cast<std::size_t>(B) * O, 8, [&](std::size_t i0, std::size_t i1) {
        for (std::size_t i = i0; i < i1; ++i) {
          int b = static_cast<int>(i) / O;
          int o = static_cast<int>(i) % O;
          std::memcpy(y + (static_cast<std::int64_t>(b) * O + o) * P,
                      out_mat + static_cast<std::int64_t>(o) * N +
                          static_cast<std::int64_t>(b) * P,
                      static_cast<std::size_t>(P) * sizeof(T));
        }
      });
}

// gy[B][O][P] -> gy_mat[O][N]
template <typename T>
void permute_gy(const T* gy, int B, int O, std::int64_t P, T* gy_mat) {
  std::int64_t N = static_cast<std::int64_t>(B) * P;
  ThreadPool::instance().parallel_for(
      static_cast<std::size_t>(B) * O, 8, [&](std::size_t i0, std::size_t i1) {
        for (std::size_t i = i0; i < i1; ++i) {
          int b = static_cast<int>(i) / O;
          int o = static_cast<int>(i) % O;
          std::memcpy(gy_mat + static_cast<std::int64_t>(o) * N +
                          static_cast<std::int64_t>(b) * P,
                      gy + (static_cast<std::int64_t>(b) * O + o) * P,
                      static_cast<std::size_t>(P) * sizeof(T));
        }
      });
}

template <typename T>
void gemm_sharded(int m, std::int64_t n, int k, const T* a, int lda, const T* b,
                  std::int64_t ldb, T* c, std::int64_t ldc, bool accumulate) {
  // shard output columns; each column is written by exactly one range
  ThreadPool::instance().parallel_for(
      static_cast<std::size_t>(n), 2048, [&](std::size_t j0, std::size_t j1) {
        kern::gemm(m, static_cast<int>(j1 - j0), k, a, lda, b + j0,
                   static_cast<int>(ldb), c + j0, static_cast<int>(ldc),
                   accumulate);
      });
}

template <typename T>
Tensor conv2d_t(const Tensor& x, const Tensor& w, const Tensor& bias,
                int stride, int pad) {
  int B = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  int O = w.dim(0), kh = w.dim(2), kw = w.dim(3);
  int OH = (H + 2 * pad - kh) / stride + 1;
  int OW = (W + 2 * pad - kw) / stride + 1;
  require(OH > 0 && OW > 0, "conv2d: empty output");
  int K = C * kh * kw;
  std::int64_t P = static_cast<std::int64_t>(OH) * OW;
  std::int64_t N = static_cast<std::int64_t>(B) * P;

  Tensor out = make_out({B, O, OH, OW}, x, {&x, &w, &bias});

  Scratch<T> col(static_cast<std::size_t>(K) * N);
  im2col<T>(Buf<T>::data(x.impl().get()), B, C, H, W, kh, kw, stride, pad, OH,
            OW, col.get());

  Scratch<T> out_mat(static_cast<std::size_t>(O) * N);
  const T* pb = Buf<T>::data(bias.impl().get());
  for (int o = 0; o < O; ++o) {
    T* row = out_mat.get() + static_cast<std::int64_t>(o) * N;
    T bv = pb[o];
    for (std::int64_t j = 0; j < N; ++j) row[j] = bv;
  }
  gemm_sharded<T>(O, N, K, Buf<T>::data(w.impl().get()), K, col.get(), N,
                  out_mat.get(), N, true);
  unpermute_out<T>(out_mat.get(), B, O, P, Buf<T>::data(out.impl().get()));

  if (out.requires_grad() && TapeScope::current()) {
    auto xi = x.impl();
    auto wi = w.impl();
    auto bi = bias.impl();
    auto oi = out.impl();
    TapeScope::current()->record([=] {
      if (!oi->grad_live) return;
      Scratch<T> gy_mat(static_cast<std::size_t>(O) * N);
      permute_gy<T>(Buf<T>::grad(oi.get()), B, O, P, gy_mat.get());
      if (bi->requires_grad) {
        bi->ensure_grad();
        T* gb = Buf<T>::grad(bi.get());
        for (int o = 0; o < O; ++o) {
          gb[o] += static_cast<T>(kern::sum_f64(
              gy_mat.get() + static_cast<std::int64_t>(o) * N,
              static_cast<std::size_t>(N)));
        }
      }
      // rebuild the im2col matrix rather than keeping it alive
      Scratch<T> col2(static_cast<std::size_t>(K) * N);
      im2col<T>(Buf<T>::data(xi.get()), B, C, H, W, kh, kw, stride, pad, OH,
                OW, col2.get());
      if (wi->requires_grad) {
        wi->ensure_grad();
        ThreadPool::instance().parallel_for(
            static_cast<std::size_t>(O), 2, [&](std::size_t o0, std::size_t o1) {
              kern::gemm_nt(static_cast<int>(o1 - o0), K, static_cast<int>(N),
                            gy_mat.get() + o0 * static_cast<std::size_t>(N),
                            static_cast<int>(N), col2.get(),
                            static_cast<int>(N),
                            Buf<T>::grad(wi.get()) + o0 * static_cast<std::size_t>(K),
                            K);
            });
      }
      if (xi->requires_grad) {
        xi->ensure_grad();
        std::vector<T> dcol(static_cast<std::size_t>(K) * N, T(0));
        ThreadPool::instance().parallel_for(
            static_cast<std::size_t>(N), 2048,
            [&](std::size_t j0, std::size_t j1) {
              kern::gemm_tn(O, K, static_cast<int>(j1 - j0),
                            Buf<T>::data(wi.get()), K, gy_mat.get() + j0,
                            static_cast<int>(N), dcol.data() + j0,
                            static_cast<int>(N));
            });
        col2im_add<T>(dcol.data(), B, C, H, W, kh, kw, stride, pad, OH, OW,
                      Buf<T>::grad(xi.get()));
      }
    });
  }
  return out;
}

}  // namespace

Tensor conv2d(const Tensor& x, const Tensor& w, const Tensor& b, int stride,
              int pad) {
  require(x.ndim() == 4, "conv2d: input must be [B,C,H,W], got " + x.shape_str());
  require(w.ndim() == 4, "conv2d: weight must be [O,C,kh,kw], got " + w.shape_str());
  require(b.ndim() == 1 && b.dim(0) == w.dim(0),
          "conv2d: bias must be [O], got " + b.shape_str());
  if (x.dim(1) != w.dim(1))
    throw InvariantError("conv2d: channel mismatch, input " + x.shape_str() +
                         " vs weight " + w.shape_str());
  require(stride >= 1, "conv2d: stride must be >= 1");
  require(pad >= 0, "conv2d: pad must be >= 0");
  Tensor out = x.dtype() == DType::kF32 ? conv2d_t<float>(x, w, b, stride, pad)
                                        : conv2d_t<double>(x, w, b, stride, pad);
  finish_op(out, "conv2d");
  return out;
}

// ---- linear ----------------------------------------------------------------

namespace {

template <typename T>
Tensor linear_t(const Tensor& x, const Tensor& w, const Tensor& bias) {
  int B = x.dim(0), F = x.dim(1), O = w.dim(0);
  Tensor out = make_out({B, O}, x, {&x, &w, &bias});
  T* po = Buf<T>::data(out.impl().get());
  const T* pb = Buf<T>::data(bias.impl().get());
  for (int b = 0; b < B; ++b)
    std::memcpy(po + static_cast<std::int64_t>(b) * O, pb,
                static_cast<std::size_t>(O) * sizeof(T));
  kern::gemm_nt(B, O, F, Buf<T>::data(x.impl().get()), F,
                Buf<T>::data(w.impl().get()), F, po, O);
  if (out.requires_grad() && TapeScope::current()) {
    auto xi = x.impl();
    auto wi = w.impl();
    auto bi = bias.impl();
    auto oi = out.impl();
    TapeScope::current()->record([=] {
      if (!oi->grad_live) return;
      const T* g = Buf<T>::grad(oi.get());
      if (bi->requires_grad) {
        bi->ensure_grad();
        T* gb = Buf<T>::grad(bi.get());
        for (int o = 0; o < O; ++o) {
          double acc = 0.0;
          for (int b = 0; b < B; ++b)
            acc += static_cast<double>(g[static_cast<std::int64_t>(b) * O + o]);
          gb[o] += static_cast<T>(acc);
        }
      }
      if (wi->requires_grad) {
        wi->ensure_grad();
        kern::gemm_tn(B, O, F, g, O, Buf<T>::data(xi.get()), F,
                      Buf<T>::grad(wi.get()), F);
      }
      if (xi->requires_grad) {
        xi->ensure_grad();
        kern::gemm(B, F, O, g, O, Buf<T>::data(wi.get()), F,
                   Buf<T>::grad(xi.get()), F, true);
      }
    });
  }
  return out;
}

}  // namespace

Tensor linear(const Tensor& x, const Tensor& w, const Tensor& b) {
  require(x.ndim() == 2, "linear: input must be [B,F], got " + x.shape_str());
  require(w.ndim() == 2, "linear: weight must be [O,F], got " + w.shape_str());
  if (x.dim(1) != w.dim(1))
    throw InvariantError("linear: feature mismatch, input " + x.shape_str() +
                         " vs weight " + w.shape_str());
  require(b.ndim() == 1 && b.dim(0) == w.dim(0), "linear: bad bias shape");
  Tensor out = x.dtype() == DType::kF32 ? linear_t<float>(x, w, b)
                                        : linear_t<double>(x, w, b);
  finish_op(out, "linear");
  return out;
}

// ---- group_norm -------------------------------------------------------------

namespace {

template <typename T>
Tensor group_norm_t(const Tensor& x, int groups, const Tensor& gamma,
                    const Tensor& beta, double eps) {
  int B = x.dim(0), C = x.dim(1);
  std::int64_t HW = x.numel() / (static_cast<std::int64_t>(B) * C);
  int cpg = C / groups;
  std::int64_t gsize = cpg * HW;

  Tensor out = make_out(x.shape(), x, {&x, &gamma, &beta});
  auto mu = std::make_shared<std::vector<double>>(
      static_cast<std::size_t>(B) * groups);
  auto inv = std::make_shared<std::vector<double>>(
      static_cast<std::size_t>(B) * groups);

  const T* px = Buf<T>::data(x.impl().get());
  const T* pg = Buf<T>::data(gamma.impl().get());
  const T* pbeta = Buf<T>::data(beta.impl().get());
  T* po = Buf<T>::data(out.impl().get());

  ThreadPool::instance().parallel_for(
      static_cast<std::size_t>(B) * groups, 1,
      [&](std::size_t i0, std::size_t i1) {
        for (std::size_t i = i0; i < i1; ++i) {
          int b = static_cast<int>(i) / groups;
          int g = static_cast<int>(i) % groups;
          const T* base =
              px + (static_cast<std::int64_t>(b) * C + g * cpg) * HW;
          double sum = 0.0, sq = 0.0;
          for (std::int64_t j = 0; j < gsize; ++j) {
            double v = static_cast<double>(base[j]);
            sum += v;
            sq += v * v;
          }
          double m = sum / static_cast<double>(gsize);
          double var = sq / static_cast<double>(gsize) - m * m;
          if (var < 0) var = 0;
          double iv = 1.0 / std::sqrt(var + eps);
          (*mu)[i] = m;
          (*inv)[i] = iv;
          T* ob = po + (static_cast<std::int64_t>(b) * C + g * cpg) * HW;
          for (int cc = 0; cc < cpg; ++cc) {
            int c = g * cpg + cc;
            double ga = static_cast<double>(pg[c]);
            double be = static_cast<double>(pbeta[c]);
            const T* xr = base + static_cast<std::int64_t>(cc) * HW;
            T* orow = ob + static_cast<std::int64_t>(cc) * HW;
            for (std::int64_t j = 0; j < HW; ++j) {
              double xh = (static_cast<double>(xr[j]) - m) * iv;
              orow[j] = static_cast<T>(ga * xh + be);
            }
          }
        }
      });

  if (out.requires_grad() && TapeScope::current()) {
    auto xi = x.impl();
    auto gi = gamma.impl();
    auto bi = beta.impl();
    auto oi = out.impl();
    TapeScope::current()->record([=] {
      if (!oi->grad_live) return;
      const T* g = Buf<T>::grad(oi.get());
      const T* px = Buf<T>::data(xi.get());
      const T* pg = Buf<T>::data(gi.get());
      bool need_x = xi->requires_grad;
      bool need_gamma = gi->requires_grad;
      bool need_beta = bi->requires_grad;
      if (need_x) xi->ensure_grad();
      if (need_gamma) gi->ensure_grad();
      if (need_beta) bi->ensure_grad();
      // groups own disjoint channels, so (gamma,beta,x) grads can be
      // computed per group in parallel; order within a group is fixed
      std::vector<double> dgamma(static_cast<std::size_t>(C), 0.0);
      std::vector<double> dbeta(static_cast<std::size_t>(C), 0.0);
      ThreadPool::instance().parallel_for(
          static_cast<std::size_t>(groups), 1,
          [&](std::size_t g0, std::size_t g1) {
            for (std::size_t gs = g0; gs < g1; ++gs) {
              int gidx = static_cast<int>(gs);
              for (int b = 0; b < B; ++b) {
                std::size_t i = static_cast<std::size_t>(b) * groups + gidx;
                double m = (*mu)[i];
                double iv = (*inv)[i];
                const T* xb =
                    px + (static_cast<std::int64_t>(b) * C + gidx * cpg) * HW;
                const T* gb =
                    g + (static_cast<std::int64_t>(b) * C + gidx * cpg) * HW;
                double sum_dxhat = 0.0, sum_dxhat_xhat = 0.0;
                for (int cc = 0; cc < cpg; ++cc) {
                  int c = gidx * cpg + cc;
                  double ga = static_cast<double>(pg[c]);
                  const T* xr = xb + static_cast<std::int64_t>(cc) * HW;
                  const T* gr = gb + static_cast<std::int64_t>(cc) * HW;
                  for (std::int64_t j = 0; j < HW; ++j) {
                    double xh = (static_cast<double>(xr[j]) - m) * iv;
                    double gv = static_cast<double>(gr[j]);
                    dgamma[static_cast<std::size_t>(c)] += gv * xh;
                    dbeta[static_cast<std::size_t>(c)] += gv;
                    double dxh = gv * ga;
                    sum_dxhat += dxh;
                    sum_dxhat_xhat += dxh * xh;
                  }
                }
                if (need_x) {
                  T* dxb = Buf<T>::grad(xi.get()) +
                           (static_cast<std::int64_t>(b) * C + gidx * cpg) * HW;
                  double n = static_cast<double>(gsize);
                  for (int cc = 0; cc < cpg; ++cc) {
                    int c = gidx * cpg + cc;
                    double ga = static_cast<double>(pg[c]);
                    const T* xr = xb + static_cast<std::int64_t>(cc) * HW;
                    const T* gr = gb + static_cast<std::int64_t>(cc) * HW;
                    T* dr = dxb + static_cast<std::int64_t>(cc) * HW;
                    for (std::int64_t j = 0; j < HW; ++j) {
                      double xh = (static_cast<double>(xr[j]) - m) * iv;
                      double dxh = static_cast<double>(gr[j]) * ga;
                      double dx =
                          iv * (dxh - sum_dxhat / n - xh * sum_dxhat_xhat / n);
                      dr[j] += static_cast<T>(dx);
                    }
                  }
                }
              }
            }
          });
      if (need_gamma) {
        T* dg = Buf<T>::grad(gi.get());
        for (int c = 0; c < C; ++c)
          dg[c] += static_cast<T>(dgamma[static_cast<std::size_t>(c)]);
      }
      if (need_beta) {
        T* db = Buf<T>::grad(bi.get());
        for (int c = 0; c < C; ++c)
          db[c] += static_cast<T>(dbeta[static_cast<std::size_t>(c)]);
      }
    });
  }
  return out;
}

}  // namespace

Tensor group_norm(const Tensor& x, int groups, const Tensor& gamma,
                  const Tensor& beta, double eps) {
  require(x.ndim() == 4, "group_norm: input must be [B,C,H,W]");
  int C = x.dim(1);
  require(groups >= 1 && C % groups == 0,
          "group_norm: channels not divisible by groups");
  require(gamma.ndim() == 1 && gamma.dim(0) == C, "group_norm: bad gamma");
  require(beta.ndim() == 1 && beta.dim(0) == C, "group_norm: bad beta");
  Tensor out = x.dtype() == DType::kF32
                   ? group_norm_t<float>(x, groups, gamma, beta, eps)
                   : group_norm_t<double>(x, groups, gamma, beta, eps);
  finish_op(out, "group_norm");
  return out;
}

// ---- batch_norm -------------------------------------------------------------

namespace {

template <typename T>
Tensor batch_norm_t(const Tensor& x, const Tensor& gamma, const Tensor& beta,
                    Tensor running_mean, Tensor running_var, bool training,
                    double momentum, double eps) {
  int B = x.dim(0), C = x.dim(1);
  std::int64_t HW = x.numel() / (static_cast<std::int64_t>(B) * C);
  std::int64_t nred = static_cast<std::int64_t>(B) * HW;

  Tensor out = make_out(x.shape(), x, {&x, &gamma, &beta});
  const T* px = Buf<T>::data(x.impl().get());
  const T* pg = Buf<T>::data(gamma.impl().get());
  const T* pbeta = Buf<T>::data(beta.impl().get());
  T* po = Buf<T>::data(out.impl().get());
  T* rm = Buf<T>::data(running_mean.impl().get());
  T* rv = Buf<T>::data(running_var.impl().get());

  auto mu = std::make_shared<std::vector<double>>(static_cast<std::size_t>(C));
  auto inv = std::make_shared<std::vector<double>>(static_cast<std::size_t>(C));

  for (int c = 0; c < C; ++c) {
    double m, var;
    if (training) {
      double sum = 0.0, sq = 0.0;
      for (int b = 0; b < B; ++b) {
        const T* xr = px + (static_cast<std::int64_t>(b) * C + c) * HW;
        for (std::int64_t j = 0; j < HW; ++j) {
          double v = static_cast<double>(xr[j]);
          sum += v;
          sq += v * v;
        }
      }
      m = sum / static_cast<double>(nred);
      var = sq / static_cast<double>(nred) - m * m;
      if (var < 0) var = 0;
      rm[c] = static_cast<T>((1.0 - momentum) * static_cast<double>(rm[c]) +
                             momentum * m);
      rv[c] = static_cast<T>((1.0 - momentum) * static_cast<double>(rv[c]) +
                             momentum * var);
    } else {
      m = static_cast<double>(rm[c]);
      var = static_cast<double>(rv[c]);
    }
    double iv = 1.0 / std::sqrt(var + eps);
    (*mu)[static_cast<std::size_t>(c)] = m;
    (*inv)[static_cast<std::size_t>(c)] = iv;
    double ga = static_cast<double>(pg[c]);
    double be = static_cast<double>(pbeta[c]);
    for (int b = 0; b < B; ++b) {
      const T* xr = px + (static_cast<std::int64_t>(b) * C + c) * HW;
      T* orow = po + (static_cast<std::int64_t>(b) * C + c) * HW;
      for (std::int64_t j = 0; j < HW; ++j)
        orow[j] = static_cast<T>(
            ga * ((static_cast<double>(xr[j]) - m) * iv) + be);
    }
  }

  if (out.requires_grad() && TapeScope::current()) {
    auto xi = x.impl();
    auto gi = gamma.impl();
    auto bi = beta.impl();
    auto oi = out.impl();
    TapeScope::current()->record([=] {
      if (!oi->grad_live) return;
      const T* g = Buf<T>::grad(oi.get());
      const T* px = Buf<T>::data(xi.get());
      const T* pg = Buf<T>::data(gi.get());
      bool need_x = xi->requires_grad;
      if (need_x) xi->ensure_grad();
      if (gi->requires_grad) gi->ensure_grad();
      if (bi->requires_grad) bi->ensure_grad();
      for (int c = 0; c < C; ++c) {
        double m = (*mu)[static_cast<std::size_t>(c)];
        double iv = (*inv)[static_cast<std::size_t>(c)];
        double ga = static_cast<double>(pg[c]);
        double sum_g = 0.0, sum_gx = 0.0;
        for (int b = 0; b < B; ++b) {
          const T* xr = px + (static_cast<std::int64_t>(b) * C + c) * HW;
          const T* gr = g + (static_cast<std::int64_t>(b) * C + c) * HW;
          for (std::int64_t j = 0; j < HW; ++j) {
            double xh = (static_cast<double>(xr[j]) - m) * iv;
            double gv = static_cast<double>(gr[j]);
            sum_g += gv;
            sum_gx += gv * xh;
          }
        }
        if (gi->requires_grad)
          Buf<T>::grad(gi.get())[c] += static_cast<T>(sum_gx);
        if (bi->requires_grad)
          Buf<T>::grad(bi.get())[c] += static_cast<T>(sum_g);
        if (need_x) {
          double n = static_cast<double>(nred);
          T* dx = Buf<T>::grad(xi.get());
          for (int b = 0; b < B; ++b) {
            const T* xr = px + (static_cast<std::int64_t>(b) * C + c) * HW;
            const T* gr = g + (static_cast<std::int64_t>(b) * C + c) * HW;
            T* dr = dx + (static_cast<std::int64_t>(b) * C + c) * HW;
            for (std::int64_t j = 0; j < HW; ++j) {
              double xh = (static_cast<double>(xr[j]) - m) * iv;
              double gv = static_cast<double>(gr[j]);
              double d;
              if (training)
                d = ga * iv * (gv - sum_g / n - xh * sum_gx / n);
              else
                d = ga * iv * gv;
              dr[j] += static_cast<T>(d);
            }
          }
        }
      }
    });
  }
  return out;
}

}  // namespace

Tensor batch_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta,
                  Tensor running_mean, Tensor running_var, bool training,
                  double momentum, double eps) {
  require(x.ndim() == 2 || x.ndim() == 4,
          "batch_norm: input must be [B,C] or [B,C,H,W]");
  int C = x.dim(1);
  require(gamma.ndim() == 1 && gamma.dim(0) == C, "batch_norm: bad gamma");
  require(beta.ndim() == 1 && beta.dim(0) == C, "batch_norm: bad beta");
  require(running_mean.dim(0) == C && running_var.dim(0) == C,
          "batch_norm: bad running stats");
  Tensor out =
      x.dtype() == DType::kF32
          ? batch_norm_t<float>(x, gamma, beta, running_mean, running_var,
                                training, momentum, eps)
          : batch_norm_t<double>(x, gamma, beta, running_mean, running_var,
                                 training, momentum, eps);
  finish_op(out, "batch_norm");
  return out;
}

// ---- embedding --------------------------------------------------------------

namespace {

template <typename T>
Tensor embedding_t(const Tensor& table, const std::vector<int>& idx) {
  int V = table.dim(0), E = table.dim(1);
  int B = static_cast<int>(idx.size());
  Tensor out = make_out({B, E}, table, {&table});
  const T* pt = Buf<T>::data(table.impl().get());
  T* po = Buf<T>::data(out.impl().get());
  for (int b = 0; b < B; ++b) {
    int id = idx[static_cast<std::size_t>(b)];
    require(id >= 0 && id < V, "embedding: index out of range");
    std::memcpy(po + static_cast<std::int64_t>(b) * E,
                pt + static_cast<std::int64_t>(id) * E,
                static_cast<std::size_t>(E) * sizeof(T));
  }
  if (out.requires_grad() && TapeScope::current()) {
    auto ti = table.impl();
    auto oi = out.impl();
    auto ids = idx;
    TapeScope::current()->record([=] {
      if (!oi->grad_live || !ti->requires_grad) return;
      ti->ensure_grad();
      const T* g = Buf<T>::grad(oi.get());
      T* gt = Buf<T>::grad(ti.get());
      for (int b = 0; b < B; ++b) {
        const T* gr = g + static_cast<std::int64_t>(b) * E;
        T* tr = gt + static_cast<std::int64_t>(ids[static_cast<std::size_t>(b)]) * E;
        for (int e = 0; e < E; ++e) tr[e] += gr[e];
      }
    });
  }
  return out;
}

}  // namespace

Tensor embedding(const Tensor& table, const std::vector<int>& idx) {
  require(table.ndim() == 2, "embedding: table must be [V,E]");
  require(!idx.empty(), "embedding: empty index list");
  Tensor out = table.dtype() == DType::kF32 ? embedding_t<float>(table, idx)
                                            : embedding_t<double>(table, idx);
  finish_op(out, "embedding");
  return out;
}

// ---- matmul -----------------------------------------------------------------

namespace {

template <typename T>
Tensor matmul_t(const Tensor& a, const Tensor& b) {
  int M = a.dim(0), K = a.dim(1), N = b.dim(1);
  Tensor out = make_out({M, N}, a, {&a, &b});
  kern::gemm(M, N, K, Buf<T>::data(a.impl().get()), K,
             Buf<T>::data(b.impl().get()), N, Buf<T>::data(out.impl().get()),
             N, false);
  if (out.requires_grad() && TapeScope::current()) {
    auto ai = a.impl();
    auto bi = b.impl();
    auto oi = out.impl();
    TapeScope::current()->record([=] {
      if (!oi->grad_live) return;
      const T* g = Buf<T>::grad(oi.get());
      if (ai->requires_grad) {
        ai->ensure_grad();
        kern::gemm_nt(M, K, N, g, N, Buf<T>::data(bi.get()), N,
                      Buf<T>::grad(ai.get()), K);
      }
      if (bi->requires_grad) {
        bi->ensure_grad();
        kern::gemm_tn(M, K, N, Buf<T>::data(ai.get()), K, g, N,
                      Buf<T>::grad(bi.get()), N);
      }
    });
  }
  return out;
}

}  // namespace

Tensor matmul(const Tensor& a, const Tensor& b) {
  require(a.ndim() == 2 && b.ndim() == 2, "matmul: inputs must be 2d");
  if (a.dim(1) != b.dim(0))
    throw InvariantError("matmul: inner dims mismatch " + a.shape_str() +
                         " vs " + b.shape_str());
  require(a.dtype() == b.dtype(), "matmul: dtype mismatch");
  Tensor out = a.dtype() == DType::kF32 ? matmul_t<float>(a, b)
                                        : matmul_t<double>(a, b);
  finish_op(out, "matmul");
  return out;
}

// ---- structure ops ----------------------------------------------------------

namespace {

template <typename T>
Tensor concat_channels_t(const Tensor& a, const Tensor& b) {
  int B = a.dim(0), C1 = a.dim(1), C2 = b.dim(1), H = a.dim(2), W = a.dim(3);
  std::int64_t HW = static_cast<std::int64_t>(H) * W;
  Tensor out = make_out({B, C1 + C2, H, W}, a, {&a, &b});
  const T* pa = Buf<T>::data(a.impl().get());
  const T* pb = Buf<T>::data(b.impl().get());
  T* po = Buf<T>::data(out.impl().get());
  for (int bb = 0; bb < B; ++bb) {
    std::memcpy(po + static_cast<std::int64_t>(bb) * (C1 + C2) * HW,
                pa + static_cast<std::int64_t>(bb) * C1 * HW,
                static_cast<std::size_t>(C1 * HW) * sizeof(T));
    std::memcpy(po + (static_cast<std::int64_t>(bb) * (C1 + C2) + C1) * HW,
                pb + static_cast<std::int64_t>(bb) * C2 * HW,
                static_cast<std::size_t>(C2 * HW) * sizeof(T));
  }
  if (out.requires_grad() && TapeScope::current()) {
    auto ai = a.impl();
    auto bi = b.impl();
    auto oi = out.impl();
    TapeScope::current()->record([=] {
      if (!oi->grad_live) return;
      const T* g = Buf<T>::grad(oi.get());
      for (int bb = 0; bb < B; ++bb) {
        const T* g1 = g + static_cast<std::int64_t>(bb) * (C1 + C2) * HW;
        if (ai->requires_grad) {
          ai->ensure_grad();
          T* ga = Buf<T>::grad(ai.get()) + static_cast<std::int64_t>(bb) * C1 * HW;
          for (std::int64_t j = 0; j < C1 * HW; ++j) ga[j] += g1[j];
        }
        if (bi->requires_grad) {
          bi->ensure_grad();
          T* gb = Buf<T>::grad(bi.get()) + static_cast<std::int64_t>(bb) * C2 * HW;
          const T* g2 = g1 + static_cast<std::int64_t>(C1) * HW;
          for (std::int64_t j = 0; j < C2 * HW; ++j) gb[j] += g2[j];
        }
      }
    });
  }
  return out;
}

template <typename T>
Tensor upsample_nearest2_t(const Tensor& x) {
  int B = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  Tensor out = make_out({B, C, 2 * H, 2 * W}, x, {&x});
  const T* px = Buf<T>::data(x.impl().get());
  T* po = Buf<T>::data(out.impl().get());
  for (std::int64_t bc = 0; bc < static_cast<std::int64_t>(B) * C; ++bc) {
    const T* xp = px + bc * H * W;
    T* op = po + bc * 4 * H * W;
    for (int y = 0; y < H; ++y) {
      T* r0 = op + static_cast<std::int64_t>(2 * y) * 2 * W;
      T* r1 = r0 + 2 * W;
      for (int xx = 0; xx < W; ++xx) {
        T v = xp[static_cast<std::int64_t>(y) * W + xx];
        r0[2 * xx] = v;
        r0[2 * xx + 1] = v;
        r1[2 * xx] = v;
        r1[2 * xx + 1] = v;
      }
    }
  }
  if (out.requires_grad() && TapeScope::current()) {
    auto xi = x.impl();
    auto oi = out.impl();
    TapeScope::current()->record([=] {
      if (!oi->grad_live || !xi->requires_grad) return;
      xi->ensure_grad();
      const T* g = Buf<T>::grad(oi.get());
      T* gx = Buf<T>::grad(xi.get());
      for (std::int64_t bc = 0; bc < static_cast<std::int64_t>(B) * C; ++bc) {
        T* xp = gx + bc * H * W;
        const T* op = g + bc * 4 * H * W;
        for (int y = 0; y < H; ++y) {
          const T* r0 = op + static_cast<std::int64_t>(2 * y) * 2 * W;
          const T* r1 = r0 + 2 * W;
          for (int xx = 0; xx < W; ++xx)
            xp[static_cast<std::int64_t>(y) * W + xx] +=
                r0[2 * xx] + r0[2 * xx + 1] + r1[2 * xx] + r1[2 * xx + 1];
        }
      }
    });
  }
  return out;
}

template <typename T>
Tensor global_avg_pool_t(const Tensor& x) {
  int B = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  std::int64_t HW = static_cast<std::int64_t>(H) * W;
  Tensor out = make_out({B, C}, x, {&x});
  const T* px = Buf<T>::data(x.impl().get());
  T* po = Buf<T>::data(out.impl().get());
  for (std::int64_t bc = 0; bc < static_cast<std::int64_t>(B) * C; ++bc)
    po[bc] = static_cast<T>(kern::sum_f64(px + bc * HW,
                                          static_cast<std::size_t>(HW)) /
                            static_cast<double>(HW));
  if (out.requires_grad() && TapeScope::current()) {
    auto xi = x.impl();
    auto oi = out.impl();
    TapeScope::current()->record([=] {
      if (!oi->grad_live || !xi->requires_grad) return;
      xi->ensure_grad();
      const T* g = Buf<T>::grad(oi.get());
      T* gx = Buf<T>::grad(xi.get());
      for (std::int64_t bc = 0; bc < static_cast<std::int64_t>(B) * C; ++bc) {
        T gv = static_cast<T>(static_cast<double>(g[bc]) / static_cast<double>(HW));
        T* row = gx + bc * HW;
        for (std::int64_t j = 0; j < HW; ++j) row[j] += gv;
      }
    });
  }
  return out;
}

template <typename T>
Tensor bias_add_rows_t(const Tensor& x, const Tensor& v) {
  int B = x.dim(0), C = x.dim(1);
  std::int64_t HW = x.numel() / (static_cast<std::int64_t>(B) * C);
  bool per_sample = v.ndim() == 2;
  Tensor out = make_out(x.shape(), x, {&x, &v});
  const T* px = Buf<T>::data(x.impl().get());
  const T* pv = Buf<T>::data(v.impl().get());
  T* po = Buf<T>::data(out.impl().get());
  for (int b = 0; b < B; ++b) {
    for (int c = 0; c < C; ++c) {
      T add = per_sample ? pv[static_cast<std::int64_t>(b) * C + c] : pv[c];
      const T* xr = px + (static_cast<std::int64_t>(b) * C + c) * HW;
      T* orow = po + (static_cast<std::int64_t>(b) * C + c) * HW;
      for (std::int64_t j = 0; j < HW; ++j) orow[j] = xr[j] + add;
    }
  }
  if (out.requires_grad() && TapeScope::current()) {
    auto xi = x.impl();
    auto vi = v.impl();
    auto oi = out.impl();
    TapeScope::current()->record([=] {
      if (!oi->grad_live) return;
      const T* g = Buf<T>::grad(oi.get());
      if (xi->requires_grad) {
        xi->ensure_grad();
        T* gx = Buf<T>::grad(xi.get());
        std::int64_t n = oi->numel;
        for (std::int64_t j = 0; j < n; ++j) gx[j] += g[j];
      }
      if (vi->requires_grad) {
        vi->ensure_grad();
        T* gv = Buf<T>::grad(vi.get());
        for (int b = 0; b < B; ++b) {
          for (int c = 0; c < C; ++c) {
            double acc = kern::sum_f64(
                g + (static_cast<std::int64_t>(b) * C + c) * HW,
                static_cast<std::size_t>(HW));
            if (per_sample)
              gv[static_cast<std::int64_t>(b) * C + c] += static_cast<T>(acc);
            else
              gv[c] += static_cast<T>(acc);
          }
        }
      }
    });
  }
  return out;
}

template <typename T>
Tensor channel_scale_t(const Tensor& x, const Tensor& s) {
  int B = x.dim(0), C = x.dim(1);
  std::int64_t HW = x.numel() / (static_cast<std::int64_t>(B) * C);
  Tensor out = make_out(x.shape(), x, {&x, &s});
  const T* px = Buf<T>::data(x.impl().get());
  const T* ps = Buf<T>::data(s.impl().get());
  T* po = Buf<T>::data(out.impl().get());
  for (std::int64_t bc = 0; bc < static_cast<std::int64_t>(B) * C; ++bc) {
    T sv = ps[bc];
    const T* xr = px + bc * HW;
    T* orow = po + bc * HW;
    for (std::int64_t j = 0; j < HW; ++j) orow[j] = xr[j] * sv;
  }
  if (out.requires_grad() && TapeScope::current()) {
    auto xi = x.impl();
    auto si = s.impl();
    auto oi = out.impl();
    TapeScope::current()->record([=] {
      if (!oi->grad_live) return;
      const T* g = Buf<T>::grad(oi.get());
      const T* px = Buf<T>::data(xi.get());
      const T* ps = Buf<T>::data(si.get());
      if (xi->requires_grad) {
        xi->ensure_grad();
        T* gx = Buf<T>::grad(xi.get());
        for (std::int64_t bc = 0; bc < static_cast<std::int64_t>(B) * C; ++bc) {
          T sv = ps[bc];
          const T* gr = g + bc * HW;
          T* gxr = gx + bc * HW;
          for (std::int64_t j = 0; j < HW; ++j) gxr[j] += gr[j] * sv;
        }
      }
      if (si->requires_grad) {
        si->ensure_grad();
        T* gs = Buf<T>::grad(si.get());
        for (std::int64_t bc = 0; bc < static_cast<std::int64_t>(B) * C; ++bc)
          gs[bc] += static_cast<T>(kern::dot_f64(g + bc * HW, px + bc * HW,
                                                 static_cast<std::size_t>(HW)));
      }
    });
  }
  return out;
}

template <typename T>
Tensor reshape_t(const Tensor& x, std::vector<int> shape) {
  Tensor out = Tensor::zeros(shape, x.dtype());
  out.set_requires_grad(tracing({&x}));
  std::memcpy(Buf<T>::data(out.impl().get()), Buf<T>::data(x.impl().get()),
              static_cast<std::size_t>(x.numel()) * sizeof(T));
  if (out.requires_grad() && TapeScope::current()) {
    auto xi = x.impl();
    auto oi = out.impl();
    TapeScope::current()->record([=] {
      if (!oi->grad_live || !xi->requires_grad) return;
      xi->ensure_grad();
      const T* g = Buf<T>::grad(oi.get());
      T* gx = Buf<T>::grad(xi.get());
      std::int64_t n = oi->numel;
      for (std::int64_t j = 0; j < n; ++j) gx[j] += g[j];
    });
  }
  return out;
}

}  // namespace

Tensor concat_channels(const Tensor& a, const Tensor& b) {
  require(a.ndim() == 4 && b.ndim() == 4, "concat_channels: inputs must be 4d");
  require(a.dim(0) == b.dim(0) && a.dim(2) == b.dim(2) && a.dim(3) == b.dim(3),
          "concat_channels: shape mismatch " + a.shape_str() + " vs " +
              b.shape_str());
  require(a.dtype() == b.dtype(), "concat_channels: dtype mismatch");
  Tensor out = a.dtype() == DType::kF32 ? concat_channels_t<float>(a, b)
                                        : concat_channels_t<double>(a, b);
  finish_op(out, "concat_channels");
  return out;
}

Tensor upsample_nearest2(const Tensor& x) {
  require(x.ndim() == 4, "upsample_nearest2: input must be 4d");
  Tensor out = x.dtype() == DType::kF32 ? upsample_nearest2_t<float>(x)
                                        : upsample_nearest2_t<double>(x);
  finish_op(out, "upsample_nearest2");
  return out;
}

Tensor global_avg_pool(const Tensor& x) {
  require(x.ndim() == 4, "global_avg_pool: input must be 4d");
  Tensor out = x.dtype() == DType::kF32 ? global_avg_pool_t<float>(x)
                                        : global_avg_pool_t<double>(x);
  finish_op(out, "global_avg_pool");
  return out;
}

Tensor bias_add_rows(const Tensor& x, const Tensor& v) {
  require(x.ndim() >= 2, "bias_add_rows: input must have >= 2 dims");
  if (v.ndim() == 2)
    require(v.dim(0) == x.dim(0) && v.dim(1) == x.dim(1),
            "bias_add_rows: bias " + v.shape_str() + " incompatible with " +
                x.shape_str());
  else
    require(v.ndim() == 1 && v.dim(0) == x.dim(1),
            "bias_add_rows: bias " + v.shape_str() + " incompatible with " +
                x.shape_str());
  Tensor out = x.dtype() == DType::kF32 ? bias_add_rows_t<float>(x, v)
                                        : bias_add_rows_t<double>(x, v);
  finish_op(out, "bias_add_rows");
  return out;
}

Tensor channel_scale(const Tensor& x, const Tensor& s) {
  require(x.ndim() >= 2, "channel_scale: input must have >= 2 dims");
  require(s.ndim() == 2 && s.dim(0) == x.dim(0) && s.dim(1) == x.dim(1),
          "channel_scale: scale " + s.shape_str() + " incompatible with " +
              x.shape_str());
  Tensor out = x.dtype() == DType::kF32 ? channel_scale_t<float>(x, s)
                                        : channel_scale_t<double>(x, s);
  finish_op(out, "channel_scale");
  return out;
}

Tensor reshape(const Tensor& x, std::vector<int> shape) {
  std::int64_t n = 1;
  for (int d : shape) n *= d;
  require(n == x.numel(), "reshape: numel mismatch");
  Tensor out = x.dtype() == DType::kF32 ? reshape_t<float>(x, std::move(shape))
                                        : reshape_t<double>(x, std::move(shape));
  finish_op(out, "reshape");
  return out;
}

// ---- broadcast_rows / bmm_channel_mix ----------------------------------------

namespace {

template <typename T>
Tensor broadcast_rows_t(const Tensor& v, int rows) {
  int K = v.dim(0);
  Tensor out = make_out({rows, K}, v, {&v});
  const T* pv = Buf<T>::data(v.impl().get());
  T* po = Buf<T>::data(out.impl().get());
  for (int r = 0; r < rows; ++r)
    std::memcpy(po + static_cast<std::int64_t>(r) * K, pv,
                static_cast<std::size_t>(K) * sizeof(T));
  if (out.requires_grad() && TapeScope::current()) {
    auto vi = v.impl();
    auto oi = out.impl();
    TapeScope::current()->record([=] {
      if (!oi->grad_live || !vi->requires_grad) return;
      vi->ensure_grad();
      const T* g = Buf<T>::grad(oi.get());
      T* gv = Buf<T>::grad(vi.get());
      for (int k = 0; k < K; ++k) {
        double acc = 0.0;
        for (int r = 0; r < rows; ++r)
          acc += static_cast<double>(g[static_cast<std::int64_t>(r) * K + k]);
        gv[k] += static_cast<T>(acc);
      }
    });
  }
  return out;
}

template <typename T>
Tensor bmm_channel_mix_t(const Tensor& m, const Tensor& x, int O) {
  int B = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  int P = H * W;
  Tensor out = make_out({B, O, H, W}, x, {&m, &x});
  const T* pm = Buf<T>::data(m.impl().get());
  const T* px = Buf<T>::data(x.impl().get());
  T* po = Buf<T>::data(out.impl().get());
  for (int b = 0; b < B; ++b) {
    kern::gemm(O, P, C, pm + static_cast<std::int64_t>(b) * O * C, C,
               px + static_cast<std::int64_t>(b) * C * P, P,
               po + static_cast<std::int64_t>(b) * O * P, P, false);
  }
  if (out.requires_grad() && TapeScope::current()) {
    auto mi = m.impl();
    auto xi = x.impl();
    auto oi = out.impl();
    TapeScope::current()->record([=] {
      if (!oi->grad_live) return;
      const T* g = Buf<T>::grad(oi.get());
      const T* pm = Buf<T>::data(mi.get());
      const T* px = Buf<T>::data(xi.get());
      if (mi->requires_grad) {
        mi->ensure_grad();
        T* gm = Buf<T>::grad(mi.get());
        for (int b = 0; b < B; ++b)
          kern::gemm_nt(O, C, P, g + static_cast<std::int64_t>(b) * O * P, P,
                        px + static_cast<std::int64_t>(b) * C * P, P,
                        gm + static_cast<std::int64_t>(b) * O * C, C);
      }
      if (xi->requires_grad) {
        xi->ensure_grad();
        T* gx = Buf<T>::grad(xi.get());
        for (int b = 0; b < B; ++b)
          kern::gemm_tn(O, C, P, pm + static_cast<std::int64_t>(b) * O * C, C,
                        g + static_cast<std::int64_t>(b) * O * P, P,
                        gx + static_cast<std::int64_t>(b) * C * P, P);
      }
    });
  }
  return out;
}

}  // namespace

Tensor broadcast_rows(const Tensor& v, int rows) {
  require(v.ndim() == 1, "broadcast_rows: input must be 1d");
  require(rows >= 1, "broadcast_rows: rows must be >= 1");
  Tensor out = v.dtype() == DType::kF32 ? broadcast_rows_t<float>(v, rows)
                                        : broadcast_rows_t<double>(v, rows);
  finish_op(out, "broadcast_rows");
  return out;
}

Tensor bmm_channel_mix(const Tensor& m, const Tensor& x, int out_ch) {
  require(x.ndim() == 4, "bmm_channel_mix: x must be [B,C,H,W]");
  require(m.ndim() == 2 && m.dim(0) == x.dim(0) &&
              m.dim(1) == out_ch * x.dim(1),
          "bmm_channel_mix: mix matrix must be [B,out_ch*C]");
  Tensor out = x.dtype() == DType::kF32 ? bmm_channel_mix_t<float>(m, x, out_ch)
                                        : bmm_channel_mix_t<double>(m, x, out_ch);
  finish_op(out, "bmm_channel_mix");
  return out;
}

// ---- reductions -------------------------------------------------------------

namespace {

template <typename T>
Tensor sum_all_t(const Tensor& x, double denom) {
  Tensor out = Tensor::zeros({1}, x.dtype());
  out.set_requires_grad(tracing({&x}));
  double s = kern::sum_f64(Buf<T>::data(x.impl().get()),
                           static_cast<std::size_t>(x.numel())) /
             denom;
  out.set(0, s);
  if (out.requires_grad() && TapeScope::current()) {
    auto xi = x.impl();
    auto oi = out.impl();
    TapeScope::current()->record([=] {
      if (!oi->grad_live || !xi->requires_grad) return;
      xi->ensure_grad();
      double g = oi->dtype == DType::kF32 ? static_cast<double>(oi->g32[0])
                                          : oi->g64[0];
      T gv = static_cast<T>(g / denom);
      T* gx = Buf<T>::grad(xi.get());
      std::int64_t n = xi->numel;
      for (std::int64_t j = 0; j < n; ++j) gx[j] += gv;
    });
  }
  return out;
}

template <typename T>
Tensor mse_loss_t(const Tensor& a, const Tensor& b) {
  Tensor out = Tensor::zeros({1}, a.dtype());
  out.set_requires_grad(tracing({&a, &b}));
  std::size_t n = static_cast<std::size_t>(a.numel());
  double s = kern::sqdiff_f64(Buf<T>::data(a.impl().get()),
                              Buf<T>::data(b.impl().get()), n) /
             static_cast<double>(n);
  out.set(0, s);
  if (out.requires_grad() && TapeScope::current()) {
    auto ai = a.impl();
    auto bi = b.impl();
    auto oi = out.impl();
    TapeScope::current()->record([=] {
      if (!oi->grad_live) return;
      double g = oi->dtype == DType::kF32 ? static_cast<double>(oi->g32[0])
                                          : oi->g64[0];
      const T* pa = Buf<T>::data(ai.get());
      const T* pb = Buf<T>::data(bi.get());
      double c = 2.0 * g / static_cast<double>(ai->numel);
      if (ai->requires_grad) {
        ai->ensure_grad();
        T* ga = Buf<T>::grad(ai.get());
        for (std::int64_t j = 0; j < ai->numel; ++j)
          ga[j] += static_cast<T>(c * (static_cast<double>(pa[j]) -
                                       static_cast<double>(pb[j])));
      }
      if (bi->requires_grad) {
        bi->ensure_grad();
        T* gb = Buf<T>::grad(bi.get());
        for (std::int64_t j = 0; j < bi->numel; ++j)
          gb[j] -= static_cast<T>(c * (static_cast<double>(pa[j]) -
                                       static_cast<double>(pb[j])));
      }
    });
  }
  return out;
}

}  // namespace

Tensor sum_all(const Tensor& x) {
  Tensor out = x.dtype() == DType::kF32 ? sum_all_t<float>(x, 1.0)
                                        : sum_all_t<double>(x, 1.0);
  finish_op(out, "sum_all");
  return out;
}

Tensor mean_all(const Tensor& x) {
  double denom = static_cast<double>(x.numel());
  Tensor out = x.dtype() == DType::kF32 ? sum_all_t<float>(x, denom)
                                        : sum_all_t<double>(x, denom);
  finish_op(out, "mean_all");
  return out;
}

Tensor mse_loss(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "mse_loss");
  Tensor out = a.dtype() == DType::kF32 ? mse_loss_t<float>(a, b)
                                        : mse_loss_t<double>(a, b);
  finish_op(out, "mse_loss");
  return out;
}

Tensor detach(const Tensor& x) { return x.detach(); }

Tensor fourier_embed(double rho, int n_freqs, DType dt) {
  if (n_freqs < 1) throw InvariantError("fourier_embed: n_freqs must be >= 1");
  Tensor out = Tensor::zeros({2 * n_freqs}, dt);
  for (int k = 0; k < n_freqs; ++k) {
    double arg = std::ldexp(1.0, k) * M_PI * rho;  // 2^k * pi * rho
    out.set(k, std::sin(arg));
    out.set(n_freqs + k, std::cos(arg));
  }
  return out;
}

Tensor fourier_embed_batch(const std::vector<double>& rho, int n_freqs,
                           DType dt) {
  if (n_freqs < 1) throw InvariantError("fourier_embed: n_freqs must be >= 1");
  int B = static_cast<int>(rho.size());
  Tensor out = Tensor::zeros({B, 2 * n_freqs}, dt);
  for (int b = 0; b < B; ++b) {
    for (int k = 0; k < n_freqs; ++k) {
      double arg = std::ldexp(1.0, k) * M_PI * rho[static_cast<std::size_t>(b)];
      out.set(static_cast<std::int64_t>(b) * 2 * n_freqs + k, std::sin(arg));
      out.set(static_cast<std::int64_t>(b) * 2 * n_freqs + n_freqs + k,
              std::cos(arg));
    }
  }
  return out;
}

}  // namespace shapectl::nn
