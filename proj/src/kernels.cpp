#include "shapectl/kernels.hpp"

#include <atomic>
#include <cstdlib>
#include <stdexcept>

namespace shapectl::kern {

bool avx2_supported() {
#if defined(__x86_64__) || defined(_M_X64)
  return __builtin_cpu_supports("avx2") && __builtin_cpu_supports("fma");
#else
  return false;
#endif
}

namespace {

Backend resolve_default() {
  if (const char* env = std::getenv("SHAPECTL_KERNELS")) {
    std::string v(env);
    if (v == "scalar") return Backend::kScalar;
    if (v == "avx2") {
      if (!avx2_supported())
        throw std::runtime_error("SHAPECTL_KERNELS=avx2 but CPU lacks AVX2/FMA");
      return Backend::kAvx2;
    }
    // anything else (incl. "auto") falls through to detection
  }
  return avx2_supported() ? Backend::kAvx2 : Backend::kScalar;
}

std::atomic<Backend>& backend_slot() {
  static std::atomic<Backend> slot{resolve_default()};
  return slot;
}

}  // namespace

Backend active_backend() { return backend_slot().load(std::memory_order_relaxed); }

void set_backend(Backend b) {
  if (b == Backend::kAvx2 && !avx2_supported())
    throw std::runtime_error("AVX2 kernel backend requested but unsupported on this CPU");
  backend_slot().store(b, std::memory_order_relaxed);
}

void set_backend_by_name(const std::string& name) {
  if (name == "scalar") {
    set_backend(Backend::kScalar);
  } else if (name == "avx2") {
    set_backend(Backend::kAvx2);
  } else if (name == "auto") {
    set_backend(avx2_supported() ? Backend::kAvx2 : Backend::kScalar);
  } else {
    throw std::invalid_argument("unknown kernel backend: " + name);
  }
}

const char* backend_name(Backend b) {
  return b == Backend::kAvx2 ? "avx2" : "scalar";
}

#if defined(__x86_64__) || defined(_M_X64)
#define SHAPECTL_DISPATCH(fn, ...)                    \
  do {                                                \
    if (active_backend() == Backend::kAvx2)           \
      detail::fn##_avx2(__VA_ARGS__);                 \
    else                                              \
      detail::fn##_scalar(__VA_ARGS__);               \
  } while (0)
#else
#define SHAPECTL_DISPATCH(fn, ...) detail::fn##_scalar(__VA_ARGS__)
#endif

void add(const float* a, const float* b, float* out, std::size_t n) {
  SHAPECTL_DISPATCH(add, a, b, out, n);
}

void mul(const float* a, const float* b, float* out, std::size_t n) {
  SHAPECTL_DISPATCH(mul, a, b, out, n);
}

void axpy(float alpha, const float* x, float* y, std::size_t n) {
  SHAPECTL_DISPATCH(axpy, alpha, x, y, n);
}

void scale(float alpha, float* x, std::size_t n) {
  SHAPECTL_DISPATCH(scale, alpha, x, n);
}

void silu(const float* x, float* out, std::size_t n) {
  // scalar on every backend: expf has no bit-stable vector counterpart
  detail::silu_scalar(x, out, n);
}

void residual_add_skipzero(const float* y, const float* r, float lambda,
                           float* out, std::size_t n) {
  SHAPECTL_DISPATCH(residual_add_skipzero, y, r, lambda, out, n);
}

void gemm(int m, int n, int k, const float* a, int lda, const float* b,
          int ldb, float* c, int ldc, bool accumulate) {
  SHAPECTL_DISPATCH(gemm, m, n, k, a, lda, b, ldb, c, ldc, accumulate);
}

void gemm_nt(int m, int k, int n, const float* a, int lda, const float* b,
             int ldb, float* c, int ldc) {
  SHAPECTL_DISPATCH(gemm_nt, m, k, n, a, lda, b, ldb, c, ldc);
}

void gemm_tn(int m, int k, int n, const float* a, int lda, const float* b,
             int ldb, float* c, int ldc) {
  SHAPECTL_DISPATCH(gemm_tn, m, k, n, a, lda, b, ldb, c, ldc);
}

#undef SHAPECTL_DISPATCH

}  // namespace shapectl::kern
