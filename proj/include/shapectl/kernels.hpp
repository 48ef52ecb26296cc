#pragma once

// Arithmetic inner loops behind the tensor ops. Every kernel has a scalar
// reference implementation; on x86-64 an AVX2+FMA variant is selected at
// runtime when the CPU supports it. The two variants are equivalence-tested
// against each other (bit-exact for elementwise kernels, tolerance-bounded
// for reordered reductions such as GEMM).
//
// Determinism contract: for a fixed backend, every kernel produces
// bit-identical results regardless of worker-thread count. Reductions that
// feed loss values accumulate in double, sequentially.

#include <cstddef>
#include <string>

namespace shapectl::kern {

enum class Backend { kScalar, kAvx2 };

bool avx2_supported();

// Active backend. Defaults to the best supported one; SHAPECTL_KERNELS
// (scalar|avx2|auto) overrides, as does set_backend(). Resolved once.
Backend active_backend();
void set_backend(Backend b);
// Parses "scalar"/"avx2"/"auto"; throws std::invalid_argument otherwise.
void set_backend_by_name(const std::string& name);
const char* backend_name(Backend b);

// --- dispatched f32 kernels ---------------------------------------------

void add(const float* a, const float* b, float* out, std::size_t n);
void mul(const float* a, const float* b, float* out, std::size_t n);
void axpy(float alpha, const float* x, float* y, std::size_t n);  // y += alpha*x
void scale(float alpha, float* x, std::size_t n);
void silu(const float* x, float* out, std::size_t n);

// out[i] = r[i]==0 ? y[i] : y[i] + lambda*r[i]
// Bit-preserving for zero residuals; used on the sampler's injection path.
void residual_add_skipzero(const float* y, const float* r, float lambda,
                           float* out, std::size_t n);

// Row-major GEMM family with explicit leading dimensions so callers can
// shard by row/column ranges across worker threads.
//   gemm:    C[M,N] (+)= A[M,K] * B[K,N]
//   gemm_nt: C[M,K]  +=  A[M,N] * B[K,N]^T
//   gemm_tn: C[K,N]  +=  A[M,K]^T * B[M,N]
void gemm(int m, int n, int k, const float* a, int lda, const float* b,
          int ldb, float* c, int ldc, bool accumulate);
void gemm_nt(int m, int k, int n, const float* a, int lda, const float* b,
             int ldb, float* c, int ldc);
void gemm_tn(int m, int k, int n, const float* a, int lda, const float* b,
             int ldb, float* c, int ldc);

// --- deterministic reductions (always scalar, f64 accumulation) ----------

double sum_f64(const float* x, std::size_t n);
double dot_f64(const float* a, const float* b, std::size_t n);
double sqdiff_f64(const float* a, const float* b, std::size_t n);

// f64 mirrors used by the gradcheck-precision tensor path (scalar only).
void gemm(int m, int n, int k, const double* a, int lda, const double* b,
          int ldb, double* c, int ldc, bool accumulate);
void gemm_nt(int m, int k, int n, const double* a, int lda, const double* b,
             int ldb, double* c, int ldc);
void gemm_tn(int m, int k, int n, const double* a, int lda, const double* b,
             int ldb, double* c, int ldc);
double sum_f64(const double* x, std::size_t n);
double dot_f64(const double* a, const double* b, std::size_t n);
double sqdiff_f64(const double* a, const double* b, std::size_t n);

namespace detail {
// Scalar reference implementations, exposed so the equivalence tests can
// pin the dispatched kernels against them regardless of active backend.
void add_scalar(const float* a, const float* b, float* out, std::size_t n);
void mul_scalar(const float* a, const float* b, float* out, std::size_t n);
void axpy_scalar(float alpha, const float* x, float* y, std::size_t n);
void scale_scalar(float alpha, float* x, std::size_t n);
void silu_scalar(const float* x, float* out, std::size_t n);
void residual_add_skipzero_scalar(const float* y, const float* r, float lambda,
                                  float* out, std::size_t n);
void gemm_scalar(int m, int n, int k, const float* a, int lda, const float* b,
                 int ldb, float* c, int ldc, bool accumulate);
void gemm_nt_scalar(int m, int k, int n, const float* a, int lda,
                    const float* b, int ldb, float* c, int ldc);
void gemm_tn_scalar(int m, int k, int n, const float* a, int lda,
                    const float* b, int ldb, float* c, int ldc);

#if defined(__x86_64__) || defined(_M_X64)
void add_avx2(const float* a, const float* b, float* out, std::size_t n);
void mul_avx2(const float* a, const float* b, float* out, std::size_t n);
void axpy_avx2(float alpha, const float* x, float* y, std::size_t n);
void scale_avx2(float alpha, float* x, std::size_t n);
void residual_add_skipzero_avx2(const float* y, const float* r, float lambda,
                                float* out, std::size_t n);
void gemm_avx2(int m, int n, int k, const float* a, int lda, const float* b,
               int ldb, float* c, int ldc, bool accumulate);
void gemm_nt_avx2(int m, int k, int n, const float* a, int lda, const float* b,
                  int ldb, float* c, int ldc);
void gemm_tn_avx2(int m, int k, int n, const float* a, int lda, const float* b,
                  int ldb, float* c, int ldc);
#endif
}  // namespace detail

}  // namespace shapectl::kern
