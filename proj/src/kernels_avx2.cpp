// AVX2+FMA kernel variants. Compiled with -mavx2 -mfma on x86-64 only;
// dispatch in kernels.cpp guarantees these run only when cpuid reports
// support. Elementwise kernels are bit-exact against the scalar reference;
// the GEMM family reassociates accumulation (vector partial sums, FMA) and
// is equivalence-tested under a tolerance instead.

#if defined(__x86_64__) || defined(_M_X64)

#include <immintrin.h>

#include <cstring>

#include "shapectl/kernels.hpp"

namespace shapectl::kern::detail {

void add_avx2(const float* a, const float* b, float* out, std::size_t n) {
  std::size_t i = 0;
  for (; i + 8 <= n; i += 8)
    _mm256_storeu_ps(out + i, _mm256_add_ps(_mm256_loadu_ps(a + i),
                                            _mm256_loadu_ps(b + i)));
  for (; i < n; ++i) out[i] = a[i] + b[i];
}

void mul_avx2(const float* a, const float* b, float* out, std::size_t n) {
  std::size_t i = 0;
  for (; i + 8 <= n; i += 8)
    _mm256_storeu_ps(out + i, _mm256_mul_ps(_mm256_loadu_ps(a + i),
                                            _mm256_loadu_ps(b + i)));
  for (; i < n; ++i) out[i] = a[i] * b[i];
}

void axpy_avx2(float alpha, const float* x, float* y, std::size_t n) {
  // mul+add (not FMA) to stay bit-exact with the scalar reference
  __m256 va = _mm256_set1_ps(alpha);
  std::size_t i = 0;
  for (; i + 8 <= n; i += 8) {
    __m256 prod = _mm256_mul_ps(va, _mm256_loadu_ps(x + i));
    _mm256_storeu_ps(y + i, _mm256_add_ps(_mm256_loadu_ps(y + i), prod));
  }
  for (; i < n; ++i) y[i] += alpha * x[i];
}

void scale_avx2(float alpha, float* x, std::size_t n) {
  __m256 va = _mm256_set1_ps(alpha);
  std::size_t i = 0;
  for (; i + 8 <= n; i += 8)
    _mm256_storeu_ps(x + i, _mm256_mul_ps(va, _mm256_loadu_ps(x + i)));
  for (; i < n; ++i) x[i] *= alpha;
}

void residual_add_skipzero_avx2(const float* y, const float* r, float lambda,
                                float* out, std::size_t n) {
  __m256 vl = _mm256_set1_ps(lambda);
  __m256 vzero = _mm256_setzero_ps();
  std::size_t i = 0;
  for (; i + 8 <= n; i += 8) {
    __m256 vy = _mm256_loadu_ps(y + i);
    __m256 vr = _mm256_loadu_ps(r + i);
    __m256 sum = _mm256_add_ps(vy, _mm256_mul_ps(vl, vr));
    // keep y bit-identical where r == 0 (incl. -0)
    __m256 iszero = _mm256_cmp_ps(vr, vzero, _CMP_EQ_OQ);
    _mm256_storeu_ps(out + i, _mm256_blendv_ps(sum, vy, iszero));
  }
  for (; i < n; ++i) out[i] = (r[i] == 0.0f) ? y[i] : y[i] + lambda * r[i];
}

namespace {

inline float hsum8(__m256 v) {
  __m128 lo = _mm256_castps256_ps128(v);
  __m128 hi = _mm256_extractf128_ps(v, 1);
  lo = _mm_add_ps(lo, hi);
  lo = _mm_hadd_ps(lo, lo);
  lo = _mm_hadd_ps(lo, lo);
  return _mm_cvtss_f32(lo);
}

// 4x16 register-tiled panel: C[i0..i0+4, j0..j0+16] += A * B
inline void gemm_panel_4x16(int k, const float* a, int lda, const float* b,
                            int ldb, float* c, int ldc) {
  __m256 acc00 = _mm256_loadu_ps(c);
  __m256 acc01 = _mm256_loadu_ps(c + 8);
  __m256 acc10 = _mm256_loadu_ps(c + ldc);
  __m256 acc11 = _mm256_loadu_ps(c + ldc + 8);
  __m256 acc20 = _mm256_loadu_ps(c + 2 * ldc);
  __m256 acc21 = _mm256_loadu_ps(c + 2 * ldc + 8);
  __m256 acc30 = _mm256_loadu_ps(c + 3 * ldc);
  __m256 acc31 = _mm256_loadu_ps(c + 3 * ldc + 8);
  for (int p = 0; p < k; ++p) {
    const float* brow = b + static_cast<std::size_t>(p) * ldb;
    __m256 b0 = _mm256_loadu_ps(brow);
    __m256 b1 = _mm256_loadu_ps(brow + 8);
    __m256 a0 = _mm256_set1_ps(a[p]);
    __m256 a1 = _mm256_set1_ps(a[lda + p]);
    __m256 a2 = _mm256_set1_ps(a[2 * lda + p]);
    __m256 a3 = _mm256_set1_ps(a[3 * lda + p]);
    acc00 = _mm256_fmadd_ps(a0, b0, acc00);
    acc01 = _mm256_fmadd_ps(a0, b1, acc01);
    acc10 = _mm256_fmadd_ps(a1, b0, acc10);
    acc11 = _mm256_fmadd_ps(a1, b1, acc11);
    acc20 = _mm256_fmadd_ps(a2, b0, acc20);
    acc21 = _mm256_fmadd_ps(a2, b1, acc21);
    acc30 = _mm256_fmadd_ps(a3, b0, acc30);
    acc31 = _mm256_fmadd_ps(a3, b1, acc31);
  }
  _mm256_storeu_ps(c, acc00);
  _mm256_storeu_ps(c + 8, acc01);
  _mm256_storeu_ps(c + ldc, acc10);
  _mm256_storeu_ps(c + ldc + 8, acc11);
  _mm256_storeu_ps(c + 2 * ldc, acc20);
  _mm256_storeu_ps(c + 2 * ldc + 8, acc21);
  _mm256_storeu_ps(c + 3 * ldc, acc30);
  _mm256_storeu_ps(c + 3 * ldc + 8, acc31);
}

inline void gemm_panel_1x16(int k, const float* a, const float* b, int ldb,
                            float* c) {
  __m256 acc0 = _mm256_loadu_ps(c);
  __m256 acc1 = _mm256_loadu_ps(c + 8);
  for (int p = 0; p < k; ++p) {
    const float* brow = b + static_cast<std::size_t>(p) * ldb;
    __m256 a0 = _mm256_set1_ps(a[p]);
    acc0 = _mm256_fmadd_ps(a0, _mm256_loadu_ps(brow), acc0);
    acc1 = _mm256_fmadd_ps(a0, _mm256_loadu_ps(brow + 8), acc1);
  }
  _mm256_storeu_ps(c, acc0);
  _mm256_storeu_ps(c + 8, acc1);
}

}  // namespace

void gemm_avx2(int m, int n, int k, const float* a, int lda, const float* b,
               int ldb, float* c, int ldc, bool accumulate) {
  if (!accumulate) {
    for (int i = 0; i < m; ++i)
      std::memset(c + static_cast<std::size_t>(i) * ldc, 0,
                  static_cast<std::size_t>(n) * sizeof(float));
  }
  int n16 = n - (n % 16);
  for (int j = 0; j < n16; j += 16) {
    int i = 0;
    for (; i + 4 <= m; i += 4)
      gemm_panel_4x16(k, a + static_cast<std::size_t>(i) * lda, lda, b + j,
                      ldb, c + static_cast<std::size_t>(i) * ldc + j, ldc);
    for (; i < m; ++i)
      gemm_panel_1x16(k, a + static_cast<std::size_t>(i) * lda, b + j, ldb,
                      c + static_cast<std::size_t>(i) * ldc + j);
  }
  if (n16 < n) {
    for (int i = 0; i < m; ++i) {
      const float* arow = a + static_cast<std::size_t>(i) * lda;
      float* crow = c + static_cast<std::size_t>(i) * ldc;
      for (int p = 0; p < k; ++p) {
        float av = arow[p];
        const float* brow = b + static_cast<std::size_t>(p) * ldb;
        for (int j = n16; j < n; ++j) crow[j] += av * brow[j];
      }
    }
  }
}

void gemm_nt_avx2(int m, int k, int n, const float* a, int lda, const float* b,
                  int ldb, float* c, int ldc) {
  int n8 = n - (n % 8);
  for (int i = 0; i < m; ++i) {
    const float* arow = a + static_cast<std::size_t>(i) * lda;
    float* crow = c + static_cast<std::size_t>(i) * ldc;
    int p = 0;
    for (; p + 4 <= k; p += 4) {
      const float* b0 = b + static_cast<std::size_t>(p) * ldb;
      const float* b1 = b0 + ldb;
      const float* b2 = b1 + ldb;
      const float* b3 = b2 + ldb;
      __m256 acc0 = _mm256_setzero_ps();
      __m256 acc1 = _mm256_setzero_ps();
      __m256 acc2 = _mm256_setzero_ps();
      __m256 acc3 = _mm256_setzero_ps();
      for (int j = 0; j < n8; j += 8) {
        __m256 va = _mm256_loadu_ps(arow + j);
        acc0 = _mm256_fmadd_ps(va, _mm256_loadu_ps(b0 + j), acc0);
        acc1 = _mm256_fmadd_ps(va, _mm256_loadu_ps(b1 + j), acc1);
        acc2 = _mm256_fmadd_ps(va, _mm256_loadu_ps(b2 + j), acc2);
        acc3 = _mm256_fmadd_ps(va, _mm256_loadu_ps(b3 + j), acc3);
      }
      float s0 = hsum8(acc0), s1 = hsum8(acc1), s2 = hsum8(acc2),
            s3 = hsum8(acc3);
      for (int j = n8; j < n; ++j) {
        float av = arow[j];
        s0 += av * b0[j];
        s1 += av * b1[j];
        s2 += av * b2[j];
        s3 += av * b3[j];
      }
      crow[p] += s0;
      crow[p + 1] += s1;
      crow[p + 2] += s2;
      crow[p + 3] += s3;
    }
    for (; p < k; ++p) {
      const float* brow = b + static_cast<std::size_t>(p) * ldb;
      __m256 acc = _mm256_setzero_ps();
      for (int j = 0; j < n8; j += 8)
        acc = _mm256_fmadd_ps(_mm256_loadu_ps(arow + j),
                              _mm256_loadu_ps(brow + j), acc);
      float s = hsum8(acc);
      for (int j = n8; j < n; ++j) s += arow[j] * brow[j];
      crow[p] += s;
    }
  }
}

void gemm_tn_avx2(int m, int k, int n, const float* a, int lda, const float* b,
                  int ldb, float* c, int ldc) {
  // C[K,N] += A[M,K]^T * B[M,N]; tile over 16 columns of C, 4 rows at a time
  int n16 = n - (n % 16);
  for (int j = 0; j < n16; j += 16) {
    int p = 0;
    for (; p + 4 <= k; p += 4) {
      float* c0 = c + static_cast<std::size_t>(p) * ldc + j;
      float* c1 = c0 + ldc;
      float* c2 = c1 + ldc;
      float* c3 = c2 + ldc;
      __m256 acc00 = _mm256_loadu_ps(c0), acc01 = _mm256_loadu_ps(c0 + 8);
      __m256 acc10 = _mm256_loadu_ps(c1), acc11 = _mm256_loadu_ps(c1 + 8);
      __m256 acc20 = _mm256_loadu_ps(c2), acc21 = _mm256_loadu_ps(c2 + 8);
      __m256 acc30 = _mm256_loadu_ps(c3), acc31 = _mm256_loadu_ps(c3 + 8);
      for (int i = 0; i < m; ++i) {
        const float* arow = a + static_cast<std::size_t>(i) * lda + p;
        const float* brow = b + static_cast<std::size_t>(i) * ldb + j;
        __m256 b0 = _mm256_loadu_ps(brow);
        __m256 b1 = _mm256_loadu_ps(brow + 8);
        __m256 a0 = _mm256_set1_ps(arow[0]);
        __m256 a1 = _mm256_set1_ps(arow[1]);
        __m256 a2 = _mm256_set1_ps(arow[2]);
        __m256 a3 = _mm256_set1_ps(arow[3]);
        acc00 = _mm256_fmadd_ps(a0, b0, acc00);
        acc01 = _mm256_fmadd_ps(a0, b1, acc01);
        acc10 = _mm256_fmadd_ps(a1, b0, acc10);
        acc11 = _mm256_fmadd_ps(a1, b1, acc11);
        acc20 = _mm256_fmadd_ps(a2, b0, acc20);
        acc21 = _mm256_fmadd_ps(a2, b1, acc21);
        acc30 = _mm256_fmadd_ps(a3, b0, acc30);
        acc31 = _mm256_fmadd_ps(a3, b1, acc31);
      }
      _mm256_storeu_ps(c0, acc00);
      _mm256_storeu_ps(c0 + 8, acc01);
      _mm256_storeu_ps(c1, acc10);
      _mm256_storeu_ps(c1 + 8, acc11);
      _mm256_storeu_ps(c2, acc20);
      _mm256_storeu_ps(c2 + 8, acc21);
      _mm256_storeu_ps(c3, acc30);
      _mm256_storeu_ps(c3 + 8, acc31);
    }
    for (; p < k; ++p) {
      float* crow = c + static_cast<std::size_t>(p) * ldc + j;
      __m256 acc0 = _mm256_loadu_ps(crow);
      __m256 acc1 = _mm256_loadu_ps(crow + 8);
      for (int i = 0; i < m; ++i) {
        __m256 av = _mm256_set1_ps(a[static_cast<std::size_t>(i) * lda + p]);
        const float* brow = b + static_cast<std::size_t>(i) * ldb + j;
        acc0 = _mm256_fmadd_ps(av, _mm256_loadu_ps(brow), acc0);
        acc1 = _mm256_fmadd_ps(av, _mm256_loadu_ps(brow + 8), acc1);
      }
      _mm256_storeu_ps(crow, acc0);
      _mm256_storeu_ps(crow + 8, acc1);
    }
  }
  if (n16 < n) {
    for (int i = 0; i < m; ++i) {
      const float* arow = a + static_cast<std::size_t>(i) * lda;
      const float* brow = b + static_cast<std::size_t>(i) * ldb;
      for (int p = 0; p < k; ++p) {
        float av = arow[p];
        float* crow = c + static_cast<std::size_t>(p) * ldc;
        for (int j = n16; j < n; ++j) crow[j] += av * brow[j];
      }
    }
  }
}

}  // namespace shapectl::kern::detail

#endif  // x86_64
