// Compiled with -mavx2 -mfma; only reached through the runtime dispatcher
// after a cpuid check.
#include "recool/simd/kernels.hpp"

#include <immintrin.h>

#include <cstddef>

namespace recool::simd::avx2 {
namespace {

inline double hsum(__m256d v) noexcept {
  const __m128d lo = _mm256_castpd256_pd128(v);
  const __m128d hi = _mm256_extractf128_pd(v, 1);
  // (l0 + l1) + (l2 + l3), matching the scalar reference association.
  const __m128d pair = _mm_add_pd(_mm_unpacklo_pd(lo, hi), _mm_unpackhi_pd(lo, hi));
  return _mm_cvtsd_f64(_mm_add_sd(pair, _mm_unpackhi_pd(pair, pair)));
}

}  // namespace

LorentzMoments lorentz_moments(double offset, std::span<const double> shifts) noexcept {
  const std::size_t n = shifts.size();
  const double* s = shifts.data();
  const __m256d one = _mm256_set1_pd(1.0);
  const __m256d c = _mm256_set1_pd(offset);
  __m256d acc0 = _mm256_setzero_pd();
  __m256d acc1 = _mm256_setzero_pd();
  std::size_t k = 0;
  for (; k + 4 <= n; k += 4) {
    const __m256d sv = _mm256_loadu_pd(s + k);
    const __m256d x = _mm256_add_pd(c, sv);
    const __m256d den = _mm256_fmadd_pd(x, x, one);
    const __m256d lor = _mm256_div_pd(one, den);
    acc0 = _mm256_add_pd(acc0, lor);
    acc1 = _mm256_fmadd_pd(sv, lor, acc1);
  }
  LorentzMoments m;
  m.sum = hsum(acc0);
  m.first = hsum(acc1);
  for (; k < n; ++k) {
    const double x = offset + s[k];
    const double lor = 1.0 / (1.0 + x * x);
    m.sum += lor;
    m.first += s[k] * lor;
  }
  return m;
}

double dot(std::span<const double> a, std::span<const double> b) noexcept {
  const std::size_t n = a.size() < b.size() ? a.size() : b.size();
  const double* pa = a.data();
  const double* pb = b.data();
  __m256d acc0 = _mm256_setzero_pd();
  __m256d acc1 = _mm256_setzero_pd();
  std::size_t k = 0;
  for (; k + 8 <= n; k += 8) {
    acc0 = _mm256_fmadd_pd(_mm256_loadu_pd(pa + k), _mm256_loadu_pd(pb + k), acc0);
    acc1 = _mm256_fmadd_pd(_mm256_loadu_pd(pa + k + 4), _mm256_loadu_pd(pb + k + 4), acc1);
  }
  for (; k + 4 <= n; k += 4) {
    acc0 = _mm256_fmadd_pd(_mm256_loadu_pd(pa + k), _mm256_loadu_pd(pb + k), acc0);
  }
  double total = hsum(_mm256_add_pd(acc0, acc1));
  for (; k < n; ++k) total += pa[k] * pb[k];
  return total;
}

}  // namespace recool::simd::avx2
