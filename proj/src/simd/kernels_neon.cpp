#include "recool/simd/kernels.hpp"

#if defined(__aarch64__)
#include <arm_neon.h>

#include <cstddef>

namespace recool::simd::neon {

LorentzMoments lorentz_moments(double offset, std::span<const double> shifts) noexcept {
  const std::size_t n = shifts.size();
  const double* s = shifts.data();
  const float64x2_t one = vdupq_n_f64(1.0);
  const float64x2_t c = vdupq_n_f64(offset);
  float64x2_t sum_lo = vdupq_n_f64(0.0), sum_hi = vdupq_n_f64(0.0);
  float64x2_t first_lo = vdupq_n_f64(0.0), first_hi = vdupq_n_f64(0.0);
  std::size_t k = 0;
  for (; k + 4 <= n; k += 4) {
    const float64x2_t s0 = vld1q_f64(s + k);
    const float64x2_t s1 = vld1q_f64(s + k + 2);
    const float64x2_t x0 = vaddq_f64(c, s0);
    const float64x2_t x1 = vaddq_f64(c, s1);
    const float64x2_t l0 = vdivq_f64(one, vfmaq_f64(one, x0, x0));
    const float64x2_t l1 = vdivq_f64(one, vfmaq_f64(one, x1, x1));
    sum_lo = vaddq_f64(sum_lo, l0);
    sum_hi = vaddq_f64(sum_hi, l1);
    first_lo = vfmaq_f64(first_lo, s0, l0);
    first_hi = vfmaq_f64(first_hi, s1, l1);
  }
  LorentzMoments m;
  m.sum = (vgetq_lane_f64(sum_lo, 0) + vgetq_lane_f64(sum_lo, 1)) +
          (vgetq_lane_f64(sum_hi, 0) + vgetq_lane_f64(sum_hi, 1));
  m.first = (vgetq_lane_f64(first_lo, 0) + vgetq_lane_f64(first_lo, 1)) +
            (vgetq_lane_f64(first_hi, 0) + vgetq_lane_f64(first_hi, 1));
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
  float64x2_t acc0 = vdupq_n_f64(0.0), acc1 = vdupq_n_f64(0.0);
  std::size_t k = 0;
  for (; k + 4 <= n; k += 4) {
    acc0 = vfmaq_f64(acc0, vld1q_f64(a.data() + k), vld1q_f64(b.data() + k));
    acc1 = vfmaq_f64(acc1, vld1q_f64(a.data() + k + 2), vld1q_f64(b.data() + k + 2));
  }
  double total = (vgetq_lane_f64(acc0, 0) + vgetq_lane_f64(acc0, 1)) +
                 (vgetq_lane_f64(acc1, 0) + vgetq_lane_f64(acc1, 1));
  for (; k < n; ++k) total += a[k] * b[k];
  return total;
}

}  // namespace recool::simd::neon
#endif
