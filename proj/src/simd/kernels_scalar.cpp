#include "recool/simd/kernels.hpp"

#include <cstddef>

namespace recool::simd::scalar {

LorentzMoments lorentz_moments(double offset, std::span<const double> shifts) noexcept {
  // Four interleaved partial sums, same association as the vector kernels.
  double s0[4] = {0, 0, 0, 0};
  double s1[4] = {0, 0, 0, 0};
  const std::size_t n = shifts.size();
  std::size_t k = 0;
  for (; k + 4 <= n; k += 4) {
    for (std::size_t l = 0; l < 4; ++l) {
      const double s = shifts[k + l];
      const double x = offset + s;
      const double lor = 1.0 / (1.0 + x * x);
      s0[l] += lor;
      s1[l] += s * lor;
    }
  }
  LorentzMoments m;
  m.sum = (s0[0] + s0[1]) + (s0[2] + s0[3]);
  m.first = (s1[0] + s1[1]) + (s1[2] + s1[3]);
  for (; k < n; ++k) {
    const double s = shifts[k];
    const double x = offset + s;
    const double lor = 1.0 / (1.0 + x * x);
    m.sum += lor;
    m.first += s * lor;
  }
  return m;
}

double dot(std::span<const double> a, std::span<const double> b) noexcept {
  const std::size_t n = a.size() < b.size() ? a.size() : b.size();
  double acc[4] = {0, 0, 0, 0};
  std::size_t k = 0;
  for (; k + 4 <= n; k += 4) {
    for (std::size_t l = 0; l < 4; ++l) acc[l] += a[k + l] * b[k + l];
  }
  double total = (acc[0] + acc[1]) + (acc[2] + acc[3]);
  for (; k < n; ++k) total += a[k] * b[k];
  return total;
}

}  // namespace recool::simd::scalar
