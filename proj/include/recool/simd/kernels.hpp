#pragma once

#include <span>
#include <string_view>

namespace recool::simd {

// Σ_k 1/(1+(offset+s_k)²) and Σ_k s_k/(1+(offset+s_k)²).
struct LorentzMoments {
  double sum = 0.0;
  double first = 0.0;
};

enum class Isa { scalar, avx2, neon };

std::string_view isa_name(Isa isa) noexcept;

// Best instruction set supported by this CPU and build. RECOOL_SIMD=scalar
// in the environment pins the scalar kernels.
Isa detected_isa() noexcept;
Isa active_isa() noexcept;
bool isa_available(Isa isa) noexcept;

// Switches the dispatch table; returns the previous selection. Falls back to
// scalar when `isa` is not available. Not thread-safe against concurrent
// kernel calls.
Isa select_isa(Isa isa) noexcept;

LorentzMoments lorentz_moments(double offset, std::span<const double> shifts) noexcept;
double dot(std::span<const double> a, std::span<const double> b) noexcept;

namespace scalar {
LorentzMoments lorentz_moments(double offset, std::span<const double> shifts) noexcept;
double dot(std::span<const double> a, std::span<const double> b) noexcept;
}  // namespace scalar

#if defined(__x86_64__) || defined(_M_X64)
namespace avx2 {
LorentzMoments lorentz_moments(double offset, std::span<const double> shifts) noexcept;
double dot(std::span<const double> a, std::span<const double> b) noexcept;
}  // namespace avx2
#endif

#if defined(__aarch64__)
namespace neon {
LorentzMoments lorentz_moments(double offset, std::span<const double> shifts) noexcept;
double dot(std::span<const double> a, std::span<const double> b) noexcept;
}  // namespace neon
#endif

}  // namespace recool::simd
