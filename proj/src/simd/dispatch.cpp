#include <atomic>
#include <cstdlib>
#include <string_view>

#include "recool/simd/kernels.hpp"

namespace recool::simd {
namespace {

struct Table {
  Isa isa;
  LorentzMoments (*lorentz_moments)(double, std::span<const double>) noexcept;
  double (*dot)(std::span<const double>, std::span<const double>) noexcept;
};

constexpr Table kScalar{Isa::scalar, &scalar::lorentz_moments, &scalar::dot};
#if defined(__x86_64__) || defined(_M_X64)
constexpr Table kAvx2{Isa::avx2, &avx2::lorentz_moments, &avx2::dot};
#endif
#if defined(__aarch64__)
constexpr Table kNeon{Isa::neon, &neon::lorentz_moments, &neon::dot};
#endif

const Table* table_for(Isa isa) noexcept {
  switch (isa) {
#if defined(__x86_64__) || defined(_M_X64)
    case Isa::avx2:
      return &kAvx2;
#endif
#if defined(__aarch64__)
    case Isa::neon:
      return &kNeon;
#endif
    default:
      return &kScalar;
  }
}

bool cpu_has(Isa isa) noexcept {
  switch (isa) {
    case Isa::scalar:
      return true;
    case Isa::avx2:
#if (defined(__x86_64__) || defined(_M_X64)) && (defined(__GNUC__) || defined(__clang__))
      return __builtin_cpu_supports("avx2") && __builtin_cpu_supports("fma");
#else
      return false;
#endif
    case Isa::neon:
#if defined(__aarch64__)
      return true;
#else
      return false;
#endif
  }
  return false;
}

Isa initial_isa() noexcept {
  if (const char* env = std::getenv("RECOOL_SIMD")) {
    if (std::string_view(env) == "scalar") return Isa::scalar;
  }
  return detected_isa();
}

std::atomic<const Table*>& current() noexcept {
  static std::atomic<const Table*> table{table_for(initial_isa())};
  return table;
}

}  // namespace

std::string_view isa_name(Isa isa) noexcept {
  switch (isa) {
    case Isa::scalar:
      return "scalar";
    case Isa::avx2:
      return "avx2";
    case Isa::neon:
      return "neon";
  }
  return "unknown";
}

bool isa_available(Isa isa) noexcept { return cpu_has(isa); }

Isa detected_isa() noexcept {
  if (cpu_has(Isa::avx2)) return Isa::avx2;
  if (cpu_has(Isa::neon)) return Isa::neon;
  return Isa::scalar;
}

Isa active_isa() noexcept { return current().load(std::memory_order_relaxed)->isa; }

Isa select_isa(Isa isa) noexcept {
  const Table* next = cpu_has(isa) ? table_for(isa) : &kScalar;
  return current().exchange(next)->isa;
}

LorentzMoments lorentz_moments(double offset, std::span<const double> shifts) noexcept {
  return current().load(std::memory_order_relaxed)->lorentz_moments(offset, shifts);
}

double dot(std::span<const double> a, std::span<const double> b) noexcept {
  return current().load(std::memory_order_relaxed)->dot(a, b);
}

}  // namespace recool::simd
