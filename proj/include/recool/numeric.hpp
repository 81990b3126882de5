#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <numbers>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace recool {

inline constexpr double pi = std::numbers::pi;
inline constexpr double two_pi = 2.0 * std::numbers::pi;

// Integration failed or produced non-finite values.
class NumericalError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Recursive pairwise sum in a fixed association order.
double pairwise_sum(std::span<const double> values) noexcept;

// Runs fn(i) for i in [0, n) on up to `workers` threads (0 = hardware
// concurrency). Results must be written to per-index slots; the caller does
// the reduction so the outcome is independent of the schedule.
void parallel_for(std::size_t n, std::size_t workers, const std::function<void(std::size_t)>& fn);

// sin(φ_j) for the N-node periodic trapezoid rule, φ_j = 2π(j + 1/2)/N.
// The half-node offset keeps the node set symmetric under φ → φ + π and
// φ → π − φ for even N.
std::vector<double> periodic_sines(std::size_t nodes);
std::vector<double> periodic_cosines(std::size_t nodes);

// Independent stream seed for item `index` of a run seeded with `seed`
// (SplitMix64 finalizer over the pair).
std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t index) noexcept;

// Shortest decimal text that reads back to the same double.
std::string format_double(double value);

// Log-spaced grid of `points` values in [lo, hi].
std::vector<double> log_grid(double lo, double hi, std::size_t points);

}  // namespace recool
