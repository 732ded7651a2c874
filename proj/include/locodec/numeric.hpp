#pragma once

#include <cstdint>
#include <span>
#include <string_view>
#include <vector>

namespace locodec {

// Quantile by linear interpolation between order statistics (type 7).
// `p` must lie in [0, 1]; `x` must be nonempty.
double quantile(std::span<const double> x, double p);
double quantile_sorted(std::span<const double> sorted, double p);

double mean(std::span<const double> x);
double median(std::span<const double> x);
// Population variance (divide by n).
double variance(std::span<const double> x);

// Stable 64-bit mixing used for seed derivation.
std::uint64_t mix_seed(std::uint64_t seed, std::string_view tag);
std::uint64_t splitmix64(std::uint64_t x);

}  // namespace locodec
