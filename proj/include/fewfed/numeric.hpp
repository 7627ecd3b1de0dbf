#pragma once

#include <cstddef>
#include <span>
#include <vector>

namespace fewfed {

/// Integer apportionment of `total` by `weights` (non-negative, not
/// necessarily normalized): floor of each exact share, then the remainder one
/// unit at a time by largest fractional part, ties to the lower index.
/// All-zero weights hand everything to index 0.
std::vector<std::size_t> largest_remainder(std::span<const double> weights, std::size_t total);

/// Numerically stable softmax (max subtracted before exponentiation).
std::vector<double> softmax(std::span<const double> logits);

/// Index of the first maximum.
std::size_t argmax(std::span<const double> values);

}  // namespace fewfed
