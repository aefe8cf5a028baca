#pragma once

#include <cstddef>
#include <span>
#include <vector>

namespace ifmmin::metrics {

// Fraction of correct predictions over all samples.
double weighted_accuracy(std::span<const std::size_t> preds, std::span<const std::size_t> labels);

// Mean recall over the classes present in labels.
double unweighted_accuracy(std::span<const std::size_t> preds, std::span<const std::size_t> labels);

// counts[label][pred]; classes sized to cover both vectors.
std::vector<std::vector<std::size_t>> confusion_matrix(std::span<const std::size_t> preds,
                                                       std::span<const std::size_t> labels);

}  // namespace ifmmin::metrics
