#include "ifmmin/metrics.hpp"

#include <algorithm>
#include <string>

#include "ifmmin/tensor.hpp"

namespace ifmmin::metrics {

namespace {

void check(std::span<const std::size_t> preds, std::span<const std::size_t> labels) {
  if (preds.size() != labels.size()) {
    throw ValidationError("metrics: " + std::to_string(preds.size()) + " predictions for " +
                          std::to_string(labels.size()) + " labels");
  }
  if (labels.empty()) throw ValidationError("metrics: no samples");
}

}  // namespace

std::vector<std::vector<std::size_t>> confusion_matrix(std::span<const std::size_t> preds,
                                                       std::span<const std::size_t> labels) {
  check(preds, labels);
  const std::size_t classes =
      1 + std::max(*std::max_element(preds.begin(), preds.end()),
                   *std::max_element(labels.begin(), labels.end()));
  std::vector<std::vector<std::size_t>> counts(classes, std::vector<std::size_t>(classes, 0));
  for (std::size_t i = 0; i < labels.size(); ++i) ++counts[labels[i]][preds[i]];
  return counts;
}

double weighted_accuracy(std::span<const std::size_t> preds, std::span<const std::size_t> labels) {
  check(preds, labels);
  std::size_t correct = 0;
  for (std::size_t i = 0; i < labels.size(); ++i) correct += preds[i] == labels[i];
  return static_cast<double>(correct) / static_cast<double>(labels.size());
}

double unweighted_accuracy(std::span<const std::size_t> preds, std::span<const std::size_t> labels) {
  const auto counts = confusion_matrix(preds, labels);
  double recall_sum = 0.0;
  std::size_t present = 0;
  for (std::size_t c = 0; c < counts.size(); ++c) {
    std::size_t total = 0;
    for (std::size_t n : counts[c]) total += n;
    if (total == 0) continue;
    recall_sum += static_cast<double>(counts[c][c]) / static_cast<double>(total);
    ++present;
  }
  return recall_sum / static_cast<double>(present);
}

}  // namespace ifmmin::metrics
