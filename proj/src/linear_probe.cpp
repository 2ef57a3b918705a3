#include <stdexcept>

#include "c4v/ops.hpp"
#include "c4v/param_store.hpp"
#include "c4v/retrieval.hpp"

namespace c4v {

double linear_probe(const Tensor& train_features, std::span<const std::size_t> train_labels,
                    const Tensor& test_features, std::span<const std::size_t> test_labels, std::size_t classes,
                    const ProbeOptions& options) {
  if (classes < 2) {
    throw std::invalid_argument("linear_probe: needs at least two classes");
  }
  if (train_features.rank() != 2 || test_features.rank() != 2 ||
      train_features.cols() != test_features.cols()) {
    throw std::invalid_argument("linear_probe: train and test features must be matrices of equal width");
  }
  if (train_labels.size() != train_features.rows() || test_labels.size() != test_features.rows() ||
      train_labels.empty() || test_labels.empty()) {
    throw std::invalid_argument("linear_probe: one label per feature row required");
  }
  for (auto l : train_labels) {
    if (l >= classes) throw std::invalid_argument("linear_probe: label out of range");
  }
  for (auto l : test_labels) {
    if (l >= classes) throw std::invalid_argument("linear_probe: label out of range");
  }

  ParamStore store;
  Rng rng(options.seed);
  const auto w = store.add_normal("probe.w", {train_features.cols(), classes}, rng, 0.01);
  const auto b = store.add_constant("probe.b", {classes}, 0.0);
  const auto x = train_features.detach();
  for (std::size_t e = 0; e < options.epochs; ++e) {
    backward(cross_entropy_rows(linear(x, w, b), train_labels));
    adam_step(store, {.lr = options.lr});
  }

  const auto logits = linear(test_features.detach(), w, b);
  std::size_t correct = 0;
  for (std::size_t r = 0; r < logits.rows(); ++r) {
    std::size_t best = 0;
    for (std::size_t c = 1; c < classes; ++c) {
      if (logits.at(r, c) > logits.at(r, best)) best = c;
    }
    correct += best == test_labels[r];
  }
  return static_cast<double>(correct) / static_cast<double>(test_labels.size());
}

} // namespace c4v
