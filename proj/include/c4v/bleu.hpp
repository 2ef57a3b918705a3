#pragma once

#include <array>
#include <cstddef>
#include <string>
#include <vector>

namespace c4v {

using Words = std::vector<std::string>;

/// Whitespace tokenization.
Words split_words(const std::string& text);

/// Corpus BLEU-4 accumulator. Per segment: n-gram counts clipped by the
/// maximum count in any reference; reference length is the closest one (ties
/// to the shorter).
class BleuAccumulator {
 public:
  /// Throws invalid_argument when `references` is empty.
  void add(const Words& candidate, const std::vector<Words>& references);

  /// Geometric mean of the four precisions times exp(1 - r/c) when c < r.
  /// With smoothing, an order with no matches uses 1 / (total + 1).
  double score(bool smooth = false) const;

  const std::array<std::size_t, 4>& matches() const { return matches_; }
  const std::array<std::size_t, 4>& totals() const { return totals_; }
  std::size_t candidate_length() const { return candidate_length_; }
  std::size_t reference_length() const { return reference_length_; }

 private:
  std::array<std::size_t, 4> matches_{};
  std::array<std::size_t, 4> totals_{};
  std::size_t candidate_length_ = 0;
  std::size_t reference_length_ = 0;
};

/// Sentence-level BLEU-4 of one candidate.
double bleu4(const Words& candidate, const std::vector<Words>& references, bool smooth = false);

} // namespace c4v
