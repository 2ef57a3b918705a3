#include "c4v/bleu.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <sstream>
#include <stdexcept>

namespace c4v {

namespace {

using Counts = std::map<Words, std::size_t>;

Counts ngram_counts(const Words& w, std::size_t n) {
  Counts c;
  for (std::size_t i = 0; i + n <= w.size(); ++i) {
    ++c[Words(w.begin() + static_cast<std::ptrdiff_t>(i), w.begin() + static_cast<std::ptrdiff_t>(i + n))];
  }
  return c;
}

} // namespace

Words split_words(const std::string& text) {
  std::istringstream in(text);
  Words out;
  for (std::string w; in >> w;) {
    out.push_back(w);
  }
  return out;
}

void BleuAccumulator::add(const Words& candidate, const std::vector<Words>& references) {
  if (references.empty()) {
    throw std::invalid_argument("bleu: at least one reference required");
  }
  for (std::size_t n = 1; n <= 4; ++n) {
    const auto cand = ngram_counts(candidate, n);
    Counts max_ref;
    for (const auto& ref : references) {
      for (const auto& [gram, count] : ngram_counts(ref, n)) {
        auto& m = max_ref[gram];
        m = std::max(m, count);
      }
    }
    for (const auto& [gram, count] : cand) {
      const auto it = max_ref.find(gram);
      matches_[n - 1] += std::min(count, it == max_ref.end() ? std::size_t{0} : it->second);
      totals_[n - 1] += count;
    }
  }
  std::size_t best = references.front().size();
  for (const auto& ref : references) {
    const auto d = [&](std::size_t len) { return len > candidate.size() ? len - candidate.size() : candidate.size() - len; };
    if (d(ref.size()) < d(best) || (d(ref.size()) == d(best) && ref.size() < best)) {
      best = ref.size();
    }
  }
  candidate_length_ += candidate.size();
  reference_length_ += best;
}

double BleuAccumulator::score(bool smooth) const {
  if (candidate_length_ == 0) {
    return 0.0;
  }
  double log_sum = 0.0;
  for (std::size_t n = 0; n < 4; ++n) {
    double p;
    if (matches_[n] > 0) {
      p = static_cast<double>(matches_[n]) / static_cast<double>(totals_[n]);
    } else if (smooth) {
      p = 1.0 / static_cast<double>(totals_[n] + 1);
    } else {
      return 0.0;
    }
    log_sum += std::log(p);
  }
  double bp = 1.0;
  if (candidate_length_ < reference_length_) {
    bp = std::exp(1.0 - static_cast<double>(reference_length_) / static_cast<double>(candidate_length_));
  }
  return bp * std::exp(log_sum / 4.0);
}

double bleu4(const Words& candidate, const std::vector<Words>& references, bool smooth) {
  BleuAccumulator acc;
  acc.add(candidate, references);
  return acc.score(smooth);
}

} // namespace c4v
