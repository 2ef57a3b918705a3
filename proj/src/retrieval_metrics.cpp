#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

#include <nlohmann/json.hpp>

#include "c4v/retrieval.hpp"

namespace c4v {

RetrievalResult retrieval_metrics(std::span<const double> scores, std::size_t queries, std::size_t gallery,
                                  std::span<const std::size_t> truth) {
  if (queries == 0 || gallery == 0) {
    throw std::invalid_argument("retrieval_metrics: no queries or empty gallery");
  }
  if (scores.size() != queries * gallery || truth.size() != queries) {
    throw std::invalid_argument("retrieval_metrics: score matrix and truth disagree in size");
  }
  RetrievalResult r;
  r.num_queries = queries;
  r.ranks.resize(queries);
  std::vector<std::size_t> order(gallery);
  for (std::size_t q = 0; q < queries; ++q) {
    if (truth[q] >= gallery) {
      throw std::invalid_argument("retrieval_metrics: truth index out of range for query " + std::to_string(q));
    }
    const auto* row = scores.data() + q * gallery;
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::sort(order.begin(), order.end(), [row](std::size_t a, std::size_t b) {
      return row[a] > row[b] || (row[a] == row[b] && a < b);
    });
    r.ranks[q] = static_cast<std::size_t>(std::find(order.begin(), order.end(), truth[q]) - order.begin()) + 1;
  }
  auto recall = [&](std::size_t k) {
    const auto hits = std::count_if(r.ranks.begin(), r.ranks.end(), [k](std::size_t x) { return x <= k; });
    return static_cast<double>(hits) / static_cast<double>(queries);
  };
  r.r1 = recall(1);
  r.r5 = recall(5);
  r.r10 = recall(10);
  auto sorted = r.ranks;
  std::sort(sorted.begin(), sorted.end());
  r.median_rank = static_cast<double>(sorted[(queries - 1) / 2]);
  return r;
}

RetrievalResult retrieval_metrics(const Tensor& scores, std::span<const std::size_t> truth) {
  if (scores.rank() != 2) {
    throw std::invalid_argument("retrieval_metrics: scores must be a matrix");
  }
  return retrieval_metrics(scores.values(), scores.rows(), scores.cols(), truth);
}

std::string metrics_json(const std::string& method, const RetrievalResult& r) {
  nlohmann::ordered_json j;
  j["method"] = method;
  j["R1"] = r.r1;
  j["R5"] = r.r5;
  j["R10"] = r.r10;
  j["MedianR"] = r.median_rank;
  j["num_queries"] = r.num_queries;
  return j.dump();
}

std::size_t impute_missing_audio(std::span<const double> query, const Tensor& gallery) {
  if (!gallery.defined() || gallery.rank() != 2 || gallery.rows() == 0) {
    throw std::invalid_argument("impute_missing_audio: empty gallery");
  }
  const auto dim = gallery.cols();
  if (query.size() != dim) {
    throw std::invalid_argument("impute_missing_audio: query width differs from the gallery");
  }
  const auto g = gallery.values();
  std::size_t best = 0;
  double best_cos = -INFINITY;
  for (std::size_t i = 0; i < gallery.rows(); ++i) {
    double dot = 0.0, norm = 0.0;
    for (std::size_t c = 0; c < dim; ++c) {
      dot += query[c] * g[i * dim + c];
      norm += g[i * dim + c] * g[i * dim + c];
    }
    const double cos = norm > 0.0 ? dot / std::sqrt(norm) : -INFINITY;
    if (cos > best_cos) {
      best_cos = cos;
      best = i;
    }
  }
  return best;
}

} // namespace c4v
