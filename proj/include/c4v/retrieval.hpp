#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "c4v/tensor.hpp"

namespace c4v {

struct RetrievalResult {
  std::vector<std::size_t> ranks; // 1-based, per query
  double r1 = 0.0;
  double r5 = 0.0;
  double r10 = 0.0;
  double median_rank = 0.0;
  std::size_t num_queries = 0;
};

/// Ranks the ground-truth item of each query in a row-major Q x G score
/// matrix. rank = 1 + #{j : s_j > s_truth} + #{j < truth : s_j == s_truth}.
/// MedianR is the lower median for even Q.
RetrievalResult retrieval_metrics(std::span<const double> scores, std::size_t queries, std::size_t gallery,
                                  std::span<const std::size_t> truth);
RetrievalResult retrieval_metrics(const Tensor& scores, std::span<const std::size_t> truth);

/// {"method":..,"R1":..,"R5":..,"R10":..,"MedianR":..,"num_queries":..}
std::string metrics_json(const std::string& method, const RetrievalResult& r);

/// Gallery index whose vision global has the highest cosine with `query`
/// (ties to the lowest index). gallery is G x E.
std::size_t impute_missing_audio(std::span<const double> query, const Tensor& gallery);

struct ProbeOptions {
  std::size_t epochs = 100;
  double lr = 0.05;
  std::uint64_t seed = 0;
};

/// Trains softmax regression on frozen train features (full-batch Adam) and
/// returns accuracy on the test features. Throws for classes < 2 or labels
/// out of range.
double linear_probe(const Tensor& train_features, std::span<const std::size_t> train_labels,
                    const Tensor& test_features, std::span<const std::size_t> test_labels, std::size_t classes,
                    const ProbeOptions& options = {});

} // namespace c4v
