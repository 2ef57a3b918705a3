#pragma once

#include <cstdint>
#include <map>
#include <random>
#include <string>
#include <vector>

#include "c4v/tensor.hpp"

namespace c4v {

using Rng = std::mt19937_64;

/// Learning-rate group. Backbone parameters are the ones a pretrained model
/// would ship with; head parameters are added on top of it (type tokens,
/// fusion and caption heads, logit scale).
enum class ParamGroup { backbone, head };

struct ParamEntry {
  std::string name;
  Tensor value;
  ParamGroup group = ParamGroup::backbone;
  bool trainable = true;
  std::vector<double> first_moment;
  std::vector<double> second_moment;
};

/// Named parameters with Adam state. Iteration order is insertion order so
/// that serialization and initialization are reproducible.
class ParamStore {
 public:
  Tensor add(const std::string& name, Tensor init, ParamGroup group = ParamGroup::backbone);
  /// Truncated normal (|x| <= 2 sigma) draw.
  Tensor add_normal(const std::string& name, Shape shape, Rng& rng, double stddev = 0.02,
                    ParamGroup group = ParamGroup::backbone);
  Tensor add_constant(const std::string& name, Shape shape, double value,
                      ParamGroup group = ParamGroup::backbone);

  bool contains(const std::string& name) const;
  const Tensor& get(const std::string& name) const;
  ParamEntry& entry(const std::string& name);
  const ParamEntry& entry(const std::string& name) const;
  std::vector<std::string> names() const;
  std::vector<ParamEntry>& entries() { return entries_; }
  const std::vector<ParamEntry>& entries() const { return entries_; }

  /// Marks every parameter whose name starts with `prefix` (un)trainable.
  void set_trainable(const std::string& prefix, bool trainable);
  void zero_grad();
  void reset_optimizer();

  std::uint64_t step() const { return step_; }
  void set_step(std::uint64_t step) { step_ = step; }

  std::size_t parameter_count() const;

 private:
  std::vector<ParamEntry> entries_;
  std::map<std::string, std::size_t> index_;
  std::uint64_t step_ = 0;
};

std::vector<double> truncated_normal(std::size_t count, Rng& rng, double stddev);

struct AdamOptions {
  double lr = 1e-3;
  /// Learning rate for ParamGroup::head; falls back to `lr` when <= 0.
  double head_lr = 0.0;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

/// Bias-corrected Adam update over every trainable parameter that received a
/// gradient, then clears all gradients and increments the step counter.
void adam_step(ParamStore& store, const AdamOptions& options);

} // namespace c4v
