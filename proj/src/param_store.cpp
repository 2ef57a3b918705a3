#include "c4v/param_store.hpp"

#include <cmath>
#include <stdexcept>

namespace c4v {

std::vector<double> truncated_normal(std::size_t count, Rng& rng, double stddev) {
  std::normal_distribution<double> normal(0.0, stddev);
  std::vector<double> out(count);
  for (auto& v : out) {
    do {
      v = normal(rng);
    } while (std::abs(v) > 2.0 * stddev);
  }
  return out;
}

Tensor ParamStore::add(const std::string& name, Tensor init, ParamGroup group) {
  if (index_.count(name)) {
    throw std::invalid_argument("duplicate parameter name: " + name);
  }
  Tensor param(init.shape(), std::vector<double>(init.values().begin(), init.values().end()), true);
  index_[name] = entries_.size();
  entries_.push_back(ParamEntry{name, param, group, true, {}, {}});
  return param;
}

Tensor ParamStore::add_normal(const std::string& name, Shape shape, Rng& rng, double stddev,
                              ParamGroup group) {
  auto n = shape_numel(shape);
  return add(name, Tensor(std::move(shape), truncated_normal(n, rng, stddev)), group);
}

Tensor ParamStore::add_constant(const std::string& name, Shape shape, double value, ParamGroup group) {
  return add(name, Tensor::full(std::move(shape), value), group);
}

bool ParamStore::contains(const std::string& name) const {
  return index_.count(name) > 0;
}

const Tensor& ParamStore::get(const std::string& name) const {
  return entry(name).value;
}

ParamEntry& ParamStore::entry(const std::string& name) {
  auto it = index_.find(name);
  if (it == index_.end()) {
    throw std::invalid_argument("unknown parameter: " + name);
  }
  return entries_[it->second];
}

const ParamEntry& ParamStore::entry(const std::string& name) const {
  auto it = index_.find(name);
  if (it == index_.end()) {
    throw std::invalid_argument("unknown parameter: " + name);
  }
  return entries_[it->second];
}

std::vector<std::string> ParamStore::names() const {
  std::vector<std::string> out;
  out.reserve(entries_.size());
  for (const auto& e : entries_) {
    out.push_back(e.name);
  }
  return out;
}

void ParamStore::set_trainable(const std::string& prefix, bool trainable) {
  for (auto& e : entries_) {
    if (e.name.compare(0, prefix.size(), prefix) == 0) {
      e.trainable = trainable;
    }
  }
}

void ParamStore::zero_grad() {
  for (auto& e : entries_) {
    e.value.zero_grad();
  }
}

void ParamStore::reset_optimizer() {
  for (auto& e : entries_) {
    e.first_moment.clear();
    e.second_moment.clear();
  }
  step_ = 0;
}

std::size_t ParamStore::parameter_count() const {
  std::size_t n = 0;
  for (const auto& e : entries_) {
    n += e.value.numel();
  }
  return n;
}

void adam_step(ParamStore& store, const AdamOptions& options) {
  if (!(options.lr > 0.0)) {
    throw std::invalid_argument("adam_step: learning rate must be positive");
  }
  const auto t = static_cast<double>(store.step() + 1);
  const double correction1 = 1.0 - std::pow(options.beta1, t);
  const double correction2 = 1.0 - std::pow(options.beta2, t);
  for (auto& e : store.entries()) {
    if (!e.trainable || !e.value.has_grad()) {
      e.value.zero_grad();
      continue;
    }
    const double lr = (e.group == ParamGroup::head && options.head_lr > 0.0) ? options.head_lr : options.lr;
    auto values = e.value.mutable_values();
    auto grad = e.value.grad();
    if (e.first_moment.size() != values.size()) {
      e.first_moment.assign(values.size(), 0.0);
      e.second_moment.assign(values.size(), 0.0);
    }
    for (std::size_t i = 0; i < values.size(); ++i) {
      const double g = grad[i];
      e.first_moment[i] = options.beta1 * e.first_moment[i] + (1.0 - options.beta1) * g;
      e.second_moment[i] = options.beta2 * e.second_moment[i] + (1.0 - options.beta2) * g * g;
      const double m_hat = e.first_moment[i] / correction1;
      const double v_hat = e.second_moment[i] / correction2;
      values[i] -= lr * m_hat / (std::sqrt(v_hat) + options.eps);
    }
    e.value.zero_grad();
  }
  store.set_step(store.step() + 1);
}

} // namespace c4v
