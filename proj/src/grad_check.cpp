#include "c4v/grad_check.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "c4v/errors.hpp"

namespace c4v {

std::vector<GradCheckReport> grad_check(const std::function<Tensor()>& forward, ParamStore& store,
                                        std::span<const std::string> names, const GradCheckOptions& options) {
  const double first = forward().item();
  const double second = forward().item();
  if (first != second) {
    throw ContractViolation("grad_check: forward closure is not deterministic");
  }

  store.zero_grad();
  backward(forward());

  Rng rng(options.seed);
  std::vector<GradCheckReport> reports;
  for (const auto& name : names) {
    auto& param = store.entry(name).value;
    const auto n = param.numel();
    std::vector<double> analytic(n, 0.0);
    if (param.has_grad()) {
      std::copy(param.grad().begin(), param.grad().end(), analytic.begin());
    }

    std::vector<std::size_t> probe(n);
    std::iota(probe.begin(), probe.end(), 0);
    if (options.max_elements != 0 && n > options.max_elements) {
      const auto largest = static_cast<std::size_t>(
          std::max_element(analytic.begin(), analytic.end(),
                           [](double a, double b) { return std::abs(a) < std::abs(b); }) -
          analytic.begin());
      std::swap(probe[largest], probe.back());
      probe.pop_back();
      std::shuffle(probe.begin(), probe.end(), rng);
      probe.resize(options.max_elements - 1);
      probe.push_back(largest);
      std::sort(probe.begin(), probe.end());
    }

    GradCheckReport report{name, 0.0, probe.size(), false};
    auto values = param.mutable_values();
    for (auto i : probe) {
      const double original = values[i];
      values[i] = original + options.epsilon;
      const double plus = forward().item();
      values[i] = original - options.epsilon;
      const double minus = forward().item();
      values[i] = original;
      const double numeric = (plus - minus) / (2.0 * options.epsilon);
      const double a = analytic[i];
      const double err = std::abs(a - numeric) / std::max({std::abs(a), std::abs(numeric), options.absolute_floor});
      report.max_relative_error = std::max(report.max_relative_error, err);
    }
    report.pass = report.max_relative_error < options.tolerance;
    reports.push_back(report);
  }
  store.zero_grad();
  return reports;
}

} // namespace c4v
