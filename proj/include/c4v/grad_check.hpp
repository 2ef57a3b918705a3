#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "c4v/param_store.hpp"
#include "c4v/tensor.hpp"

namespace c4v {

struct GradCheckReport {
  std::string name;
  double max_relative_error = 0.0;
  std::size_t elements_checked = 0;
  bool pass = false;
};

struct GradCheckOptions {
  double epsilon = 1e-5;
  double tolerance = 1e-4;
  /// Elements probed per parameter; 0 probes every element. The probe set
  /// always includes the element with the largest analytic gradient.
  std::size_t max_elements = 8;
  /// Denominator floor of the relative error; gradients below it are compared
  /// in absolute terms (tolerance * floor).
  double absolute_floor = 1e-6;
  /// Std of the seeded perturbation run_grad_checks adds to every parameter.
  double parameter_noise = 0.2;
  std::uint64_t seed = 0;
};

/// Compares analytic gradients of `forward()` against central differences
/// for the named parameters. Relative error per element is
/// |a - n| / max(|a|, |n|, absolute_floor).
///
/// The forward closure must be deterministic: it is evaluated twice up front
/// and a ContractViolation is thrown if the two losses differ.
std::vector<GradCheckReport> grad_check(const std::function<Tensor()>& forward, ParamStore& store,
                                        std::span<const std::string> names,
                                        const GradCheckOptions& options = {});

} // namespace c4v
