#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <span>
#include <vector>

#include "dkd/autograd.hpp"

namespace dkd {

// A scalar function of several tensors, expressed on a tape so the same
// definition serves the analytic and the numeric side of the check.
template <typename T>
using ScalarFn = std::function<Var<T>(Tape<T>&, std::span<const Var<T>> inputs)>;

struct GradCheckOptions {
  double eps = 1e-6;
  // Coordinates sampled per input; 0 checks every coordinate.
  std::size_t samples_per_input = 0;
  std::uint64_t seed = 0;
};

struct GradCheckResult {
  double max_rel_error = 0.0;
  std::size_t coordinates = 0;
};

// Compares reverse-mode gradients of `f` against central differences.
// Relative error per coordinate is |a - n| / max(|a|, |n|, 1e-12); the worst
// one is reported. Throws NumericError when an evaluation is non-finite.
template <typename T>
GradCheckResult grad_check(const ScalarFn<T>& f, std::span<const Tensor<T>> inputs,
                           const GradCheckOptions& options = {});

// Single-precision gradients of `f` against central differences of
// `reference`, the double instantiation of the same function, at the same
// point. Float rounding in the function value would otherwise dominate the
// differences for small gradient components.
GradCheckResult grad_check(const ScalarFn<float>& f, const ScalarFn<double>& reference,
                           std::span<const Tensor<float>> inputs, const GradCheckOptions& options = {});

extern template GradCheckResult grad_check<float>(const ScalarFn<float>&, std::span<const Tensor<float>>,
                                                  const GradCheckOptions&);
extern template GradCheckResult grad_check<double>(const ScalarFn<double>&, std::span<const Tensor<double>>,
                                                   const GradCheckOptions&);

}  // namespace dkd
