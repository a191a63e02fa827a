#include "dkd/grad_check.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "dkd/rng.hpp"

namespace dkd {

namespace {

template <typename T>
T evaluate(const ScalarFn<T>& f, const std::vector<Tensor<T>>& inputs) {
  Tape<T> tape(false);
  std::vector<Var<T>> vars;
  vars.reserve(inputs.size());
  for (const auto& t : inputs) vars.push_back(tape.constant(t));
  const Var<T> out = f(tape, vars);
  const T v = out.value().item();
  if (!std::isfinite(v)) throw NumericError("grad_check: function value is not finite");
  return v;
}

template <typename T>
std::vector<Tensor<double>> analytic_gradients(const ScalarFn<T>& f, std::span<const Tensor<T>> inputs) {
  Tape<T> tape(true);
  std::vector<Var<T>> vars;
  for (const auto& t : inputs) vars.push_back(tape.parameter(t));
  const Var<T> out = f(tape, vars);
  if (!std::isfinite(out.value().item())) throw NumericError("grad_check: function value is not finite");
  const Gradients<T> grads = tape.backward(out);
  std::vector<Tensor<double>> result;
  for (const auto& v : vars) result.push_back(grads[v].template cast<double>());
  return result;
}

template <typename T>
GradCheckResult compare(const ScalarFn<T>& f, std::vector<Tensor<T>> probe, const std::vector<Tensor<double>>& analytic,
                        const GradCheckOptions& options) {
  Rng rng = make_rng({options.seed, 0x67726164ull});
  GradCheckResult result;
  const T eps = static_cast<T>(options.eps);
  for (std::size_t k = 0; k < probe.size(); ++k) {
    std::vector<std::size_t> coords(probe[k].size());
    std::iota(coords.begin(), coords.end(), std::size_t{0});
    if (options.samples_per_input > 0 && options.samples_per_input < coords.size()) {
      shuffle_range(coords.begin(), coords.end(), rng);
      coords.resize(options.samples_per_input);
    }
    for (std::size_t i : coords) {
      const T original = probe[k][i];
      // The representable step can differ from eps at 32-bit, so divide by the real one.
      const T hi = original + eps;
      const T lo = original - eps;
      probe[k][i] = hi;
      const T up = evaluate(f, probe);
      probe[k][i] = lo;
      const T down = evaluate(f, probe);
      probe[k][i] = original;
      const double numeric =
          (static_cast<double>(up) - static_cast<double>(down)) / (static_cast<double>(hi) - static_cast<double>(lo));
      const double a = analytic[k][i];
      const double denom = std::max({std::abs(a), std::abs(numeric), 1e-12});
      result.max_rel_error = std::max(result.max_rel_error, std::abs(a - numeric) / denom);
      ++result.coordinates;
    }
  }
  return result;
}

}  // namespace

template <typename T>
GradCheckResult grad_check(const ScalarFn<T>& f, std::span<const Tensor<T>> inputs, const GradCheckOptions& options) {
  if (!(options.eps > 0.0)) throw ContractError("grad_check: eps must be positive");
  const auto analytic = analytic_gradients(f, inputs);
  return compare(f, std::vector<Tensor<T>>(inputs.begin(), inputs.end()), analytic, options);
}

GradCheckResult grad_check(const ScalarFn<float>& f, const ScalarFn<double>& reference,
                           std::span<const Tensor<float>> inputs, const GradCheckOptions& options) {
  if (!(options.eps > 0.0)) throw ContractError("grad_check: eps must be positive");
  const auto analytic = analytic_gradients(f, inputs);
  std::vector<Tensor<double>> probe;
  for (const auto& t : inputs) probe.push_back(t.cast<double>());
  return compare(reference, std::move(probe), analytic, options);
}

template GradCheckResult grad_check<float>(const ScalarFn<float>&, std::span<const Tensor<float>>,
                                           const GradCheckOptions&);
template GradCheckResult grad_check<double>(const ScalarFn<double>&, std::span<const Tensor<double>>,
                                            const GradCheckOptions&);

}  // namespace dkd
