#pragma once

#include <cstddef>
#include <string_view>

#include "dkd/autograd.hpp"
#include "dkd/rng.hpp"

namespace dkd {

enum class Padding { same, valid };
enum class Mode { train, infer };

std::string_view to_string(Padding p);
Padding padding_from_string(std::string_view s);

// A (rows, cols) pair for kernel, pool and stride sizes.
struct Window {
  std::size_t rows = 1;
  std::size_t cols = 1;
  bool operator==(const Window&) const = default;
};

// Output length and leading pad along one axis. `same` pads so that the output
// is ceil(in / stride), putting the odd pad element after the input.
struct AxisGeometry {
  std::size_t out = 0;
  std::size_t pad_before = 0;
};
AxisGeometry axis_geometry(std::size_t in, std::size_t window, std::size_t stride, Padding padding,
                           std::string_view axis_name);

// input [N, C, H, W], weights [O, C, KH, KW], bias [O] -> [N, O, OH, OW].
template <typename T>
Var<T> conv2d(const Var<T>& input, const Var<T>& weights, const Var<T>& bias, Window stride, Padding padding);

// input [N, C, H, W]. Padded cells never win the max. Backward routes each
// window's gradient to the first maximal element in row-major scan order.
template <typename T>
Var<T> maxpool2d(const Var<T>& input, Window pool, Window stride, Padding padding);

// input [N, F], weights [F, C], bias [C] -> [N, C].
template <typename T>
Var<T> dense(const Var<T>& input, const Var<T>& weights, const Var<T>& bias);

template <typename T>
Var<T> leaky_relu(const Var<T>& x, T slope);
template <typename T>
Var<T> relu(const Var<T>& x);
template <typename T>
Var<T> sigmoid(const Var<T>& x);
template <typename T>
Var<T> silu(const Var<T>& x);

// Row-wise softmax of [N, C] with per-row max subtraction.
template <typename T>
Var<T> softmax(const Var<T>& logits);
template <typename T>
Tensor<T> softmax(const Tensor<T>& logits);

// Row-wise log-softmax of [N, C].
template <typename T>
Var<T> log_softmax(const Var<T>& logits);

// Inverted dropout. Identity in infer mode or at rate 0; otherwise each element
// is zeroed with probability `rate` and survivors are scaled by 1/(1-rate).
template <typename T>
Var<T> dropout(const Var<T>& x, T rate, Mode mode, Rng* rng);

// [N, ...] -> [N, prod(...)].
template <typename T>
Var<T> flatten(const Var<T>& x);

// [N, C, H, W] -> [N, C].
template <typename T>
Var<T> global_avg_pool(const Var<T>& x);

template <typename T>
Var<T> add(const Var<T>& a, const Var<T>& b);
template <typename T>
Var<T> mul(const Var<T>& a, const Var<T>& b);
template <typename T>
Var<T> scale(const Var<T>& x, T factor);
// wa*a + wb*b for equally shaped operands.
template <typename T>
Var<T> weighted_sum(const Var<T>& a, T wa, const Var<T>& b, T wb);

// Reductions to a shape-{1} scalar.
template <typename T>
Var<T> sum(const Var<T>& x);
template <typename T>
Var<T> mean(const Var<T>& x);

// The element at a flat index, as a scalar.
template <typename T>
Var<T> select(const Var<T>& x, std::size_t flat_index);

}  // namespace dkd
