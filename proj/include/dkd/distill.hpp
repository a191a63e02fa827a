#pragma once

#include <span>
#include <string_view>

#include "dkd/ops.hpp"

namespace dkd {

enum class SoftVariant { kl_divergence, cross_entropy };

std::string_view to_string(SoftVariant v);
SoftVariant soft_variant_from_string(std::string_view s);

// Response-based distillation settings.
//   temperature  divides logits before the softmax, T > 0
//   alpha        weight of the hard (label) loss; the soft loss gets 1 - alpha
//   soft_variant KL(p_teacher || p_student) or the cross-entropy form; they
//                differ by the teacher entropy, so student gradients agree
//   t_squared_scaling multiplies the soft loss by T^2 (off by default)
struct DistillConfig {
  double temperature = 10.0;
  double alpha = 0.3;
  SoftVariant soft_variant = SoftVariant::kl_divergence;
  bool t_squared_scaling = false;

  // Throws ContractError unless T > 0 and 0 <= alpha <= 1.
  void validate() const;
};

// Probabilities are clamped to at least this value before any logarithm.
inline constexpr double kProbabilityFloor = 1e-12;

// Row-wise softmax(logits / T).
template <typename T>
Tensor<T> soften(const Tensor<T>& logits, T temperature);
template <typename T>
Var<T> soften(const Var<T>& logits, T temperature);

// Batch mean of KL(soften(teacher) || soften(student)) or of
// -sum soften(teacher) * log soften(student). The teacher side is a constant.
template <typename T>
Var<T> soft_loss(const Tensor<T>& teacher_logits, const Var<T>& student_logits, T temperature, SoftVariant variant,
                 bool t_squared_scaling = false);
template <typename T>
T soft_loss(const Tensor<T>& teacher_logits, const Tensor<T>& student_logits, T temperature, SoftVariant variant,
            bool t_squared_scaling = false);

// Batch mean of -log(max(p[label], 1e-12)) over T=1 student probabilities.
template <typename T>
Var<T> hard_loss(const Var<T>& student_probs, std::span<const int> labels);
template <typename T>
T hard_loss(const Tensor<T>& student_probs, std::span<const int> labels);

// The same loss fused with the softmax: -log_softmax(logits)[label] averaged
// over rows. Equal to hard_loss(softmax(logits)) while p[label] >= 1e-12, but
// without the clamp, so a confidently wrong prediction keeps its gradient
// (softmax - onehot) / N. Training uses this form.
template <typename T>
Var<T> hard_loss_from_logits(const Var<T>& logits, std::span<const int> labels);

// alpha * hard + (1 - alpha) * soft.
template <typename T>
Var<T> total_loss(const Var<T>& hard, const Var<T>& soft, T alpha);
double total_loss(double hard, double soft, double alpha);

// Per-row KL(p || q) averaged over rows, for probability tensors [N, C].
template <typename T>
T kl_divergence(const Tensor<T>& p, const Tensor<T>& q);

// Per-row Shannon entropy (nats) averaged over rows.
template <typename T>
T entropy(const Tensor<T>& p);

}  // namespace dkd
