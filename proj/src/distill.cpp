#include "dkd/distill.hpp"

#include <algorithm>
#include <cmath>
#include <string>

namespace dkd {

namespace {

template <typename T>
void require_temperature(T temperature) {
  if (!(temperature > T(0))) throw ContractError("temperature must be > 0");
}

void require_alpha(double alpha) {
  if (!(alpha >= 0.0 && alpha <= 1.0)) throw ContractError("alpha must lie in [0, 1]");
}

template <typename T>
T log_floor(T p) {
  return std::log(std::max(p, static_cast<T>(kProbabilityFloor)));
}

}  // namespace

std::string_view to_string(SoftVariant v) { return v == SoftVariant::kl_divergence ? "kl" : "ce"; }

SoftVariant soft_variant_from_string(std::string_view s) {
  if (s == "kl" || s == "kl_divergence") return SoftVariant::kl_divergence;
  if (s == "ce" || s == "cross_entropy") return SoftVariant::cross_entropy;
  throw ContractError("unknown soft-loss variant '" + std::string(s) + "'");
}

void DistillConfig::validate() const {
  require_temperature(temperature);
  require_alpha(alpha);
}

template <typename T>
Tensor<T> soften(const Tensor<T>& logits, T temperature) {
  require_temperature(temperature);
  Tensor<T> scaled = logits;
  for (T& v : scaled.values()) v /= temperature;
  return softmax(scaled);
}

template <typename T>
Var<T> soften(const Var<T>& logits, T temperature) {
  require_temperature(temperature);
  return softmax(scale(logits, T(1) / temperature));
}

template <typename T>
Var<T> soft_loss(const Tensor<T>& teacher_logits, const Var<T>& student_logits, T temperature, SoftVariant variant,
                 bool t_squared_scaling) {
  require_temperature(temperature);
  const Tensor<T>& s = student_logits.value();
  if (teacher_logits.shape() != s.shape() || s.rank() != 2) {
    throw DimensionError("soft_loss: teacher logits " + shape_string(teacher_logits.shape()) + " and student logits " +
                         shape_string(s.shape()) + " must be equal [N, C] shapes");
  }
  const std::size_t n = s.dim(0), c = s.dim(1);
  const Tensor<T> p = soften(teacher_logits, temperature);

  // Student log-probabilities come from a log-sum-exp and are always finite.
  Tape<T> scratch(false);
  const Tensor<T> log_q = log_softmax(scale(scratch.constant(s), T(1) / temperature)).value();

  const T factor = t_squared_scaling ? temperature * temperature : T(1);
  T total = 0;
  for (std::size_t i = 0; i < n * c; ++i) {
    const T cross = -p[i] * log_q[i];
    total += variant == SoftVariant::kl_divergence ? cross + p[i] * log_floor(p[i]) : cross;
  }
  const T value = factor * total / static_cast<T>(n);

  auto backward = [=](const Tensor<T>& g, std::span<Tensor<T>* const> gin) {
    if (!gin[0]) return;
    // d/dz_s of the row loss is (q - p) / T for both variants.
    const T k = g[0] * factor / (temperature * static_cast<T>(n));
    for (std::size_t i = 0; i < n * c; ++i) (*gin[0])[i] += k * (std::exp(log_q[i]) - p[i]);
  };
  return student_logits.tape().record(Tensor<T>::scalar(value), {student_logits.id()}, std::move(backward));
}

template <typename T>
T soft_loss(const Tensor<T>& teacher_logits, const Tensor<T>& student_logits, T temperature, SoftVariant variant,
            bool t_squared_scaling) {
  Tape<T> tape(false);
  return soft_loss(teacher_logits, tape.constant(student_logits), temperature, variant, t_squared_scaling)
      .value()
      .item();
}

template <typename T>
Var<T> hard_loss(const Var<T>& student_probs, std::span<const int> labels) {
  const Tensor<T>& probs = student_probs.value();
  if (probs.rank() != 2) throw DimensionError("hard_loss: probabilities must be [N, C], got " + shape_string(probs.shape()));
  const std::size_t n = probs.dim(0), c = probs.dim(1);
  if (labels.size() != n) {
    throw ContractError("hard_loss: " + std::to_string(labels.size()) + " labels for " + std::to_string(n) + " rows");
  }
  T total = 0;
  for (std::size_t r = 0; r < n; ++r) {
    if (labels[r] < 0 || static_cast<std::size_t>(labels[r]) >= c) {
      throw ContractError("hard_loss: label " + std::to_string(labels[r]) + " outside [0, " + std::to_string(c) + ")");
    }
    T row = 0;
    for (std::size_t j = 0; j < c; ++j) row += probs[r * c + j];
    if (!(std::abs(row - T(1)) <= T(1e-3))) {
      throw ContractError("hard_loss: probability row " + std::to_string(r) + " does not sum to 1");
    }
    total -= log_floor(probs[r * c + static_cast<std::size_t>(labels[r])]);
  }
  std::vector<int> saved(labels.begin(), labels.end());
  const Tensor<T>* p_ptr = &probs;
  auto backward = [=, saved = std::move(saved)](const Tensor<T>& g, std::span<Tensor<T>* const> gin) {
    if (!gin[0]) return;
    for (std::size_t r = 0; r < n; ++r) {
      const std::size_t at = r * c + static_cast<std::size_t>(saved[r]);
      const T pr = (*p_ptr)[at];
      // Below the clamp the loss is flat in p.
      if (pr > static_cast<T>(kProbabilityFloor)) (*gin[0])[at] -= g[0] / (static_cast<T>(n) * pr);
    }
  };
  return student_probs.tape().record(Tensor<T>::scalar(total / static_cast<T>(n)), {student_probs.id()},
                                     std::move(backward));
}

template <typename T>
T hard_loss(const Tensor<T>& student_probs, std::span<const int> labels) {
  Tape<T> tape(false);
  return hard_loss(tape.constant(student_probs), labels).value().item();
}

template <typename T>
Var<T> hard_loss_from_logits(const Var<T>& logits, std::span<const int> labels) {
  const Tensor<T>& z = logits.value();
  if (z.rank() != 2) throw DimensionError("hard_loss_from_logits: logits must be [N, C], got " + shape_string(z.shape()));
  const std::size_t n = z.dim(0), c = z.dim(1);
  if (labels.size() != n) {
    throw ContractError("hard_loss: " + std::to_string(labels.size()) + " labels for " + std::to_string(n) + " rows");
  }
  const Tensor<T> probs = softmax(z);
  T total = 0;
  for (std::size_t r = 0; r < n; ++r) {
    if (labels[r] < 0 || static_cast<std::size_t>(labels[r]) >= c) {
      throw ContractError("hard_loss: label " + std::to_string(labels[r]) + " outside [0, " + std::to_string(c) + ")");
    }
    const T* row = z.data() + r * c;
    const T peak = *std::max_element(row, row + c);
    T denom = 0;
    for (std::size_t j = 0; j < c; ++j) denom += std::exp(row[j] - peak);
    total += std::log(denom) - (row[labels[r]] - peak);
  }
  std::vector<int> saved(labels.begin(), labels.end());
  auto backward = [=, saved = std::move(saved)](const Tensor<T>& g, std::span<Tensor<T>* const> gin) {
    if (!gin[0]) return;
    const T scale = g[0] / static_cast<T>(n);
    for (std::size_t r = 0; r < n; ++r) {
      for (std::size_t j = 0; j < c; ++j) {
        const T onehot = static_cast<std::size_t>(saved[r]) == j ? T(1) : T(0);
        (*gin[0])[r * c + j] += scale * (probs[r * c + j] - onehot);
      }
    }
  };
  return logits.tape().record(Tensor<T>::scalar(total / static_cast<T>(n)), {logits.id()}, std::move(backward));
}

template <typename T>
Var<T> total_loss(const Var<T>& hard, const Var<T>& soft, T alpha) {
  require_alpha(static_cast<double>(alpha));
  return weighted_sum(hard, alpha, soft, T(1) - alpha);
}

double total_loss(double hard, double soft, double alpha) {
  require_alpha(alpha);
  return alpha * hard + (1.0 - alpha) * soft;
}

template <typename T>
T kl_divergence(const Tensor<T>& p, const Tensor<T>& q) {
  if (p.shape() != q.shape() || p.rank() != 2) throw DimensionError("kl_divergence: shapes must be equal [N, C]");
  T total = 0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    if (p[i] > T(0)) total += p[i] * (log_floor(p[i]) - log_floor(q[i]));
  }
  return total / static_cast<T>(p.dim(0));
}

template <typename T>
T entropy(const Tensor<T>& p) {
  if (p.rank() != 2) throw DimensionError("entropy: probabilities must be [N, C]");
  T total = 0;
  for (T v : p.values()) {
    if (v > T(0)) total -= v * std::log(v);
  }
  return total / static_cast<T>(p.dim(0));
}

#define DKD_INSTANTIATE_DISTILL(T)                                                       \
  template Tensor<T> soften(const Tensor<T>&, T);                                        \
  template Var<T> soften(const Var<T>&, T);                                              \
  template Var<T> soft_loss(const Tensor<T>&, const Var<T>&, T, SoftVariant, bool);      \
  template T soft_loss(const Tensor<T>&, const Tensor<T>&, T, SoftVariant, bool);        \
  template Var<T> hard_loss(const Var<T>&, std::span<const int>);                        \
  template T hard_loss(const Tensor<T>&, std::span<const int>);                          \
  template Var<T> hard_loss_from_logits(const Var<T>&, std::span<const int>);            \
  template Var<T> total_loss(const Var<T>&, const Var<T>&, T);                           \
  template T kl_divergence(const Tensor<T>&, const Tensor<T>&);                          \
  template T entropy(const Tensor<T>&);

DKD_INSTANTIATE_DISTILL(float)
DKD_INSTANTIATE_DISTILL(double)

#undef DKD_INSTANTIATE_DISTILL

}  // namespace dkd
