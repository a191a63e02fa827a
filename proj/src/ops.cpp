#include "dkd/ops.hpp"

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

namespace dkd {

namespace {

template <typename T>
using MatRM = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MapRM = Eigen::Map<MatRM<T>>;
template <typename T>
using CMapRM = Eigen::Map<const MatRM<T>>;

template <typename T, typename... Rest>
Tape<T>& common_tape(const Var<T>& first, const Rest&... rest) {
  Tape<T>& tape = first.tape();
  if (((&rest.tape() != &tape) || ...)) throw ContractError("operands were recorded on different tapes");
  return tape;
}

void require_rank(const Shape& s, std::size_t rank, const char* op, const char* operand) {
  if (s.size() != rank) {
    throw DimensionError(std::string(op) + ": " + operand + " must have rank " + std::to_string(rank) + ", got shape " +
                         shape_string(s));
  }
}

void require_same_shape(const Shape& a, const Shape& b, const char* op) {
  if (a != b) throw DimensionError(std::string(op) + ": shapes " + shape_string(a) + " and " + shape_string(b) + " differ");
}

template <typename T>
T stable_sigmoid(T x) {
  if (x >= T(0)) return T(1) / (T(1) + std::exp(-x));
  const T e = std::exp(x);
  return e / (T(1) + e);
}

// Applies an elementwise map; `deriv(x, y)` gives dy/dx from the saved input and output.
template <typename T, typename F, typename D>
Var<T> elementwise(const Var<T>& x, F f, D deriv) {
  Tape<T>& tape = x.tape();
  const Tensor<T>& in = x.value();
  Tensor<T> out(in.shape());
  for (std::size_t i = 0; i < in.size(); ++i) out[i] = f(in[i]);
  const Tensor<T>* in_ptr = &in;
  const NodeId out_id = tape.size();
  Tape<T>* tp = &tape;
  return tape.record(std::move(out), {x.id()},
                     [in_ptr, tp, out_id, deriv](const Tensor<T>& g, std::span<Tensor<T>* const> gin) {
                       if (!gin[0]) return;
                       const Tensor<T>& y = tp->value(out_id);
                       Tensor<T>& dx = *gin[0];
                       for (std::size_t i = 0; i < g.size(); ++i) dx[i] += g[i] * deriv((*in_ptr)[i], y[i]);
                     });
}

template <typename T>
void require_finite(const Tensor<T>& t, const char* op) {
  for (T v : t.values()) {
    if (!std::isfinite(v)) throw NumericError(std::string(op) + ": non-finite input");
  }
}

template <typename T>
Tensor<T> softmax_rows(const Tensor<T>& z) {
  require_rank(z.shape(), 2, "softmax", "logits");
  require_finite(z, "softmax");
  const std::size_t n = z.dim(0), c = z.dim(1);
  Tensor<T> y(z.shape());
  for (std::size_t r = 0; r < n; ++r) {
    const T* zr = z.data() + r * c;
    T* yr = y.data() + r * c;
    const T mx = *std::max_element(zr, zr + c);
    T total = 0;
    for (std::size_t j = 0; j < c; ++j) {
      yr[j] = std::exp(zr[j] - mx);
      total += yr[j];
    }
    for (std::size_t j = 0; j < c; ++j) yr[j] /= total;
  }
  return y;
}

}  // namespace

std::string_view to_string(Padding p) { return p == Padding::same ? "same" : "valid"; }

Padding padding_from_string(std::string_view s) {
  if (s == "same") return Padding::same;
  if (s == "valid") return Padding::valid;
  throw ContractError("unknown padding '" + std::string(s) + "'");
}

AxisGeometry axis_geometry(std::size_t in, std::size_t window, std::size_t stride, Padding padding,
                           std::string_view axis_name) {
  if (window == 0 || stride == 0) {
    throw ContractError("window and stride along " + std::string(axis_name) + " must be >= 1");
  }
  if (padding == Padding::valid) {
    if (window > in) {
      throw DimensionError("window " + std::to_string(window) + " exceeds " + std::string(axis_name) + " extent " +
                           std::to_string(in));
    }
    return {(in - window) / stride + 1, 0};
  }
  const std::size_t out = (in + stride - 1) / stride;
  const std::size_t needed = (out - 1) * stride + window;
  const std::size_t pad_total = needed > in ? needed - in : 0;
  if (window > in + pad_total) {
    throw DimensionError("window " + std::to_string(window) + " exceeds padded " + std::string(axis_name) + " extent");
  }
  return {out, pad_total / 2};
}

template <typename T>
Var<T> conv2d(const Var<T>& input, const Var<T>& weights, const Var<T>& bias, Window stride, Padding padding) {
  Tape<T>& tape = common_tape(input, weights, bias);
  const Tensor<T>& x = input.value();
  const Tensor<T>& w = weights.value();
  const Tensor<T>& b = bias.value();
  require_rank(x.shape(), 4, "conv2d", "input");
  require_rank(w.shape(), 4, "conv2d", "weights");
  require_rank(b.shape(), 1, "conv2d", "bias");
  const std::size_t n = x.dim(0), c = x.dim(1), h = x.dim(2), wd = x.dim(3);
  const std::size_t o = w.dim(0), kh = w.dim(2), kw = w.dim(3);
  if (w.dim(1) != c) {
    throw DimensionError("conv2d: input channel axis 1 has size " + std::to_string(c) + " but weights in_ch axis 1 has " +
                         std::to_string(w.dim(1)));
  }
  if (b.dim(0) != o) {
    throw DimensionError("conv2d: bias axis 0 has size " + std::to_string(b.dim(0)) + " but weights out_ch axis 0 has " +
                         std::to_string(o));
  }
  const AxisGeometry gh = axis_geometry(h, kh, stride.rows, padding, "height");
  const AxisGeometry gw = axis_geometry(wd, kw, stride.cols, padding, "width");
  const std::size_t oh = gh.out, ow = gw.out;
  const std::size_t k = c * kh * kw;
  const std::size_t per_image = oh * ow;
  const std::size_t p = n * per_image;

  // Column matrix [k, p]: one row per (channel, ky, kx), one column per output pixel.
  std::vector<T> col(k * p, T(0));
  for (std::size_t ci = 0; ci < c; ++ci) {
    for (std::size_t ky = 0; ky < kh; ++ky) {
      for (std::size_t kx = 0; kx < kw; ++kx) {
        T* row = col.data() + ((ci * kh + ky) * kw + kx) * p;
        for (std::size_t ni = 0; ni < n; ++ni) {
          const T* plane = x.data() + (ni * c + ci) * h * wd;
          for (std::size_t yo = 0; yo < oh; ++yo) {
            const std::ptrdiff_t yi = static_cast<std::ptrdiff_t>(yo * stride.rows + ky) -
                                      static_cast<std::ptrdiff_t>(gh.pad_before);
            if (yi < 0 || yi >= static_cast<std::ptrdiff_t>(h)) continue;
            T* dst = row + ni * per_image + yo * ow;
            const T* src = plane + static_cast<std::size_t>(yi) * wd;
            for (std::size_t xo = 0; xo < ow; ++xo) {
              const std::ptrdiff_t xi = static_cast<std::ptrdiff_t>(xo * stride.cols + kx) -
                                        static_cast<std::ptrdiff_t>(gw.pad_before);
              if (xi >= 0 && xi < static_cast<std::ptrdiff_t>(wd)) dst[xo] = src[xi];
            }
          }
        }
      }
    }
  }

  MatRM<T> out_mat(o, p);
  out_mat.noalias() = CMapRM<T>(w.data(), o, k) * CMapRM<T>(col.data(), k, p);
  Tensor<T> out(Shape{n, o, oh, ow});
  for (std::size_t ni = 0; ni < n; ++ni) {
    for (std::size_t oi = 0; oi < o; ++oi) {
      const T* src = out_mat.data() + oi * p + ni * per_image;
      T* dst = out.data() + (ni * o + oi) * per_image;
      const T bias_v = b[oi];
      for (std::size_t q = 0; q < per_image; ++q) dst[q] = src[q] + bias_v;
    }
  }

  const Tensor<T>* w_ptr = &w;
  auto backward = [=, col = std::move(col)](const Tensor<T>& g, std::span<Tensor<T>* const> gin) {
    MatRM<T> gmat(o, p);
    for (std::size_t ni = 0; ni < n; ++ni) {
      for (std::size_t oi = 0; oi < o; ++oi) {
        std::copy_n(g.data() + (ni * o + oi) * per_image, per_image, gmat.data() + oi * p + ni * per_image);
      }
    }
    if (gin[1]) {
      MapRM<T>(gin[1]->data(), o, k).noalias() += gmat * CMapRM<T>(col.data(), k, p).transpose();
    }
    if (gin[2]) {
      for (std::size_t oi = 0; oi < o; ++oi) (*gin[2])[oi] += gmat.row(oi).sum();
    }
    if (gin[0]) {
      MatRM<T> dcol(k, p);
      dcol.noalias() = CMapRM<T>(w_ptr->data(), o, k).transpose() * gmat;
      Tensor<T>& dx = *gin[0];
      for (std::size_t ci = 0; ci < c; ++ci) {
        for (std::size_t ky = 0; ky < kh; ++ky) {
          for (std::size_t kx = 0; kx < kw; ++kx) {
            const T* row = dcol.data() + ((ci * kh + ky) * kw + kx) * p;
            for (std::size_t ni = 0; ni < n; ++ni) {
              T* plane = dx.data() + (ni * c + ci) * h * wd;
              for (std::size_t yo = 0; yo < oh; ++yo) {
                const std::ptrdiff_t yi = static_cast<std::ptrdiff_t>(yo * stride.rows + ky) -
                                          static_cast<std::ptrdiff_t>(gh.pad_before);
                if (yi < 0 || yi >= static_cast<std::ptrdiff_t>(h)) continue;
                const T* src = row + ni * per_image + yo * ow;
                T* dst = plane + static_cast<std::size_t>(yi) * wd;
                for (std::size_t xo = 0; xo < ow; ++xo) {
                  const std::ptrdiff_t xi = static_cast<std::ptrdiff_t>(xo * stride.cols + kx) -
                                            static_cast<std::ptrdiff_t>(gw.pad_before);
                  if (xi >= 0 && xi < static_cast<std::ptrdiff_t>(wd)) dst[xi] += src[xo];
                }
              }
            }
          }
        }
      }
    }
  };
  return tape.record(std::move(out), {input.id(), weights.id(), bias.id()}, std::move(backward));
}

template <typename T>
Var<T> maxpool2d(const Var<T>& input, Window pool, Window stride, Padding padding) {
  Tape<T>& tape = input.tape();
  const Tensor<T>& x = input.value();
  require_rank(x.shape(), 4, "maxpool2d", "input");
  if (pool.rows == 0 || pool.cols == 0) throw ContractError("maxpool2d: pool size must be >= 1");
  const std::size_t n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
  const AxisGeometry gh = axis_geometry(h, pool.rows, stride.rows, padding, "height");
  const AxisGeometry gw = axis_geometry(w, pool.cols, stride.cols, padding, "width");
  Tensor<T> out(Shape{n, c, gh.out, gw.out});
  std::vector<std::size_t> argmax(out.size());
  std::size_t q = 0;
  for (std::size_t plane = 0; plane < n * c; ++plane) {
    const std::size_t base = plane * h * w;
    for (std::size_t yo = 0; yo < gh.out; ++yo) {
      for (std::size_t xo = 0; xo < gw.out; ++xo, ++q) {
        T best = -std::numeric_limits<T>::infinity();
        std::size_t best_idx = std::numeric_limits<std::size_t>::max();
        for (std::size_t py = 0; py < pool.rows; ++py) {
          const std::ptrdiff_t yi = static_cast<std::ptrdiff_t>(yo * stride.rows + py) -
                                    static_cast<std::ptrdiff_t>(gh.pad_before);
          if (yi < 0 || yi >= static_cast<std::ptrdiff_t>(h)) continue;
          for (std::size_t px = 0; px < pool.cols; ++px) {
            const std::ptrdiff_t xi = static_cast<std::ptrdiff_t>(xo * stride.cols + px) -
                                      static_cast<std::ptrdiff_t>(gw.pad_before);
            if (xi < 0 || xi >= static_cast<std::ptrdiff_t>(w)) continue;
            const std::size_t idx = base + static_cast<std::size_t>(yi) * w + static_cast<std::size_t>(xi);
            if (best_idx == std::numeric_limits<std::size_t>::max() || x[idx] > best) {
              best = x[idx];
              best_idx = idx;
            }
          }
        }
        out[q] = best;
        argmax[q] = best_idx;
      }
    }
  }
  auto backward = [argmax = std::move(argmax)](const Tensor<T>& g, std::span<Tensor<T>* const> gin) {
    if (!gin[0]) return;
    Tensor<T>& dx = *gin[0];
    for (std::size_t i = 0; i < g.size(); ++i) dx[argmax[i]] += g[i];
  };
  return tape.record(std::move(out), {input.id()}, std::move(backward));
}

template <typename T>
Var<T> dense(const Var<T>& input, const Var<T>& weights, const Var<T>& bias) {
  Tape<T>& tape = common_tape(input, weights, bias);
  const Tensor<T>& x = input.value();
  const Tensor<T>& w = weights.value();
  const Tensor<T>& b = bias.value();
  require_rank(x.shape(), 2, "dense", "input");
  require_rank(w.shape(), 2, "dense", "weights");
  require_rank(b.shape(), 1, "dense", "bias");
  const std::size_t n = x.dim(0), f = x.dim(1), c = w.dim(1);
  if (w.dim(0) != f) {
    throw DimensionError("dense: input feature axis 1 has size " + std::to_string(f) + " but weights axis 0 has " +
                         std::to_string(w.dim(0)));
  }
  if (b.dim(0) != c) {
    throw DimensionError("dense: bias axis 0 has size " + std::to_string(b.dim(0)) + " but weights axis 1 has " +
                         std::to_string(c));
  }
  Tensor<T> out(Shape{n, c});
  MapRM<T> om(out.data(), n, c);
  om.noalias() = CMapRM<T>(x.data(), n, f) * CMapRM<T>(w.data(), f, c);
  for (std::size_t r = 0; r < n; ++r) {
    for (std::size_t j = 0; j < c; ++j) om(r, j) += b[j];
  }
  const Tensor<T>* x_ptr = &x;
  const Tensor<T>* w_ptr = &w;
  auto backward = [=](const Tensor<T>& g, std::span<Tensor<T>* const> gin) {
    CMapRM<T> gm(g.data(), n, c);
    if (gin[0]) MapRM<T>(gin[0]->data(), n, f).noalias() += gm * CMapRM<T>(w_ptr->data(), f, c).transpose();
    if (gin[1]) MapRM<T>(gin[1]->data(), f, c).noalias() += CMapRM<T>(x_ptr->data(), n, f).transpose() * gm;
    if (gin[2]) {
      for (std::size_t r = 0; r < n; ++r) {
        for (std::size_t j = 0; j < c; ++j) (*gin[2])[j] += gm(r, j);
      }
    }
  };
  return tape.record(std::move(out), {input.id(), weights.id(), bias.id()}, std::move(backward));
}

template <typename T>
Var<T> leaky_relu(const Var<T>& x, T slope) {
  if (!(slope >= T(0))) throw ContractError("leaky_relu: slope must be >= 0");
  return elementwise(
      x, [slope](T v) { return v > T(0) ? v : slope * v; }, [slope](T v, T) { return v > T(0) ? T(1) : slope; });
}

template <typename T>
Var<T> relu(const Var<T>& x) {
  return elementwise(
      x, [](T v) { return v > T(0) ? v : T(0); }, [](T v, T) { return v > T(0) ? T(1) : T(0); });
}

template <typename T>
Var<T> sigmoid(const Var<T>& x) {
  return elementwise(
      x, [](T v) { return stable_sigmoid(v); }, [](T, T y) { return y * (T(1) - y); });
}

template <typename T>
Var<T> silu(const Var<T>& x) {
  return elementwise(
      x, [](T v) { return v * stable_sigmoid(v); },
      [](T v, T) {
        const T s = stable_sigmoid(v);
        return s * (T(1) + v * (T(1) - s));
      });
}

template <typename T>
Tensor<T> softmax(const Tensor<T>& logits) {
  return softmax_rows(logits);
}

template <typename T>
Var<T> softmax(const Var<T>& logits) {
  Tape<T>& tape = logits.tape();
  Tensor<T> y = softmax_rows(logits.value());
  const std::size_t n = y.dim(0), c = y.dim(1);
  const NodeId out_id = tape.size();
  Tape<T>* tp = &tape;
  auto backward = [=](const Tensor<T>& g, std::span<Tensor<T>* const> gin) {
    if (!gin[0]) return;
    const Tensor<T>& yv = tp->value(out_id);
    Tensor<T>& dx = *gin[0];
    for (std::size_t r = 0; r < n; ++r) {
      const T* yr = yv.data() + r * c;
      const T* gr = g.data() + r * c;
      T dot = 0;
      for (std::size_t j = 0; j < c; ++j) dot += gr[j] * yr[j];
      for (std::size_t j = 0; j < c; ++j) dx[r * c + j] += yr[j] * (gr[j] - dot);
    }
  };
  return tape.record(std::move(y), {logits.id()}, std::move(backward));
}

template <typename T>
Var<T> log_softmax(const Var<T>& logits) {
  Tape<T>& tape = logits.tape();
  const Tensor<T>& z = logits.value();
  require_rank(z.shape(), 2, "log_softmax", "logits");
  require_finite(z, "log_softmax");
  const std::size_t n = z.dim(0), c = z.dim(1);
  Tensor<T> y(z.shape());
  for (std::size_t r = 0; r < n; ++r) {
    const T* zr = z.data() + r * c;
    const T mx = *std::max_element(zr, zr + c);
    T total = 0;
    for (std::size_t j = 0; j < c; ++j) total += std::exp(zr[j] - mx);
    const T lse = mx + std::log(total);
    for (std::size_t j = 0; j < c; ++j) y[r * c + j] = zr[j] - lse;
  }
  const NodeId out_id = tape.size();
  Tape<T>* tp = &tape;
  auto backward = [=](const Tensor<T>& g, std::span<Tensor<T>* const> gin) {
    if (!gin[0]) return;
    const Tensor<T>& yv = tp->value(out_id);
    Tensor<T>& dx = *gin[0];
    for (std::size_t r = 0; r < n; ++r) {
      T gsum = 0;
      for (std::size_t j = 0; j < c; ++j) gsum += g[r * c + j];
      for (std::size_t j = 0; j < c; ++j) dx[r * c + j] += g[r * c + j] - std::exp(yv[r * c + j]) * gsum;
    }
  };
  return tape.record(std::move(y), {logits.id()}, std::move(backward));
}

template <typename T>
Var<T> dropout(const Var<T>& x, T rate, Mode mode, Rng* rng) {
  if (!(rate >= T(0) && rate < T(1))) throw ContractError("dropout: rate must lie in [0, 1)");
  if (mode == Mode::infer || rate == T(0)) return x;
  if (!rng) throw ContractError("dropout: train mode needs a random generator");
  Tape<T>& tape = x.tape();
  const Tensor<T>& in = x.value();
  const T keep_scale = T(1) / (T(1) - rate);
  std::vector<T> mask(in.size());
  Tensor<T> out(in.shape());
  for (std::size_t i = 0; i < in.size(); ++i) {
    mask[i] = uniform01(*rng) < static_cast<double>(rate) ? T(0) : keep_scale;
    out[i] = in[i] * mask[i];
  }
  auto backward = [mask = std::move(mask)](const Tensor<T>& g, std::span<Tensor<T>* const> gin) {
    if (!gin[0]) return;
    for (std::size_t i = 0; i < g.size(); ++i) (*gin[0])[i] += g[i] * mask[i];
  };
  return tape.record(std::move(out), {x.id()}, std::move(backward));
}

template <typename T>
Var<T> flatten(const Var<T>& x) {
  const Tensor<T>& in = x.value();
  if (in.rank() < 2) throw DimensionError("flatten: input needs a batch axis and at least one feature axis");
  const std::size_t n = in.dim(0);
  Tensor<T> out = in.reshaped(Shape{n, in.size() / n});
  return x.tape().record(std::move(out), {x.id()}, [](const Tensor<T>& g, std::span<Tensor<T>* const> gin) {
    if (!gin[0]) return;
    for (std::size_t i = 0; i < g.size(); ++i) (*gin[0])[i] += g[i];
  });
}

template <typename T>
Var<T> global_avg_pool(const Var<T>& x) {
  const Tensor<T>& in = x.value();
  require_rank(in.shape(), 4, "global_avg_pool", "input");
  const std::size_t n = in.dim(0), c = in.dim(1), hw = in.dim(2) * in.dim(3);
  Tensor<T> out(Shape{n, c});
  for (std::size_t plane = 0; plane < n * c; ++plane) {
    T total = 0;
    for (std::size_t i = 0; i < hw; ++i) total += in[plane * hw + i];
    out[plane] = total / static_cast<T>(hw);
  }
  return x.tape().record(std::move(out), {x.id()}, [n, c, hw](const Tensor<T>& g, std::span<Tensor<T>* const> gin) {
    if (!gin[0]) return;
    for (std::size_t plane = 0; plane < n * c; ++plane) {
      const T share = g[plane] / static_cast<T>(hw);
      for (std::size_t i = 0; i < hw; ++i) (*gin[0])[plane * hw + i] += share;
    }
  });
}

template <typename T>
Var<T> weighted_sum(const Var<T>& a, T wa, const Var<T>& b, T wb) {
  Tape<T>& tape = common_tape(a, b);
  const Tensor<T>& av = a.value();
  const Tensor<T>& bv = b.value();
  require_same_shape(av.shape(), bv.shape(), "weighted_sum");
  Tensor<T> out(av.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = wa * av[i] + wb * bv[i];
  return tape.record(std::move(out), {a.id(), b.id()}, [wa, wb](const Tensor<T>& g, std::span<Tensor<T>* const> gin) {
    if (gin[0]) {
      for (std::size_t i = 0; i < g.size(); ++i) (*gin[0])[i] += wa * g[i];
    }
    if (gin[1]) {
      for (std::size_t i = 0; i < g.size(); ++i) (*gin[1])[i] += wb * g[i];
    }
  });
}

template <typename T>
Var<T> add(const Var<T>& a, const Var<T>& b) {
  Tape<T>& tape = common_tape(a, b);
  const Tensor<T>& av = a.value();
  const Tensor<T>& bv = b.value();
  require_same_shape(av.shape(), bv.shape(), "add");
  Tensor<T> out(av.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] + bv[i];
  return tape.record(std::move(out), {a.id(), b.id()}, [](const Tensor<T>& g, std::span<Tensor<T>* const> gin) {
    for (Tensor<T>* d : gin) {
      if (!d) continue;
      for (std::size_t i = 0; i < g.size(); ++i) (*d)[i] += g[i];
    }
  });
}

template <typename T>
Var<T> mul(const Var<T>& a, const Var<T>& b) {
  Tape<T>& tape = common_tape(a, b);
  const Tensor<T>& av = a.value();
  const Tensor<T>& bv = b.value();
  require_same_shape(av.shape(), bv.shape(), "mul");
  Tensor<T> out(av.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] * bv[i];
  const Tensor<T>* ap = &av;
  const Tensor<T>* bp = &bv;
  return tape.record(std::move(out), {a.id(), b.id()}, [ap, bp](const Tensor<T>& g, std::span<Tensor<T>* const> gin) {
    if (gin[0]) {
      for (std::size_t i = 0; i < g.size(); ++i) (*gin[0])[i] += g[i] * (*bp)[i];
    }
    if (gin[1]) {
      for (std::size_t i = 0; i < g.size(); ++i) (*gin[1])[i] += g[i] * (*ap)[i];
    }
  });
}

template <typename T>
Var<T> scale(const Var<T>& x, T factor) {
  const Tensor<T>& in = x.value();
  Tensor<T> out(in.shape());
  for (std::size_t i = 0; i < in.size(); ++i) out[i] = in[i] * factor;
  return x.tape().record(std::move(out), {x.id()}, [factor](const Tensor<T>& g, std::span<Tensor<T>* const> gin) {
    if (!gin[0]) return;
    for (std::size_t i = 0; i < g.size(); ++i) (*gin[0])[i] += g[i] * factor;
  });
}

template <typename T>
Var<T> sum(const Var<T>& x) {
  const Tensor<T>& in = x.value();
  T total = 0;
  for (T v : in.values()) total += v;
  return x.tape().record(Tensor<T>::scalar(total), {x.id()}, [](const Tensor<T>& g, std::span<Tensor<T>* const> gin) {
    if (!gin[0]) return;
    for (T& d : gin[0]->values()) d += g[0];
  });
}

template <typename T>
Var<T> mean(const Var<T>& x) {
  const Tensor<T>& in = x.value();
  const T count = static_cast<T>(in.size());
  T total = 0;
  for (T v : in.values()) total += v;
  return x.tape().record(Tensor<T>::scalar(total / count), {x.id()},
                         [count](const Tensor<T>& g, std::span<Tensor<T>* const> gin) {
                           if (!gin[0]) return;
                           for (T& d : gin[0]->values()) d += g[0] / count;
                         });
}

template <typename T>
Var<T> select(const Var<T>& x, std::size_t flat_index) {
  const Tensor<T>& in = x.value();
  if (flat_index >= in.size()) {
    throw DimensionError("select: index " + std::to_string(flat_index) + " outside shape " + shape_string(in.shape()));
  }
  return x.tape().record(Tensor<T>::scalar(in[flat_index]), {x.id()},
                         [flat_index](const Tensor<T>& g, std::span<Tensor<T>* const> gin) {
                           if (gin[0]) (*gin[0])[flat_index] += g[0];
                         });
}

#define DKD_INSTANTIATE_OPS(T)                                                                 \
  template Var<T> conv2d(const Var<T>&, const Var<T>&, const Var<T>&, Window, Padding);       \
  template Var<T> maxpool2d(const Var<T>&, Window, Window, Padding);                          \
  template Var<T> dense(const Var<T>&, const Var<T>&, const Var<T>&);                         \
  template Var<T> leaky_relu(const Var<T>&, T);                                               \
  template Var<T> relu(const Var<T>&);                                                        \
  template Var<T> sigmoid(const Var<T>&);                                                     \
  template Var<T> silu(const Var<T>&);                                                        \
  template Var<T> softmax(const Var<T>&);                                                     \
  template Tensor<T> softmax(const Tensor<T>&);                                               \
  template Var<T> log_softmax(const Var<T>&);                                                 \
  template Var<T> dropout(const Var<T>&, T, Mode, Rng*);                                      \
  template Var<T> flatten(const Var<T>&);                                                     \
  template Var<T> global_avg_pool(const Var<T>&);                                             \
  template Var<T> add(const Var<T>&, const Var<T>&);                                          \
  template Var<T> mul(const Var<T>&, const Var<T>&);                                          \
  template Var<T> scale(const Var<T>&, T);                                                    \
  template Var<T> weighted_sum(const Var<T>&, T, const Var<T>&, T);                           \
  template Var<T> sum(const Var<T>&);                                                         \
  template Var<T> mean(const Var<T>&);                                                        \
  template Var<T> select(const Var<T>&, std::size_t);

DKD_INSTANTIATE_OPS(float)
DKD_INSTANTIATE_OPS(double)

#undef DKD_INSTANTIATE_OPS

}  // namespace dkd
