// Copyright (c) modasr authors.
// SPDX-License-Identifier: Apache-2.0

#include "modasr/ops.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace modasr {
namespace {

// Index mapping from an output element to an operand under broadcasting.
// Operands whose shape is a suffix of the output (after dropping leading
// ones) map by modulo; everything else gets an explicit offset table.
struct BroadcastMap {
  std::size_t size = 0;
  bool modulo = true;
  std::vector<std::size_t> table;

  std::size_t operator()(std::size_t i) const { return modulo ? i % size : table[i]; }
};

Shape broadcast_shape(const Shape& a, const Shape& b) {
  const std::size_t rank = std::max(a.size(), b.size());
  Shape out(rank);
  for (std::size_t i = 0; i < rank; ++i) {
    const std::size_t da = i < rank - a.size() ? 1 : a[i - (rank - a.size())];
    const std::size_t db = i < rank - b.size() ? 1 : b[i - (rank - b.size())];
    if (da != db && da != 1 && db != 1) {
      throw ShapeError("shapes " + shape_string(a) + " and " + shape_string(b) +
                       " are not broadcast-compatible");
    }
    out[i] = std::max(da, db);
  }
  return out;
}

BroadcastMap make_map(const Shape& operand, const Shape& out) {
  BroadcastMap m;
  m.size = shape_numel(operand);
  std::size_t lead = 0;
  while (lead < operand.size() && operand[lead] == 1) ++lead;
  const std::size_t tail = operand.size() - lead;
  bool suffix = tail <= out.size();
  for (std::size_t i = 0; suffix && i < tail; ++i) {
    suffix = operand[lead + i] == out[out.size() - tail + i];
  }
  if (suffix) return m;

  m.modulo = false;
  const std::size_t rank = out.size();
  const std::size_t offset = rank - operand.size();
  std::vector<std::size_t> stride(rank, 0);
  std::size_t s = 1;
  for (std::size_t i = operand.size(); i-- > 0;) {
    stride[i + offset] = operand[i] == 1 ? 0 : s;
    s *= operand[i];
  }
  const std::size_t n = shape_numel(out);
  m.table.resize(n);
  std::vector<std::size_t> idx(rank, 0);
  for (std::size_t flat = 0; flat < n; ++flat) {
    std::size_t off = 0;
    for (std::size_t d = 0; d < rank; ++d) off += idx[d] * stride[d];
    m.table[flat] = off;
    for (std::size_t d = rank; d-- > 0;) {
      if (++idx[d] < out[d]) break;
      idx[d] = 0;
    }
  }
  return m;
}

template <typename T>
Tensor<T> binary(ElementOp op, const Tensor<T>& a, const Tensor<T>& b) {
  Shape out_shape = broadcast_shape(a.shape(), b.shape());
  const BroadcastMap ma = make_map(a.shape(), out_shape);
  const BroadcastMap mb = make_map(b.shape(), out_shape);
  const std::size_t n = shape_numel(out_shape);
  const auto da = a.data();
  const auto db = b.data();
  std::vector<T> out(n);
  const char* name = "add";
  switch (op) {
    case ElementOp::Add:
      for (std::size_t i = 0; i < n; ++i) out[i] = da[ma(i)] + db[mb(i)];
      break;
    case ElementOp::Sub:
      name = "sub";
      for (std::size_t i = 0; i < n; ++i) out[i] = da[ma(i)] - db[mb(i)];
      break;
    case ElementOp::Mul:
      name = "mul";
      for (std::size_t i = 0; i < n; ++i) out[i] = da[ma(i)] * db[mb(i)];
      break;
    default:
      throw Error("not a binary op");
  }
  return Tensor<T>::from_op(
      name, std::move(out_shape), std::move(out), {a, b}, [op, ma, mb, n](Node<T>& self) {
        const auto& g = self.grad;
        const auto& va = self.inputs[0]->data;
        const auto& vb = self.inputs[1]->data;
        if (auto* ga = self.input_grad(0)) {
          for (std::size_t i = 0; i < n; ++i) {
            const T d = op == ElementOp::Mul ? vb[mb(i)] : T{1};
            (*ga)[ma(i)] += g[i] * d;
          }
        }
        if (auto* gb = self.input_grad(1)) {
          for (std::size_t i = 0; i < n; ++i) {
            const T d = op == ElementOp::Mul ? va[ma(i)] : (op == ElementOp::Sub ? T{-1} : T{1});
            (*gb)[mb(i)] += g[i] * d;
          }
        }
      });
}

template <typename T>
T sigmoid_scalar(T x) {
  return T{1} / (T{1} + std::exp(-x));
}

template <typename T>
Tensor<T> unary(ElementOp op, const Tensor<T>& x) {
  const auto v = x.data();
  const std::size_t n = v.size();
  std::vector<T> out(n);
  const char* name = "";
  switch (op) {
    case ElementOp::Swish:
      name = "swish";
      for (std::size_t i = 0; i < n; ++i) out[i] = v[i] * sigmoid_scalar(v[i]);
      break;
    case ElementOp::Relu:
      name = "relu";
      for (std::size_t i = 0; i < n; ++i) out[i] = v[i] > T{0} ? v[i] : T{0};
      break;
    case ElementOp::Log:
      name = "log";
      for (std::size_t i = 0; i < n; ++i) out[i] = std::log(v[i]);
      break;
    case ElementOp::Exp:
      name = "exp";
      for (std::size_t i = 0; i < n; ++i) out[i] = std::exp(v[i]);
      break;
    default:
      throw Error("not a unary op");
  }
  return Tensor<T>::from_op(name, x.shape(), std::move(out), {x}, [op, n](Node<T>& self) {
    auto* gx = self.input_grad(0);
    const auto& g = self.grad;
    const auto& v = self.inputs[0]->data;
    const auto& y = self.data;
    for (std::size_t i = 0; i < n; ++i) {
      T d;
      switch (op) {
        case ElementOp::Swish: {
          const T s = sigmoid_scalar(v[i]);
          d = s + v[i] * s * (T{1} - s);
          break;
        }
        case ElementOp::Relu:
          d = v[i] > T{0} ? T{1} : T{0};
          break;
        case ElementOp::Log:
          d = T{1} / v[i];
          break;
        default:
          d = y[i];
          break;
      }
      (*gx)[i] += g[i] * d;
    }
  });
}

std::size_t normalize_axis(int axis, std::size_t rank) {
  const int r = static_cast<int>(rank);
  if (axis < -r || axis >= r) {
    throw ShapeError("axis " + std::to_string(axis) + " invalid for rank " + std::to_string(rank));
  }
  return static_cast<std::size_t>(axis < 0 ? axis + r : axis);
}

struct AxisLayout {
  std::size_t outer, len, inner;
};

AxisLayout axis_layout(const Shape& s, std::size_t axis) {
  AxisLayout l{1, s[axis], 1};
  for (std::size_t i = 0; i < axis; ++i) l.outer *= s[i];
  for (std::size_t i = axis + 1; i < s.size(); ++i) l.inner *= s[i];
  return l;
}

template <typename T>
void require_rank2(const Tensor<T>& x, const char* op) {
  if (x.rank() != 2) {
    throw ShapeError(std::string(op) + " expects a rank-2 tensor, got " + shape_string(x.shape()));
  }
}

}  // namespace

template <typename T>
Tensor<T> elementwise(ElementOp op, const Tensor<T>& a, const Tensor<T>* b) {
  switch (op) {
    case ElementOp::Add:
    case ElementOp::Mul:
    case ElementOp::Sub:
      if (b == nullptr) throw Error("binary elementwise op needs a second operand");
      return binary(op, a, *b);
    default:
      return unary(op, a);
  }
}

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
  return binary(ElementOp::Add, a, b);
}
template <typename T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) {
  return binary(ElementOp::Sub, a, b);
}
template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
  return binary(ElementOp::Mul, a, b);
}

template <typename T>
Tensor<T> scale(const Tensor<T>& a, T factor) {
  std::vector<T> out(a.data().begin(), a.data().end());
  for (auto& v : out) v *= factor;
  return Tensor<T>::from_op("scale", a.shape(), std::move(out), {a}, [factor](Node<T>& self) {
    auto* ga = self.input_grad(0);
    for (std::size_t i = 0; i < self.grad.size(); ++i) (*ga)[i] += self.grad[i] * factor;
  });
}

template <typename T>
Tensor<T> relu(const Tensor<T>& x) {
  return unary(ElementOp::Relu, x);
}
template <typename T>
Tensor<T> swish(const Tensor<T>& x) {
  return unary(ElementOp::Swish, x);
}
template <typename T>
Tensor<T> log(const Tensor<T>& x) {
  return unary(ElementOp::Log, x);
}
template <typename T>
Tensor<T> exp(const Tensor<T>& x) {
  return unary(ElementOp::Exp, x);
}

template <typename T>
Tensor<T> sigmoid(const Tensor<T>& x) {
  std::vector<T> out(x.numel());
  const auto v = x.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = sigmoid_scalar(v[i]);
  return Tensor<T>::from_op("sigmoid", x.shape(), std::move(out), {x}, [](Node<T>& self) {
    auto* gx = self.input_grad(0);
    for (std::size_t i = 0; i < self.grad.size(); ++i) {
      const T y = self.data[i];
      (*gx)[i] += self.grad[i] * y * (T{1} - y);
    }
  });
}

template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
  const bool batched = a.rank() == 3;
  if (!((a.rank() == 2 && b.rank() == 2) || (batched && b.rank() == 3))) {
    throw ShapeError("matmul expects rank-2 or matching rank-3 operands, got " +
                     shape_string(a.shape()) + " and " + shape_string(b.shape()));
  }
  const std::size_t batch = batched ? a.dim(0) : 1;
  const std::size_t m = a.dim(a.rank() - 2), k = a.dim(a.rank() - 1);
  const std::size_t kb = b.dim(b.rank() - 2), n = b.dim(b.rank() - 1);
  if (k != kb || (batched && b.dim(0) != batch)) {
    throw ShapeError("matmul dimension mismatch: " + shape_string(a.shape()) + " x " +
                     shape_string(b.shape()));
  }
  mac::add(static_cast<std::uint64_t>(batch) * m * k * n);
  std::vector<T> out(batch * m * n, T{0});
  const T* pa = a.data().data();
  const T* pb = b.data().data();
  for (std::size_t bi = 0; bi < batch; ++bi) {
    const T* A = pa + bi * m * k;
    const T* B = pb + bi * k * n;
    T* C = out.data() + bi * m * n;
    for (std::size_t i = 0; i < m; ++i) {
      T* crow = C + i * n;
      for (std::size_t p = 0; p < k; ++p) {
        const T av = A[i * k + p];
        if (av == T{0}) continue;
        const T* brow = B + p * n;
        for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
      }
    }
  }
  Shape shape = batched ? Shape{batch, m, n} : Shape{m, n};
  return Tensor<T>::from_op(
      "matmul", std::move(shape), std::move(out), {a, b}, [batch, m, k, n](Node<T>& self) {
        const T* g = self.grad.data();
        const T* A0 = self.inputs[0]->data.data();
        const T* B0 = self.inputs[1]->data.data();
        auto* ga = self.input_grad(0);
        auto* gb = self.input_grad(1);
        for (std::size_t bi = 0; bi < batch; ++bi) {
          const T* G = g + bi * m * n;
          const T* A = A0 + bi * m * k;
          const T* B = B0 + bi * k * n;
          if (ga) {
            T* dA = ga->data() + bi * m * k;
            for (std::size_t i = 0; i < m; ++i) {
              const T* grow = G + i * n;
              for (std::size_t p = 0; p < k; ++p) {
                const T* brow = B + p * n;
                T acc{0};
                for (std::size_t j = 0; j < n; ++j) acc += grow[j] * brow[j];
                dA[i * k + p] += acc;
              }
            }
          }
          if (gb) {
            T* dB = gb->data() + bi * k * n;
            for (std::size_t i = 0; i < m; ++i) {
              const T* grow = G + i * n;
              for (std::size_t p = 0; p < k; ++p) {
                const T av = A[i * k + p];
                if (av == T{0}) continue;
                T* drow = dB + p * n;
                for (std::size_t j = 0; j < n; ++j) drow[j] += av * grow[j];
              }
            }
          }
        }
      });
}

template <typename T>
Tensor<T> transpose(const Tensor<T>& a) {
  if (a.rank() != 2 && a.rank() != 3) {
    throw ShapeError("transpose expects rank 2 or 3, got " + shape_string(a.shape()));
  }
  const std::size_t batch = a.rank() == 3 ? a.dim(0) : 1;
  const std::size_t r = a.dim(a.rank() - 2), c = a.dim(a.rank() - 1);
  std::vector<T> out(a.numel());
  const auto v = a.data();
  for (std::size_t b = 0; b < batch; ++b)
    for (std::size_t i = 0; i < r; ++i)
      for (std::size_t j = 0; j < c; ++j) out[b * r * c + j * r + i] = v[b * r * c + i * c + j];
  Shape shape = a.rank() == 3 ? Shape{batch, c, r} : Shape{c, r};
  return Tensor<T>::from_op("transpose", std::move(shape), std::move(out), {a},
                            [batch, r, c](Node<T>& self) {
                              auto* ga = self.input_grad(0);
                              for (std::size_t b = 0; b < batch; ++b)
                                for (std::size_t i = 0; i < r; ++i)
                                  for (std::size_t j = 0; j < c; ++j)
                                    (*ga)[b * r * c + i * c + j] +=
                                        self.grad[b * r * c + j * r + i];
                            });
}

template <typename T>
Tensor<T> softmax(const Tensor<T>& x, int axis) {
  const std::size_t ax = normalize_axis(axis, x.rank());
  const AxisLayout l = axis_layout(x.shape(), ax);
  const auto v = x.data();
  std::vector<T> out(v.size());
  for (std::size_t o = 0; o < l.outer; ++o) {
    for (std::size_t in = 0; in < l.inner; ++in) {
      const std::size_t base = o * l.len * l.inner + in;
      T mx = -std::numeric_limits<T>::infinity();
      for (std::size_t j = 0; j < l.len; ++j) mx = std::max(mx, v[base + j * l.inner]);
      T total{0};
      for (std::size_t j = 0; j < l.len; ++j) {
        const T e = std::exp(v[base + j * l.inner] - mx);
        out[base + j * l.inner] = e;
        total += e;
      }
      for (std::size_t j = 0; j < l.len; ++j) out[base + j * l.inner] /= total;
    }
  }
  return Tensor<T>::from_op("softmax", x.shape(), std::move(out), {x}, [l](Node<T>& self) {
    auto* gx = self.input_grad(0);
    const auto& y = self.data;
    const auto& g = self.grad;
    for (std::size_t o = 0; o < l.outer; ++o) {
      for (std::size_t in = 0; in < l.inner; ++in) {
        const std::size_t base = o * l.len * l.inner + in;
        T dot{0};
        for (std::size_t j = 0; j < l.len; ++j) {
          const std::size_t i = base + j * l.inner;
          dot += g[i] * y[i];
        }
        for (std::size_t j = 0; j < l.len; ++j) {
          const std::size_t i = base + j * l.inner;
          (*gx)[i] += y[i] * (g[i] - dot);
        }
      }
    }
  });
}

template <typename T>
Tensor<T> log_softmax(const Tensor<T>& x, int axis) {
  const std::size_t ax = normalize_axis(axis, x.rank());
  const AxisLayout l = axis_layout(x.shape(), ax);
  const auto v = x.data();
  std::vector<T> out(v.size());
  for (std::size_t o = 0; o < l.outer; ++o) {
    for (std::size_t in = 0; in < l.inner; ++in) {
      const std::size_t base = o * l.len * l.inner + in;
      T mx = -std::numeric_limits<T>::infinity();
      for (std::size_t j = 0; j < l.len; ++j) mx = std::max(mx, v[base + j * l.inner]);
      T total{0};
      for (std::size_t j = 0; j < l.len; ++j) total += std::exp(v[base + j * l.inner] - mx);
      const T lse = mx + std::log(total);
      for (std::size_t j = 0; j < l.len; ++j) out[base + j * l.inner] = v[base + j * l.inner] - lse;
    }
  }
  return Tensor<T>::from_op("log_softmax", x.shape(), std::move(out), {x}, [l](Node<T>& self) {
    auto* gx = self.input_grad(0);
    const auto& y = self.data;
    const auto& g = self.grad;
    for (std::size_t o = 0; o < l.outer; ++o) {
      for (std::size_t in = 0; in < l.inner; ++in) {
        const std::size_t base = o * l.len * l.inner + in;
        T gsum{0};
        for (std::size_t j = 0; j < l.len; ++j) gsum += g[base + j * l.inner];
        for (std::size_t j = 0; j < l.len; ++j) {
          const std::size_t i = base + j * l.inner;
          (*gx)[i] += g[i] - std::exp(y[i]) * gsum;
        }
      }
    }
  });
}

template <typename T>
Tensor<T> layernorm(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta, T eps) {
  if (x.rank() == 0) throw ShapeError("layernorm on a rank-0 tensor");
  if (!(eps > T{0})) throw Error("layernorm eps must be positive");
  const std::size_t d = x.dim(x.rank() - 1);
  if (gamma.numel() != d || beta.numel() != d) {
    throw ShapeError("layernorm width " + std::to_string(d) + " does not match gamma " +
                     shape_string(gamma.shape()) + " / beta " + shape_string(beta.shape()));
  }
  const std::size_t rows = x.numel() / d;
  const auto v = x.data();
  const auto gm = gamma.data();
  const auto bt = beta.data();
  std::vector<T> xhat(v.size()), rstd(rows), out(v.size());
  for (std::size_t r = 0; r < rows; ++r) {
    const T* row = v.data() + r * d;
    T mu{0};
    for (std::size_t j = 0; j < d; ++j) mu += row[j];
    mu /= static_cast<T>(d);
    T var{0};
    for (std::size_t j = 0; j < d; ++j) var += (row[j] - mu) * (row[j] - mu);
    var /= static_cast<T>(d);
    rstd[r] = T{1} / std::sqrt(var + eps);
    for (std::size_t j = 0; j < d; ++j) {
      const T h = (row[j] - mu) * rstd[r];
      xhat[r * d + j] = h;
      out[r * d + j] = h * gm[j] + bt[j];
    }
  }
  return Tensor<T>::from_op(
      "layernorm", x.shape(), std::move(out), {x, gamma, beta},
      [d, rows, xhat = std::move(xhat), rstd = std::move(rstd)](Node<T>& self) {
        const auto& g = self.grad;
        const auto& gm = self.inputs[1]->data;
        auto* gx = self.input_grad(0);
        auto* gg = self.input_grad(1);
        auto* gb = self.input_grad(2);
        std::vector<T> dh(d);
        for (std::size_t r = 0; r < rows; ++r) {
          const T* grow = g.data() + r * d;
          const T* hrow = xhat.data() + r * d;
          if (gg || gb) {
            for (std::size_t j = 0; j < d; ++j) {
              if (gg) (*gg)[j] += grow[j] * hrow[j];
              if (gb) (*gb)[j] += grow[j];
            }
          }
          if (!gx) continue;
          T mean_dh{0}, mean_dh_h{0};
          for (std::size_t j = 0; j < d; ++j) {
            dh[j] = grow[j] * gm[j];
            mean_dh += dh[j];
            mean_dh_h += dh[j] * hrow[j];
          }
          mean_dh /= static_cast<T>(d);
          mean_dh_h /= static_cast<T>(d);
          for (std::size_t j = 0; j < d; ++j) {
            (*gx)[r * d + j] += rstd[r] * (dh[j] - mean_dh - hrow[j] * mean_dh_h);
          }
        }
      });
}

std::size_t conv1d_output_length(std::size_t length, std::size_t kernel, int stride,
                                 Padding padding) {
  const auto s = static_cast<std::size_t>(stride);
  if (padding == Padding::Same) return (length + s - 1) / s;
  if (kernel > length) return 0;
  return (length - kernel) / s + 1;
}

template <typename T>
Tensor<T> conv1d(const Tensor<T>& x, const Tensor<T>& kernel, int stride, Padding padding,
                 int groups) {
  require_rank2(x, "conv1d input");
  if (kernel.rank() != 3) {
    throw ShapeError("conv1d kernel must be [K, C_in/groups, C_out], got " +
                     shape_string(kernel.shape()));
  }
  if (stride < 1) throw Error("conv1d stride must be >= 1");
  if (groups < 1) throw Error("conv1d groups must be >= 1");
  const std::size_t len = x.dim(0), cin = x.dim(1);
  const std::size_t K = kernel.dim(0), cin_g = kernel.dim(1), cout = kernel.dim(2);
  const auto G = static_cast<std::size_t>(groups);
  if (K < 1) throw ShapeError("conv1d kernel width must be >= 1");
  if (cin % G != 0 || cout % G != 0) {
    throw Error("conv1d groups=" + std::to_string(groups) + " must divide C_in=" +
                std::to_string(cin) + " and C_out=" + std::to_string(cout));
  }
  if (cin / G != cin_g) {
    throw ShapeError("conv1d kernel " + shape_string(kernel.shape()) + " does not match input " +
                     shape_string(x.shape()) + " with groups=" + std::to_string(groups));
  }
  const std::size_t pad_left = padding == Padding::Same ? (K - 1) / 2 : 0;
  const std::size_t padded = padding == Padding::Same ? len + K - 1 : len;
  if (K > padded) {
    throw ShapeError("conv1d kernel width " + std::to_string(K) + " exceeds padded input length " +
                     std::to_string(padded));
  }
  const std::size_t out_len = conv1d_output_length(len, K, stride, padding);
  const std::size_t cout_g = cout / G;
  const auto s = static_cast<std::size_t>(stride);
  mac::add(static_cast<std::uint64_t>(out_len) * K * cin_g * cout);

  const T* xv = x.data().data();
  const T* wv = kernel.data().data();
  std::vector<T> out(out_len * cout, T{0});
  for (std::size_t t = 0; t < out_len; ++t) {
    T* orow = out.data() + t * cout;
    for (std::size_t k = 0; k < K; ++k) {
      const std::ptrdiff_t src = static_cast<std::ptrdiff_t>(t * s + k) -
                                 static_cast<std::ptrdiff_t>(pad_left);
      if (src < 0 || src >= static_cast<std::ptrdiff_t>(len)) continue;
      const T* xrow = xv + static_cast<std::size_t>(src) * cin;
      const T* wk = wv + k * cin_g * cout;
      if (cin_g == 1 && cout_g == 1) {
        for (std::size_t c = 0; c < cout; ++c) orow[c] += xrow[c] * wk[c];
        continue;
      }
      for (std::size_t g = 0; g < G; ++g) {
        for (std::size_t ic = 0; ic < cin_g; ++ic) {
          const T xval = xrow[g * cin_g + ic];
          const T* wrow = wk + ic * cout + g * cout_g;
          T* o = orow + g * cout_g;
          for (std::size_t oc = 0; oc < cout_g; ++oc) o[oc] += xval * wrow[oc];
        }
      }
    }
  }
  return Tensor<T>::from_op(
      "conv1d", Shape{out_len, cout}, std::move(out), {x, kernel},
      [=](Node<T>& self) {
        const T* g = self.grad.data();
        const T* xv = self.inputs[0]->data.data();
        const T* wv = self.inputs[1]->data.data();
        auto* gx = self.input_grad(0);
        auto* gw = self.input_grad(1);
        for (std::size_t t = 0; t < out_len; ++t) {
          const T* grow = g + t * cout;
          for (std::size_t k = 0; k < K; ++k) {
            const std::ptrdiff_t src = static_cast<std::ptrdiff_t>(t * s + k) -
                                       static_cast<std::ptrdiff_t>(pad_left);
            if (src < 0 || src >= static_cast<std::ptrdiff_t>(len)) continue;
            const std::size_t row = static_cast<std::size_t>(src) * cin;
            const T* xrow = xv + row;
            const T* wk = wv + k * cin_g * cout;
            for (std::size_t gi = 0; gi < G; ++gi) {
              for (std::size_t ic = 0; ic < cin_g; ++ic) {
                const std::size_t ci = gi * cin_g + ic;
                const T* wrow = wk + ic * cout + gi * cout_g;
                const T* gg = grow + gi * cout_g;
                if (gx) {
                  T acc{0};
                  for (std::size_t oc = 0; oc < cout_g; ++oc) acc += gg[oc] * wrow[oc];
                  (*gx)[row + ci] += acc;
                }
                if (gw) {
                  T* dw = gw->data() + k * cin_g * cout + ic * cout + gi * cout_g;
                  const T xval = xrow[ci];
                  for (std::size_t oc = 0; oc < cout_g; ++oc) dw[oc] += xval * gg[oc];
                }
              }
            }
          }
        }
      });
}

template <typename T>
Tensor<T> sum(const Tensor<T>& x) {
  T total{0};
  for (T v : x.data()) total += v;
  return Tensor<T>::from_op("sum", Shape{1}, {total}, {x}, [](Node<T>& self) {
    auto* gx = self.input_grad(0);
    for (auto& g : *gx) g += self.grad[0];
  });
}

template <typename T>
Tensor<T> mean(const Tensor<T>& x) {
  return scale(sum(x), T{1} / static_cast<T>(x.numel()));
}

template <typename T>
Tensor<T> mean_rows(const Tensor<T>& x) {
  require_rank2(x, "mean_rows");
  const std::size_t rows = x.dim(0), cols = x.dim(1);
  std::vector<T> out(cols, T{0});
  const auto v = x.data();
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t c = 0; c < cols; ++c) out[c] += v[r * cols + c];
  for (auto& o : out) o /= static_cast<T>(rows);
  return Tensor<T>::from_op("mean_rows", Shape{1, cols}, std::move(out), {x},
                            [rows, cols](Node<T>& self) {
                              auto* gx = self.input_grad(0);
                              const T inv = T{1} / static_cast<T>(rows);
                              for (std::size_t r = 0; r < rows; ++r)
                                for (std::size_t c = 0; c < cols; ++c)
                                  (*gx)[r * cols + c] += self.grad[c] * inv;
                            });
}

template <typename T>
Tensor<T> max_pool_rows(const Tensor<T>& x, std::size_t window) {
  require_rank2(x, "max_pool_rows");
  if (window < 1) throw Error("max_pool_rows window must be >= 1");
  const std::size_t rows = x.dim(0), cols = x.dim(1);
  const std::size_t out_rows = (rows + window - 1) / window;
  const auto v = x.data();
  std::vector<T> out(out_rows * cols);
  std::vector<std::size_t> argmax(out_rows * cols);
  for (std::size_t o = 0; o < out_rows; ++o) {
    for (std::size_t c = 0; c < cols; ++c) {
      std::size_t best = o * window * cols + c;
      for (std::size_t r = o * window; r < std::min(rows, (o + 1) * window); ++r) {
        if (v[r * cols + c] > v[best]) best = r * cols + c;
      }
      out[o * cols + c] = v[best];
      argmax[o * cols + c] = best;
    }
  }
  return Tensor<T>::from_op("max_pool_rows", Shape{out_rows, cols}, std::move(out), {x},
                            [argmax = std::move(argmax)](Node<T>& self) {
                              auto* gx = self.input_grad(0);
                              for (std::size_t i = 0; i < argmax.size(); ++i)
                                (*gx)[argmax[i]] += self.grad[i];
                            });
}

template <typename T>
Tensor<T> reshape(const Tensor<T>& x, Shape shape) {
  if (shape_numel(shape) != x.numel()) {
    throw ShapeError("cannot reshape " + shape_string(x.shape()) + " to " + shape_string(shape));
  }
  std::vector<T> out(x.data().begin(), x.data().end());
  return Tensor<T>::from_op("reshape", std::move(shape), std::move(out), {x}, [](Node<T>& self) {
    auto* gx = self.input_grad(0);
    for (std::size_t i = 0; i < self.grad.size(); ++i) (*gx)[i] += self.grad[i];
  });
}

template <typename T>
Tensor<T> slice_cols(const Tensor<T>& x, std::size_t begin, std::size_t count) {
  require_rank2(x, "slice_cols");
  const std::size_t rows = x.dim(0), cols = x.dim(1);
  if (begin + count > cols) {
    throw ShapeError("slice_cols [" + std::to_string(begin) + ", " + std::to_string(begin + count) +
                     ") out of range for " + shape_string(x.shape()));
  }
  const auto v = x.data();
  std::vector<T> out(rows * count);
  for (std::size_t r = 0; r < rows; ++r)
    std::copy_n(v.data() + r * cols + begin, count, out.data() + r * count);
  return Tensor<T>::from_op("slice_cols", Shape{rows, count}, std::move(out), {x},
                            [rows, cols, begin, count](Node<T>& self) {
                              auto* gx = self.input_grad(0);
                              for (std::size_t r = 0; r < rows; ++r)
                                for (std::size_t c = 0; c < count; ++c)
                                  (*gx)[r * cols + begin + c] += self.grad[r * count + c];
                            });
}

template <typename T>
Tensor<T> concat_cols(const std::vector<Tensor<T>>& parts) {
  if (parts.empty()) throw Error("concat_cols of nothing");
  const std::size_t rows = parts.front().dim(0);
  std::vector<std::size_t> widths;
  std::size_t total = 0;
  for (const auto& p : parts) {
    require_rank2(p, "concat_cols");
    if (p.dim(0) != rows) {
      throw ShapeError("concat_cols row mismatch: " + shape_string(parts.front().shape()) +
                       " vs " + shape_string(p.shape()));
    }
    widths.push_back(p.dim(1));
    total += p.dim(1);
  }
  std::vector<T> out(rows * total);
  std::size_t off = 0;
  for (std::size_t i = 0; i < parts.size(); ++i) {
    const auto v = parts[i].data();
    for (std::size_t r = 0; r < rows; ++r)
      std::copy_n(v.data() + r * widths[i], widths[i], out.data() + r * total + off);
    off += widths[i];
  }
  return Tensor<T>::from_op("concat_cols", Shape{rows, total}, std::move(out), parts,
                            [rows, total, widths](Node<T>& self) {
                              std::size_t off = 0;
                              for (std::size_t i = 0; i < widths.size(); ++i) {
                                if (auto* gi = self.input_grad(i)) {
                                  for (std::size_t r = 0; r < rows; ++r)
                                    for (std::size_t c = 0; c < widths[i]; ++c)
                                      (*gi)[r * widths[i] + c] += self.grad[r * total + off + c];
                                }
                                off += widths[i];
                              }
                            });
}

template <typename T>
Tensor<T> select(const Tensor<T>& x, std::size_t flat_index) {
  if (flat_index >= x.numel()) {
    throw ShapeError("select index " + std::to_string(flat_index) + " out of range for " +
                     shape_string(x.shape()));
  }
  return Tensor<T>::from_op("select", Shape{1}, {x.data()[flat_index]}, {x},
                            [flat_index](Node<T>& self) {
                              (*self.input_grad(0))[flat_index] += self.grad[0];
                            });
}

template <typename T>
Tensor<T> dropout(const Tensor<T>& x, double p, std::mt19937_64& rng) {
  if (p <= 0.0) return x;
  if (p >= 1.0) throw Error("dropout probability must be < 1");
  std::bernoulli_distribution keep(1.0 - p);
  std::vector<T> mask(x.numel());
  const T s = static_cast<T>(1.0 / (1.0 - p));
  for (auto& m : mask) m = keep(rng) ? s : T{0};
  return mul(x, Tensor<T>(x.shape(), std::move(mask)));
}

template <typename T>
Tensor<T> cross_entropy(const Tensor<T>& logits, std::size_t label) {
  if (label >= logits.numel()) {
    throw ShapeError("label " + std::to_string(label) + " out of range for logits " +
                     shape_string(logits.shape()));
  }
  return scale(select(log_softmax(logits, -1), label), T{-1});
}

#define MODASR_INSTANTIATE_OPS(T)                                                          \
  template Tensor<T> elementwise(ElementOp, const Tensor<T>&, const Tensor<T>*);           \
  template Tensor<T> add(const Tensor<T>&, const Tensor<T>&);                              \
  template Tensor<T> sub(const Tensor<T>&, const Tensor<T>&);                              \
  template Tensor<T> mul(const Tensor<T>&, const Tensor<T>&);                              \
  template Tensor<T> scale(const Tensor<T>&, T);                                           \
  template Tensor<T> relu(const Tensor<T>&);                                               \
  template Tensor<T> swish(const Tensor<T>&);                                              \
  template Tensor<T> sigmoid(const Tensor<T>&);                                            \
  template Tensor<T> log(const Tensor<T>&);                                                \
  template Tensor<T> exp(const Tensor<T>&);                                                \
  template Tensor<T> matmul(const Tensor<T>&, const Tensor<T>&);                           \
  template Tensor<T> transpose(const Tensor<T>&);                                          \
  template Tensor<T> softmax(const Tensor<T>&, int);                                       \
  template Tensor<T> log_softmax(const Tensor<T>&, int);                                   \
  template Tensor<T> layernorm(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, T);   \
  template Tensor<T> conv1d(const Tensor<T>&, const Tensor<T>&, int, Padding, int);        \
  template Tensor<T> sum(const Tensor<T>&);                                                \
  template Tensor<T> mean(const Tensor<T>&);                                               \
  template Tensor<T> mean_rows(const Tensor<T>&);                                          \
  template Tensor<T> max_pool_rows(const Tensor<T>&, std::size_t);                         \
  template Tensor<T> reshape(const Tensor<T>&, Shape);                                     \
  template Tensor<T> slice_cols(const Tensor<T>&, std::size_t, std::size_t);               \
  template Tensor<T> concat_cols(const std::vector<Tensor<T>>&);                           \
  template Tensor<T> select(const Tensor<T>&, std::size_t);                                \
  template Tensor<T> dropout(const Tensor<T>&, double, std::mt19937_64&);                  \
  template Tensor<T> cross_entropy(const Tensor<T>&, std::size_t);

MODASR_INSTANTIATE_OPS(float)
MODASR_INSTANTIATE_OPS(double)

#undef MODASR_INSTANTIATE_OPS

}  // namespace modasr
