#include "charadial/numerics/ops.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <limits>

namespace charadial::numerics {

namespace {

template <typename T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MapC = Eigen::Map<const RowMat<T>>;
template <typename T>
using MapM = Eigen::Map<RowMat<T>>;

template <typename T>
void require_same_shape(const Tensor<T>& a, const Tensor<T>& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw ShapeError(std::string(op) + ": shape mismatch " + shape_string(a.shape()) + " vs " +
                     shape_string(b.shape()));
  }
}

template <typename T>
void require_matrix(const Tensor<T>& a, const char* op) {
  if (a.rank() != 2) {
    throw ShapeError(std::string(op) + ": expected a matrix, got " + shape_string(a.shape()));
  }
}

template <typename T>
T sigmoid_scalar(T x) {
  if (x >= T{0}) return T{1} / (T{1} + std::exp(-x));
  T e = std::exp(x);
  return e / (T{1} + e);
}

template <typename T>
void check_finite(std::span<const T> values, const char* op) {
  for (std::size_t i = 0; i < values.size(); ++i) {
    if (!std::isfinite(values[i])) {
      throw NumericError(std::string(op) + ": non-finite input at index " + std::to_string(i));
    }
  }
}

template <typename T, typename Fwd, typename Deriv>
Tensor<T> elementwise(const Tensor<T>& x, Fwd fwd, Deriv deriv) {
  auto in = x.data();
  std::vector<T> out(in.size());
  for (std::size_t i = 0; i < in.size(); ++i) out[i] = fwd(in[i]);
  auto xn = x.node();
  return make_result<T>(x.shape(), std::move(out), {x}, [xn, deriv](const Node<T>& self) {
    if (!xn->requires_grad) return;
    T* g = xn->grad_data();
    for (std::size_t i = 0; i < self.grad.size(); ++i) {
      g[i] += self.grad[i] * deriv(xn->value[i], self.value[i]);
    }
  });
}

}  // namespace

template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
  require_matrix(a, "matmul");
  require_matrix(b, "matmul");
  const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  if (b.dim(0) != k) {
    throw ShapeError("matmul: inner dimensions disagree for " + shape_string(a.shape()) + " x " +
                     shape_string(b.shape()));
  }
  std::vector<T> out(m * n);
  MapM<T>(out.data(), m, n).noalias() =
      MapC<T>(a.data().data(), m, k) * MapC<T>(b.data().data(), k, n);
  auto an = a.node();
  auto bn = b.node();
  return make_result<T>({m, n}, std::move(out), {a, b}, [an, bn, m, k, n](const Node<T>& self) {
    MapC<T> dc(self.grad.data(), m, n);
    if (an->requires_grad) {
      MapM<T>(an->grad_data(), m, k).noalias() += dc * MapC<T>(bn->value.data(), k, n).transpose();
    }
    if (bn->requires_grad) {
      MapM<T>(bn->grad_data(), k, n).noalias() += MapC<T>(an->value.data(), m, k).transpose() * dc;
    }
  });
}

template <typename T>
Tensor<T> matmul_nt(const Tensor<T>& a, const Tensor<T>& b) {
  require_matrix(a, "matmul_nt");
  require_matrix(b, "matmul_nt");
  const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(0);
  if (b.dim(1) != k) {
    throw ShapeError("matmul_nt: inner dimensions disagree for " + shape_string(a.shape()) +
                     " x " + shape_string(b.shape()) + "^T");
  }
  std::vector<T> out(m * n);
  MapM<T>(out.data(), m, n).noalias() =
      MapC<T>(a.data().data(), m, k) * MapC<T>(b.data().data(), n, k).transpose();
  auto an = a.node();
  auto bn = b.node();
  return make_result<T>({m, n}, std::move(out), {a, b}, [an, bn, m, k, n](const Node<T>& self) {
    MapC<T> dc(self.grad.data(), m, n);
    if (an->requires_grad) {
      MapM<T>(an->grad_data(), m, k).noalias() += dc * MapC<T>(bn->value.data(), n, k);
    }
    if (bn->requires_grad) {
      MapM<T>(bn->grad_data(), n, k).noalias() += dc.transpose() * MapC<T>(an->value.data(), m, k);
    }
  });
}

template <typename T>
Tensor<T> transpose(const Tensor<T>& a) {
  require_matrix(a, "transpose");
  const std::size_t r = a.dim(0), c = a.dim(1);
  std::vector<T> out(r * c);
  MapM<T>(out.data(), c, r) = MapC<T>(a.data().data(), r, c).transpose();
  auto an = a.node();
  return make_result<T>({c, r}, std::move(out), {a}, [an, r, c](const Node<T>& self) {
    if (!an->requires_grad) return;
    MapM<T>(an->grad_data(), r, c) += MapC<T>(self.grad.data(), c, r).transpose();
  });
}

template <typename T>
Tensor<T> reshape(const Tensor<T>& a, Shape shape) {
  if (shape_size(shape) != a.size()) {
    throw ShapeError("reshape: cannot view " + shape_string(a.shape()) + " as " +
                     shape_string(shape));
  }
  std::vector<T> out(a.data().begin(), a.data().end());
  auto an = a.node();
  return make_result<T>(std::move(shape), std::move(out), {a}, [an](const Node<T>& self) {
    if (!an->requires_grad) return;
    T* g = an->grad_data();
    for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] += self.grad[i];
  });
}

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
  require_same_shape(a, b, "add");
  std::vector<T> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] + b[i];
  auto an = a.node();
  auto bn = b.node();
  return make_result<T>(a.shape(), std::move(out), {a, b}, [an, bn](const Node<T>& self) {
    for (auto* p : {an.get(), bn.get()}) {
      if (!p->requires_grad) continue;
      T* g = p->grad_data();
      for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] += self.grad[i];
    }
  });
}

template <typename T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) {
  require_same_shape(a, b, "sub");
  std::vector<T> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] - b[i];
  auto an = a.node();
  auto bn = b.node();
  return make_result<T>(a.shape(), std::move(out), {a, b}, [an, bn](const Node<T>& self) {
    if (an->requires_grad) {
      T* g = an->grad_data();
      for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] += self.grad[i];
    }
    if (bn->requires_grad) {
      T* g = bn->grad_data();
      for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] -= self.grad[i];
    }
  });
}

template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
  require_same_shape(a, b, "mul");
  std::vector<T> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] * b[i];
  auto an = a.node();
  auto bn = b.node();
  return make_result<T>(a.shape(), std::move(out), {a, b}, [an, bn](const Node<T>& self) {
    if (an->requires_grad) {
      T* g = an->grad_data();
      for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] += self.grad[i] * bn->value[i];
    }
    if (bn->requires_grad) {
      T* g = bn->grad_data();
      for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] += self.grad[i] * an->value[i];
    }
  });
}

template <typename T>
Tensor<T> scale(const Tensor<T>& a, T factor) {
  std::vector<T> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] * factor;
  auto an = a.node();
  return make_result<T>(a.shape(), std::move(out), {a}, [an, factor](const Node<T>& self) {
    if (!an->requires_grad) return;
    T* g = an->grad_data();
    for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] += self.grad[i] * factor;
  });
}

template <typename T>
Tensor<T> add_row(const Tensor<T>& a, const Tensor<T>& row) {
  const std::size_t c = a.cols(), r = a.rows();
  if (row.size() != c) {
    throw ShapeError("add_row: row of shape " + shape_string(row.shape()) +
                     " does not match columns of " + shape_string(a.shape()));
  }
  std::vector<T> out(a.size());
  auto av = a.data();
  auto rv = row.data();
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < c; ++j) out[i * c + j] = av[i * c + j] + rv[j];
  auto an = a.node();
  auto rn = row.node();
  return make_result<T>(a.shape(), std::move(out), {a, row}, [an, rn, r, c](const Node<T>& self) {
    if (an->requires_grad) {
      T* g = an->grad_data();
      for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] += self.grad[i];
    }
    if (rn->requires_grad) {
      T* g = rn->grad_data();
      for (std::size_t i = 0; i < r; ++i)
        for (std::size_t j = 0; j < c; ++j) g[j] += self.grad[i * c + j];
    }
  });
}

template <typename T>
Tensor<T> linear(const Tensor<T>& x, const Tensor<T>& weight, const Tensor<T>& bias) {
  return add_row(matmul(x, weight), bias);
}

template <typename T>
Tensor<T> silu(const Tensor<T>& x) {
  return elementwise(
      x, [](T v) { return v * sigmoid_scalar(v); },
      [](T v, T) {
        T s = sigmoid_scalar(v);
        return s * (T{1} + v * (T{1} - s));
      });
}

template <typename T>
Tensor<T> gelu(const Tensor<T>& x) {
  // tanh approximation
  constexpr T k = T(0.7978845608028654);  // sqrt(2/pi)
  constexpr T c = T(0.044715);
  return elementwise(
      x, [](T v) { return T(0.5) * v * (T{1} + std::tanh(k * (v + c * v * v * v))); },
      [](T v, T) {
        T inner = k * (v + c * v * v * v);
        T t = std::tanh(inner);
        T dinner = k * (T{1} + T{3} * c * v * v);
        return T(0.5) * (T{1} + t) + T(0.5) * v * (T{1} - t * t) * dinner;
      });
}

template <typename T>
Tensor<T> sigmoid(const Tensor<T>& x) {
  return elementwise(
      x, [](T v) { return sigmoid_scalar(v); }, [](T, T y) { return y * (T{1} - y); });
}

template <typename T>
Tensor<T> softmax(const Tensor<T>& x, std::size_t axis) {
  if (axis >= x.rank()) {
    throw ShapeError("softmax: axis " + std::to_string(axis) + " invalid for shape " +
                     shape_string(x.shape()));
  }
  check_finite(x.data(), "softmax");
  const auto& shape = x.shape();
  std::size_t outer = 1, inner = 1;
  for (std::size_t i = 0; i < axis; ++i) outer *= shape[i];
  for (std::size_t i = axis + 1; i < shape.size(); ++i) inner *= shape[i];
  const std::size_t n = shape[axis];
  auto in = x.data();
  std::vector<T> out(in.size());
  for (std::size_t o = 0; o < outer; ++o) {
    for (std::size_t q = 0; q < inner; ++q) {
      const std::size_t base = o * n * inner + q;
      T mx = -std::numeric_limits<T>::infinity();
      for (std::size_t j = 0; j < n; ++j) mx = std::max(mx, in[base + j * inner]);
      T total{0};
      for (std::size_t j = 0; j < n; ++j) {
        T e = std::exp(in[base + j * inner] - mx);
        out[base + j * inner] = e;
        total += e;
      }
      for (std::size_t j = 0; j < n; ++j) out[base + j * inner] /= total;
    }
  }
  auto xn = x.node();
  return make_result<T>(shape, std::move(out), {x}, [xn, outer, inner, n](const Node<T>& self) {
    if (!xn->requires_grad) return;
    T* g = xn->grad_data();
    for (std::size_t o = 0; o < outer; ++o) {
      for (std::size_t q = 0; q < inner; ++q) {
        const std::size_t base = o * n * inner + q;
        T s{0};
        for (std::size_t j = 0; j < n; ++j) {
          s += self.grad[base + j * inner] * self.value[base + j * inner];
        }
        for (std::size_t j = 0; j < n; ++j) {
          const std::size_t idx = base + j * inner;
          g[idx] += self.value[idx] * (self.grad[idx] - s);
        }
      }
    }
  });
}

template <typename T>
Tensor<T> causal_softmax(const Tensor<T>& scores) {
  require_matrix(scores, "causal_softmax");
  const std::size_t r = scores.dim(0), c = scores.dim(1);
  if (r != c) {
    throw ShapeError("causal_softmax: expected a square matrix, got " +
                     shape_string(scores.shape()));
  }
  check_finite(scores.data(), "causal_softmax");
  auto in = scores.data();
  std::vector<T> out(in.size(), T{0});
  for (std::size_t i = 0; i < r; ++i) {
    const T* row = in.data() + i * c;
    T mx = row[0];
    for (std::size_t j = 1; j <= i; ++j) mx = std::max(mx, row[j]);
    T total{0};
    for (std::size_t j = 0; j <= i; ++j) {
      out[i * c + j] = std::exp(row[j] - mx);
      total += out[i * c + j];
    }
    for (std::size_t j = 0; j <= i; ++j) out[i * c + j] /= total;
  }
  auto xn = scores.node();
  return make_result<T>(scores.shape(), std::move(out), {scores}, [xn, r, c](const Node<T>& self) {
    if (!xn->requires_grad) return;
    T* g = xn->grad_data();
    for (std::size_t i = 0; i < r; ++i) {
      T s{0};
      for (std::size_t j = 0; j <= i; ++j) s += self.grad[i * c + j] * self.value[i * c + j];
      for (std::size_t j = 0; j <= i; ++j) {
        g[i * c + j] += self.value[i * c + j] * (self.grad[i * c + j] - s);
      }
    }
  });
}

template <typename T>
Tensor<T> multi_head_attention(const Tensor<T>& q, const Tensor<T>& k, const Tensor<T>& v,
                               std::size_t heads, bool causal) {
  require_matrix(q, "multi_head_attention");
  require_matrix(k, "multi_head_attention");
  require_same_shape(k, v, "multi_head_attention");
  const std::size_t tq = q.dim(0), tk = k.dim(0), d = q.dim(1);
  if (k.dim(1) != d || heads == 0 || d % heads != 0) {
    throw ShapeError("multi_head_attention: incompatible shapes " + shape_string(q.shape()) + ", " +
                     shape_string(k.shape()) + " with " + std::to_string(heads) + " heads");
  }
  if (causal && tq != tk) throw ShapeError("multi_head_attention: causal attention needs Tq == Tk");
  check_finite(q.data(), "multi_head_attention");
  check_finite(k.data(), "multi_head_attention");

  using Strided = Eigen::Map<const RowMat<T>, 0, Eigen::OuterStride<>>;
  using StridedM = Eigen::Map<RowMat<T>, 0, Eigen::OuterStride<>>;
  const std::size_t dh = d / heads;
  const T inv_sqrt = T{1} / std::sqrt(static_cast<T>(dh));
  auto probs = std::make_shared<std::vector<T>>(heads * tq * tk);
  std::vector<T> out(tq * d);
  for (std::size_t h = 0; h < heads; ++h) {
    Strided qh(q.data().data() + h * dh, tq, dh, Eigen::OuterStride<>(d));
    Strided kh(k.data().data() + h * dh, tk, dh, Eigen::OuterStride<>(d));
    Strided vh(v.data().data() + h * dh, tk, dh, Eigen::OuterStride<>(d));
    MapM<T> p(probs->data() + h * tq * tk, tq, tk);
    p.noalias() = (qh * kh.transpose()) * inv_sqrt;
    for (std::size_t i = 0; i < tq; ++i) {
      const std::size_t visible = causal ? i + 1 : tk;
      T mx = p(i, 0);
      for (std::size_t j = 1; j < visible; ++j) mx = std::max(mx, p(i, j));
      T total = 0;
      for (std::size_t j = 0; j < visible; ++j) {
        p(i, j) = std::exp(p(i, j) - mx);
        total += p(i, j);
      }
      for (std::size_t j = 0; j < visible; ++j) p(i, j) /= total;
      for (std::size_t j = visible; j < tk; ++j) p(i, j) = 0;
    }
    StridedM(out.data() + h * dh, tq, dh, Eigen::OuterStride<>(d)).noalias() = p * vh;
  }
  auto qn = q.node(), kn = k.node(), vn = v.node();
  return make_result<T>(
      {tq, d}, std::move(out), {q, k, v},
      [qn, kn, vn, probs, heads, tq, tk, d, dh, inv_sqrt](const Node<T>& self) {
        RowMat<T> dp(tq, tk);
        for (std::size_t h = 0; h < heads; ++h) {
          Strided dout(self.grad.data() + h * dh, tq, dh, Eigen::OuterStride<>(d));
          Strided qh(qn->value.data() + h * dh, tq, dh, Eigen::OuterStride<>(d));
          Strided kh(kn->value.data() + h * dh, tk, dh, Eigen::OuterStride<>(d));
          Strided vh(vn->value.data() + h * dh, tk, dh, Eigen::OuterStride<>(d));
          MapC<T> p(probs->data() + h * tq * tk, tq, tk);
          if (vn->requires_grad) {
            StridedM(vn->grad_data() + h * dh, tk, dh, Eigen::OuterStride<>(d)).noalias() +=
                p.transpose() * dout;
          }
          if (!qn->requires_grad && !kn->requires_grad) continue;
          dp.noalias() = dout * vh.transpose();
          for (std::size_t i = 0; i < tq; ++i) {
            T inner = 0;
            for (std::size_t j = 0; j < tk; ++j) inner += dp(i, j) * p(i, j);
            for (std::size_t j = 0; j < tk; ++j) dp(i, j) = p(i, j) * (dp(i, j) - inner) * inv_sqrt;
          }
          if (qn->requires_grad) {
            StridedM(qn->grad_data() + h * dh, tq, dh, Eigen::OuterStride<>(d)).noalias() += dp * kh;
          }
          if (kn->requires_grad) {
            StridedM(kn->grad_data() + h * dh, tk, dh, Eigen::OuterStride<>(d)).noalias() +=
                dp.transpose() * qh;
          }
        }
      });
}

template <typename T>
Tensor<T> layer_norm(const Tensor<T>& x, const Tensor<T>& gain, const Tensor<T>& bias,
                     T epsilon) {
  const std::size_t c = x.cols(), r = x.rows();
  if (gain.size() != c || bias.size() != c) {
    throw ShapeError("layer_norm: gain/bias " + shape_string(gain.shape()) + "/" +
                     shape_string(bias.shape()) + " do not match last axis of " +
                     shape_string(x.shape()));
  }
  auto in = x.data();
  auto gv = gain.data();
  auto bv = bias.data();
  std::vector<T> out(in.size());
  std::vector<T> normed(in.size());
  std::vector<T> inv_std(r);
  for (std::size_t i = 0; i < r; ++i) {
    const T* row = in.data() + i * c;
    T mean{0};
    for (std::size_t j = 0; j < c; ++j) mean += row[j];
    mean /= static_cast<T>(c);
    T var{0};
    for (std::size_t j = 0; j < c; ++j) var += (row[j] - mean) * (row[j] - mean);
    var /= static_cast<T>(c);
    inv_std[i] = T{1} / std::sqrt(var + epsilon);
    for (std::size_t j = 0; j < c; ++j) {
      normed[i * c + j] = (row[j] - mean) * inv_std[i];
      out[i * c + j] = normed[i * c + j] * gv[j] + bv[j];
    }
  }
  auto xn = x.node();
  auto gn = gain.node();
  auto bn = bias.node();
  return make_result<T>(
      x.shape(), std::move(out), {x, gain, bias},
      [xn, gn, bn, r, c, normed = std::move(normed), inv_std = std::move(inv_std)](
          const Node<T>& self) {
        if (gn->requires_grad) {
          T* g = gn->grad_data();
          for (std::size_t i = 0; i < r; ++i)
            for (std::size_t j = 0; j < c; ++j) g[j] += self.grad[i * c + j] * normed[i * c + j];
        }
        if (bn->requires_grad) {
          T* g = bn->grad_data();
          for (std::size_t i = 0; i < r; ++i)
            for (std::size_t j = 0; j < c; ++j) g[j] += self.grad[i * c + j];
        }
        if (xn->requires_grad) {
          T* g = xn->grad_data();
          const T inv_c = T{1} / static_cast<T>(c);
          for (std::size_t i = 0; i < r; ++i) {
            T sum_dn{0}, sum_dn_n{0};
            for (std::size_t j = 0; j < c; ++j) {
              T dn = self.grad[i * c + j] * gn->value[j];
              sum_dn += dn;
              sum_dn_n += dn * normed[i * c + j];
            }
            for (std::size_t j = 0; j < c; ++j) {
              T dn = self.grad[i * c + j] * gn->value[j];
              g[i * c + j] +=
                  inv_std[i] * (dn - inv_c * sum_dn - normed[i * c + j] * inv_c * sum_dn_n);
            }
          }
        }
      });
}

template <typename T>
Tensor<T> gather_rows(const Tensor<T>& x, std::span<const std::size_t> indices) {
  const std::size_t c = x.cols(), r = x.rows();
  if (indices.empty()) throw ShapeError("gather_rows: empty index list");
  std::vector<T> out(indices.size() * c);
  auto in = x.data();
  for (std::size_t i = 0; i < indices.size(); ++i) {
    if (indices[i] >= r) {
      throw ShapeError("gather_rows: row " + std::to_string(indices[i]) + " out of range for " +
                       shape_string(x.shape()));
    }
    std::copy_n(in.data() + indices[i] * c, c, out.data() + i * c);
  }
  auto xn = x.node();
  std::vector<std::size_t> idx(indices.begin(), indices.end());
  return make_result<T>({indices.size(), c}, std::move(out), {x},
                        [xn, c, idx = std::move(idx)](const Node<T>& self) {
                          if (!xn->requires_grad) return;
                          T* g = xn->grad_data();
                          for (std::size_t i = 0; i < idx.size(); ++i)
                            for (std::size_t j = 0; j < c; ++j)
                              g[idx[i] * c + j] += self.grad[i * c + j];
                        });
}

template <typename T>
Tensor<T> concat_cols(const std::vector<Tensor<T>>& parts) {
  if (parts.empty()) throw ShapeError("concat_cols: no inputs");
  const std::size_t r = parts.front().rows();
  std::size_t total = 0;
  for (const auto& p : parts) {
    if (p.rows() != r) {
      throw ShapeError("concat_cols: row mismatch " + shape_string(parts.front().shape()) +
                       " vs " + shape_string(p.shape()));
    }
    total += p.cols();
  }
  std::vector<T> out(r * total);
  std::vector<std::size_t> offsets;
  std::size_t off = 0;
  for (const auto& p : parts) {
    offsets.push_back(off);
    const std::size_t pc = p.cols();
    auto pv = p.data();
    for (std::size_t i = 0; i < r; ++i) std::copy_n(pv.data() + i * pc, pc, out.data() + i * total + off);
    off += pc;
  }
  std::vector<std::shared_ptr<Node<T>>> nodes;
  for (const auto& p : parts) nodes.push_back(p.node());
  return make_result<T>({r, total}, std::move(out), parts,
                        [nodes, offsets, r, total](const Node<T>& self) {
                          for (std::size_t k = 0; k < nodes.size(); ++k) {
                            auto& p = *nodes[k];
                            if (!p.requires_grad) continue;
                            const std::size_t pc = p.shape.back();
                            T* g = p.grad_data();
                            for (std::size_t i = 0; i < r; ++i)
                              for (std::size_t j = 0; j < pc; ++j)
                                g[i * pc + j] += self.grad[i * total + offsets[k] + j];
                          }
                        });
}

template <typename T>
Tensor<T> concat_rows(const std::vector<Tensor<T>>& parts) {
  if (parts.empty()) throw ShapeError("concat_rows: no inputs");
  const std::size_t c = parts.front().cols();
  std::size_t total = 0;
  for (const auto& p : parts) {
    if (p.cols() != c) {
      throw ShapeError("concat_rows: column mismatch " + shape_string(parts.front().shape()) +
                       " vs " + shape_string(p.shape()));
    }
    total += p.rows();
  }
  std::vector<T> out;
  out.reserve(total * c);
  for (const auto& p : parts) out.insert(out.end(), p.data().begin(), p.data().end());
  std::vector<std::shared_ptr<Node<T>>> nodes;
  for (const auto& p : parts) nodes.push_back(p.node());
  return make_result<T>({total, c}, std::move(out), parts, [nodes](const Node<T>& self) {
    std::size_t off = 0;
    for (const auto& n : nodes) {
      const std::size_t len = n->value.size();
      if (n->requires_grad) {
        T* g = n->grad_data();
        for (std::size_t i = 0; i < len; ++i) g[i] += self.grad[off + i];
      }
      off += len;
    }
  });
}

template <typename T>
Tensor<T> slice_cols(const Tensor<T>& x, std::size_t start, std::size_t count) {
  const std::size_t c = x.cols(), r = x.rows();
  if (count == 0 || start + count > c) {
    throw ShapeError("slice_cols: [" + std::to_string(start) + ", " +
                     std::to_string(start + count) + ") out of range for " +
                     shape_string(x.shape()));
  }
  std::vector<T> out(r * count);
  auto in = x.data();
  for (std::size_t i = 0; i < r; ++i) std::copy_n(in.data() + i * c + start, count, out.data() + i * count);
  auto xn = x.node();
  return make_result<T>({r, count}, std::move(out), {x}, [xn, r, c, start, count](const Node<T>& self) {
    if (!xn->requires_grad) return;
    T* g = xn->grad_data();
    for (std::size_t i = 0; i < r; ++i)
      for (std::size_t j = 0; j < count; ++j) g[i * c + start + j] += self.grad[i * count + j];
  });
}

template <typename T>
Tensor<T> mean_rows(const Tensor<T>& x) {
  const std::size_t c = x.cols(), r = x.rows();
  std::vector<T> out(c, T{0});
  auto in = x.data();
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < c; ++j) out[j] += in[i * c + j];
  for (auto& v : out) v /= static_cast<T>(r);
  auto xn = x.node();
  return make_result<T>({1, c}, std::move(out), {x}, [xn, r, c](const Node<T>& self) {
    if (!xn->requires_grad) return;
    T* g = xn->grad_data();
    const T inv = T{1} / static_cast<T>(r);
    for (std::size_t i = 0; i < r; ++i)
      for (std::size_t j = 0; j < c; ++j) g[i * c + j] += self.grad[j] * inv;
  });
}

template <typename T>
Tensor<T> max_rows(const Tensor<T>& x) {
  const std::size_t c = x.cols(), r = x.rows();
  if (r == 0) throw NumericError("max_rows of an empty tensor");
  auto in = x.data();
  std::vector<T> out(in.begin(), in.begin() + static_cast<std::ptrdiff_t>(c));
  std::vector<std::size_t> arg(c, 0);
  for (std::size_t i = 1; i < r; ++i)
    for (std::size_t j = 0; j < c; ++j)
      if (in[i * c + j] > out[j]) {
        out[j] = in[i * c + j];
        arg[j] = i;
      }
  auto xn = x.node();
  return make_result<T>({1, c}, std::move(out), {x}, [xn, c, arg = std::move(arg)](const Node<T>& self) {
    if (!xn->requires_grad) return;
    T* g = xn->grad_data();
    for (std::size_t j = 0; j < c; ++j) g[arg[j] * c + j] += self.grad[j];
  });
}

template <typename T>
Tensor<T> sum(const Tensor<T>& x) {
  T total{0};
  for (T v : x.data()) total += v;
  auto xn = x.node();
  return make_result<T>({1}, {total}, {x}, [xn](const Node<T>& self) {
    if (!xn->requires_grad) return;
    T* g = xn->grad_data();
    for (std::size_t i = 0; i < xn->value.size(); ++i) g[i] += self.grad[0];
  });
}

template <typename T>
Tensor<T> dot(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.size() != b.size()) {
    throw ShapeError("dot: size mismatch " + shape_string(a.shape()) + " vs " +
                     shape_string(b.shape()));
  }
  T total{0};
  for (std::size_t i = 0; i < a.size(); ++i) total += a[i] * b[i];
  auto an = a.node();
  auto bn = b.node();
  return make_result<T>({1}, {total}, {a, b}, [an, bn](const Node<T>& self) {
    const T g0 = self.grad[0];
    if (an->requires_grad) {
      T* g = an->grad_data();
      for (std::size_t i = 0; i < an->value.size(); ++i) g[i] += g0 * bn->value[i];
    }
    if (bn->requires_grad) {
      T* g = bn->grad_data();
      for (std::size_t i = 0; i < bn->value.size(); ++i) g[i] += g0 * an->value[i];
    }
  });
}

template <typename T>
Tensor<T> cross_entropy(const Tensor<T>& logits, std::size_t target) {
  if (logits.rows() != 1) {
    throw ShapeError("cross_entropy: expected one row of logits, got " +
                     shape_string(logits.shape()));
  }
  const std::size_t t[1] = {target};
  return cross_entropy_rows(logits, std::span<const std::size_t>(t));
}

template <typename T>
Tensor<T> cross_entropy_rows(const Tensor<T>& logits, std::span<const std::size_t> targets) {
  const std::size_t c = logits.cols(), r = logits.rows();
  if (targets.size() != r) {
    throw ShapeError("cross_entropy_rows: " + std::to_string(targets.size()) + " targets for " +
                     std::to_string(r) + " rows");
  }
  check_finite(logits.data(), "cross_entropy");
  auto in = logits.data();
  std::vector<T> probs(in.size());
  T total{0};
  for (std::size_t i = 0; i < r; ++i) {
    if (targets[i] >= c) {
      throw std::out_of_range("cross_entropy: target " + std::to_string(targets[i]) +
                              " outside [0, " + std::to_string(c) + ")");
    }
    const T* row = in.data() + i * c;
    T mx = *std::max_element(row, row + c);
    T z{0};
    for (std::size_t j = 0; j < c; ++j) {
      probs[i * c + j] = std::exp(row[j] - mx);
      z += probs[i * c + j];
    }
    for (std::size_t j = 0; j < c; ++j) probs[i * c + j] /= z;
    total += -(row[targets[i]] - mx - std::log(z));
  }
  auto xn = logits.node();
  std::vector<std::size_t> tg(targets.begin(), targets.end());
  return make_result<T>({1}, {total}, {logits},
                        [xn, r, c, probs = std::move(probs), tg = std::move(tg)](const Node<T>& self) {
                          if (!xn->requires_grad) return;
                          T* g = xn->grad_data();
                          const T g0 = self.grad[0];
                          for (std::size_t i = 0; i < r; ++i) {
                            for (std::size_t j = 0; j < c; ++j) g[i * c + j] += g0 * probs[i * c + j];
                            g[i * c + tg[i]] -= g0;
                          }
                        });
}

template <typename T>
Tensor<T> bce_with_logits(const Tensor<T>& logit, T label) {
  if (logit.size() != 1) {
    throw ShapeError("bce_with_logits: expected a single logit, got " + shape_string(logit.shape()));
  }
  const T z = logit[0];
  // softplus(z) - label * z, computed stably
  const T loss = std::max(z, T{0}) - label * z + std::log1p(std::exp(-std::abs(z)));
  auto xn = logit.node();
  return make_result<T>({1}, {loss}, {logit}, [xn, z, label](const Node<T>& self) {
    if (!xn->requires_grad) return;
    xn->grad_data()[0] += self.grad[0] * (sigmoid_scalar(z) - label);
  });
}

template <typename T>
Tensor<T> dropout(const Tensor<T>& x, T rate, std::mt19937_64& rng) {
  if (rate <= T{0}) return x;
  if (rate >= T{1}) throw std::invalid_argument("dropout: rate must be < 1");
  std::vector<T> mask(x.size());
  const T keep = T{1} / (T{1} - rate);
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  for (auto& m : mask) m = unif(rng) < static_cast<double>(rate) ? T{0} : keep;
  return mul(x, Tensor<T>(x.shape(), std::move(mask)));
}

#define CHARADIAL_INSTANTIATE(T)                                                              \
  template Tensor<T> matmul(const Tensor<T>&, const Tensor<T>&);                              \
  template Tensor<T> matmul_nt(const Tensor<T>&, const Tensor<T>&);                           \
  template Tensor<T> transpose(const Tensor<T>&);                                             \
  template Tensor<T> reshape(const Tensor<T>&, Shape);                                        \
  template Tensor<T> add(const Tensor<T>&, const Tensor<T>&);                                 \
  template Tensor<T> sub(const Tensor<T>&, const Tensor<T>&);                                 \
  template Tensor<T> mul(const Tensor<T>&, const Tensor<T>&);                                 \
  template Tensor<T> scale(const Tensor<T>&, T);                                              \
  template Tensor<T> add_row(const Tensor<T>&, const Tensor<T>&);                             \
  template Tensor<T> linear(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&);            \
  template Tensor<T> silu(const Tensor<T>&);                                                  \
  template Tensor<T> gelu(const Tensor<T>&);                                                  \
  template Tensor<T> sigmoid(const Tensor<T>&);                                               \
  template Tensor<T> softmax(const Tensor<T>&, std::size_t);                                  \
  template Tensor<T> causal_softmax(const Tensor<T>&);                                        \
  template Tensor<T> layer_norm(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, T);     \
  template Tensor<T> multi_head_attention(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, \
                                          std::size_t, bool);                                 \
  template Tensor<T> gather_rows(const Tensor<T>&, std::span<const std::size_t>);             \
  template Tensor<T> concat_cols(const std::vector<Tensor<T>>&);                              \
  template Tensor<T> concat_rows(const std::vector<Tensor<T>>&);                              \
  template Tensor<T> slice_cols(const Tensor<T>&, std::size_t, std::size_t);                  \
  template Tensor<T> mean_rows(const Tensor<T>&);                                             \
  template Tensor<T> max_rows(const Tensor<T>&);                                              \
  template Tensor<T> sum(const Tensor<T>&);                                                   \
  template Tensor<T> dot(const Tensor<T>&, const Tensor<T>&);                                 \
  template Tensor<T> cross_entropy(const Tensor<T>&, std::size_t);                            \
  template Tensor<T> cross_entropy_rows(const Tensor<T>&, std::span<const std::size_t>);      \
  template Tensor<T> bce_with_logits(const Tensor<T>&, T);                                    \
  template Tensor<T> dropout(const Tensor<T>&, T, std::mt19937_64&);

CHARADIAL_INSTANTIATE(float)
CHARADIAL_INSTANTIATE(double)

#undef CHARADIAL_INSTANTIATE

}  // namespace charadial::numerics
