#include "hcft/ops.hpp"

#include <algorithm>
#include <cmath>

#include "hcft/error.hpp"
#include "gemm.hpp"

namespace hcft {

namespace detail {

template <typename T>
Tensor<T> make_op(Shape shape, std::vector<T> value,
                  std::vector<std::shared_ptr<Node<T>>> inputs,
                  std::function<void(Node<T>&)> backward_fn) {
  auto node = std::make_shared<Node<T>>();
  node->shape = std::move(shape);
  node->value = std::move(value);
  node->leaf = false;
  bool needs = false;
  for (const auto& in : inputs) {
    if (in && in->requires_grad) { needs = true; break; }
  }
  if (needs) {
    node->requires_grad = true;
    node->inputs = std::move(inputs);
    node->backward_fn = std::move(backward_fn);
  }
  return Tensor<T>::from_node(std::move(node));
}

template Tensor<float> make_op<float>(Shape, std::vector<float>,
                                      std::vector<std::shared_ptr<Node<float>>>,
                                      std::function<void(Node<float>&)>);
template Tensor<double> make_op<double>(Shape, std::vector<double>,
                                        std::vector<std::shared_ptr<Node<double>>>,
                                        std::function<void(Node<double>&)>);

} // namespace detail

namespace {

enum class BcKind { Same, BSmall, ASmall };

struct BinPlan {
  Shape out;
  BcKind kind = BcKind::Same;
  std::size_t small_n = 0; // element count of the tiled operand
  std::size_t tiles = 1;
};

bool is_trailing_suffix(const Shape& small, const Shape& big) {
  if (numel(small) == 1) return true;
  if (small.size() > big.size()) return false;
  for (std::size_t i = 0; i < small.size(); ++i) {
    if (small[small.size() - 1 - i] != big[big.size() - 1 - i]) return false;
  }
  return true;
}

BinPlan bin_plan(const Shape& a, const Shape& b) {
  BinPlan p;
  if (a == b) {
    p.out = a;
    p.kind = BcKind::Same;
    p.small_n = numel(a);
    p.tiles = 1;
    return p;
  }
  const std::size_t na = numel(a), nb = numel(b);
  if (nb <= na && is_trailing_suffix(b, a)) {
    p.out = a;
    p.kind = BcKind::BSmall;
    p.small_n = nb;
    p.tiles = na / nb;
    return p;
  }
  if (na <= nb && is_trailing_suffix(a, b)) {
    p.out = b;
    p.kind = BcKind::ASmall;
    p.small_n = na;
    p.tiles = nb / na;
    return p;
  }
  raise(Err::ShapeMismatch,
        "cannot broadcast " + shape_str(a) + " with " + shape_str(b));
}

// grad of the tiled operand: sum the incoming gradient over tiles
template <typename T>
void reduce_tiles(std::vector<T>& dst, const std::vector<T>& g,
                  std::size_t tiles, std::size_t small_n, T sign) {
  for (std::size_t t = 0; t < tiles; ++t) {
    const T* gr = g.data() + t * small_n;
    for (std::size_t j = 0; j < small_n; ++j) dst[j] += sign * gr[j];
  }
}

} // namespace

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
  const BinPlan p = bin_plan(a.shape(), b.shape());
  const auto& av = a.values();
  const auto& bv = b.values();
  std::vector<T> out(numel(p.out));
  switch (p.kind) {
    case BcKind::Same:
      for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] + bv[i];
      break;
    case BcKind::BSmall:
      for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] + bv[i % p.small_n];
      break;
    case BcKind::ASmall:
      for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i % p.small_n] + bv[i];
      break;
  }
  return detail::make_op<T>(p.out, std::move(out), {a.node(), b.node()},
                            [p](detail::Node<T>& n) {
    auto& A = *n.inputs[0];
    auto& B = *n.inputs[1];
    if (A.requires_grad) {
      A.ensure_grad();
      if (p.kind == BcKind::ASmall) {
        reduce_tiles(A.grad, n.grad, p.tiles, p.small_n, T(1));
      } else {
        for (std::size_t i = 0; i < n.grad.size(); ++i) A.grad[i] += n.grad[i];
      }
    }
    if (B.requires_grad) {
      B.ensure_grad();
      if (p.kind == BcKind::BSmall) {
        reduce_tiles(B.grad, n.grad, p.tiles, p.small_n, T(1));
      } else {
        for (std::size_t i = 0; i < n.grad.size(); ++i) B.grad[i] += n.grad[i];
      }
    }
  });
}

template <typename T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) {
  const BinPlan p = bin_plan(a.shape(), b.shape());
  const auto& av = a.values();
  const auto& bv = b.values();
  std::vector<T> out(numel(p.out));
  switch (p.kind) {
    case BcKind::Same:
      for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] - bv[i];
      break;
    case BcKind::BSmall:
      for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] - bv[i % p.small_n];
      break;
    case BcKind::ASmall:
      for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i % p.small_n] - bv[i];
      break;
  }
  return detail::make_op<T>(p.out, std::move(out), {a.node(), b.node()},
                            [p](detail::Node<T>& n) {
    auto& A = *n.inputs[0];
    auto& B = *n.inputs[1];
    if (A.requires_grad) {
      A.ensure_grad();
      if (p.kind == BcKind::ASmall) {
        reduce_tiles(A.grad, n.grad, p.tiles, p.small_n, T(1));
      } else {
        for (std::size_t i = 0; i < n.grad.size(); ++i) A.grad[i] += n.grad[i];
      }
    }
    if (B.requires_grad) {
      B.ensure_grad();
      if (p.kind == BcKind::BSmall) {
        reduce_tiles(B.grad, n.grad, p.tiles, p.small_n, T(-1));
      } else {
        for (std::size_t i = 0; i < n.grad.size(); ++i) B.grad[i] -= n.grad[i];
      }
    }
  });
}

template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
  const BinPlan p = bin_plan(a.shape(), b.shape());
  const auto& av = a.values();
  const auto& bv = b.values();
  std::vector<T> out(numel(p.out));
  switch (p.kind) {
    case BcKind::Same:
      for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] * bv[i];
      break;
    case BcKind::BSmall:
      for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] * bv[i % p.small_n];
      break;
    case BcKind::ASmall:
      for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i % p.small_n] * bv[i];
      break;
  }
  return detail::make_op<T>(p.out, std::move(out), {a.node(), b.node()},
                            [p](detail::Node<T>& n) {
    auto& A = *n.inputs[0];
    auto& B = *n.inputs[1];
    const auto& g = n.grad;
    if (A.requires_grad) {
      A.ensure_grad();
      switch (p.kind) {
        case BcKind::Same:
          for (std::size_t i = 0; i < g.size(); ++i) A.grad[i] += g[i] * B.value[i];
          break;
        case BcKind::BSmall:
          for (std::size_t i = 0; i < g.size(); ++i)
            A.grad[i] += g[i] * B.value[i % p.small_n];
          break;
        case BcKind::ASmall:
          for (std::size_t i = 0; i < g.size(); ++i)
            A.grad[i % p.small_n] += g[i] * B.value[i];
          break;
      }
    }
    if (B.requires_grad) {
      B.ensure_grad();
      switch (p.kind) {
        case BcKind::Same:
          for (std::size_t i = 0; i < g.size(); ++i) B.grad[i] += g[i] * A.value[i];
          break;
        case BcKind::BSmall:
          for (std::size_t i = 0; i < g.size(); ++i)
            B.grad[i % p.small_n] += g[i] * A.value[i];
          break;
        case BcKind::ASmall:
          for (std::size_t i = 0; i < g.size(); ++i)
            B.grad[i] += g[i] * A.value[i % p.small_n];
          break;
      }
    }
  });
}

template <typename T>
Tensor<T> neg(const Tensor<T>& a) {
  std::vector<T> out(a.values());
  for (auto& v : out) v = -v;
  return detail::make_op<T>(a.shape(), std::move(out), {a.node()},
                            [](detail::Node<T>& n) {
    auto& A = *n.inputs[0];
    if (!A.requires_grad) return;
    A.ensure_grad();
    for (std::size_t i = 0; i < n.grad.size(); ++i) A.grad[i] -= n.grad[i];
  });
}

template <typename T>
Tensor<T> scale(const Tensor<T>& a, T c) {
  std::vector<T> out(a.values());
  for (auto& v : out) v *= c;
  return detail::make_op<T>(a.shape(), std::move(out), {a.node()},
                            [c](detail::Node<T>& n) {
    auto& A = *n.inputs[0];
    if (!A.requires_grad) return;
    A.ensure_grad();
    for (std::size_t i = 0; i < n.grad.size(); ++i) A.grad[i] += c * n.grad[i];
  });
}

template <typename T>
Tensor<T> tanh(const Tensor<T>& a) {
  std::vector<T> out(a.values());
  for (auto& v : out) v = std::tanh(v);
  return detail::make_op<T>(a.shape(), std::move(out), {a.node()},
                            [](detail::Node<T>& n) {
    auto& A = *n.inputs[0];
    if (!A.requires_grad) return;
    A.ensure_grad();
    for (std::size_t i = 0; i < n.grad.size(); ++i) {
      const T y = n.value[i];
      A.grad[i] += n.grad[i] * (T(1) - y * y);
    }
  });
}

template <typename T>
Tensor<T> gelu(const Tensor<T>& a) {
  const T inv_sqrt2 = T(0.7071067811865475244);
  const T inv_sqrt_2pi = T(0.3989422804014326779);
  std::vector<T> out(a.values());
  for (auto& v : out) {
    const T cdf = T(0.5) * (T(1) + std::erf(v * inv_sqrt2));
    v = v * cdf;
  }
  return detail::make_op<T>(a.shape(), std::move(out), {a.node()},
                            [inv_sqrt2, inv_sqrt_2pi](detail::Node<T>& n) {
    auto& A = *n.inputs[0];
    if (!A.requires_grad) return;
    A.ensure_grad();
    for (std::size_t i = 0; i < n.grad.size(); ++i) {
      const T x = A.value[i];
      const T cdf = T(0.5) * (T(1) + std::erf(x * inv_sqrt2));
      const T pdf = inv_sqrt_2pi * std::exp(T(-0.5) * x * x);
      A.grad[i] += n.grad[i] * (cdf + x * pdf);
    }
  });
}

template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.rank() < 2 || b.rank() < 2) {
    raise(Err::ShapeMismatch, "matmul needs rank >= 2, got " +
                                  shape_str(a.shape()) + " x " + shape_str(b.shape()));
  }
  const Shape& as = a.shape();
  const Shape& bs = b.shape();
  const std::size_t m = as[as.size() - 2];
  const std::size_t k = as[as.size() - 1];
  const bool b_shared = (bs.size() == 2);
  std::size_t batches = 1;
  for (std::size_t i = 0; i + 2 < as.size(); ++i) batches *= as[i];
  if (b_shared) {
    if (bs[0] != k) {
      raise(Err::ShapeMismatch, "matmul inner dims " + shape_str(as) + " x " + shape_str(bs));
    }
  } else {
    if (bs.size() != as.size() ||
        !std::equal(as.begin(), as.end() - 2, bs.begin()) || bs[bs.size() - 2] != k) {
      raise(Err::ShapeMismatch, "matmul " + shape_str(as) + " x " + shape_str(bs));
    }
  }
  const std::size_t n = bs[bs.size() - 1];
  Shape out_shape(as.begin(), as.end() - 2);
  out_shape.push_back(m);
  out_shape.push_back(n);

  std::vector<T> out(batches * m * n, T(0));
  const T* av = a.values().data();
  const T* bv = b.values().data();
  if (b_shared) {
    detail::gemm_acc(av, bv, out.data(), batches * m, k, n);
  } else {
    for (std::size_t l = 0; l < batches; ++l) {
      detail::gemm_acc(av + l * m * k, bv + l * k * n, out.data() + l * m * n, m, k, n);
    }
  }
  return detail::make_op<T>(std::move(out_shape), std::move(out), {a.node(), b.node()},
                            [m, k, n, batches, b_shared](detail::Node<T>& nd) {
    auto& A = *nd.inputs[0];
    auto& B = *nd.inputs[1];
    const T* g = nd.grad.data();
    if (A.requires_grad) {
      A.ensure_grad();
      if (b_shared) {
        detail::gemm_nt_acc(g, B.value.data(), A.grad.data(), batches * m, n, k);
      } else {
        for (std::size_t l = 0; l < batches; ++l) {
          detail::gemm_nt_acc(g + l * m * n, B.value.data() + l * k * n,
                              A.grad.data() + l * m * k, m, n, k);
        }
      }
    }
    if (B.requires_grad) {
      B.ensure_grad();
      if (b_shared) {
        detail::gemm_tn_acc(A.value.data(), g, B.grad.data(), batches * m, k, n);
      } else {
        for (std::size_t l = 0; l < batches; ++l) {
          detail::gemm_tn_acc(A.value.data() + l * m * k, g + l * m * n,
                              B.grad.data() + l * k * n, m, k, n);
        }
      }
    }
  });
}

template <typename T>
Tensor<T> softmax_lastdim(const Tensor<T>& x) {
  const std::size_t w = x.dim(x.rank() - 1);
  const std::size_t rows = x.size() / w;
  std::vector<T> out(x.size());
  const T* xv = x.values().data();
  for (std::size_t r = 0; r < rows; ++r) {
    const T* in = xv + r * w;
    T* o = out.data() + r * w;
    T mx = in[0];
    for (std::size_t j = 1; j < w; ++j) mx = std::max(mx, in[j]);
    T s = T(0);
    for (std::size_t j = 0; j < w; ++j) {
      o[j] = std::exp(in[j] - mx);
      s += o[j];
    }
    const T inv = T(1) / s;
    for (std::size_t j = 0; j < w; ++j) o[j] *= inv;
  }
  return detail::make_op<T>(x.shape(), std::move(out), {x.node()},
                            [w, rows](detail::Node<T>& n) {
    auto& A = *n.inputs[0];
    if (!A.requires_grad) return;
    A.ensure_grad();
    for (std::size_t r = 0; r < rows; ++r) {
      const T* y = n.value.data() + r * w;
      const T* g = n.grad.data() + r * w;
      T* d = A.grad.data() + r * w;
      T dot = T(0);
      for (std::size_t j = 0; j < w; ++j) dot += g[j] * y[j];
      for (std::size_t j = 0; j < w; ++j) d[j] += (g[j] - dot) * y[j];
    }
  });
}

template <typename T>
Tensor<T> sum(const Tensor<T>& x) {
  T s = T(0);
  for (const T v : x.values()) s += v;
  return detail::make_op<T>({1}, {s}, {x.node()}, [](detail::Node<T>& n) {
    auto& A = *n.inputs[0];
    if (!A.requires_grad) return;
    A.ensure_grad();
    const T g = n.grad[0];
    for (auto& d : A.grad) d += g;
  });
}

template <typename T>
Tensor<T> mean(const Tensor<T>& x) {
  T s = T(0);
  for (const T v : x.values()) s += v;
  const T inv = T(1) / T(x.size());
  return detail::make_op<T>({1}, {s * inv}, {x.node()}, [inv](detail::Node<T>& n) {
    auto& A = *n.inputs[0];
    if (!A.requires_grad) return;
    A.ensure_grad();
    const T g = n.grad[0] * inv;
    for (auto& d : A.grad) d += g;
  });
}

template <typename T>
Tensor<T> reshape(const Tensor<T>& x, Shape shape) {
  if (numel(shape) != x.size()) {
    raise(Err::ShapeMismatch,
          "reshape " + shape_str(x.shape()) + " -> " + shape_str(shape));
  }
  std::vector<T> out(x.values());
  return detail::make_op<T>(std::move(shape), std::move(out), {x.node()},
                            [](detail::Node<T>& n) {
    auto& A = *n.inputs[0];
    if (!A.requires_grad) return;
    A.ensure_grad();
    for (std::size_t i = 0; i < n.grad.size(); ++i) A.grad[i] += n.grad[i];
  });
}

template <typename T>
Tensor<T> transpose_last2(const Tensor<T>& x) {
  if (x.rank() < 2) raise(Err::ShapeMismatch, "transpose needs rank >= 2");
  const Shape& s = x.shape();
  const std::size_t X = s[s.size() - 2];
  const std::size_t Y = s[s.size() - 1];
  std::size_t batches = 1;
  for (std::size_t i = 0; i + 2 < s.size(); ++i) batches *= s[i];
  Shape out_shape = s;
  std::swap(out_shape[out_shape.size() - 2], out_shape[out_shape.size() - 1]);
  std::vector<T> out(x.size());
  const T* xv = x.values().data();
  for (std::size_t l = 0; l < batches; ++l) {
    const T* in = xv + l * X * Y;
    T* o = out.data() + l * X * Y;
    for (std::size_t i = 0; i < X; ++i)
      for (std::size_t j = 0; j < Y; ++j) o[j * X + i] = in[i * Y + j];
  }
  return detail::make_op<T>(std::move(out_shape), std::move(out), {x.node()},
                            [batches, X, Y](detail::Node<T>& n) {
    auto& A = *n.inputs[0];
    if (!A.requires_grad) return;
    A.ensure_grad();
    for (std::size_t l = 0; l < batches; ++l) {
      const T* g = n.grad.data() + l * X * Y;
      T* d = A.grad.data() + l * X * Y;
      for (std::size_t i = 0; i < X; ++i)
        for (std::size_t j = 0; j < Y; ++j) d[i * Y + j] += g[j * X + i];
    }
  });
}

template <typename T>
Tensor<T> swap_axes12(const Tensor<T>& x) {
  if (x.rank() < 3) raise(Err::ShapeMismatch, "swap_axes12 needs rank >= 3");
  const Shape& s = x.shape();
  const std::size_t A = s[0], X = s[1], Y = s[2];
  std::size_t E = 1;
  for (std::size_t i = 3; i < s.size(); ++i) E *= s[i];
  Shape out_shape = s;
  std::swap(out_shape[1], out_shape[2]);
  std::vector<T> out(x.size());
  const T* xv = x.values().data();
  for (std::size_t a = 0; a < A; ++a) {
    for (std::size_t i = 0; i < X; ++i) {
      for (std::size_t j = 0; j < Y; ++j) {
        const T* src = xv + ((a * X + i) * Y + j) * E;
        T* dst = out.data() + ((a * Y + j) * X + i) * E;
        std::copy(src, src + E, dst);
      }
    }
  }
  return detail::make_op<T>(std::move(out_shape), std::move(out), {x.node()},
                            [A, X, Y, E](detail::Node<T>& n) {
    auto& In = *n.inputs[0];
    if (!In.requires_grad) return;
    In.ensure_grad();
    for (std::size_t a = 0; a < A; ++a) {
      for (std::size_t i = 0; i < X; ++i) {
        for (std::size_t j = 0; j < Y; ++j) {
          const T* g = n.grad.data() + ((a * Y + j) * X + i) * E;
          T* d = In.grad.data() + ((a * X + i) * Y + j) * E;
          for (std::size_t e = 0; e < E; ++e) d[e] += g[e];
        }
      }
    }
  });
}

template <typename T>
Tensor<T> concat_axis1(const std::vector<Tensor<T>>& parts) {
  if (parts.empty()) raise(Err::ShapeMismatch, "concat of zero tensors");
  const Shape& first = parts[0].shape();
  if (first.size() != 3) raise(Err::ShapeMismatch, "concat expects rank-3 inputs");
  const std::size_t B = first[0];
  const std::size_t D = first[2];
  std::size_t total = 0;
  std::vector<std::size_t> tokens(parts.size());
  for (std::size_t i = 0; i < parts.size(); ++i) {
    const Shape& s = parts[i].shape();
    if (s.size() != 3 || s[0] != B || s[2] != D) {
      raise(Err::ShapeMismatch,
            "concat operand " + shape_str(s) + " vs " + shape_str(first));
    }
    tokens[i] = s[1];
    total += s[1];
  }
  std::vector<T> out(B * total * D);
  std::size_t off = 0;
  for (std::size_t i = 0; i < parts.size(); ++i) {
    const T* src = parts[i].values().data();
    const std::size_t P = tokens[i];
    for (std::size_t b = 0; b < B; ++b) {
      std::copy(src + b * P * D, src + (b + 1) * P * D,
                out.data() + (b * total + off) * D);
    }
    off += P;
  }
  std::vector<std::shared_ptr<detail::Node<T>>> nodes;
  nodes.reserve(parts.size());
  for (const auto& p : parts) nodes.push_back(p.node());
  return detail::make_op<T>({B, total, D}, std::move(out), std::move(nodes),
                            [B, D, total, tokens](detail::Node<T>& n) {
    std::size_t off2 = 0;
    for (std::size_t i = 0; i < n.inputs.size(); ++i) {
      auto& A = *n.inputs[i];
      const std::size_t P = tokens[i];
      if (A.requires_grad) {
        A.ensure_grad();
        for (std::size_t b = 0; b < B; ++b) {
          const T* g = n.grad.data() + (b * total + off2) * D;
          T* d = A.grad.data() + b * P * D;
          for (std::size_t j = 0; j < P * D; ++j) d[j] += g[j];
        }
      }
      off2 += P;
    }
  });
}

#define HCFT_INSTANTIATE_OPS(T)                                              \
  template Tensor<T> add<T>(const Tensor<T>&, const Tensor<T>&);             \
  template Tensor<T> sub<T>(const Tensor<T>&, const Tensor<T>&);             \
  template Tensor<T> mul<T>(const Tensor<T>&, const Tensor<T>&);             \
  template Tensor<T> neg<T>(const Tensor<T>&);                               \
  template Tensor<T> scale<T>(const Tensor<T>&, T);                          \
  template Tensor<T> tanh<T>(const Tensor<T>&);                              \
  template Tensor<T> gelu<T>(const Tensor<T>&);                              \
  template Tensor<T> matmul<T>(const Tensor<T>&, const Tensor<T>&);          \
  template Tensor<T> softmax_lastdim<T>(const Tensor<T>&);                   \
  template Tensor<T> sum<T>(const Tensor<T>&);                               \
  template Tensor<T> mean<T>(const Tensor<T>&);                              \
  template Tensor<T> reshape<T>(const Tensor<T>&, Shape);                    \
  template Tensor<T> transpose_last2<T>(const Tensor<T>&);                   \
  template Tensor<T> swap_axes12<T>(const Tensor<T>&);                       \
  template Tensor<T> concat_axis1<T>(const std::vector<Tensor<T>>&);

HCFT_INSTANTIATE_OPS(float)
HCFT_INSTANTIATE_OPS(double)

#undef HCFT_INSTANTIATE_OPS

} // namespace hcft
