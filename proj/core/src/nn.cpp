#include "hcft/nn.hpp"

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstring>

#include "gemm.hpp"
#include "hcft/error.hpp"
#include "hcft/threading.hpp"

namespace hcft {

namespace {

struct AxisGeom {
  std::size_t out = 0;
  std::size_t pad_before = 0;
};

AxisGeom axis_geom(std::size_t len, std::size_t k, std::size_t s, Pad pad) {
  if (k == 0 || s == 0) raise(Err::ShapeMismatch, "kernel and stride must be >= 1");
  AxisGeom g;
  if (pad == Pad::Valid) {
    if (k > len) {
      raise(Err::KernelTooLarge,
            "kernel " + std::to_string(k) + " exceeds extent " + std::to_string(len));
    }
    g.out = (len - k) / s + 1;
  } else {
    g.out = (len + s - 1) / s;
    const std::size_t span = (g.out - 1) * s + k;
    g.pad_before = (span > len ? span - len : 0) / 2;
  }
  return g;
}

template <typename T>
Tensor<T> uniform_fan(Shape shape, std::size_t fan_in, std::mt19937_64& rng) {
  const T bound = T(1) / std::sqrt(T(fan_in));
  Tensor<T> t = Tensor<T>::uniform(std::move(shape), -bound, bound, rng);
  t.set_requires_grad(true);
  return t;
}

struct ConvGeom {
  std::size_t B, Cin, Hin, Win, Cout, kh, kw, sh, sw, ph, pw, Hout, Wout, groups;
  bool has_bias;
};

// Unfolds one sample's channel group into the (K, Hout*Wout) patch matrix
// with K = cpg_in*kh*kw, so the convolution itself becomes a matrix product.
// Out-of-range taps read as zero (the implicit padding).
template <typename T>
void unfold_patches(const T* xg, const ConvGeom& g, std::size_t cpg_in, T* col) {
  const std::size_t HW = g.Hout * g.Wout;
  for (std::size_t cil = 0; cil < cpg_in; ++cil) {
    const T* chan = xg + cil * g.Hin * g.Win;
    for (std::size_t u = 0; u < g.kh; ++u) {
      for (std::size_t v = 0; v < g.kw; ++v) {
        T* crow = col + ((cil * g.kh + u) * g.kw + v) * HW;
        for (std::size_t oh = 0; oh < g.Hout; ++oh) {
          const std::ptrdiff_t ih = std::ptrdiff_t(oh * g.sh + u) - std::ptrdiff_t(g.ph);
          T* dst = crow + oh * g.Wout;
          if (ih < 0 || ih >= std::ptrdiff_t(g.Hin)) {
            std::fill(dst, dst + g.Wout, T(0));
            continue;
          }
          const T* src = chan + std::size_t(ih) * g.Win;
          if (g.sw == 1) {
            const std::ptrdiff_t shift = std::ptrdiff_t(v) - std::ptrdiff_t(g.pw);
            const std::size_t lo = std::size_t(std::clamp<std::ptrdiff_t>(
                -shift, 0, std::ptrdiff_t(g.Wout)));
            const std::size_t hi = std::size_t(std::clamp<std::ptrdiff_t>(
                std::ptrdiff_t(g.Win) - shift, 0, std::ptrdiff_t(g.Wout)));
            std::fill(dst, dst + lo, T(0));
            if (hi > lo) {
              std::memcpy(dst + lo, src + std::size_t(std::ptrdiff_t(lo) + shift),
                          (hi - lo) * sizeof(T));
            }
            std::fill(dst + std::max(hi, lo), dst + g.Wout, T(0));
          } else {
            for (std::size_t ow = 0; ow < g.Wout; ++ow) {
              const std::ptrdiff_t iw = std::ptrdiff_t(ow * g.sw + v) - std::ptrdiff_t(g.pw);
              dst[ow] = (iw < 0 || iw >= std::ptrdiff_t(g.Win)) ? T(0) : src[iw];
            }
          }
        }
      }
    }
  }
}

// Inverse of unfold_patches: accumulates patch-matrix gradients back onto the
// sample's channel-group gradient (taps that read padding are dropped).
template <typename T>
void fold_patches_add(const T* dcol, const ConvGeom& g, std::size_t cpg_in, T* dxg) {
  const std::size_t HW = g.Hout * g.Wout;
  for (std::size_t cil = 0; cil < cpg_in; ++cil) {
    T* chan = dxg + cil * g.Hin * g.Win;
    for (std::size_t u = 0; u < g.kh; ++u) {
      for (std::size_t v = 0; v < g.kw; ++v) {
        const T* crow = dcol + ((cil * g.kh + u) * g.kw + v) * HW;
        for (std::size_t oh = 0; oh < g.Hout; ++oh) {
          const std::ptrdiff_t ih = std::ptrdiff_t(oh * g.sh + u) - std::ptrdiff_t(g.ph);
          if (ih < 0 || ih >= std::ptrdiff_t(g.Hin)) continue;
          const T* src = crow + oh * g.Wout;
          T* dst = chan + std::size_t(ih) * g.Win;
          if (g.sw == 1) {
            const std::ptrdiff_t shift = std::ptrdiff_t(v) - std::ptrdiff_t(g.pw);
            const std::size_t lo = std::size_t(std::max<std::ptrdiff_t>(0, -shift));
            const std::size_t hi = std::size_t(std::clamp<std::ptrdiff_t>(
                std::ptrdiff_t(g.Win) - shift, 0, std::ptrdiff_t(g.Wout)));
            for (std::size_t ow = lo; ow < hi; ++ow) {
              dst[std::size_t(std::ptrdiff_t(ow) + shift)] += src[ow];
            }
          } else {
            for (std::size_t ow = 0; ow < g.Wout; ++ow) {
              const std::ptrdiff_t iw = std::ptrdiff_t(ow * g.sw + v) - std::ptrdiff_t(g.pw);
              if (iw >= 0 && iw < std::ptrdiff_t(g.Win)) dst[std::size_t(iw)] += src[ow];
            }
          }
        }
      }
    }
  }
}

// Grouped 2D cross-correlation shared by the 1D and 2D layers.
template <typename T>
Tensor<T> conv2d_core(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& b,
                      std::size_t groups, std::size_t sh, std::size_t sw, Pad pad_h,
                      Pad pad_w) {
  if (x.rank() != 4 || w.rank() != 4) {
    raise(Err::ShapeMismatch, "conv expects input (B,C,H,W) and weight (Cout,Cin/g,kh,kw)");
  }
  ConvGeom g{};
  g.B = x.dim(0);
  g.Cin = x.dim(1);
  g.Hin = x.dim(2);
  g.Win = x.dim(3);
  g.Cout = w.dim(0);
  g.kh = w.dim(2);
  g.kw = w.dim(3);
  g.sh = sh;
  g.sw = sw;
  g.groups = groups;
  g.has_bias = b.defined();
  if (groups == 0 || g.Cin % groups != 0 || g.Cout % groups != 0 ||
      w.dim(1) != g.Cin / groups) {
    raise(Err::ChannelMismatch, "groups " + std::to_string(groups) + " with Cin " +
                                    std::to_string(g.Cin) + ", Cout " +
                                    std::to_string(g.Cout) + ", weight " +
                                    shape_str(w.shape()));
  }
  if (g.has_bias && (b.rank() != 1 || b.dim(0) != g.Cout)) {
    raise(Err::ShapeMismatch, "bias must be (Cout)");
  }
  const AxisGeom ah = axis_geom(g.Hin, g.kh, sh, pad_h);
  const AxisGeom aw = axis_geom(g.Win, g.kw, sw, pad_w);
  g.Hout = ah.out;
  g.Wout = aw.out;
  g.ph = ah.pad_before;
  g.pw = aw.pad_before;

  const std::size_t cpg_in = g.Cin / groups;
  const std::size_t cpg_out = g.Cout / groups;
  const std::size_t K = cpg_in * g.kh * g.kw;
  const std::size_t HW = g.Hout * g.Wout;
  const T* xv = x.values().data();
  const T* wv = w.values().data();
  const T* bv = g.has_bias ? b.values().data() : nullptr;
  std::vector<T> out(g.B * g.Cout * HW);
  parallel_for(g.B, [&](std::size_t b0, std::size_t b1) {
    std::vector<T> col(K * HW);
    for (std::size_t bi = b0; bi < b1; ++bi) {
      for (std::size_t grp = 0; grp < g.groups; ++grp) {
        unfold_patches(xv + (bi * g.Cin + grp * cpg_in) * g.Hin * g.Win, g, cpg_in,
                       col.data());
        detail::gemm_acc(wv + grp * cpg_out * K, col.data(),
                         out.data() + (bi * g.Cout + grp * cpg_out) * HW, cpg_out, K, HW);
      }
      if (bv) {
        for (std::size_t co = 0; co < g.Cout; ++co) {
          T* row = out.data() + (bi * g.Cout + co) * HW;
          for (std::size_t j = 0; j < HW; ++j) row[j] += bv[co];
        }
      }
    }
  });

  std::vector<std::shared_ptr<detail::Node<T>>> inputs{x.node(), w.node()};
  if (g.has_bias) inputs.push_back(b.node());
  return detail::make_op<T>({g.B, g.Cout, g.Hout, g.Wout}, std::move(out),
                            std::move(inputs), [g](detail::Node<T>& n) {
    auto& X = *n.inputs[0];
    auto& W = *n.inputs[1];
    detail::Node<T>* Bn = g.has_bias ? n.inputs[2].get() : nullptr;
    if (X.requires_grad) X.ensure_grad();
    if (W.requires_grad) W.ensure_grad();
    if (Bn && Bn->requires_grad) Bn->ensure_grad();
    const std::size_t cpg_in = g.Cin / g.groups;
    const std::size_t cpg_out = g.Cout / g.groups;
    const std::size_t K = cpg_in * g.kh * g.kw;
    const std::size_t HW = g.Hout * g.Wout;
    std::vector<T> col(K * HW), dcol;
    if (X.requires_grad) dcol.resize(K * HW);
    for (std::size_t bi = 0; bi < g.B; ++bi) {
      for (std::size_t grp = 0; grp < g.groups; ++grp) {
        const T* gptr = n.grad.data() + (bi * g.Cout + grp * cpg_out) * HW;
        if (W.requires_grad) {
          unfold_patches(X.value.data() + (bi * g.Cin + grp * cpg_in) * g.Hin * g.Win, g,
                         cpg_in, col.data());
          detail::gemm_nt_acc(gptr, col.data(), W.grad.data() + grp * cpg_out * K,
                              cpg_out, HW, K);
        }
        if (X.requires_grad) {
          std::fill(dcol.begin(), dcol.end(), T(0));
          detail::gemm_tn_acc(W.value.data() + grp * cpg_out * K, gptr, dcol.data(),
                              cpg_out, K, HW);
          fold_patches_add(dcol.data(), g, cpg_in,
                           X.grad.data() + (bi * g.Cin + grp * cpg_in) * g.Hin * g.Win);
        }
      }
      if (Bn && Bn->requires_grad) {
        for (std::size_t co = 0; co < g.Cout; ++co) {
          const T* row = n.grad.data() + (bi * g.Cout + co) * HW;
          T s = T(0);
          for (std::size_t j = 0; j < HW; ++j) s += row[j];
          Bn->grad[co] += s;
        }
      }
    }
  });
}

} // namespace

template <typename T>
Conv1d<T>::Conv1d(std::size_t in_ch_, std::size_t out_ch_, std::size_t kernel_,
                  std::size_t stride_, Pad pad_, std::size_t groups_, bool bias,
                  std::mt19937_64& rng)
    : in_ch(in_ch_), out_ch(out_ch_), kernel(kernel_), stride(stride_), groups(groups_),
      pad(pad_) {
  if (groups == 0 || in_ch % groups != 0 || out_ch % groups != 0) {
    raise(Err::ChannelMismatch, "channels " + std::to_string(in_ch) + "/" +
                                    std::to_string(out_ch) + " not divisible by groups " +
                                    std::to_string(groups));
  }
  w = uniform_fan<T>({out_ch, in_ch / groups, kernel}, (in_ch / groups) * kernel, rng);
  if (bias) b = Tensor<T>::zeros({out_ch}).set_requires_grad(true);
}

template <typename T>
Tensor<T> Conv1d<T>::forward(const Tensor<T>& x) const {
  if (x.rank() != 3) raise(Err::ShapeMismatch, "conv1d expects (B,C,L)");
  Tensor<T> x4 = reshape(x, {x.dim(0), x.dim(1), 1, x.dim(2)});
  Tensor<T> w4 = reshape(w, {out_ch, in_ch / groups, 1, kernel});
  Tensor<T> y = conv2d_core(x4, w4, b, groups, 1, stride, Pad::Valid, pad);
  return reshape(y, {y.dim(0), y.dim(1), y.dim(3)});
}

template <typename T>
void Conv1d<T>::named_tensors(NamedTensors<T>& out, const std::string& prefix) {
  out.emplace_back(prefix + ".w", w);
  if (b.defined()) out.emplace_back(prefix + ".b", b);
}

template <typename T>
Conv2d<T>::Conv2d(std::size_t in_ch_, std::size_t out_ch_, std::size_t kh_, std::size_t kw_,
                  std::size_t sh_, std::size_t sw_, Pad pad_h_, Pad pad_w_,
                  std::size_t groups_, bool bias, std::mt19937_64& rng)
    : in_ch(in_ch_), out_ch(out_ch_), kh(kh_), kw(kw_), sh(sh_), sw(sw_), groups(groups_),
      pad_h(pad_h_), pad_w(pad_w_) {
  if (groups == 0 || in_ch % groups != 0 || out_ch % groups != 0) {
    raise(Err::ChannelMismatch, "channels " + std::to_string(in_ch) + "/" +
                                    std::to_string(out_ch) + " not divisible by groups " +
                                    std::to_string(groups));
  }
  w = uniform_fan<T>({out_ch, in_ch / groups, kh, kw}, (in_ch / groups) * kh * kw, rng);
  if (bias) b = Tensor<T>::zeros({out_ch}).set_requires_grad(true);
}

template <typename T>
Tensor<T> Conv2d<T>::forward(const Tensor<T>& x) const {
  return conv2d_core(x, w, b, groups, sh, sw, pad_h, pad_w);
}

template <typename T>
void Conv2d<T>::named_tensors(NamedTensors<T>& out, const std::string& prefix) {
  out.emplace_back(prefix + ".w", w);
  if (b.defined()) out.emplace_back(prefix + ".b", b);
}

template <typename T>
Tensor<T> avg_pool_last(const Tensor<T>& x, std::size_t k, std::size_t s) {
  if (x.rank() < 1) raise(Err::ShapeMismatch, "avg_pool on rank-0 tensor");
  const std::size_t L = x.dim(x.rank() - 1);
  const AxisGeom geom = axis_geom(L, k, s, Pad::Valid);
  const std::size_t Lp = geom.out;
  const std::size_t rows = x.size() / L;
  Shape out_shape = x.shape();
  out_shape.back() = Lp;
  std::vector<T> out(rows * Lp);
  const T* xv = x.values().data();
  const T inv_k = T(1) / T(k);
  for (std::size_t r = 0; r < rows; ++r) {
    const T* in = xv + r * L;
    T* o = out.data() + r * Lp;
    for (std::size_t j = 0; j < Lp; ++j) {
      T acc = T(0);
      for (std::size_t u = 0; u < k; ++u) acc += in[j * s + u];
      o[j] = acc * inv_k;
    }
  }
  return detail::make_op<T>(std::move(out_shape), std::move(out), {x.node()},
                            [rows, L, Lp, k, s, inv_k](detail::Node<T>& n) {
    auto& X = *n.inputs[0];
    if (!X.requires_grad) return;
    X.ensure_grad();
    for (std::size_t r = 0; r < rows; ++r) {
      const T* g = n.grad.data() + r * Lp;
      T* d = X.grad.data() + r * L;
      for (std::size_t j = 0; j < Lp; ++j) {
        const T gv = g[j] * inv_k;
        for (std::size_t u = 0; u < k; ++u) d[j * s + u] += gv;
      }
    }
  });
}

template <typename T>
BatchNorm<T>::BatchNorm(std::size_t channels_) : channels(channels_) {
  gamma = Tensor<T>::full({channels}, T(1)).set_requires_grad(true);
  beta = Tensor<T>::zeros({channels}).set_requires_grad(true);
  running_mean = Tensor<T>::zeros({channels});
  running_var = Tensor<T>::full({channels}, T(1));
}

template <typename T>
Tensor<T> BatchNorm<T>::forward(const Tensor<T>& x, Mode mode) {
  if (x.rank() < 2) raise(Err::ShapeMismatch, "batch_norm expects rank >= 2");
  if (x.dim(1) != channels) {
    raise(Err::ChannelMismatch, "batch_norm over " + std::to_string(channels) +
                                    " channels fed " + shape_str(x.shape()));
  }
  const std::size_t B = x.dim(0);
  const std::size_t C = channels;
  std::size_t inner = 1;
  for (std::size_t i = 2; i < x.rank(); ++i) inner *= x.dim(i);
  const std::size_t N = B * inner;
  const T* xv = x.values().data();

  std::vector<T> mu(C), var(C);
  const bool batch_stats = (mode != Mode::Eval);
  if (batch_stats) {
    for (std::size_t c = 0; c < C; ++c) {
      T m = T(0);
      for (std::size_t bi = 0; bi < B; ++bi) {
        const T* base = xv + (bi * C + c) * inner;
        for (std::size_t r = 0; r < inner; ++r) m += base[r];
      }
      m /= T(N);
      T v = T(0);
      for (std::size_t bi = 0; bi < B; ++bi) {
        const T* base = xv + (bi * C + c) * inner;
        for (std::size_t r = 0; r < inner; ++r) {
          const T d = base[r] - m;
          v += d * d;
        }
      }
      v /= T(N);
      mu[c] = m;
      var[c] = v;
    }
    if (mode == Mode::Train) {
      auto& rm = running_mean.values_mut();
      auto& rv = running_var.values_mut();
      const T unbias = N > 1 ? T(N) / T(N - 1) : T(1);
      for (std::size_t c = 0; c < C; ++c) {
        rm[c] = (T(1) - momentum) * rm[c] + momentum * mu[c];
        rv[c] = (T(1) - momentum) * rv[c] + momentum * var[c] * unbias;
      }
    }
  } else {
    mu = running_mean.values();
    var = running_var.values();
  }
  std::vector<T> sigma_inv(C);
  for (std::size_t c = 0; c < C; ++c) sigma_inv[c] = T(1) / std::sqrt(var[c] + eps);

  const T* gv = gamma.values().data();
  const T* bv = beta.values().data();
  std::vector<T> out(x.size());
  for (std::size_t bi = 0; bi < B; ++bi) {
    for (std::size_t c = 0; c < C; ++c) {
      const T* in = xv + (bi * C + c) * inner;
      T* o = out.data() + (bi * C + c) * inner;
      const T m = mu[c], si = sigma_inv[c], ga = gv[c], be = bv[c];
      for (std::size_t r = 0; r < inner; ++r) o[r] = (in[r] - m) * si * ga + be;
    }
  }
  return detail::make_op<T>(x.shape(), std::move(out),
                            {x.node(), gamma.node(), beta.node()},
                            [B, C, inner, N, mu = std::move(mu),
                             sigma_inv = std::move(sigma_inv),
                             batch_stats](detail::Node<T>& n) {
    auto& X = *n.inputs[0];
    auto& Ga = *n.inputs[1];
    auto& Be = *n.inputs[2];
    const T* xv = X.value.data();
    if (X.requires_grad) X.ensure_grad();
    if (Ga.requires_grad) Ga.ensure_grad();
    if (Be.requires_grad) Be.ensure_grad();
    for (std::size_t c = 0; c < C; ++c) {
      const T m = mu[c], si = sigma_inv[c], ga = Ga.value[c];
      T gsum = T(0), gx = T(0);
      for (std::size_t bi = 0; bi < B; ++bi) {
        const std::size_t base = (bi * C + c) * inner;
        for (std::size_t r = 0; r < inner; ++r) {
          const T g = n.grad[base + r];
          gsum += g;
          gx += g * (xv[base + r] - m) * si;
        }
      }
      if (Ga.requires_grad) Ga.grad[c] += gx;
      if (Be.requires_grad) Be.grad[c] += gsum;
      if (X.requires_grad) {
        if (batch_stats) {
          const T mean_g = gsum / T(N);
          const T mean_gx = gx / T(N);
          for (std::size_t bi = 0; bi < B; ++bi) {
            const std::size_t base = (bi * C + c) * inner;
            for (std::size_t r = 0; r < inner; ++r) {
              const T xhat = (xv[base + r] - m) * si;
              X.grad[base + r] += ga * si * (n.grad[base + r] - mean_g - xhat * mean_gx);
            }
          }
        } else {
          for (std::size_t bi = 0; bi < B; ++bi) {
            const std::size_t base = (bi * C + c) * inner;
            for (std::size_t r = 0; r < inner; ++r) {
              X.grad[base + r] += ga * si * n.grad[base + r];
            }
          }
        }
      }
    }
  });
}

template <typename T>
void BatchNorm<T>::named_tensors(NamedTensors<T>& out, const std::string& prefix) {
  out.emplace_back(prefix + ".gamma", gamma);
  out.emplace_back(prefix + ".beta", beta);
  out.emplace_back(prefix + ".running_mean", running_mean);
  out.emplace_back(prefix + ".running_var", running_var);
}

template <typename T>
Tensor<T> layer_norm(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta,
                     T eps) {
  const std::size_t D = x.dim(x.rank() - 1);
  if (gamma.shape() != Shape{D} || beta.shape() != Shape{D}) {
    raise(Err::ShapeMismatch, "layer_norm affine must be (" + std::to_string(D) + ")");
  }
  const std::size_t rows = x.size() / D;
  const T* xv = x.values().data();
  const T* gv = gamma.values().data();
  const T* bv = beta.values().data();
  std::vector<T> mu(rows), sigma_inv(rows);
  std::vector<T> out(x.size());
  for (std::size_t r = 0; r < rows; ++r) {
    const T* in = xv + r * D;
    T m = T(0);
    for (std::size_t d = 0; d < D; ++d) m += in[d];
    m /= T(D);
    T v = T(0);
    for (std::size_t d = 0; d < D; ++d) {
      const T dd = in[d] - m;
      v += dd * dd;
    }
    v /= T(D);
    const T si = T(1) / std::sqrt(v + eps);
    mu[r] = m;
    sigma_inv[r] = si;
    T* o = out.data() + r * D;
    for (std::size_t d = 0; d < D; ++d) o[d] = (in[d] - m) * si * gv[d] + bv[d];
  }
  return detail::make_op<T>(x.shape(), std::move(out),
                            {x.node(), gamma.node(), beta.node()},
                            [rows, D, mu = std::move(mu),
                             sigma_inv = std::move(sigma_inv)](detail::Node<T>& n) {
    auto& X = *n.inputs[0];
    auto& Ga = *n.inputs[1];
    auto& Be = *n.inputs[2];
    if (X.requires_grad) X.ensure_grad();
    if (Ga.requires_grad) Ga.ensure_grad();
    if (Be.requires_grad) Be.ensure_grad();
    const T* xv = X.value.data();
    for (std::size_t r = 0; r < rows; ++r) {
      const std::size_t base = r * D;
      const T m = mu[r], si = sigma_inv[r];
      T hsum = T(0), hx = T(0);
      for (std::size_t d = 0; d < D; ++d) {
        const T g = n.grad[base + d];
        const T xhat = (xv[base + d] - m) * si;
        const T h = g * Ga.value[d];
        hsum += h;
        hx += h * xhat;
        if (Ga.requires_grad) Ga.grad[d] += g * xhat;
        if (Be.requires_grad) Be.grad[d] += g;
      }
      if (X.requires_grad) {
        const T mean_h = hsum / T(D);
        const T mean_hx = hx / T(D);
        for (std::size_t d = 0; d < D; ++d) {
          const T xhat = (xv[base + d] - m) * si;
          const T h = n.grad[base + d] * Ga.value[d];
          X.grad[base + d] += si * (h - mean_h - xhat * mean_hx);
        }
      }
    }
  });
}

template <typename T>
Tensor<T> dropout(const Tensor<T>& x, T rate, const FwdCtx<T>& ctx) {
  if (rate < T(0) || rate >= T(1)) {
    raise(Err::InvalidRate, "dropout rate must be in [0,1)");
  }
  if (ctx.mode != Mode::Train || rate == T(0)) return x;
  if (!ctx.rng) raise(Err::BadConfig, "train-mode dropout needs an RNG");
  const T keep_scale = T(1) / (T(1) - rate);
  std::uniform_real_distribution<T> unit(T(0), T(1));
  std::vector<T> mask(x.size());
  for (auto& mv : mask) mv = unit(*ctx.rng) < rate ? T(0) : keep_scale;
  const auto& xv = x.values();
  std::vector<T> out(x.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = xv[i] * mask[i];
  return detail::make_op<T>(x.shape(), std::move(out), {x.node()},
                            [mask = std::move(mask)](detail::Node<T>& n) {
    auto& X = *n.inputs[0];
    if (!X.requires_grad) return;
    X.ensure_grad();
    for (std::size_t i = 0; i < n.grad.size(); ++i) X.grad[i] += n.grad[i] * mask[i];
  });
}

template <typename T>
MultiHeadAttention<T>::MultiHeadAttention(std::size_t dim_, std::size_t heads_,
                                          std::mt19937_64& rng)
    : dim(dim_), heads(heads_) {
  if (heads == 0 || dim % heads != 0) {
    raise(Err::HeadDivisibility,
          "dim " + std::to_string(dim) + " not divisible by " + std::to_string(heads));
  }
  wq = uniform_fan<T>({dim, dim}, dim, rng);
  wk = uniform_fan<T>({dim, dim}, dim, rng);
  wv = uniform_fan<T>({dim, dim}, dim, rng);
  wo = uniform_fan<T>({dim, dim}, dim, rng);
}

template <typename T>
Tensor<T> MultiHeadAttention<T>::forward(const Tensor<T>& q_src, const Tensor<T>& kv_src,
                                         const FwdCtx<T>& ctx) const {
  if (q_src.rank() != 3 || kv_src.rank() != 3) {
    raise(Err::ShapeMismatch, "attention expects (B,P,D) inputs");
  }
  if (q_src.dim(2) != dim || kv_src.dim(2) != dim || q_src.dim(0) != kv_src.dim(0)) {
    raise(Err::ShapeMismatch, "attention over dim " + std::to_string(dim) + " fed " +
                                  shape_str(q_src.shape()) + " / " +
                                  shape_str(kv_src.shape()));
  }
  const std::size_t B = q_src.dim(0);
  const std::size_t Pq = q_src.dim(1);
  const std::size_t Pk = kv_src.dim(1);
  const std::size_t dh = dim / heads;

  auto split = [&](const Tensor<T>& proj, std::size_t P) {
    return swap_axes12(reshape(proj, {B, P, heads, dh}));
  };
  // Folding the 1/sqrt(dh) factor into q keeps the scaling on a (B,P,D)
  // tensor instead of the much larger (B,H,Pq,Pk) logit block.
  Tensor<T> qh = split(scale(matmul(q_src, wq), T(1) / std::sqrt(T(dh))), Pq);
  Tensor<T> kh = split(matmul(kv_src, wk), Pk);  // (B, H, Pk, dh)
  Tensor<T> vh = split(matmul(kv_src, wv), Pk);

  Tensor<T> attn = softmax_lastdim(matmul(qh, transpose_last2(kh))); // (B, H, Pq, Pk)
  if (ctx.attn_sink) {
    ctx.attn_sink->push_back({ctx.attn_tag, attn.shape(), attn.values()});
  }
  Tensor<T> mixed = reshape(swap_axes12(matmul(attn, vh)), {B, Pq, dim});
  return matmul(mixed, wo);
}

template <typename T>
void MultiHeadAttention<T>::named_tensors(NamedTensors<T>& out, const std::string& prefix) {
  out.emplace_back(prefix + ".wq", wq);
  out.emplace_back(prefix + ".wk", wk);
  out.emplace_back(prefix + ".wv", wv);
  out.emplace_back(prefix + ".wo", wo);
}

template <typename T>
Linear<T>::Linear(std::size_t in_dim, std::size_t out_dim, bool bias, std::mt19937_64& rng) {
  w = uniform_fan<T>({in_dim, out_dim}, in_dim, rng);
  if (bias) b = Tensor<T>::zeros({out_dim}).set_requires_grad(true);
}

template <typename T>
Tensor<T> Linear<T>::forward(const Tensor<T>& x) const {
  Tensor<T> y = matmul(x, w);
  return b.defined() ? add(y, b) : y;
}

template <typename T>
void Linear<T>::named_tensors(NamedTensors<T>& out, const std::string& prefix) {
  out.emplace_back(prefix + ".w", w);
  if (b.defined()) out.emplace_back(prefix + ".b", b);
}

template <typename T>
Tensor<T> positional_encoding_add(const Tensor<T>& x, const Tensor<T>& table) {
  if (x.rank() != 3 || table.rank() != 2 ||
      (x.dim(2) != table.dim(1) && table.dim(1) != 1)) {
    raise(Err::ShapeMismatch, "positional add of " + shape_str(x.shape()) + " with " +
                                  shape_str(table.shape()));
  }
  const std::size_t B = x.dim(0), P = x.dim(1), D = x.dim(2);
  const std::size_t cols = table.dim(1); // D, or 1 broadcast across features
  if (P > table.dim(0)) {
    raise(Err::SequenceTooLong, std::to_string(P) + " tokens exceed table of " +
                                    std::to_string(table.dim(0)));
  }
  const T* xv = x.values().data();
  const T* tv = table.values().data();
  std::vector<T> out(x.size());
  for (std::size_t bi = 0; bi < B; ++bi) {
    const T* in = xv + bi * P * D;
    T* o = out.data() + bi * P * D;
    for (std::size_t i = 0; i < P * D; ++i)
      o[i] = in[i] + (cols == 1 ? tv[i / D] : tv[i]);
  }
  return detail::make_op<T>(x.shape(), std::move(out), {x.node(), table.node()},
                            [B, P, D, cols](detail::Node<T>& n) {
    auto& X = *n.inputs[0];
    auto& Tb = *n.inputs[1];
    if (X.requires_grad) {
      X.ensure_grad();
      for (std::size_t i = 0; i < n.grad.size(); ++i) X.grad[i] += n.grad[i];
    }
    if (Tb.requires_grad) {
      Tb.ensure_grad();
      for (std::size_t bi = 0; bi < B; ++bi) {
        const T* g = n.grad.data() + bi * P * D;
        for (std::size_t i = 0; i < P * D; ++i)
          Tb.grad[cols == 1 ? i / D : i] += g[i];
      }
    }
  });
}

#define HCFT_INSTANTIATE_NN(T)                                                          \
  template struct Conv1d<T>;                                                            \
  template struct Conv2d<T>;                                                            \
  template struct BatchNorm<T>;                                                         \
  template struct MultiHeadAttention<T>;                                                \
  template struct Linear<T>;                                                            \
  template Tensor<T> avg_pool_last<T>(const Tensor<T>&, std::size_t, std::size_t);      \
  template Tensor<T> layer_norm<T>(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, \
                                   T);                                                  \
  template Tensor<T> dropout<T>(const Tensor<T>&, T, const FwdCtx<T>&);                 \
  template Tensor<T> positional_encoding_add<T>(const Tensor<T>&, const Tensor<T>&);

HCFT_INSTANTIATE_NN(float)
HCFT_INSTANTIATE_NN(double)

#undef HCFT_INSTANTIATE_NN

} // namespace hcft
