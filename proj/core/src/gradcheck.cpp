#include "hcft/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <utility>

#include "hcft/error.hpp"
#include "hcft/nn.hpp"
#include "hcft/ops.hpp"
#include "hcft/train_eval.hpp"

namespace hcft {

double grad_rel_err(double a, double b) {
  return std::abs(a - b) / std::max({1.0, std::abs(a), std::abs(b)});
}

bool GradCheckReport::dead_set_is_attention_qk() const {
  auto ends_with = [](const std::string& s, const char* suffix) {
    const std::string suf(suffix);
    return s.size() >= suf.size() && s.compare(s.size() - suf.size(), suf.size(), suf) == 0;
  };
  for (const auto& name : zero_grad_names)
    if (!ends_with(name, ".wq") && !ends_with(name, ".wk")) return false;
  return true;
}

GradCheckReport check_gradients(const std::function<Tensor64()>& loss_fn,
                                const std::vector<CheckedLeaf>& leaves, std::size_t stride,
                                std::size_t offset, double eps) {
  if (stride == 0 || !(eps > 0))
    raise(Err::BadConfig, "check_gradients: stride and eps must be positive");

  std::vector<Tensor64> handles;
  handles.reserve(leaves.size());
  for (const auto& leaf : leaves) {
    if (!leaf.tensor.defined())
      raise(Err::BadConfig, "check_gradients: leaf '" + leaf.name + "' is undefined");
    handles.push_back(leaf.tensor);
  }
  for (auto& t : handles) {
    t.set_requires_grad(true);
    t.zero_grad();
  }

  Tensor64 loss = loss_fn();
  if (loss.size() != 1)
    raise(Err::NotScalar, "check_gradients: loss has " + shape_str(loss.shape()));
  backward(loss);

  GradCheckReport rep;
  std::vector<std::vector<double>> analytic;
  analytic.reserve(handles.size());
  for (std::size_t i = 0; i < handles.size(); ++i) {
    const auto& g = handles[i].grad();
    analytic.push_back(g);
    if (std::all_of(g.begin(), g.end(), [](double v) { return v == 0.0; }))
      rep.zero_grad_names.push_back(leaves[i].name);
  }

  // Probe with the tape off so each re-evaluation is just arithmetic.
  for (auto& t : handles) t.set_requires_grad(false);
  for (std::size_t i = 0; i < handles.size(); ++i) {
    auto& vals = handles[i].values_mut();
    for (std::size_t j = offset % stride; j < vals.size(); j += stride) {
      const double v0 = vals[j];
      vals[j] = v0 + eps;
      const double fp = loss_fn().values()[0];
      vals[j] = v0 - eps;
      const double fm = loss_fn().values()[0];
      vals[j] = v0;
      if (!std::isfinite(fp) || !std::isfinite(fm))
        raise(Err::NonFinite, "check_gradients: loss not finite near the base point");
      rep.worst = std::max(rep.worst, grad_rel_err(analytic[i][j], (fp - fm) / (2 * eps)));
      ++rep.probed;
    }
  }
  for (auto& t : handles) t.set_requires_grad(true);
  return rep;
}

namespace {

// Fixed random projection to a scalar: deterministic in (seed, shape), so
// repeated calls inside one check see the same weights.
Tensor64 project(const Tensor64& out, std::uint64_t seed) {
  std::mt19937_64 prng(seed);
  Tensor64 w = Tensor64::uniform(out.shape(), -1.0, 1.0, prng);
  return sum(mul(out, w));
}

} // namespace

std::vector<OpCheckResult> run_op_gradchecks(std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::vector<OpCheckResult> results;

  auto u = [&rng](Shape shape, double lo, double hi) {
    return Tensor64::uniform(std::move(shape), lo, hi, rng);
  };
  auto record = [&results](const std::string& name, const std::function<Tensor64()>& f,
                           const std::vector<CheckedLeaf>& leaves) {
    results.push_back({name, check_gradients(f, leaves).worst});
  };

  {
    Tensor64 a = u({2, 3, 4}, -1, 1), b = u({3, 4}, -1, 1);
    const std::uint64_t ps = rng();
    record("add (suffix broadcast)", [=] { return project(add(a, b), ps); },
           {{"a", a}, {"b", b}});
  }
  {
    Tensor64 a = u({4, 3}, -1, 1), b = u({4, 3}, -1, 1);
    const std::uint64_t ps = rng();
    record("sub", [=] { return project(sub(a, b), ps); }, {{"a", a}, {"b", b}});
  }
  {
    Tensor64 a = u({2, 5}, -1, 1), b = u({1}, -1, 1);
    const std::uint64_t ps = rng();
    record("mul (scalar broadcast)", [=] { return project(mul(a, b), ps); },
           {{"a", a}, {"b", b}});
  }
  {
    Tensor64 a = u({3, 2}, -1, 1);
    const std::uint64_t ps = rng();
    record("neg", [=] { return project(neg(a), ps); }, {{"a", a}});
  }
  {
    Tensor64 a = u({2, 3}, -1, 1);
    const std::uint64_t ps = rng();
    record("scale", [=] { return project(scale(a, -1.7), ps); }, {{"a", a}});
  }
  {
    Tensor64 a = u({7}, -2, 2);
    const std::uint64_t ps = rng();
    record("tanh", [=] { return project(tanh(a), ps); }, {{"a", a}});
  }
  {
    Tensor64 a = u({9}, -3, 3);
    const std::uint64_t ps = rng();
    record("gelu", [=] { return project(gelu(a), ps); }, {{"a", a}});
  }
  {
    Tensor64 a = u({3, 4}, -1, 1), b = u({4, 2}, -1, 1);
    const std::uint64_t ps = rng();
    record("matmul", [=] { return project(matmul(a, b), ps); }, {{"a", a}, {"b", b}});
  }
  {
    Tensor64 a = u({2, 3, 4}, -1, 1), b = u({2, 4, 2}, -1, 1);
    const std::uint64_t ps = rng();
    record("matmul (batched)", [=] { return project(matmul(a, b), ps); },
           {{"a", a}, {"b", b}});
  }
  {
    Tensor64 a = u({2, 3, 4}, -1, 1), b = u({4, 2}, -1, 1);
    const std::uint64_t ps = rng();
    record("matmul (shared rhs)", [=] { return project(matmul(a, b), ps); },
           {{"a", a}, {"b", b}});
  }
  {
    Tensor64 x = u({2, 3, 5}, -2, 2);
    const std::uint64_t ps = rng();
    record("softmax", [=] { return project(softmax_lastdim(x), ps); }, {{"x", x}});
  }
  {
    Tensor64 x = u({2, 3}, -1, 1);
    record("sum", [=] { return sum(x); }, {{"x", x}});
  }
  {
    Tensor64 x = u({2, 3}, -1, 1);
    record("mean", [=] { return mean(x); }, {{"x", x}});
  }
  {
    Tensor64 x = u({2, 6}, -1, 1);
    const std::uint64_t ps = rng();
    record("reshape", [=] { return project(reshape(x, {3, 4}), ps); }, {{"x", x}});
  }
  {
    Tensor64 x = u({2, 3, 4}, -1, 1);
    const std::uint64_t ps = rng();
    record("transpose (last two)", [=] { return project(transpose_last2(x), ps); },
           {{"x", x}});
  }
  {
    Tensor64 x = u({2, 3, 4, 2}, -1, 1);
    const std::uint64_t ps = rng();
    record("swap axes 1,2", [=] { return project(swap_axes12(x), ps); }, {{"x", x}});
  }
  {
    Tensor64 a = u({2, 3, 4}, -1, 1), b = u({2, 1, 4}, -1, 1), c = u({2, 2, 4}, -1, 1);
    const std::uint64_t ps = rng();
    record("concat (token axis)",
           [=] { return project(concat_axis1<double>({a, b, c}), ps); },
           {{"a", a}, {"b", b}, {"c", c}});
  }
  {
    Tensor64 x = u({2, 3, 11}, -1, 1);
    const std::uint64_t ps = rng();
    record("avg pool", [=] { return project(avg_pool_last(x, 4, 3), ps); }, {{"x", x}});
  }
  {
    Tensor64 x = u({2, 12, 3}, -1, 1);
    const std::uint64_t ps = rng();
    record("stage pool", [=] { return project(stage_pool(x, 4), ps); }, {{"x", x}});
  }
  {
    Tensor64 x = u({2, 5, 3}, -1, 1), table = u({8, 3}, -1, 1);
    const std::uint64_t ps = rng();
    record("positional add", [=] { return project(positional_encoding_add(x, table), ps); },
           {{"x", x}, {"table", table}});
  }
  {
    Tensor64 x = u({2, 4, 3}, -1, 1), table = u({6, 1}, -1, 1);
    const std::uint64_t ps = rng();
    record("positional add (single column)",
           [=] { return project(positional_encoding_add(x, table), ps); },
           {{"x", x}, {"table", table}});
  }
  {
    Conv1d<double> conv(4, 6, 3, 2, Pad::Same, 2, true, rng);
    Tensor64 x = u({2, 4, 9}, -1, 1);
    const std::uint64_t ps = rng();
    record("conv1d (grouped, same)", [=] { return project(conv.forward(x), ps); },
           {{"x", x}, {"w", conv.w}, {"b", conv.b}});
  }
  {
    Conv1d<double> conv(3, 5, 3, 1, Pad::Valid, 1, false, rng);
    Tensor64 x = u({2, 3, 8}, -1, 1);
    const std::uint64_t ps = rng();
    record("conv1d (valid)", [=] { return project(conv.forward(x), ps); },
           {{"x", x}, {"w", conv.w}});
  }
  {
    Conv2d<double> conv(3, 4, 3, 2, 1, 2, Pad::Same, Pad::Valid, 1, true, rng);
    Tensor64 x = u({2, 3, 5, 7}, -1, 1);
    const std::uint64_t ps = rng();
    record("conv2d (strided, mixed pad)", [=] { return project(conv.forward(x), ps); },
           {{"x", x}, {"w", conv.w}, {"b", conv.b}});
  }
  {
    Conv2d<double> conv(4, 4, 2, 3, 1, 1, Pad::Valid, Pad::Same, 4, false, rng);
    Tensor64 x = u({2, 4, 4, 6}, -1, 1);
    const std::uint64_t ps = rng();
    record("conv2d (depthwise)", [=] { return project(conv.forward(x), ps); },
           {{"x", x}, {"w", conv.w}});
  }
  {
    Linear<double> lin(5, 3, true, rng);
    Tensor64 x = u({2, 4, 5}, -1, 1);
    const std::uint64_t ps = rng();
    record("linear", [=] { return project(lin.forward(x), ps); },
           {{"x", x}, {"w", lin.w}, {"b", lin.b}});
  }
  {
    BatchNorm<double> bn(3);
    bn.gamma.values_mut() = u({3}, 0.5, 1.5).values();
    bn.beta.values_mut() = u({3}, -0.5, 0.5).values();
    Tensor64 x = u({4, 3, 5}, -1.5, 1.5);
    const std::uint64_t ps = rng();
    record("batch norm",
           [=]() mutable { return project(bn.forward(x, Mode::GradCheck), ps); },
           {{"x", x}, {"gamma", bn.gamma}, {"beta", bn.beta}});
  }
  {
    Tensor64 x = u({2, 4, 6}, -1, 1);
    Tensor64 gamma = u({6}, 0.5, 1.5), beta = u({6}, -0.5, 0.5);
    const std::uint64_t ps = rng();
    record("layer norm", [=] { return project(layer_norm(x, gamma, beta), ps); },
           {{"x", x}, {"gamma", gamma}, {"beta", beta}});
  }
  {
    DyTState s(5);
    s.alpha.values_mut() = u({1}, 0.5, 1.5).values();
    s.gamma.values_mut() = u({5}, 0.5, 1.5).values();
    s.beta.values_mut() = u({5}, -0.5, 0.5).values();
    Tensor64 x = u({2, 3, 5}, -2, 2);
    const std::uint64_t ps = rng();
    record("dyt", [=] { return project(dyt(x, s), ps); },
           {{"x", x}, {"alpha", s.alpha}, {"gamma", s.gamma}, {"beta", s.beta}});
  }
  {
    Tensor64 x = u({3, 5}, -1, 1);
    const std::uint64_t mask_seed = rng();
    const std::uint64_t ps = rng();
    // Re-seeding inside the closure fixes the dropout mask across calls.
    record("dropout (fixed mask)",
           [=] {
             std::mt19937_64 mask_rng(mask_seed);
             FwdCtx<double> ctx;
             ctx.mode = Mode::Train;
             ctx.rng = &mask_rng;
             return project(dropout(x, 0.35, ctx), ps);
           },
           {{"x", x}});
  }
  {
    MultiHeadAttention<double> mha(6, 2, rng);
    Tensor64 x = u({2, 5, 6}, -1, 1);
    const std::uint64_t ps = rng();
    record("self attention",
           [=] {
             FwdCtx<double> ctx;
             ctx.mode = Mode::GradCheck;
             return project(mha.forward(x, x, ctx), ps);
           },
           {{"x", x}, {"wq", mha.wq}, {"wk", mha.wk}, {"wv", mha.wv}, {"wo", mha.wo}});
  }
  {
    MultiHeadAttention<double> mha(6, 3, rng);
    Tensor64 q = u({2, 4, 6}, -1, 1), kv = u({2, 7, 6}, -1, 1);
    const std::uint64_t ps = rng();
    record("cross attention",
           [=] {
             FwdCtx<double> ctx;
             ctx.mode = Mode::GradCheck;
             return project(mha.forward(q, kv, ctx), ps);
           },
           {{"q", q},
            {"kv", kv},
            {"wq", mha.wq},
            {"wk", mha.wk},
            {"wv", mha.wv},
            {"wo", mha.wo}});
  }
  {
    Tensor64 logits = u({4, 3}, -2, 2);
    const std::vector<int> labels{0, 2, 1, 2};
    const std::vector<double> weights{1.5, 1.0, 0.5};
    record("cross entropy (weighted)", [=] { return cross_entropy(logits, labels, weights); },
           {{"logits", logits}});
  }

  return results;
}

GradCheckReport model_grad_check(Hcft& model, const Tensor64& x0, std::uint64_t seed,
                                 std::size_t stride, std::size_t offset) {
  Tensor64 x = x0.detach_copy();
  x.set_requires_grad(true);

  std::vector<CheckedLeaf> leaves;
  leaves.push_back({"input", x});
  for (auto& [name, t] : model.named_tensors())
    if (t.requires_grad()) leaves.push_back({name, t});

  const std::uint64_t ps = seed ^ 0x9e3779b97f4a7c15ull;
  auto loss_fn = [&model, x, ps] {
    FwdCtx<double> ctx;
    ctx.mode = Mode::GradCheck;
    return project(model.forward(x, ctx), ps);
  };
  return check_gradients(loss_fn, leaves, stride, offset);
}

} // namespace hcft
