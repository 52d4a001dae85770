#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "hcft/model.hpp"
#include "hcft/tensor.hpp"

namespace hcft {

// |a - b| / max(1, |a|, |b|): absolute near zero, relative elsewhere.
double grad_rel_err(double a, double b);

// One named tensor under verification. Must be a leaf.
struct CheckedLeaf {
  std::string name;
  Tensor64 tensor;
};

struct GradCheckReport {
  double worst = 0;    // largest gap between reverse mode and finite differences
  std::size_t probed = 0; // coordinates compared
  std::vector<std::string> zero_grad_names; // leaves whose entire gradient is zero

  // True when every all-zero gradient belongs to a query or key projection.
  // Attention over a single token has a constant softmax, which makes those
  // projections genuinely flat; anything else going dead is a defect.
  bool dead_set_is_attention_qk() const;
};

// Verifies reverse-mode gradients of loss_fn against central finite
// differences. loss_fn must rebuild its scalar from the leaves on every call
// (the tape is single-use); it runs once for the backward pass and twice per
// probed coordinate. `stride` subsamples coordinates (every stride-th,
// starting at `offset` within each leaf); leaves come back requiring
// gradients. NonFinite when the loss turns non-finite near the base point.
GradCheckReport check_gradients(const std::function<Tensor64()>& loss_fn,
                                const std::vector<CheckedLeaf>& leaves,
                                std::size_t stride = 1, std::size_t offset = 0,
                                double eps = 1e-5);

struct OpCheckResult {
  std::string name;
  double worst = 0;
};

// Finite-difference sweep over every differentiable primitive and layer at
// random points, checking inputs and parameters alike. Deterministic per
// seed.
std::vector<OpCheckResult> run_op_gradchecks(std::uint64_t seed);

// Whole-network check: a fixed random projection of the logits for input x0,
// compared coordinate-by-coordinate across the input and every trainable
// parameter. Uses batch statistics without mutating state, so the loss is a
// pure function of the leaves.
GradCheckReport model_grad_check(Hcft& model, const Tensor64& x0, std::uint64_t seed,
                                 std::size_t stride = 1, std::size_t offset = 0);

} // namespace hcft
