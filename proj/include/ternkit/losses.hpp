#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "ternkit/tensor.hpp"

namespace ternkit {

// lambda weights the hidden-state alignment term. The experiments section of
// the method calls the same weight gamma; there is only one knob.
struct LossWeights {
  double lambda = 0.1;
  void validate() const;
};

// Mean NLL over answer positions only.
Var lm_loss(Var logits, std::span<const std::int32_t> targets, std::span<const std::uint8_t> answer_mask);

// (1/L) sum_l mean_t (1/n) ||h_t - s_t||^2 with the teacher side detached.
Var aux_loss(std::span<const Var> teacher_hiddens, std::span<const Var> student_hiddens);

Var total_loss(Var lm, Var aux, const LossWeights& w);

// Sum over chunk rows of per-row L1 norms (a sum, not a mean).
Var action_l1_loss(Var pred_chunk, Var target_chunk);

}  // namespace ternkit
