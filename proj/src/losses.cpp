#include "ternkit/losses.hpp"

#include <cmath>
#include <string>

#include "ternkit/error.hpp"

namespace ternkit {

void LossWeights::validate() const {
  if (!std::isfinite(lambda) || lambda < 0.0)
    throw ContractError("lambda must be finite and >= 0, got " + std::to_string(lambda));
}

Var lm_loss(Var logits, std::span<const std::int32_t> targets, std::span<const std::uint8_t> answer_mask) {
  return ad::softmax_cross_entropy(logits, targets, answer_mask);
}

Var aux_loss(std::span<const Var> teacher_hiddens, std::span<const Var> student_hiddens) {
  if (teacher_hiddens.size() != student_hiddens.size())
    throw DimensionError("aux_loss: " + std::to_string(teacher_hiddens.size()) + " teacher layers vs " +
                         std::to_string(student_hiddens.size()) + " student layers");
  if (student_hiddens.empty()) throw ContractError("aux_loss: no layers");
  Tape& tape = *student_hiddens[0].tape;
  Var acc{};
  for (std::size_t l = 0; l < student_hiddens.size(); ++l) {
    const Var s = student_hiddens[l];
    Var t = teacher_hiddens[l];
    if (!t.value().same_shape(s.value()))
      throw DimensionError("aux_loss layer " + std::to_string(l) + ": teacher " + t.value().shape_str() +
                           " vs student " + s.value().shape_str());
    // Teacher states may come from another tape; re-home them as constants.
    t = t.tape == &tape ? ad::detach(t) : tape.constant(t.value());
    const Var d = ad::sub(s, t);
    // mean over T·n entries == mean_t (1/n)||d_t||^2
    const Var layer = ad::mean(ad::mul(d, d));
    acc = l == 0 ? layer : ad::add(acc, layer);
  }
  return ad::scale(acc, 1.0 / static_cast<double>(student_hiddens.size()));
}

Var total_loss(Var lm, Var aux, const LossWeights& w) {
  w.validate();
  return ad::add(lm, ad::scale(aux, w.lambda));
}

Var action_l1_loss(Var pred_chunk, Var target_chunk) {
  if (!pred_chunk.value().same_shape(target_chunk.value()))
    throw DimensionError("action_l1_loss: " + pred_chunk.value().shape_str() + " vs " +
                         target_chunk.value().shape_str());
  return ad::sum(ad::abs(ad::sub(pred_chunk, target_chunk)));
}

}  // namespace ternkit
