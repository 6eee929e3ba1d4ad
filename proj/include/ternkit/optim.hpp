#pragma once

#include <cstdint>
#include <map>
#include <set>
#include <span>
#include <string>

#include "ternkit/tensor.hpp"

namespace ternkit {

// A named trainable array. `group` is the unit of freezing.
struct Parameter {
  std::string name;
  std::string group;
  Tensor value;
  bool quantized = false;  // master weight of a QuantLinear

  // Binds this parameter into `tape` once per tape; later calls return the same node.
  Var bind(Tape& tape) const;
};

// "momentum": v <- mu v + g; p <- p - lr v.
// "adam": bias-corrected Adam with beta1/beta2/eps.
struct OptimizerConfig {
  std::string kind = "momentum";
  double learning_rate = 0.01;
  double momentum = 0.9;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  void validate() const;
};

class Optimizer {
 public:
  explicit Optimizer(OptimizerConfig cfg);

  // Updates every parameter that was bound on `tape` with requires_grad and
  // whose group is not in `frozen`. Call after tape.backward().
  void step(std::span<Parameter* const> params, const Tape& tape, const std::set<std::string>& frozen = {});

  const OptimizerConfig& config() const noexcept { return cfg_; }
  // For schedules; state is kept.
  void set_learning_rate(double lr);
  std::uint64_t steps() const noexcept { return steps_; }

 private:
  struct Slot {
    Tensor m;
    Tensor v;
  };
  OptimizerConfig cfg_;
  std::map<std::string, Slot> state_;
  std::uint64_t steps_ = 0;
};

}  // namespace ternkit
