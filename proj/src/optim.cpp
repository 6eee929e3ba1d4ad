#include "ternkit/optim.hpp"

#include <cmath>

#include "ternkit/error.hpp"

namespace ternkit {

Var Parameter::bind(Tape& tape) const { return tape.bind(this, value); }

void OptimizerConfig::validate() const {
  std::vector<std::string> bad;
  if (kind != "momentum" && kind != "adam") bad.push_back("optimizer.kind: expected \"momentum\" or \"adam\"");
  if (!std::isfinite(learning_rate) || learning_rate < 0.0) bad.push_back("optimizer.learning_rate: must be >= 0");
  if (!(momentum >= 0.0 && momentum < 1.0)) bad.push_back("optimizer.momentum: must be in [0, 1)");
  if (!(beta1 >= 0.0 && beta1 < 1.0)) bad.push_back("optimizer.beta1: must be in [0, 1)");
  if (!(beta2 >= 0.0 && beta2 < 1.0)) bad.push_back("optimizer.beta2: must be in [0, 1)");
  if (!(eps > 0.0)) bad.push_back("optimizer.eps: must be > 0");
  if (!bad.empty()) throw ConfigError(std::move(bad));
}

Optimizer::Optimizer(OptimizerConfig cfg) : cfg_(std::move(cfg)) { cfg_.validate(); }

void Optimizer::set_learning_rate(double lr) {
  if (!std::isfinite(lr) || lr < 0.0) throw ContractError("learning rate must be finite and >= 0");
  cfg_.learning_rate = lr;
}

void Optimizer::step(std::span<Parameter* const> params, const Tape& tape, const std::set<std::string>& frozen) {
  ++steps_;
  const double lr = cfg_.learning_rate;
  const bool adam = cfg_.kind == "adam";
  const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(steps_));
  const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(steps_));
  for (Parameter* p : params) {
    if (frozen.contains(p->group)) continue;
    const Var* bound = tape.find_binding(p);
    if (bound == nullptr || !bound->requires_grad()) continue;
    const Tensor& g = bound->grad();
    Slot& s = state_[p->name];
    if (s.m.numel() == 0) {
      s.m = Tensor::zeros(g.shape);
      if (adam) s.v = Tensor::zeros(g.shape);
    }
    double* w = p->value.data.data();
    for (std::size_t i = 0; i < g.numel(); ++i) {
      const double gi = g.data[i];
      if (adam) {
        s.m.data[i] = cfg_.beta1 * s.m.data[i] + (1.0 - cfg_.beta1) * gi;
        s.v.data[i] = cfg_.beta2 * s.v.data[i] + (1.0 - cfg_.beta2) * gi * gi;
        const double mhat = s.m.data[i] / bc1;
        const double vhat = s.v.data[i] / bc2;
        w[i] -= lr * mhat / (std::sqrt(vhat) + cfg_.eps);
      } else {
        s.m.data[i] = cfg_.momentum * s.m.data[i] + gi;
        w[i] -= lr * s.m.data[i];
      }
    }
  }
}

}  // namespace ternkit
