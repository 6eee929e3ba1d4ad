#include "ternkit/tensor.hpp"

#include <numeric>
#include <sstream>

#include "ternkit/error.hpp"

namespace ternkit {

ConfigError::ConfigError(std::vector<std::string> problems)
    : std::runtime_error([&] {
        std::string msg = "config error:";
        for (const auto& p : problems) msg += "\n  " + p;
        return msg;
      }()),
      problems_(std::move(problems)) {}

Tensor::Tensor(std::vector<std::size_t> shape_in, std::vector<double> data_in, bool rg)
    : shape(std::move(shape_in)), data(std::move(data_in)), requires_grad(rg) {
  if (shape.empty()) throw DimensionError("tensor shape must have at least one dimension");
  std::size_t n = 1;
  for (auto d : shape) {
    if (d == 0) throw DimensionError("tensor dimensions must be >= 1, got " + shape_str());
    n *= d;
  }
  if (data.empty()) data.assign(n, 0.0);
  if (data.size() != n) {
    throw DimensionError("tensor data length " + std::to_string(data.size()) +
                         " does not match shape " + shape_str());
  }
}

Tensor Tensor::zeros(std::vector<std::size_t> shape) { return Tensor(std::move(shape), {}); }

Tensor Tensor::full(std::vector<std::size_t> shape, double value) {
  Tensor t(std::move(shape), {});
  std::fill(t.data.begin(), t.data.end(), value);
  return t;
}

Tensor Tensor::scalar(double value) { return Tensor({1}, {value}); }

Tensor Tensor::matrix(std::size_t rows, std::size_t cols, std::vector<double> data) {
  return Tensor({rows, cols}, std::move(data));
}

std::string Tensor::shape_str() const {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "x" : "") << shape[i];
  os << ']';
  return os.str();
}

const Tensor& Var::value() const { return tape->value(id); }
const Tensor& Var::grad() const { return tape->grad(id); }
bool Var::requires_grad() const { return tape->requires_grad(id); }

Var Tape::leaf(Tensor value) {
  Node n;
  n.requires_grad = value.requires_grad;
  n.value = std::move(value);
  nodes_.push_back(std::move(n));
  return Var{this, nodes_.size() - 1};
}

Var Tape::constant(Tensor value) {
  value.requires_grad = false;
  return leaf(std::move(value));
}

Var Tape::bind(const void* key, const Tensor& value) {
  if (auto it = bindings_.find(key); it != bindings_.end()) return it->second;
  Var v = leaf(value);
  bindings_.emplace(key, v);
  return v;
}

const Var* Tape::find_binding(const void* key) const {
  auto it = bindings_.find(key);
  return it == bindings_.end() ? nullptr : &it->second;
}

Var Tape::record(Tensor value, std::vector<std::size_t> parents, BackwardFn backward) {
  if (backward_done_) throw ContractError("cannot record onto a tape after backward()");
  Node n;
  for (auto p : parents) {
    if (p >= nodes_.size()) throw ContractError("parent index does not precede node");
    n.requires_grad = n.requires_grad || nodes_[p].requires_grad;
  }
  n.value = std::move(value);
  n.value.requires_grad = n.requires_grad;
  n.parents = std::move(parents);
  if (n.requires_grad) n.backward = std::move(backward);
  nodes_.push_back(std::move(n));
  return Var{this, nodes_.size() - 1};
}

const Tensor& Tape::grad(std::size_t id) const {
  if (!backward_done_) throw ContractError("gradients are only available after backward()");
  if (!nodes_[id].requires_grad) throw ContractError("node does not require grad");
  return grads_[id];
}

Tensor& Tape::grad_slot(std::size_t id) { return grads_[id]; }

void Tape::accumulate(std::size_t id, const Tensor& g) {
  if (!nodes_[id].requires_grad) return;
  auto& dst = grads_[id].data;
  for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += g.data[i];
  has_grad_[id] = true;
}

void Tape::backward(Var loss) {
  if (loss.tape != this) throw ContractError("loss belongs to a different tape");
  if (backward_done_) throw ContractError("backward() already called on this tape");
  if (nodes_.empty()) throw ContractError("backward() on an empty tape");
  const Tensor& lv = nodes_[loss.id].value;
  if (!lv.is_scalar()) throw ContractError("backward() needs a scalar loss, got " + lv.shape_str());

  grads_.clear();
  grads_.reserve(nodes_.size());
  has_grad_.assign(nodes_.size(), false);
  for (const auto& n : nodes_) {
    grads_.push_back(n.requires_grad ? Tensor::zeros(n.value.shape) : Tensor());
  }
  backward_done_ = true;
  if (!nodes_[loss.id].requires_grad) return;

  grads_[loss.id].data[0] = 1.0;
  has_grad_[loss.id] = true;
  for (std::size_t i = loss.id + 1; i-- > 0;) {
    if (!has_grad_[i] || !nodes_[i].backward) continue;
    nodes_[i].backward(*this, i);
  }
}

void Tape::set_quant_trace(QuantTrace mode, std::vector<QuantRecord> records) {
  quant_mode_ = mode;
  quant_records_ = std::move(records);
  quant_cursor_ = 0;
}

const QuantRecord& Tape::next_quant_replay() {
  if (quant_cursor_ >= quant_records_.size()) {
    throw ContractError("quantizer replay exhausted: graph differs from the recording");
  }
  return quant_records_[quant_cursor_++];
}

void Tape::push_quant_record(QuantRecord rec) { quant_records_.push_back(std::move(rec)); }

}  // namespace ternkit
