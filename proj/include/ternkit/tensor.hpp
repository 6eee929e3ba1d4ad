#pragma once

#include <cstddef>
#include <cstdint>
#include <deque>
#include <functional>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

namespace ternkit {

// Dense row-major array of doubles. Rank 1 or 2 in practice; the matrix
// helpers treat a rank-1 tensor of length n as a 1×n row.
struct Tensor {
  std::vector<std::size_t> shape;
  std::vector<double> data;
  bool requires_grad = false;

  Tensor() = default;
  Tensor(std::vector<std::size_t> shape, std::vector<double> data, bool requires_grad = false);

  static Tensor zeros(std::vector<std::size_t> shape);
  static Tensor full(std::vector<std::size_t> shape, double value);
  static Tensor scalar(double value);
  static Tensor matrix(std::size_t rows, std::size_t cols, std::vector<double> data);

  std::size_t numel() const noexcept { return data.size(); }
  std::size_t rank() const noexcept { return shape.size(); }
  std::size_t rows() const noexcept { return shape.size() == 2 ? shape[0] : 1; }
  std::size_t cols() const noexcept { return shape.empty() ? 0 : shape.back(); }
  bool is_scalar() const noexcept { return data.size() == 1; }

  double& at(std::size_t r, std::size_t c) { return data[r * cols() + c]; }
  double at(std::size_t r, std::size_t c) const { return data[r * cols() + c]; }
  std::span<double> row(std::size_t r) { return {data.data() + r * cols(), cols()}; }
  std::span<const double> row(std::size_t r) const { return {data.data() + r * cols(), cols()}; }

  bool same_shape(const Tensor& other) const noexcept { return shape == other.shape; }
  std::string shape_str() const;
};

class Tape;

// Handle to a node recorded on a Tape.
struct Var {
  Tape* tape = nullptr;
  std::size_t id = 0;

  const Tensor& value() const;
  const Tensor& grad() const;
  bool requires_grad() const;
};

// Fake-quantizer capture/replay. In Record mode every fake-quant call stores
// its (input, output) pair; in Replay mode the k-th call returns
// output_k + (x - input_k) instead of re-quantizing, which is the frozen
// surrogate used for finite-difference checks of STE gradients.
enum class QuantTrace { Off, Record, Replay };

struct QuantRecord {
  Tensor input;
  Tensor output;
};

// Append-only reverse-mode tape. Single owner; backward may run once.
class Tape {
 public:
  using BackwardFn = std::function<void(Tape&, std::size_t self)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var leaf(Tensor value);
  Var constant(Tensor value);
  // Leaf cached by an external key (e.g. a parameter address) so repeated
  // bindings within one tape share one node.
  Var bind(const void* key, const Tensor& value);
  const Var* find_binding(const void* key) const;

  Var record(Tensor value, std::vector<std::size_t> parents, BackwardFn backward);

  void backward(Var loss);
  bool backward_done() const noexcept { return backward_done_; }

  const Tensor& value(std::size_t id) const { return nodes_[id].value; }
  const Tensor& grad(std::size_t id) const;
  bool requires_grad(std::size_t id) const { return nodes_[id].requires_grad; }
  std::size_t size() const noexcept { return nodes_.size(); }
  const std::vector<std::size_t>& parents(std::size_t id) const { return nodes_[id].parents; }

  // Adds `g` into the gradient accumulator of node `id` (no-op when the node
  // does not require grad).
  void accumulate(std::size_t id, const Tensor& g);
  Tensor& grad_slot(std::size_t id);

  void set_quant_trace(QuantTrace mode, std::vector<QuantRecord> records = {});
  QuantTrace quant_trace() const noexcept { return quant_mode_; }
  const std::vector<QuantRecord>& quant_records() const noexcept { return quant_records_; }
  // Replay cursor; throws when the replayed graph diverges from the recording.
  const QuantRecord& next_quant_replay();
  void push_quant_record(QuantRecord rec);

 private:
  struct Node {
    Tensor value;
    std::vector<std::size_t> parents;
    BackwardFn backward;
    bool requires_grad = false;
  };

  std::deque<Node> nodes_;  // stable references across push_back
  std::vector<Tensor> grads_;
  std::vector<bool> has_grad_;
  std::unordered_map<const void*, Var> bindings_;
  bool backward_done_ = false;

  QuantTrace quant_mode_ = QuantTrace::Off;
  std::vector<QuantRecord> quant_records_;
  std::size_t quant_cursor_ = 0;
};

namespace ad {

inline constexpr double kLayerNormEps = 1e-5;

// Linear algebra.
Var matmul(Var a, Var b);     // [m×k]·[k×n]
Var matmul_nt(Var a, Var b);  // [m×k]·[n×k]ᵀ
// matmul_nt with a caller-supplied forward value; backward is unchanged.
Var matmul_nt_given(Var a, Var b, Tensor value);

// Elementwise; operands must share a shape or one must be a scalar.
Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);
Var scale(Var a, double c);
Var abs(Var a);
Var gelu(Var a);

// Row broadcasts of a length-c vector over an r×c matrix.
Var add_row(Var x, Var bias);
Var mul_row(Var x, Var gain);

// Normalizes each row (last axis) to zero mean, unit variance.
Var layernorm(Var x, double eps = kLayerNormEps);

Var sum(Var a);
Var mean(Var a);

// Shape plumbing.
Var reshape(Var a, std::vector<std::size_t> shape);
Var gather_rows(Var table, std::span<const std::int32_t> ids);
Var select_rows(Var x, std::span<const std::size_t> rows);
Var concat_rows(std::span<const Var> parts);

// Multi-head causal self-attention over a batch of equal-length segments.
// q, k, v are [B·T × n]; position t of a segment attends to positions ≤ t of
// the same segment only.
Var causal_attention(Var q, Var k, Var v, std::size_t heads, std::size_t seq_len);

// Mean negative log-likelihood over rows where mask is true.
Var softmax_cross_entropy(Var logits, std::span<const std::int32_t> targets,
                          std::span<const std::uint8_t> mask);

// Forward returns `quantized`; backward passes the gradient to x unchanged.
Var ste_passthrough(Var x, Tensor quantized);

Var detach(Var x);

}  // namespace ad

// Non-tape helpers shared by kernels and tests.
Tensor matmul_nt_value(const Tensor& a, const Tensor& b);
double gelu_value(double x);

}  // namespace ternkit
