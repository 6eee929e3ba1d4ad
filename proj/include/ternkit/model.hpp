#pragma once

#include <cstdint>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"
#include "ternkit/optim.hpp"
#include "ternkit/rng.hpp"
#include "ternkit/tensor.hpp"
#include "ternkit/ternary_pack.hpp"

namespace ternkit {

enum class Mode { Training, Inference };

std::string to_string(Mode m);
Mode mode_from_string(const std::string& s);

// Full-precision affine layer y = x Wᵀ + b.
class Linear {
 public:
  Linear() = default;
  Linear(const std::string& name, const std::string& group, std::size_t in, std::size_t out, Rng& rng);

  Var forward(Tape& tape, Var x) const;
  void collect(std::vector<Parameter*>& out);

  Parameter weight;  // [out × in]
  Parameter bias;    // [out]
};

// Bias-free linear layer with two execution paths. Training runs fake-quant
// weights and activations on the tape (or plain float when quantize is off);
// inference runs the packed ternary × INT8 kernel and is not differentiable.
class QuantLinear {
 public:
  QuantLinear() = default;
  QuantLinear(const std::string& name, const std::string& group, std::size_t in, std::size_t out, Rng& rng);

  Var forward(Tape& tape, Var x) const;

  // Entering inference packs quantize_weights(master); leaving drops the pack.
  void set_mode(Mode m);
  void collect(std::vector<Parameter*>& out);

  std::size_t in_features() const { return weight.value.cols(); }
  std::size_t out_features() const { return weight.value.rows(); }

  Parameter weight;  // [out × in] master copy, quantized = true
  std::optional<PackedTernaryMatrix> packed;
  Mode mode = Mode::Training;
  bool quantize = true;
};

// Row normalization followed by a full-precision gain and bias.
class LayerNorm {
 public:
  LayerNorm() = default;
  LayerNorm(const std::string& name, const std::string& group, std::size_t width);

  Var forward(Tape& tape, Var x) const;
  void collect(std::vector<Parameter*>& out);

  Parameter gain;
  Parameter bias;
};

class Embedding {
 public:
  Embedding() = default;
  Embedding(const std::string& name, const std::string& group, std::size_t count, std::size_t width, Rng& rng);

  Var forward(Tape& tape, std::span<const std::int32_t> ids) const;
  void collect(std::vector<Parameter*>& out);

  Parameter table;  // [count × width]
};

// Pre-norm causal block: x + Attn(LN(x)), then h + MLP(LN(h)) with GeLU.
class AttentionBlock {
 public:
  AttentionBlock() = default;
  AttentionBlock(const std::string& name, const std::string& group, std::size_t width, std::size_t heads,
                 std::size_t mlp_ratio, Rng& rng);

  // x is [B·T × n] holding B segments of length seq_len.
  Var forward(Tape& tape, Var x, std::size_t seq_len) const;
  void collect(std::vector<Parameter*>& params, std::vector<QuantLinear*>& linears);

  LayerNorm ln1, ln2;
  QuantLinear q, k, v, o, fc1, fc2;
  std::size_t heads = 1;
};

// Hidden states after every block (post-block residual streams).
std::vector<Var> run_blocks(const std::vector<AttentionBlock>& blocks, Tape& tape, Var x, std::size_t seq_len);

struct EncoderConfig {
  std::size_t layers = 2;
  std::size_t hidden = 128;
  std::size_t heads = 4;
  std::size_t vocab = 256;
  std::size_t max_seq = 64;
  std::size_t mlp_ratio = 4;
  bool quantized = true;

  void validate() const;
  nlohmann::json to_json() const;
  static EncoderConfig from_json(const nlohmann::json& j);
  bool same_shape(const EncoderConfig& o) const;
};

class Encoder {
 public:
  Encoder() = default;
  Encoder(const EncoderConfig& cfg, Rng& rng, const std::string& group = "encoder");

  // tokens holds B sequences of length seq_len back to back.
  std::vector<Var> hidden_states(Tape& tape, std::span<const std::int32_t> tokens, std::size_t seq_len) const;
  void collect(std::vector<Parameter*>& params, std::vector<QuantLinear*>& linears);

  Embedding tok;
  Embedding pos;
  std::vector<AttentionBlock> blocks;
  std::size_t max_seq = 0;
};

// Anything that can be checkpointed, frozen by group, and switched between
// the fake-quant and packed paths.
class Model {
 public:
  virtual ~Model() = default;

  virtual std::string kind() const = 0;
  virtual nlohmann::json config_json() const = 0;
  virtual std::vector<Parameter*> parameters() = 0;
  virtual std::vector<QuantLinear*> quant_linears() = 0;

  std::vector<const Parameter*> const_parameters() const;
  Mode mode() const noexcept { return mode_; }
  virtual void set_mode(Mode m);
  // Turns fake quantization on or off for every QuantLinear (training path only).
  virtual void set_quantized(bool on);
  // Parameters in these groups stop requiring gradients; all others require them.
  void set_frozen(const std::set<std::string>& groups);

 protected:
  Mode mode_ = Mode::Training;
};

struct SequenceOutput {
  std::vector<Var> hiddens;  // one [B·T × n] per layer
  Var logits;                // [B·T × vocab]
};

// Toy encoder-connector-decoder stack. The encoder is the quantized part;
// connector (Linear, GeLU, Linear) and decoder (final norm, vocabulary
// head) stay full precision and are the groups frozen during distillation.
class SequenceModel : public Model {
 public:
  SequenceModel(const EncoderConfig& cfg, std::uint64_t seed);

  std::string kind() const override { return "sequence"; }
  nlohmann::json config_json() const override;
  std::vector<Parameter*> parameters() override;
  std::vector<QuantLinear*> quant_linears() override;
  void set_mode(Mode m) override;
  void set_quantized(bool on) override;

  SequenceOutput forward(Tape& tape, std::span<const std::int32_t> tokens, std::size_t seq_len) const;
  std::vector<Var> encoder_hidden_states(Tape& tape, std::span<const std::int32_t> tokens,
                                         std::size_t seq_len) const;

  const EncoderConfig& config() const noexcept { return cfg_; }

  Encoder encoder;
  Linear connector_in, connector_out;
  LayerNorm final_norm;
  Linear head;

 private:
  EncoderConfig cfg_;
};

}  // namespace ternkit
