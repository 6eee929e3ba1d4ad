#include "ternkit/model.hpp"

#include <cmath>
#include <numeric>

#include "ternkit/error.hpp"
#include "ternkit/gemm.hpp"
#include "ternkit/quantizers.hpp"

namespace ternkit {

namespace {

Parameter make_param(const std::string& name, const std::string& group, std::vector<std::size_t> shape) {
  Parameter p;
  p.name = name;
  p.group = group;
  p.value = Tensor::zeros(std::move(shape));
  p.value.requires_grad = true;
  return p;
}

void fill_normal(Tensor& t, Rng& rng, double stddev) {
  for (double& v : t.data) v = stddev * rng.normal();
}

}  // namespace

std::string to_string(Mode m) { return m == Mode::Training ? "training" : "inference"; }

Mode mode_from_string(const std::string& s) {
  if (s == "training") return Mode::Training;
  if (s == "inference") return Mode::Inference;
  throw FormatError("unknown mode '" + s + "'");
}

Linear::Linear(const std::string& name, const std::string& group, std::size_t in, std::size_t out, Rng& rng)
    : weight(make_param(name + ".weight", group, {out, in})), bias(make_param(name + ".bias", group, {out})) {
  fill_normal(weight.value, rng, 1.0 / std::sqrt(static_cast<double>(in)));
}

Var Linear::forward(Tape& tape, Var x) const {
  return ad::add_row(ad::matmul_nt(x, weight.bind(tape)), bias.bind(tape));
}

void Linear::collect(std::vector<Parameter*>& out) {
  out.push_back(&weight);
  out.push_back(&bias);
}

QuantLinear::QuantLinear(const std::string& name, const std::string& group, std::size_t in, std::size_t out,
                         Rng& rng)
    : weight(make_param(name + ".weight", group, {out, in})) {
  weight.quantized = true;
  fill_normal(weight.value, rng, 1.0 / std::sqrt(static_cast<double>(in)));
}

Var QuantLinear::forward(Tape& tape, Var x) const {
  if (mode == Mode::Inference) {
    if (!packed) throw ContractError(weight.name + ": inference mode without packed weights");
    return tape.constant(linear_forward(*packed, x.value()));
  }
  Var w = weight.bind(tape);
  if (!quantize) return ad::matmul_nt(x, w);
  return quant_linear(x, w);
}

void QuantLinear::set_mode(Mode m) {
  if (m == Mode::Inference) {
    packed = pack(quantize_weights(weight.value));
    quantize = true;
  } else {
    packed.reset();
  }
  mode = m;
}

void QuantLinear::collect(std::vector<Parameter*>& out) { out.push_back(&weight); }

LayerNorm::LayerNorm(const std::string& name, const std::string& group, std::size_t width)
    : gain(make_param(name + ".gain", group, {width})), bias(make_param(name + ".bias", group, {width})) {
  std::fill(gain.value.data.begin(), gain.value.data.end(), 1.0);
}

Var LayerNorm::forward(Tape& tape, Var x) const {
  return ad::add_row(ad::mul_row(ad::layernorm(x), gain.bind(tape)), bias.bind(tape));
}

void LayerNorm::collect(std::vector<Parameter*>& out) {
  out.push_back(&gain);
  out.push_back(&bias);
}

Embedding::Embedding(const std::string& name, const std::string& group, std::size_t count, std::size_t width,
                     Rng& rng)
    : table(make_param(name + ".table", group, {count, width})) {
  fill_normal(table.value, rng, 1.0);
}

Var Embedding::forward(Tape& tape, std::span<const std::int32_t> ids) const {
  return ad::gather_rows(table.bind(tape), ids);
}

void Embedding::collect(std::vector<Parameter*>& out) { out.push_back(&table); }

AttentionBlock::AttentionBlock(const std::string& name, const std::string& group, std::size_t width,
                               std::size_t heads_, std::size_t mlp_ratio, Rng& rng)
    : ln1(name + ".ln1", group, width),
      ln2(name + ".ln2", group, width),
      q(name + ".attn.q", group, width, width, rng),
      k(name + ".attn.k", group, width, width, rng),
      v(name + ".attn.v", group, width, width, rng),
      o(name + ".attn.o", group, width, width, rng),
      fc1(name + ".mlp.fc1", group, width, width * mlp_ratio, rng),
      fc2(name + ".mlp.fc2", group, width * mlp_ratio, width, rng),
      heads(heads_) {}

Var AttentionBlock::forward(Tape& tape, Var x, std::size_t seq_len) const {
  Var a = ln1.forward(tape, x);
  Var attn = ad::causal_attention(q.forward(tape, a), k.forward(tape, a), v.forward(tape, a), heads, seq_len);
  Var h = ad::add(x, o.forward(tape, attn));
  Var m = fc2.forward(tape, ad::gelu(fc1.forward(tape, ln2.forward(tape, h))));
  return ad::add(h, m);
}

void AttentionBlock::collect(std::vector<Parameter*>& params, std::vector<QuantLinear*>& linears) {
  ln1.collect(params);
  ln2.collect(params);
  for (QuantLinear* l : {&q, &k, &v, &o, &fc1, &fc2}) {
    l->collect(params);
    linears.push_back(l);
  }
}

std::vector<Var> run_blocks(const std::vector<AttentionBlock>& blocks, Tape& tape, Var x, std::size_t seq_len) {
  std::vector<Var> hiddens;
  hiddens.reserve(blocks.size());
  for (const auto& b : blocks) {
    x = b.forward(tape, x, seq_len);
    hiddens.push_back(x);
  }
  return hiddens;
}

void EncoderConfig::validate() const {
  std::vector<std::string> bad;
  if (layers < 1) bad.push_back("model.layers: must be >= 1");
  if (hidden < 1) bad.push_back("model.hidden: must be >= 1");
  if (heads < 1 || (hidden % std::max<std::size_t>(heads, 1)) != 0)
    bad.push_back("model.heads: must divide model.hidden");
  if (vocab < 2) bad.push_back("model.vocab: must be >= 2");
  if (max_seq < 1) bad.push_back("model.max_seq: must be >= 1");
  if (mlp_ratio < 1) bad.push_back("model.mlp_ratio: must be >= 1");
  if (!bad.empty()) throw ConfigError(std::move(bad));
}

nlohmann::json EncoderConfig::to_json() const {
  return {{"layers", layers},   {"hidden", hidden},       {"heads", heads},        {"vocab", vocab},
          {"max_seq", max_seq}, {"mlp_ratio", mlp_ratio}, {"quantized", quantized}};
}

EncoderConfig EncoderConfig::from_json(const nlohmann::json& j) {
  EncoderConfig c;
  c.layers = j.at("layers").get<std::size_t>();
  c.hidden = j.at("hidden").get<std::size_t>();
  c.heads = j.at("heads").get<std::size_t>();
  c.vocab = j.at("vocab").get<std::size_t>();
  c.max_seq = j.at("max_seq").get<std::size_t>();
  c.mlp_ratio = j.at("mlp_ratio").get<std::size_t>();
  c.quantized = j.at("quantized").get<bool>();
  c.validate();
  return c;
}

bool EncoderConfig::same_shape(const EncoderConfig& o) const {
  return layers == o.layers && hidden == o.hidden && heads == o.heads && vocab == o.vocab &&
         max_seq == o.max_seq && mlp_ratio == o.mlp_ratio;
}

Encoder::Encoder(const EncoderConfig& cfg, Rng& rng, const std::string& group)
    : tok(group + ".tok_embed", group, cfg.vocab, cfg.hidden, rng),
      pos(group + ".pos_embed", group, cfg.max_seq, cfg.hidden, rng),
      max_seq(cfg.max_seq) {
  for (std::size_t l = 0; l < cfg.layers; ++l)
    blocks.emplace_back(group + ".block" + std::to_string(l), group, cfg.hidden, cfg.heads, cfg.mlp_ratio, rng);
}

std::vector<Var> Encoder::hidden_states(Tape& tape, std::span<const std::int32_t> tokens,
                                        std::size_t seq_len) const {
  if (seq_len == 0 || tokens.size() % seq_len != 0)
    throw DimensionError("token count " + std::to_string(tokens.size()) + " is not a multiple of seq_len " +
                         std::to_string(seq_len));
  if (seq_len > max_seq)
    throw ContractError("sequence too long: " + std::to_string(seq_len) + " > max_seq " + std::to_string(max_seq));
  std::vector<std::int32_t> positions(tokens.size());
  for (std::size_t i = 0; i < positions.size(); ++i) positions[i] = static_cast<std::int32_t>(i % seq_len);
  Var x = ad::add(tok.forward(tape, tokens), pos.forward(tape, positions));
  return run_blocks(blocks, tape, x, seq_len);
}

void Encoder::collect(std::vector<Parameter*>& params, std::vector<QuantLinear*>& linears) {
  tok.collect(params);
  pos.collect(params);
  for (auto& b : blocks) b.collect(params, linears);
}

std::vector<const Parameter*> Model::const_parameters() const {
  auto ps = const_cast<Model*>(this)->parameters();
  return {ps.begin(), ps.end()};
}

void Model::set_mode(Mode m) {
  for (QuantLinear* l : quant_linears()) l->set_mode(m);
  mode_ = m;
}

void Model::set_quantized(bool on) {
  for (QuantLinear* l : quant_linears()) l->quantize = on;
}

void Model::set_frozen(const std::set<std::string>& groups) {
  for (Parameter* p : parameters()) p->value.requires_grad = !groups.contains(p->group);
}

SequenceModel::SequenceModel(const EncoderConfig& cfg, std::uint64_t seed) : cfg_(cfg) {
  cfg_.validate();
  Rng rng(seed);
  encoder = Encoder(cfg_, rng, "encoder");
  connector_in = Linear("connector.in", "connector", cfg_.hidden, cfg_.hidden, rng);
  connector_out = Linear("connector.out", "connector", cfg_.hidden, cfg_.hidden, rng);
  final_norm = LayerNorm("decoder.norm", "decoder", cfg_.hidden);
  head = Linear("decoder.head", "decoder", cfg_.hidden, cfg_.vocab, rng);
  set_quantized(cfg_.quantized);
}

nlohmann::json SequenceModel::config_json() const { return cfg_.to_json(); }

std::vector<Parameter*> SequenceModel::parameters() {
  std::vector<Parameter*> ps;
  std::vector<QuantLinear*> ls;
  encoder.collect(ps, ls);
  connector_in.collect(ps);
  connector_out.collect(ps);
  final_norm.collect(ps);
  head.collect(ps);
  return ps;
}

std::vector<QuantLinear*> SequenceModel::quant_linears() {
  std::vector<Parameter*> ps;
  std::vector<QuantLinear*> ls;
  encoder.collect(ps, ls);
  return ls;
}

void SequenceModel::set_mode(Mode m) {
  Model::set_mode(m);
  if (m == Mode::Inference) cfg_.quantized = true;
}

void SequenceModel::set_quantized(bool on) {
  Model::set_quantized(on);
  cfg_.quantized = on;
}

std::vector<Var> SequenceModel::encoder_hidden_states(Tape& tape, std::span<const std::int32_t> tokens,
                                                      std::size_t seq_len) const {
  return encoder.hidden_states(tape, tokens, seq_len);
}

SequenceOutput SequenceModel::forward(Tape& tape, std::span<const std::int32_t> tokens, std::size_t seq_len) const {
  SequenceOutput out;
  out.hiddens = encoder.hidden_states(tape, tokens, seq_len);
  Var c = connector_out.forward(tape, ad::gelu(connector_in.forward(tape, out.hiddens.back())));
  out.logits = head.forward(tape, final_norm.forward(tape, c));
  return out;
}

}  // namespace ternkit
