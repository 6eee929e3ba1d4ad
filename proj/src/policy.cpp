#include "ternkit/policy.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <memory>

#include "ternkit/error.hpp"
#include "ternkit/losses.hpp"

namespace ternkit {

void PolicyConfig::validate() const {
  std::vector<std::string> bad;
  if (patch < 1 || grid % std::max<std::size_t>(patch, 1) != 0) bad.push_back("model.patch: must divide model.grid");
  if (goal_bins < 2) bad.push_back("model.goal_bins: must be >= 2");
  if (action_dims != kActionDims) bad.push_back("model.action_dims: the reach task has 2 action dimensions");
  if (chunk_capacity < 1) bad.push_back("model.chunk_capacity: must be >= 1");
  if (layers < 1) bad.push_back("model.layers: must be >= 1");
  if (heads < 1 || hidden % std::max<std::size_t>(heads, 1) != 0)
    bad.push_back("model.heads: must divide model.hidden");
  if (mlp_ratio < 1) bad.push_back("model.mlp_ratio: must be >= 1");
  if (codec.dims() != action_dims) bad.push_back("model.codec: dimension count differs from action_dims");
  if (!bad.empty()) throw ConfigError(std::move(bad));
}

nlohmann::json PolicyConfig::to_json() const {
  return {{"grid", grid},
          {"patch", patch},
          {"goal_bins", goal_bins},
          {"action_dims", action_dims},
          {"chunk_capacity", chunk_capacity},
          {"layers", layers},
          {"hidden", hidden},
          {"heads", heads},
          {"mlp_ratio", mlp_ratio},
          {"quantized", quantized},
          {"codec", codec.to_json()}};
}

PolicyConfig PolicyConfig::from_json(const nlohmann::json& j) {
  PolicyConfig c;
  c.grid = j.at("grid").get<std::size_t>();
  c.patch = j.at("patch").get<std::size_t>();
  c.goal_bins = j.at("goal_bins").get<std::size_t>();
  c.action_dims = j.at("action_dims").get<std::size_t>();
  c.chunk_capacity = j.at("chunk_capacity").get<std::size_t>();
  c.layers = j.at("layers").get<std::size_t>();
  c.hidden = j.at("hidden").get<std::size_t>();
  c.heads = j.at("heads").get<std::size_t>();
  c.mlp_ratio = j.at("mlp_ratio").get<std::size_t>();
  c.quantized = j.at("quantized").get<bool>();
  c.codec = ActionCodec::from_json(j.at("codec"));
  c.validate();
  return c;
}

PolicyModel::PolicyModel(const PolicyConfig& cfg, std::uint64_t seed) : cfg_(cfg) {
  cfg_.validate();
  Rng rng(seed);
  const std::size_t n = cfg_.hidden;
  patch_embed = Linear("encoder.patch_embed", "encoder", cfg_.patch * cfg_.patch, n, rng);
  state_in = Linear("state_projector.in", "state_projector", 2, n, rng);
  state_out = Linear("state_projector.out", "state_projector", n, n, rng);
  instr_embed = Embedding("encoder.instr_embed", "encoder", 2 * cfg_.goal_bins, n, rng);
  action_embed = Embedding("ar.action_embed", "ar", ActionCodec::kBins * cfg_.action_dims, n, rng);
  pos_embed = Embedding("encoder.pos_embed", "encoder", cfg_.max_seq(), n, rng);
  for (std::size_t l = 0; l < cfg_.layers; ++l)
    blocks.emplace_back("backbone.block" + std::to_string(l), "backbone", n, cfg_.heads, cfg_.mlp_ratio, rng);
  final_norm = LayerNorm("backbone.norm", "backbone", n);
  action_head = Linear("action_head", "action_head", n, cfg_.chunk_capacity * cfg_.action_dims, rng);
  ar_head = Linear("ar.head", "ar", n, ActionCodec::kBins, rng);
  set_quantized(cfg_.quantized);
}

nlohmann::json PolicyModel::config_json() const { return cfg_.to_json(); }

std::vector<Parameter*> PolicyModel::parameters() {
  std::vector<Parameter*> ps;
  std::vector<QuantLinear*> ls;
  patch_embed.collect(ps);
  state_in.collect(ps);
  state_out.collect(ps);
  instr_embed.collect(ps);
  action_embed.collect(ps);
  pos_embed.collect(ps);
  for (auto& b : blocks) b.collect(ps, ls);
  final_norm.collect(ps);
  action_head.collect(ps);
  ar_head.collect(ps);
  return ps;
}

std::vector<QuantLinear*> PolicyModel::quant_linears() {
  std::vector<Parameter*> ps;
  std::vector<QuantLinear*> ls;
  for (auto& b : blocks) b.collect(ps, ls);
  return ls;
}

void PolicyModel::set_mode(Mode m) {
  Model::set_mode(m);
  if (m == Mode::Inference) cfg_.quantized = true;
}

void PolicyModel::set_quantized(bool on) {
  Model::set_quantized(on);
  cfg_.quantized = on;
}

std::int32_t PolicyModel::action_token(std::size_t flat_index, std::int32_t bin) const {
  return bin + static_cast<std::int32_t>((flat_index % cfg_.action_dims) * ActionCodec::kBins);
}

Var PolicyModel::embed_observations(Tape& tape, std::span<const Observation* const> obs) const {
  const std::size_t B = obs.size(), G = cfg_.grid, P = cfg_.patch, side = G / P, np = cfg_.patches();
  const std::size_t T = cfg_.obs_tokens();
  if (B == 0) throw DimensionError("policy: empty observation batch");

  Tensor patches = Tensor::zeros({B * np, P * P});
  Tensor states = Tensor::zeros({B, 2});
  std::vector<std::int32_t> instr;
  for (std::size_t b = 0; b < B; ++b) {
    const Observation& o = *obs[b];
    if (o.grid.size() != G * G) throw DimensionError("policy: observation grid has the wrong size");
    for (std::size_t py = 0; py < side; ++py)
      for (std::size_t px = 0; px < side; ++px)
        for (std::size_t y = 0; y < P; ++y)
          for (std::size_t x = 0; x < P; ++x)
            patches.at(b * np + py * side + px, y * P + x) = o.grid[(py * P + y) * G + px * P + x];
    states.at(b, 0) = o.state[0];
    states.at(b, 1) = o.state[1];
    instr.push_back(o.instruction[0]);
    instr.push_back(o.instruction[1]);
  }
  Var img = patch_embed.forward(tape, tape.constant(std::move(patches)));
  Var st = state_out.forward(tape, ad::gelu(state_in.forward(tape, tape.constant(std::move(states)))));
  Var ins = instr_embed.forward(tape, instr);

  // Stacked as [all image | all state | all instruction]; reorder per sample.
  const std::vector<Var> parts{img, st, ins};
  Var stacked = ad::concat_rows(parts);
  std::vector<std::size_t> order;
  order.reserve(B * T);
  for (std::size_t b = 0; b < B; ++b) {
    for (std::size_t i = 0; i < np; ++i) order.push_back(b * np + i);
    order.push_back(B * np + b);
    order.push_back(B * np + B + 2 * b);
    order.push_back(B * np + B + 2 * b + 1);
  }
  Var x = ad::select_rows(stacked, order);
  std::vector<std::int32_t> positions(B * T);
  for (std::size_t i = 0; i < positions.size(); ++i) positions[i] = static_cast<std::int32_t>(i % T);
  return ad::add(x, pos_embed.forward(tape, positions));
}

Var PolicyModel::run_backbone(Tape& tape, Var x, std::size_t seq_len) const {
  auto hs = run_blocks(blocks, tape, x, seq_len);
  return final_norm.forward(tape, hs.back());
}

Var PolicyModel::chunk_forward(Tape& tape, std::span<const Observation* const> obs, std::size_t h) const {
  if (h + 1 > cfg_.chunk_capacity)
    throw ContractError("horizon " + std::to_string(h) + " exceeds chunk capacity " +
                        std::to_string(cfg_.chunk_capacity));
  ++forward_calls_.n;
  const std::size_t T = cfg_.obs_tokens(), B = obs.size();
  Var y = run_backbone(tape, embed_observations(tape, obs), T);
  std::vector<std::size_t> last(B);
  for (std::size_t b = 0; b < B; ++b) last[b] = b * T + T - 1;
  Var full = action_head.forward(tape, ad::select_rows(y, last));  // [B × capacity·d]
  const std::size_t keep = (h + 1) * cfg_.action_dims, cap = cfg_.chunk_capacity * cfg_.action_dims;
  if (keep == cap) return full;
  // Unused head rows stay untouched: the chunk is a prefix of the capacity.
  std::vector<std::size_t> cols;
  Var flat = ad::reshape(full, {B * cap, 1});
  for (std::size_t b = 0; b < B; ++b)
    for (std::size_t j = 0; j < keep; ++j) cols.push_back(b * cap + j);
  return ad::reshape(ad::select_rows(flat, cols), {B, keep});
}

Var PolicyModel::ar_logits(Tape& tape, std::span<const Observation* const> obs,
                           std::span<const std::int32_t> action_tokens, std::size_t h) const {
  const std::size_t B = obs.size(), T = cfg_.obs_tokens(), N = (h + 1) * cfg_.action_dims;
  if (h + 1 > cfg_.chunk_capacity) throw ContractError("horizon exceeds chunk capacity");
  if (action_tokens.size() != B * N) throw DimensionError("ar_logits: expected B·(h+1)·d action tokens");
  ++forward_calls_.n;
  const std::size_t L = T + N - 1;
  Var o = ad::reshape(embed_observations(tape, obs), {B * T, cfg_.hidden});
  std::vector<std::int32_t> inputs;
  std::vector<std::int32_t> positions;
  for (std::size_t b = 0; b < B; ++b)
    for (std::size_t j = 0; j + 1 < N; ++j) {
      inputs.push_back(action_tokens[b * N + j]);
      positions.push_back(static_cast<std::int32_t>(T + j));
    }
  std::vector<std::size_t> order;
  Var seq = o;
  if (N > 1) {
    Var act = ad::add(action_embed.forward(tape, inputs), pos_embed.forward(tape, positions));
    const std::vector<Var> parts{o, act};
    seq = ad::concat_rows(parts);
    for (std::size_t b = 0; b < B; ++b) {
      for (std::size_t t = 0; t < T; ++t) order.push_back(b * T + t);
      for (std::size_t j = 0; j + 1 < N; ++j) order.push_back(B * T + b * (N - 1) + j);
    }
    seq = ad::select_rows(seq, order);
  }
  return ar_head.forward(tape, run_backbone(tape, seq, L));
}

ActionChunk policy_forward(const PolicyModel& model, const Observation& obs, std::size_t h) {
  Tape tape;
  const Observation* p = &obs;
  Var y = model.chunk_forward(tape, std::span<const Observation* const>(&p, 1), h);
  ActionChunk c;
  c.horizon = h;
  c.actions = y.value().data;
  return c;
}

PolicyBatch make_policy_batch(const TrajectoryDataset& ds, std::span<const std::size_t> indices) {
  PolicyBatch b;
  b.horizon = ds.spec.horizon;
  for (std::size_t i : indices) {
    const auto& s = ds.samples.at(i);
    b.obs.push_back(&s.obs);
    b.chunks.insert(b.chunks.end(), s.chunk.begin(), s.chunk.end());
  }
  return b;
}

Var l1_batch_loss(Tape& tape, const PolicyModel& model, const PolicyBatch& batch) {
  Var pred = model.chunk_forward(tape, batch.obs, batch.horizon);
  const std::size_t B = batch.obs.size();
  Var target = tape.constant(Tensor({B, pred.value().cols()}, batch.chunks));
  return ad::scale(action_l1_loss(pred, target), 1.0 / static_cast<double>(B));
}

ArTargets ar_targets(const PolicyModel& model, const PolicyBatch& batch) {
  const auto& cfg = model.config();
  const std::size_t B = batch.obs.size(), T = cfg.obs_tokens(), N = (batch.horizon + 1) * cfg.action_dims;
  if (batch.chunks.size() != B * N) throw DimensionError("ar_targets: chunk data does not match the horizon");
  ArTargets a;
  a.seq_len = T + N - 1;
  a.action_tokens.resize(B * N);
  a.targets.assign(B * a.seq_len, 0);
  a.mask.assign(B * a.seq_len, 0);
  for (std::size_t b = 0; b < B; ++b)
    for (std::size_t j = 0; j < N; ++j) {
      const std::int32_t bin = cfg.codec.encode(j % cfg.action_dims, batch.chunks[b * N + j]);
      a.action_tokens[b * N + j] = model.action_token(j, bin);
      a.targets[b * a.seq_len + T - 1 + j] = bin;
      a.mask[b * a.seq_len + T - 1 + j] = 1;
    }
  return a;
}

Var ar_batch_loss(Tape& tape, const PolicyModel& model, const PolicyBatch& batch) {
  const ArTargets a = ar_targets(model, batch);
  Var logits = model.ar_logits(tape, batch.obs, a.action_tokens, batch.horizon);
  return lm_loss(logits, a.targets, a.mask);
}

namespace {

double train_step(PolicyModel& model, Optimizer& opt, const std::function<Var(Tape&)>& loss_fn) {
  Tape tape;
  Var loss = loss_fn(tape);
  const double value = loss.value().data[0];
  if (!std::isfinite(value)) throw NumericError("policy loss became non-finite: " + std::to_string(value));
  tape.backward(loss);
  auto params = model.parameters();
  opt.step(params, tape);
  return value;
}

}  // namespace

double finetune_step_l1(PolicyModel& model, Optimizer& opt, const PolicyBatch& batch) {
  return train_step(model, opt, [&](Tape& t) { return l1_batch_loss(t, model, batch); });
}

double pretrain_step_ar(PolicyModel& model, Optimizer& opt, const PolicyBatch& batch) {
  return train_step(model, opt, [&](Tape& t) { return ar_batch_loss(t, model, batch); });
}

RolloutStats evaluate_rollouts(const ChunkPolicy& policy, const ReachSpec& spec, std::size_t episodes,
                               std::uint64_t seed) {
  Rng rng(seed);
  RolloutStats st;
  st.episodes = episodes;
  std::size_t successes = 0;
  double total = 0.0;
  for (std::size_t e = 0; e < episodes; ++e) {
    const ReachEpisode ep = sample_episode(rng);
    auto pos = ep.start;
    std::size_t t = 0;
    while (t < spec.episode_len) {
      const ActionChunk chunk = policy(observe(pos, ep.goal, spec));
      ++st.chunks_requested;
      for (std::size_t k = 0; k <= chunk.horizon && t < spec.episode_len; ++k, ++t)
        pos = env_step(pos, chunk.step(k, kActionDims));
    }
    const double d = distance(pos, ep.goal);
    total += d;
    successes += d < kSuccessRadius ? 1 : 0;
  }
  st.success_rate = static_cast<double>(successes) / static_cast<double>(episodes);
  st.mean_final_distance = total / static_cast<double>(episodes);
  return st;
}

ChunkPolicy random_policy(std::size_t h, std::uint64_t seed) {
  auto rng = std::make_shared<Rng>(seed);
  return [rng, h](const Observation&) {
    ActionChunk c;
    c.horizon = h;
    for (std::size_t i = 0; i < (h + 1) * kActionDims; ++i) c.actions.push_back(rng->uniform(-1.0, 1.0));
    return c;
  };
}

ChunkPolicy model_policy(const PolicyModel& model, std::size_t h) {
  return [&model, h](const Observation& obs) { return policy_forward(model, obs, h); };
}

void PolicyTrainConfig::validate() const {
  optim.validate();
  std::vector<std::string> bad;
  if (ar_steps + l1_steps < 1) bad.push_back("train.l1_steps: ar_steps + l1_steps must be >= 1");
  if (batch_size < 1) bad.push_back("train.batch_size: must be >= 1");
  if (!bad.empty()) throw ConfigError(std::move(bad));
}

std::string PolicyTrainLog::to_jsonl() const {
  std::string out;
  for (const auto& r : records) out += nlohmann::json{{"step", r.step}, {"phase", r.phase}, {"loss", r.loss}}.dump() + "\n";
  out += nlohmann::json{{"eval", final_metrics}}.dump() + "\n";
  return out;
}

void PolicyTrainLog::write(const std::string& path) const {
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw std::runtime_error("cannot write " + path);
  f << to_jsonl();
}

PolicyTrainLog train_policy(PolicyModel& model, const TrajectoryDataset& data, const PolicyTrainConfig& cfg) {
  cfg.validate();
  if (data.samples.empty()) throw ContractError("train_policy: empty dataset");
  Rng rng(cfg.seed);
  PolicyTrainLog log;
  std::uint64_t step = 0;
  auto run_phase = [&](const char* phase, std::size_t steps, auto&& update) {
    Optimizer opt(cfg.optim);
    for (std::size_t s = 0; s < steps; ++s, ++step) {
      if (cfg.linear_decay)
        opt.set_learning_rate(cfg.optim.learning_rate * (1.0 - static_cast<double>(s) / static_cast<double>(steps)));
      const auto idx = sample_batch(rng, data.samples.size(), cfg.batch_size);
      const PolicyBatch b = make_policy_batch(data, idx);
      log.records.push_back({step, phase, update(opt, b)});
    }
  };
  run_phase("ar", cfg.ar_steps, [&](Optimizer& o, const PolicyBatch& b) { return pretrain_step_ar(model, o, b); });
  run_phase("l1", cfg.l1_steps, [&](Optimizer& o, const PolicyBatch& b) { return finetune_step_l1(model, o, b); });
  return log;
}

}  // namespace ternkit
