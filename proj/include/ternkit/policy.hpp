#pragma once

#include <atomic>
#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"
#include "ternkit/action_codec.hpp"
#include "ternkit/model.hpp"
#include "ternkit/optim.hpp"
#include "ternkit/toyenv.hpp"

namespace ternkit {

struct PolicyConfig {
  std::size_t grid = 16;
  std::size_t patch = 4;
  std::size_t goal_bins = 64;
  std::size_t action_dims = kActionDims;
  std::size_t chunk_capacity = 25;  // max h+1
  std::size_t layers = 2;
  std::size_t hidden = 64;
  std::size_t heads = 4;
  std::size_t mlp_ratio = 4;
  bool quantized = true;
  ActionCodec codec = ActionCodec::uniform(kActionDims, -1.0, 1.0);

  void validate() const;
  nlohmann::json to_json() const;
  static PolicyConfig from_json(const nlohmann::json& j);

  std::size_t patches() const noexcept { return (grid / patch) * (grid / patch); }
  // image patches, one state token, one instruction token per axis
  std::size_t obs_tokens() const noexcept { return patches() + 1 + 2; }
  std::size_t max_seq() const noexcept { return obs_tokens() + chunk_capacity * action_dims; }
};

struct ActionChunk {
  std::size_t horizon = 0;
  std::vector<double> actions;  // (h+1) × d, row-major
  std::span<const double> step(std::size_t k, std::size_t d) const { return {actions.data() + k * d, d}; }
};

// Observation fusion order: image-patch tokens, the projected state token,
// then instruction tokens, all causally attended. The chunk head reads the
// last position and emits every action of the chunk at once. The patch
// embedding, state projector, instruction embedding and both heads are full
// precision; only the attention blocks carry QuantLinears.
class PolicyModel : public Model {
 public:
  PolicyModel(const PolicyConfig& cfg, std::uint64_t seed);

  std::string kind() const override { return "policy"; }
  nlohmann::json config_json() const override;
  std::vector<Parameter*> parameters() override;
  std::vector<QuantLinear*> quant_linears() override;
  void set_mode(Mode m) override;
  void set_quantized(bool on) override;

  const PolicyConfig& config() const noexcept { return cfg_; }

  // [B·obs_tokens × n] in per-sample order, positions added.
  Var embed_observations(Tape& tape, std::span<const Observation* const> obs) const;
  // One model forward for the whole batch: [B × (h+1)·d].
  Var chunk_forward(Tape& tape, std::span<const Observation* const> obs, std::size_t h) const;
  // Next-action-token logits [B·(obs_tokens + N - 1) × 256] for N = (h+1)·d
  // discretized actions teacher-forced after the observation.
  Var ar_logits(Tape& tape, std::span<const Observation* const> obs, std::span<const std::int32_t> action_tokens,
                std::size_t h) const;
  std::int32_t action_token(std::size_t flat_index, std::int32_t bin) const;

  std::uint64_t forward_calls() const noexcept { return forward_calls_.n.load(); }
  void reset_forward_calls() noexcept { forward_calls_.n = 0; }

  Linear patch_embed;
  Linear state_in, state_out;
  Embedding instr_embed;
  Embedding action_embed;
  Embedding pos_embed;
  std::vector<AttentionBlock> blocks;
  LayerNorm final_norm;
  Linear action_head;
  Linear ar_head;

 private:
  Var run_backbone(Tape& tape, Var x, std::size_t seq_len) const;

  // Copies start counting from zero.
  struct CallCounter {
    std::atomic<std::uint64_t> n{0};
    CallCounter() = default;
    CallCounter(const CallCounter&) {}
    CallCounter& operator=(const CallCounter&) {
      n = 0;
      return *this;
    }
  };

  PolicyConfig cfg_;
  mutable CallCounter forward_calls_;
};

// Exactly one model forward per call.
ActionChunk policy_forward(const PolicyModel& model, const Observation& obs, std::size_t h);

struct PolicyBatch {
  std::vector<const Observation*> obs;
  std::vector<double> chunks;  // B × (h+1)·d
  std::size_t horizon = 0;
};

PolicyBatch make_policy_batch(const TrajectoryDataset& ds, std::span<const std::size_t> indices);

// Teacher-forced layout for the autoregressive objective: per sample the
// sequence has obs_tokens + N - 1 positions; position obs_tokens - 1 + j
// predicts action token j. Observation positions carry mask 0.
struct ArTargets {
  std::vector<std::int32_t> action_tokens;  // B × N model input ids
  std::vector<std::int32_t> targets;        // B × L bin ids
  std::vector<std::uint8_t> mask;           // B × L
  std::size_t seq_len = 0;                  // L
};
ArTargets ar_targets(const PolicyModel& model, const PolicyBatch& batch);

// Mean over the batch of per-sample L_act.
Var l1_batch_loss(Tape& tape, const PolicyModel& model, const PolicyBatch& batch);
// Cross-entropy over action-token positions only.
Var ar_batch_loss(Tape& tape, const PolicyModel& model, const PolicyBatch& batch);

double finetune_step_l1(PolicyModel& model, Optimizer& opt, const PolicyBatch& batch);
double pretrain_step_ar(PolicyModel& model, Optimizer& opt, const PolicyBatch& batch);

struct RolloutStats {
  std::size_t episodes = 0;
  double success_rate = 0.0;
  double mean_final_distance = 0.0;
  std::uint64_t chunks_requested = 0;
};

using ChunkPolicy = std::function<ActionChunk(const Observation&)>;

// Every requested chunk is executed in full before the next request.
RolloutStats evaluate_rollouts(const ChunkPolicy& policy, const ReachSpec& spec, std::size_t episodes,
                               std::uint64_t seed);
ChunkPolicy random_policy(std::size_t h, std::uint64_t seed);
// Wraps policy_forward; one model forward per requested chunk.
ChunkPolicy model_policy(const PolicyModel& model, std::size_t h);

// Optional autoregressive pre-training on discretized action tokens, then
// L1 fine-tuning of the continuous chunk head. Each phase gets a fresh
// optimizer; with linear_decay the learning rate falls linearly to zero
// over the phase.
struct PolicyTrainConfig {
  OptimizerConfig optim{"adam", 2e-3};
  std::size_t ar_steps = 0;
  std::size_t l1_steps = 3000;
  std::size_t batch_size = 32;
  bool linear_decay = true;
  std::uint64_t seed = 3;
  void validate() const;
};

struct PolicyTrainRecord {
  std::uint64_t step = 0;
  std::string phase;  // "ar" | "l1"
  double loss = 0.0;
};

struct PolicyTrainLog {
  std::vector<PolicyTrainRecord> records;
  nlohmann::json final_metrics = nlohmann::json::object();

  std::string to_jsonl() const;
  void write(const std::string& path) const;
};

PolicyTrainLog train_policy(PolicyModel& model, const TrajectoryDataset& data, const PolicyTrainConfig& cfg);

}  // namespace ternkit
