#pragma once

#include <cstdint>
#include <optional>
#include <string>

#include "json.hpp"
#include "ternkit/config.hpp"
#include "ternkit/distill.hpp"
#include "ternkit/policy.hpp"
#include "ternkit/toyenv.hpp"

namespace ternkit {

// End-to-end drivers behind `ternctl train-toy | distill | eval-policy`.
// Every config round-trips through JSON; `read` rejects unknown keys and
// reports all schema problems in one ConfigError. Outputs are written under
// output.dir and contain no wall-clock values, so reruns are byte-identical.

struct TrainToyConfig {
  SequenceSpec data;
  SequenceSpec eval_data;  // only size and seed differ from data
  EncoderConfig model;
  std::uint64_t init_seed = 3;
  SequenceTrainConfig train;
  std::string output_dir;

  TrainToyConfig();
  nlohmann::json to_json() const;
  static TrainToyConfig read(ConfigReader& r);
  static TrainToyConfig from_json(const nlohmann::json& j);
};

struct DistillRunConfig {
  std::string teacher;  // checkpoint written by train-toy
  SequenceSpec data;
  SequenceSpec eval_data;
  DistillConfig distill;
  std::string output_dir;

  DistillRunConfig();
  nlohmann::json to_json() const;
  static DistillRunConfig read(ConfigReader& r);
  static DistillRunConfig from_json(const nlohmann::json& j);
};

struct EvalPolicyConfig {
  ReachSpec data;
  PolicyConfig model;  // grid, goal_bins and codec come from data
  std::uint64_t init_seed = 5;
  PolicyTrainConfig train;
  std::size_t eval_episodes = 100;
  std::uint64_t eval_seed = 777;
  std::uint64_t random_seed = 9;
  std::optional<std::string> checkpoint;  // skip training and evaluate this file
  std::string output_dir;

  EvalPolicyConfig();
  nlohmann::json to_json() const;
  static EvalPolicyConfig read(ConfigReader& r);
  static EvalPolicyConfig from_json(const nlohmann::json& j);
};

// Artifacts: teacher.tern, train_log.jsonl, summary.json.
nlohmann::json run_train_toy(const TrainToyConfig& cfg);
// Artifacts: student.tern (training mode), distill_log.jsonl, alignment.csv, summary.json.
nlohmann::json run_distill(const DistillRunConfig& cfg);
// Artifacts: policy.tern (inference mode), policy_log.jsonl, summary.json.
nlohmann::json run_eval_policy(const EvalPolicyConfig& cfg);

}  // namespace ternkit
