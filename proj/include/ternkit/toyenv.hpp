#pragma once

#include <array>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"
#include "ternkit/action_codec.hpp"
#include "ternkit/rng.hpp"

namespace ternkit {

// ---------------------------------------------------------------------------
// Copy-with-permutation sequence task.
//
// Sample layout: [INS_k] [p_0 .. p_{P-1}] [SEP] [a_0 .. a_{P-1}] with
// a_i = p_{perm_k[i]}. Token ids: 0 = SEP, 1..K = INS_k, K+1..K+S = symbols.
// The model reads the first 2P+1 tokens and predicts the next token at each
// position; only the P answer targets are supervised.

struct SequenceSpec {
  std::size_t size = 2000;
  std::uint64_t seed = 1;
  std::size_t payload = 6;       // P
  std::size_t permutations = 4;  // K, permutation 0 is the identity
  std::size_t symbols = 16;      // S
  std::uint64_t task_seed = 7;   // fixes the permutation table across splits

  void validate() const;
  nlohmann::json to_json() const;
  static SequenceSpec from_json(const nlohmann::json& j);
};

struct SequenceSample {
  std::int32_t instruction = 0;  // k
  std::vector<std::int32_t> payload;
  std::vector<std::int32_t> answer;
};

struct SequenceBatch {
  std::size_t batch = 0;
  std::size_t seq_len = 0;
  std::vector<std::int32_t> tokens;   // [batch · seq_len]
  std::vector<std::int32_t> targets;  // next-token ids
  std::vector<std::uint8_t> mask;     // 1 on answer targets
};

struct SequenceDataset {
  SequenceSpec spec;
  std::vector<std::vector<std::int32_t>> perms;
  std::vector<SequenceSample> samples;

  std::size_t seq_len() const noexcept { return 2 * spec.payload + 1; }
  std::size_t vocab_needed() const noexcept { return 1 + spec.permutations + spec.symbols; }
  std::int32_t instruction_token(std::int32_t k) const noexcept { return 1 + k; }
  std::int32_t symbol_token(std::int32_t s) const noexcept {
    return static_cast<std::int32_t>(1 + spec.permutations) + s;
  }
  std::vector<std::int32_t> full_sequence(const SequenceSample& s) const;
  SequenceBatch batch(std::span<const std::size_t> indices) const;
  SequenceBatch all() const;
};

std::vector<std::vector<std::int32_t>> permutation_table(const SequenceSpec& spec);
SequenceDataset gen_sequence_dataset(const SequenceSpec& spec);

void write_sequence_dataset(const SequenceDataset& ds, const std::string& path);
SequenceDataset read_sequence_dataset(const std::string& path);
std::vector<std::uint8_t> serialize_sequence_dataset(const SequenceDataset& ds);
SequenceDataset parse_sequence_dataset(std::span<const std::uint8_t> bytes);

// ---------------------------------------------------------------------------
// Point-reach environment in the unit square.
//
// pos <- clip(pos + kStepScale · a, 0, 1) with velocity a ∈ [-1, 1]^2. The
// scripted expert is proportional, a = clip(kExpertGain · (g - p), -1, 1), so
// each step removes 1/8 of the remaining gap and 40 steps leave ~0.5% of it.

inline constexpr double kStepScale = 0.25;
inline constexpr double kExpertGain = 0.5;
inline constexpr double kSuccessRadius = 0.05;
inline constexpr std::size_t kActionDims = 2;

struct ReachSpec {
  std::size_t episodes = 2000;
  std::uint64_t seed = 11;
  std::size_t horizon = 7;  // h; chunks hold h+1 actions
  std::size_t episode_len = 40;
  std::size_t grid = 16;
  std::size_t goal_bins = 64;

  void validate() const;
  nlohmann::json to_json() const;
  static ReachSpec from_json(const nlohmann::json& j);
  std::size_t chunk_rows() const noexcept { return horizon + 1; }
};

struct Observation {
  std::vector<float> grid;             // grid×grid intensities in [0, 1]
  std::array<double, 2> state{};       // agent position
  std::array<std::int32_t, 2> instruction{};  // goal bins: x in [0, B), y in [B, 2B)
};

struct ReachEpisode {
  std::array<double, 2> start{};
  std::array<double, 2> goal{};
};

ReachEpisode sample_episode(Rng& rng);
std::array<double, 2> expert_action(const std::array<double, 2>& pos, const std::array<double, 2>& goal);
std::array<double, 2> env_step(const std::array<double, 2>& pos, std::span<const double> action);
Observation observe(const std::array<double, 2>& pos, const std::array<double, 2>& goal, const ReachSpec& spec);
double distance(const std::array<double, 2>& a, const std::array<double, 2>& b);

// One supervised sample: observation at a chunk boundary and the expert's
// next h+1 actions.
struct TrajectorySample {
  Observation obs;
  std::vector<double> chunk;  // (h+1) × 2, row-major
};

struct TrajectoryDataset {
  ReachSpec spec;
  ActionCodec codec;  // calibrated on this data's actions
  std::vector<TrajectorySample> samples;
};

// Episodes are rolled out with the expert; a sample is taken every h+1 steps,
// matching where a chunked policy re-plans.
TrajectoryDataset gen_reach_dataset(const ReachSpec& spec);
// Final distance of each expert episode (used to check the expert itself).
std::vector<double> expert_final_distances(const ReachSpec& spec);

void write_trajectory_dataset(const TrajectoryDataset& ds, const std::string& path);
TrajectoryDataset read_trajectory_dataset(const std::string& path);
std::vector<std::uint8_t> serialize_trajectory_dataset(const TrajectoryDataset& ds);
TrajectoryDataset parse_trajectory_dataset(std::span<const std::uint8_t> bytes);

}  // namespace ternkit
