#include "ternkit/toyenv.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "binio.hpp"
#include "ternkit/error.hpp"
#include "ternkit/rng.hpp"

namespace ternkit {

namespace {

constexpr char kSeqMagic[4] = {'T', 'S', 'E', 'Q'};
constexpr char kTrajMagic[4] = {'T', 'R', 'A', 'J'};
constexpr std::uint32_t kDatasetVersion = 1;

void write_header(detail::ByteWriter& w, const char* magic, const nlohmann::json& header) {
  w.raw(std::string(magic, 4));
  w.put<std::uint32_t>(kDatasetVersion);
  const std::string text = header.dump();
  w.put<std::uint32_t>(static_cast<std::uint32_t>(text.size()));
  w.raw(text);
}

nlohmann::json read_header(detail::ByteReader& r, std::span<const std::uint8_t> bytes, const char* magic) {
  if (bytes.size() < 4 || !std::equal(magic, magic + 4, bytes.begin()))
    throw FormatError(std::string("not a ") + std::string(magic, 4) + " dataset: bad magic bytes");
  r.take(4);
  const auto version = r.get<std::uint32_t>();
  if (version != kDatasetVersion)
    throw VersionError("dataset version " + std::to_string(version) + " is not supported");
  const auto len = r.get<std::uint32_t>();
  auto header = nlohmann::json::parse(r.str(len), nullptr, false);
  if (header.is_discarded() || !header.is_object()) throw FormatError("dataset header is not a JSON object");
  return header;
}

template <class Fn>
auto json_field(Fn&& fn) {
  try {
    return fn();
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("dataset header: ") + e.what());
  }
}

}  // namespace

// ---- sequence task ---------------------------------------------------------

void SequenceSpec::validate() const {
  std::vector<std::string> bad;
  if (size < 1) bad.push_back("data.size: must be >= 1");
  if (payload < 1) bad.push_back("data.payload: must be >= 1");
  if (permutations < 1) bad.push_back("data.permutations: must be >= 1");
  if (symbols < 2) bad.push_back("data.symbols: must be >= 2");
  if (!bad.empty()) throw ConfigError(std::move(bad));
}

nlohmann::json SequenceSpec::to_json() const {
  return {{"size", size},         {"seed", seed},       {"payload", payload},
          {"permutations", permutations}, {"symbols", symbols}, {"task_seed", task_seed}};
}

SequenceSpec SequenceSpec::from_json(const nlohmann::json& j) {
  SequenceSpec s;
  s.size = j.at("size").get<std::size_t>();
  s.seed = j.at("seed").get<std::uint64_t>();
  s.payload = j.at("payload").get<std::size_t>();
  s.permutations = j.at("permutations").get<std::size_t>();
  s.symbols = j.at("symbols").get<std::size_t>();
  s.task_seed = j.at("task_seed").get<std::uint64_t>();
  return s;
}

std::vector<std::vector<std::int32_t>> permutation_table(const SequenceSpec& spec) {
  Rng rng(spec.task_seed);
  std::vector<std::vector<std::int32_t>> perms;
  for (std::size_t k = 0; k < spec.permutations; ++k) {
    std::vector<std::int32_t> p(spec.payload);
    std::iota(p.begin(), p.end(), 0);
    if (k > 0) {
      for (std::size_t i = p.size(); i > 1; --i) std::swap(p[i - 1], p[rng.below(i)]);
    }
    perms.push_back(std::move(p));
  }
  return perms;
}

SequenceDataset gen_sequence_dataset(const SequenceSpec& spec) {
  spec.validate();
  SequenceDataset ds;
  ds.spec = spec;
  ds.perms = permutation_table(spec);
  Rng rng(spec.seed);
  ds.samples.reserve(spec.size);
  for (std::size_t i = 0; i < spec.size; ++i) {
    SequenceSample s;
    s.instruction = static_cast<std::int32_t>(rng.below(spec.permutations));
    for (std::size_t j = 0; j < spec.payload; ++j) s.payload.push_back(static_cast<std::int32_t>(rng.below(spec.symbols)));
    for (std::int32_t src : ds.perms[static_cast<std::size_t>(s.instruction)]) s.answer.push_back(s.payload[src]);
    ds.samples.push_back(std::move(s));
  }
  return ds;
}

std::vector<std::int32_t> SequenceDataset::full_sequence(const SequenceSample& s) const {
  std::vector<std::int32_t> seq;
  seq.reserve(2 * spec.payload + 2);
  seq.push_back(instruction_token(s.instruction));
  for (auto p : s.payload) seq.push_back(symbol_token(p));
  seq.push_back(0);
  for (auto a : s.answer) seq.push_back(symbol_token(a));
  return seq;
}

SequenceBatch SequenceDataset::batch(std::span<const std::size_t> indices) const {
  SequenceBatch b;
  b.batch = indices.size();
  b.seq_len = seq_len();
  for (std::size_t idx : indices) {
    const auto seq = full_sequence(samples.at(idx));
    for (std::size_t t = 0; t < b.seq_len; ++t) {
      b.tokens.push_back(seq[t]);
      b.targets.push_back(seq[t + 1]);
      b.mask.push_back(t >= spec.payload + 1 ? 1 : 0);
    }
  }
  return b;
}

SequenceBatch SequenceDataset::all() const {
  std::vector<std::size_t> idx(samples.size());
  std::iota(idx.begin(), idx.end(), 0);
  return batch(idx);
}

std::vector<std::uint8_t> serialize_sequence_dataset(const SequenceDataset& ds) {
  // Records: i32 instruction | i32 payload[P] | i32 answer[P].
  detail::ByteWriter w;
  nlohmann::json header = {{"kind", "sequence"}, {"spec", ds.spec.to_json()}, {"perms", ds.perms},
                           {"records", ds.samples.size()}};
  write_header(w, kSeqMagic, header);
  for (const auto& s : ds.samples) {
    w.put<std::int32_t>(s.instruction);
    for (auto v : s.payload) w.put<std::int32_t>(v);
    for (auto v : s.answer) w.put<std::int32_t>(v);
  }
  return std::move(w.bytes());
}

SequenceDataset parse_sequence_dataset(std::span<const std::uint8_t> bytes) {
  detail::ByteReader r(bytes);
  const auto header = read_header(r, bytes, kSeqMagic);
  SequenceDataset ds;
  std::size_t records = 0;
  json_field([&] {
    ds.spec = SequenceSpec::from_json(header.at("spec"));
    ds.perms = header.at("perms").get<std::vector<std::vector<std::int32_t>>>();
    records = header.at("records").get<std::size_t>();
    return 0;
  });
  const std::size_t P = ds.spec.payload;
  for (std::size_t i = 0; i < records; ++i) {
    SequenceSample s;
    s.instruction = r.get<std::int32_t>();
    s.payload.resize(P);
    s.answer.resize(P);
    for (auto& v : s.payload) v = r.get<std::int32_t>();
    for (auto& v : s.answer) v = r.get<std::int32_t>();
    ds.samples.push_back(std::move(s));
  }
  if (r.remaining() != 0) throw FormatError("trailing bytes after last sequence record");
  return ds;
}

void write_sequence_dataset(const SequenceDataset& ds, const std::string& path) {
  detail::write_file(path, serialize_sequence_dataset(ds));
}

SequenceDataset read_sequence_dataset(const std::string& path) {
  return parse_sequence_dataset(detail::read_file(path));
}

// ---- point reach -----------------------------------------------------------

void ReachSpec::validate() const {
  std::vector<std::string> bad;
  if (episodes < 1) bad.push_back("data.episodes: must be >= 1");
  if (episode_len < 1) bad.push_back("data.episode_len: must be >= 1");
  if (horizon + 1 > episode_len) bad.push_back("data.horizon: horizon + 1 must not exceed data.episode_len");
  if (grid < 4) bad.push_back("data.grid: must be >= 4");
  if (goal_bins < 2) bad.push_back("data.goal_bins: must be >= 2");
  if (!bad.empty()) throw ConfigError(std::move(bad));
}

nlohmann::json ReachSpec::to_json() const {
  return {{"episodes", episodes},       {"seed", seed}, {"horizon", horizon},
          {"episode_len", episode_len}, {"grid", grid}, {"goal_bins", goal_bins}};
}

ReachSpec ReachSpec::from_json(const nlohmann::json& j) {
  ReachSpec s;
  s.episodes = j.at("episodes").get<std::size_t>();
  s.seed = j.at("seed").get<std::uint64_t>();
  s.horizon = j.at("horizon").get<std::size_t>();
  s.episode_len = j.at("episode_len").get<std::size_t>();
  s.grid = j.at("grid").get<std::size_t>();
  s.goal_bins = j.at("goal_bins").get<std::size_t>();
  return s;
}

ReachEpisode sample_episode(Rng& rng) {
  ReachEpisode e;
  e.start = {rng.uniform(), rng.uniform()};
  e.goal = {rng.uniform(), rng.uniform()};
  return e;
}

std::array<double, 2> expert_action(const std::array<double, 2>& pos, const std::array<double, 2>& goal) {
  std::array<double, 2> a{};
  for (std::size_t d = 0; d < 2; ++d) a[d] = std::clamp(kExpertGain * (goal[d] - pos[d]), -1.0, 1.0);
  return a;
}

std::array<double, 2> env_step(const std::array<double, 2>& pos, std::span<const double> action) {
  std::array<double, 2> next{};
  for (std::size_t d = 0; d < 2; ++d)
    next[d] = std::clamp(pos[d] + kStepScale * std::clamp(action[d], -1.0, 1.0), 0.0, 1.0);
  return next;
}

double distance(const std::array<double, 2>& a, const std::array<double, 2>& b) {
  return std::hypot(a[0] - b[0], a[1] - b[1]);
}

Observation observe(const std::array<double, 2>& pos, const std::array<double, 2>& goal, const ReachSpec& spec) {
  Observation o;
  const std::size_t G = spec.grid;
  o.grid.assign(G * G, 0.0f);
  // 3×3 Gaussian blob (sigma = one cell) around the cell holding p.
  auto paint = [&](const std::array<double, 2>& p, double amplitude) {
    const double fx = p[0] * static_cast<double>(G), fy = p[1] * static_cast<double>(G);
    const auto cx = static_cast<long>(std::min(std::floor(fx), static_cast<double>(G - 1)));
    const auto cy = static_cast<long>(std::min(std::floor(fy), static_cast<double>(G - 1)));
    for (long dy = -1; dy <= 1; ++dy)
      for (long dx = -1; dx <= 1; ++dx) {
        const long x = cx + dx, y = cy + dy;
        if (x < 0 || y < 0 || x >= static_cast<long>(G) || y >= static_cast<long>(G)) continue;
        const double ex = static_cast<double>(x) + 0.5 - fx, ey = static_cast<double>(y) + 0.5 - fy;
        const auto v = static_cast<float>(amplitude * std::exp(-0.5 * (ex * ex + ey * ey)));
        float& cell = o.grid[static_cast<std::size_t>(y) * G + static_cast<std::size_t>(x)];
        cell = std::max(cell, v);
      }
  };
  paint(goal, 0.5);
  paint(pos, 1.0);
  o.state = pos;
  const auto bins = static_cast<double>(spec.goal_bins);
  for (std::size_t d = 0; d < 2; ++d) {
    const auto b = static_cast<std::int32_t>(std::clamp(std::floor(goal[d] * bins), 0.0, bins - 1));
    o.instruction[d] = b + static_cast<std::int32_t>(d * spec.goal_bins);
  }
  return o;
}

TrajectoryDataset gen_reach_dataset(const ReachSpec& spec) {
  spec.validate();
  TrajectoryDataset ds;
  ds.spec = spec;
  Rng rng(spec.seed);
  const std::size_t rows = spec.chunk_rows();
  std::vector<double> all_actions;
  for (std::size_t e = 0; e < spec.episodes; ++e) {
    const ReachEpisode ep = sample_episode(rng);
    // Expert actions for the episode plus one chunk of lookahead past the end.
    std::vector<std::array<double, 2>> positions{ep.start};
    std::vector<double> actions;
    for (std::size_t t = 0; t < spec.episode_len + rows; ++t) {
      const auto a = expert_action(positions.back(), ep.goal);
      actions.insert(actions.end(), a.begin(), a.end());
      positions.push_back(env_step(positions.back(), a));
    }
    for (std::size_t t = 0; t < spec.episode_len; t += rows) {
      TrajectorySample s;
      s.obs = observe(positions[t], ep.goal, spec);
      s.chunk.assign(actions.begin() + static_cast<std::ptrdiff_t>(2 * t),
                     actions.begin() + static_cast<std::ptrdiff_t>(2 * (t + rows)));
      all_actions.insert(all_actions.end(), s.chunk.begin(), s.chunk.end());
      ds.samples.push_back(std::move(s));
    }
  }
  ds.codec = ActionCodec::calibrate(all_actions, kActionDims);
  return ds;
}

std::vector<double> expert_final_distances(const ReachSpec& spec) {
  Rng rng(spec.seed);
  std::vector<double> out;
  for (std::size_t e = 0; e < spec.episodes; ++e) {
    const ReachEpisode ep = sample_episode(rng);
    auto p = ep.start;
    for (std::size_t t = 0; t < spec.episode_len; ++t) p = env_step(p, expert_action(p, ep.goal));
    out.push_back(distance(p, ep.goal));
  }
  return out;
}

std::vector<std::uint8_t> serialize_trajectory_dataset(const TrajectoryDataset& ds) {
  // Records: f32 grid[G·G] | f64 state[2] | i32 instruction[2] | f64 chunk[(h+1)·2].
  detail::ByteWriter w;
  nlohmann::json header = {{"kind", "trajectory"},
                           {"d", kActionDims},
                           {"h", ds.spec.horizon},
                           {"grid", ds.spec.grid},
                           {"spec", ds.spec.to_json()},
                           {"codec", ds.codec.to_json()},
                           {"records", ds.samples.size()}};
  write_header(w, kTrajMagic, header);
  for (const auto& s : ds.samples) {
    for (float v : s.obs.grid) w.put<float>(v);
    for (double v : s.obs.state) w.put<double>(v);
    for (auto v : s.obs.instruction) w.put<std::int32_t>(v);
    for (double v : s.chunk) w.put<double>(v);
  }
  return std::move(w.bytes());
}

TrajectoryDataset parse_trajectory_dataset(std::span<const std::uint8_t> bytes) {
  detail::ByteReader r(bytes);
  const auto header = read_header(r, bytes, kTrajMagic);
  TrajectoryDataset ds;
  std::size_t records = 0;
  json_field([&] {
    ds.spec = ReachSpec::from_json(header.at("spec"));
    ds.codec = ActionCodec::from_json(header.at("codec"));
    records = header.at("records").get<std::size_t>();
    if (header.at("d").get<std::size_t>() != kActionDims) throw FormatError("trajectory dataset: unsupported d");
    return 0;
  });
  const std::size_t cells = ds.spec.grid * ds.spec.grid, chunk = ds.spec.chunk_rows() * kActionDims;
  for (std::size_t i = 0; i < records; ++i) {
    TrajectorySample s;
    s.obs.grid.resize(cells);
    for (float& v : s.obs.grid) v = r.get<float>();
    for (double& v : s.obs.state) v = r.get<double>();
    for (auto& v : s.obs.instruction) v = r.get<std::int32_t>();
    s.chunk.resize(chunk);
    for (double& v : s.chunk) v = r.get<double>();
    ds.samples.push_back(std::move(s));
  }
  if (r.remaining() != 0) throw FormatError("trailing bytes after last trajectory record");
  return ds;
}

void write_trajectory_dataset(const TrajectoryDataset& ds, const std::string& path) {
  detail::write_file(path, serialize_trajectory_dataset(ds));
}

TrajectoryDataset read_trajectory_dataset(const std::string& path) {
  return parse_trajectory_dataset(detail::read_file(path));
}

}  // namespace ternkit
