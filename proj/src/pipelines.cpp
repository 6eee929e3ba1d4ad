#include "ternkit/pipelines.hpp"

#include <cmath>
#include <filesystem>
#include <fstream>

#include "ternkit/checkpoint.hpp"
#include "ternkit/error.hpp"

namespace ternkit {

namespace {

namespace fs = std::filesystem;

nlohmann::json optim_json(const OptimizerConfig& o) {
  return {{"kind", o.kind},   {"learning_rate", o.learning_rate}, {"momentum", o.momentum},
          {"beta1", o.beta1}, {"beta2", o.beta2},                 {"eps", o.eps}};
}

OptimizerConfig read_optim(ConfigReader& r, const std::string& p, OptimizerConfig d) {
  d.kind = r.get_string(p + ".kind", d.kind);
  d.learning_rate = r.get_double(p + ".learning_rate", d.learning_rate);
  d.momentum = r.get_double(p + ".momentum", d.momentum);
  d.beta1 = r.get_double(p + ".beta1", d.beta1);
  d.beta2 = r.get_double(p + ".beta2", d.beta2);
  d.eps = r.get_double(p + ".eps", d.eps);
  return d;
}

SequenceSpec read_seq(ConfigReader& r, const std::string& p, SequenceSpec d) {
  d.size = r.get_size(p + ".size", d.size);
  d.seed = r.get_u64(p + ".seed", d.seed);
  d.payload = r.get_size(p + ".payload", d.payload);
  d.permutations = r.get_size(p + ".permutations", d.permutations);
  d.symbols = r.get_size(p + ".symbols", d.symbols);
  d.task_seed = r.get_u64(p + ".task_seed", d.task_seed);
  return d;
}

// The held-out split shares the task definition with the training split.
SequenceSpec eval_split(const SequenceSpec& data, std::size_t size, std::uint64_t seed) {
  SequenceSpec s = data;
  s.size = size;
  s.seed = seed;
  return s;
}

// Runs fn(), rewriting "from." prefixes of any ConfigError problems to "to.".
template <class Fn>
void check(std::vector<std::string>& out, const std::string& from, const std::string& to, Fn fn) {
  try {
    fn();
  } catch (const ConfigError& e) {
    for (std::string p : e.problems()) {
      if (p.rfind(from + ".", 0) == 0) p = to + p.substr(from.size());
      out.push_back(std::move(p));
    }
  }
}

void throw_if(std::vector<std::string> problems) {
  if (!problems.empty()) throw ConfigError(std::move(problems));
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  out << text;
  if (!out) throw std::runtime_error("cannot write '" + path.string() + "'");
}

fs::path prepare_dir(const std::string& dir) {
  fs::create_directories(dir);
  return fs::path(dir);
}

void check_fits(const SequenceDataset& ds, const EncoderConfig& m, const std::string& section) {
  std::vector<std::string> bad;
  if (ds.vocab_needed() > m.vocab)
    bad.push_back(section + ": task needs " + std::to_string(ds.vocab_needed()) + " tokens but model.vocab is " +
                  std::to_string(m.vocab));
  if (ds.seq_len() > m.max_seq)
    bad.push_back(section + ": sequences of length " + std::to_string(ds.seq_len()) + " exceed model.max_seq " +
                  std::to_string(m.max_seq));
  throw_if(std::move(bad));
}

nlohmann::json eval_json(const SequenceEval& e) { return {{"loss", e.loss}, {"accuracy", e.accuracy}}; }

}  // namespace

// ---------------------------------------------------------------------------

TrainToyConfig::TrainToyConfig() {
  data.size = 4000;
  data.seed = 1;
  eval_data = eval_split(data, 500, 2);
  model.vocab = 32;
  model.max_seq = 16;
  model.quantized = false;
  train.steps = 300;
}

nlohmann::json TrainToyConfig::to_json() const {
  return {{"data", data.to_json()},
          {"eval_data", {{"size", eval_data.size}, {"seed", eval_data.seed}}},
          {"model", model.to_json()},
          {"init_seed", init_seed},
          {"train",
           {{"optimizer", optim_json(train.optim)},
            {"steps", train.steps},
            {"batch_size", train.batch_size},
            {"seed", train.seed}}},
          {"output", {{"dir", output_dir}}}};
}

TrainToyConfig TrainToyConfig::read(ConfigReader& r) {
  TrainToyConfig c;
  c.data = read_seq(r, "data", c.data);
  c.eval_data = eval_split(c.data, r.get_size("eval_data.size", c.eval_data.size),
                           r.get_u64("eval_data.seed", c.eval_data.seed));
  EncoderConfig& m = c.model;
  m.layers = r.get_size("model.layers", m.layers);
  m.hidden = r.get_size("model.hidden", m.hidden);
  m.heads = r.get_size("model.heads", m.heads);
  m.vocab = r.get_size("model.vocab", m.vocab);
  m.max_seq = r.get_size("model.max_seq", m.max_seq);
  m.mlp_ratio = r.get_size("model.mlp_ratio", m.mlp_ratio);
  m.quantized = r.get_bool("model.quantized", m.quantized);
  c.init_seed = r.get_u64("init_seed", c.init_seed);
  c.train.optim = read_optim(r, "train.optimizer", c.train.optim);
  c.train.steps = r.get_size("train.steps", c.train.steps);
  c.train.batch_size = r.get_size("train.batch_size", c.train.batch_size);
  c.train.seed = r.get_u64("train.seed", c.train.seed);
  c.output_dir = r.require_string("output.dir");

  std::vector<std::string> bad = r.problems();
  check(bad, "data", "data", [&] { c.data.validate(); });
  check(bad, "data", "eval_data", [&] { c.eval_data.validate(); });
  check(bad, "model", "model", [&] { c.model.validate(); });
  check(bad, "optimizer", "train.optimizer", [&] { c.train.optim.validate(); });
  check(bad, "train", "train", [&] {
    auto rest = c.train;
    rest.optim = {};
    rest.validate();
  });
  throw_if(std::move(bad));
  return c;
}

TrainToyConfig TrainToyConfig::from_json(const nlohmann::json& j) {
  ConfigReader r(j);
  return read(r);
}

nlohmann::json run_train_toy(const TrainToyConfig& cfg) {
  const SequenceDataset train = gen_sequence_dataset(cfg.data);
  const SequenceDataset eval = gen_sequence_dataset(cfg.eval_data);
  check_fits(train, cfg.model, "data");
  const fs::path dir = prepare_dir(cfg.output_dir);

  SequenceModel model(cfg.model, cfg.init_seed);
  TrainLog log = train_sequence_model(model, train, cfg.train);
  const SequenceEval ev = evaluate_sequence(model, eval);
  log.final_metrics = eval_json(ev);
  log.write((dir / "train_log.jsonl").string());
  save_checkpoint(model, (dir / "teacher.tern").string());

  nlohmann::json summary = {{"command", "train-toy"},
                            {"final_train_loss", log.records.back().total_loss},
                            {"eval", eval_json(ev)},
                            {"checkpoint", "teacher.tern"}};
  write_text(dir / "summary.json", summary.dump(2) + "\n");
  return summary;
}

// ---------------------------------------------------------------------------

DistillRunConfig::DistillRunConfig() {
  const TrainToyConfig toy;
  data = toy.data;
  eval_data = toy.eval_data;
  distill.weights.lambda = 0.1;
  distill.steps = 60;
  distill.batch_size = 16;
}

nlohmann::json DistillRunConfig::to_json() const {
  return {{"teacher", teacher},
          {"data", data.to_json()},
          {"eval_data", {{"size", eval_data.size}, {"seed", eval_data.seed}}},
          {"distill",
           {{"lambda", distill.weights.lambda},
            {"optimizer", optim_json(distill.optim)},
            {"steps", distill.steps},
            {"batch_size", distill.batch_size},
            {"seed", distill.seed},
            {"freeze_set", distill.freeze_set}}},
          {"output", {{"dir", output_dir}}}};
}

DistillRunConfig DistillRunConfig::read(ConfigReader& r) {
  DistillRunConfig c;
  c.teacher = r.require_string("teacher");
  c.data = read_seq(r, "data", c.data);
  c.eval_data = eval_split(c.data, r.get_size("eval_data.size", c.eval_data.size),
                           r.get_u64("eval_data.seed", c.eval_data.seed));
  DistillConfig& d = c.distill;
  d.weights.lambda = r.get_double("distill.lambda", d.weights.lambda);
  d.optim = read_optim(r, "distill.optimizer", d.optim);
  d.steps = r.get_size("distill.steps", d.steps);
  d.batch_size = r.get_size("distill.batch_size", d.batch_size);
  d.seed = r.get_u64("distill.seed", d.seed);
  d.freeze_set = r.get_string_set("distill.freeze_set", d.freeze_set);
  c.output_dir = r.require_string("output.dir");

  std::vector<std::string> bad = r.problems();
  check(bad, "data", "data", [&] { c.data.validate(); });
  check(bad, "data", "eval_data", [&] { c.eval_data.validate(); });
  check(bad, "optimizer", "distill.optimizer", [&] { c.distill.optim.validate(); });
  check(bad, "distill", "distill", [&] {
    DistillConfig rest = c.distill;
    rest.weights = {};
    rest.optim = {};
    rest.validate();
  });
  if (!std::isfinite(c.distill.weights.lambda) || c.distill.weights.lambda < 0.0)
    bad.push_back("distill.lambda: must be finite and >= 0");
  throw_if(std::move(bad));
  return c;
}

DistillRunConfig DistillRunConfig::from_json(const nlohmann::json& j) {
  ConfigReader r(j);
  return read(r);
}

nlohmann::json run_distill(const DistillRunConfig& cfg) {
  const std::unique_ptr<Model> loaded = load_checkpoint(cfg.teacher);
  auto* teacher = dynamic_cast<SequenceModel*>(loaded.get());
  if (teacher == nullptr || teacher->config().quantized || teacher->mode() != Mode::Training)
    throw ConfigError({"teacher: '" + cfg.teacher + "' is not a full-precision sequence checkpoint"});

  const SequenceDataset train = gen_sequence_dataset(cfg.data);
  const SequenceDataset eval = gen_sequence_dataset(cfg.eval_data);
  check_fits(train, teacher->config(), "data");
  const fs::path dir = prepare_dir(cfg.output_dir);

  EncoderConfig student_cfg = teacher->config();
  student_cfg.quantized = true;
  SequenceModel student = init_student_from_teacher(*teacher, student_cfg);
  TrainLog log = distill(student, *teacher, train, cfg.distill);

  const SequenceEval ev = evaluate_sequence(student, eval);
  const SequenceEval tv = evaluate_sequence(*teacher, eval);
  const AlignmentReport align = eval_alignment(student, *teacher, eval);
  log.final_metrics = eval_json(ev);
  log.final_metrics["per_layer_distance"] = align.per_layer;
  log.write((dir / "distill_log.jsonl").string());
  align.write_csv((dir / "alignment.csv").string());
  save_checkpoint(student, (dir / "student.tern").string());

  nlohmann::json summary = {{"command", "distill"},
                            {"lambda", cfg.distill.weights.lambda},
                            {"eval", eval_json(ev)},
                            {"teacher_eval", eval_json(tv)},
                            {"per_layer_distance", align.per_layer},
                            {"checkpoint", "student.tern"}};
  write_text(dir / "summary.json", summary.dump(2) + "\n");
  return summary;
}

// ---------------------------------------------------------------------------

EvalPolicyConfig::EvalPolicyConfig() = default;

nlohmann::json EvalPolicyConfig::to_json() const {
  nlohmann::json j = {{"data", data.to_json()},
                      {"model",
                       {{"patch", model.patch},
                        {"chunk_capacity", model.chunk_capacity},
                        {"layers", model.layers},
                        {"hidden", model.hidden},
                        {"heads", model.heads},
                        {"mlp_ratio", model.mlp_ratio},
                        {"quantized", model.quantized}}},
                      {"init_seed", init_seed},
                      {"train",
                       {{"optimizer", optim_json(train.optim)},
                        {"ar_steps", train.ar_steps},
                        {"l1_steps", train.l1_steps},
                        {"batch_size", train.batch_size},
                        {"linear_decay", train.linear_decay},
                        {"seed", train.seed}}},
                      {"eval", {{"episodes", eval_episodes}, {"seed", eval_seed}, {"random_seed", random_seed}}},
                      {"checkpoint", checkpoint ? nlohmann::json(*checkpoint) : nlohmann::json(nullptr)},
                      {"output", {{"dir", output_dir}}}};
  return j;
}

EvalPolicyConfig EvalPolicyConfig::read(ConfigReader& r) {
  EvalPolicyConfig c;
  ReachSpec& d = c.data;
  d.episodes = r.get_size("data.episodes", d.episodes);
  d.seed = r.get_u64("data.seed", d.seed);
  d.horizon = r.get_size("data.horizon", d.horizon);
  d.episode_len = r.get_size("data.episode_len", d.episode_len);
  d.grid = r.get_size("data.grid", d.grid);
  d.goal_bins = r.get_size("data.goal_bins", d.goal_bins);
  PolicyConfig& m = c.model;
  m.patch = r.get_size("model.patch", m.patch);
  m.chunk_capacity = r.get_size("model.chunk_capacity", m.chunk_capacity);
  m.layers = r.get_size("model.layers", m.layers);
  m.hidden = r.get_size("model.hidden", m.hidden);
  m.heads = r.get_size("model.heads", m.heads);
  m.mlp_ratio = r.get_size("model.mlp_ratio", m.mlp_ratio);
  m.quantized = r.get_bool("model.quantized", m.quantized);
  m.grid = d.grid;
  m.goal_bins = d.goal_bins;
  c.init_seed = r.get_u64("init_seed", c.init_seed);
  PolicyTrainConfig& t = c.train;
  t.optim = read_optim(r, "train.optimizer", t.optim);
  t.ar_steps = r.get_size("train.ar_steps", t.ar_steps);
  t.l1_steps = r.get_size("train.l1_steps", t.l1_steps);
  t.batch_size = r.get_size("train.batch_size", t.batch_size);
  t.linear_decay = r.get_bool("train.linear_decay", t.linear_decay);
  t.seed = r.get_u64("train.seed", t.seed);
  c.eval_episodes = r.get_size("eval.episodes", c.eval_episodes);
  c.eval_seed = r.get_u64("eval.seed", c.eval_seed);
  c.random_seed = r.get_u64("eval.random_seed", c.random_seed);
  c.checkpoint = r.optional_string("checkpoint");
  c.output_dir = r.require_string("output.dir");

  std::vector<std::string> bad = r.problems();
  check(bad, "data", "data", [&] { c.data.validate(); });
  check(bad, "model", "model", [&] { c.model.validate(); });
  check(bad, "optimizer", "train.optimizer", [&] { c.train.optim.validate(); });
  check(bad, "train", "train", [&] {
    auto rest = c.train;
    rest.optim = {};
    rest.validate();
  });
  if (c.data.chunk_rows() > c.model.chunk_capacity)
    bad.push_back("model.chunk_capacity: must be >= data.horizon + 1");
  if (c.eval_episodes < 1) bad.push_back("eval.episodes: must be >= 1");
  throw_if(std::move(bad));
  return c;
}

EvalPolicyConfig EvalPolicyConfig::from_json(const nlohmann::json& j) {
  ConfigReader r(j);
  return read(r);
}

nlohmann::json run_eval_policy(const EvalPolicyConfig& cfg) {
  const fs::path dir = prepare_dir(cfg.output_dir);
  const std::size_t h = cfg.data.horizon;
  std::unique_ptr<PolicyModel> model;
  std::optional<PolicyTrainLog> log;

  if (cfg.checkpoint) {
    std::unique_ptr<Model> loaded = load_checkpoint(*cfg.checkpoint);
    auto* p = dynamic_cast<PolicyModel*>(loaded.get());
    if (p == nullptr) throw ConfigError({"checkpoint: '" + *cfg.checkpoint + "' is not a policy checkpoint"});
    std::vector<std::string> bad;
    if (p->config().grid != cfg.data.grid) bad.push_back("data.grid: differs from the checkpoint's grid");
    if (p->config().goal_bins != cfg.data.goal_bins)
      bad.push_back("data.goal_bins: differs from the checkpoint's goal_bins");
    if (p->config().chunk_capacity < h + 1) bad.push_back("data.horizon: exceeds the checkpoint's chunk capacity");
    throw_if(std::move(bad));
    loaded.release();
    model.reset(p);
  } else {
    const TrajectoryDataset data = gen_reach_dataset(cfg.data);
    PolicyConfig pc = cfg.model;
    pc.codec = data.codec;
    model = std::make_unique<PolicyModel>(pc, cfg.init_seed);
    log = train_policy(*model, data, cfg.train);
    if (pc.quantized) model->set_mode(Mode::Inference);
  }

  const RolloutStats s = evaluate_rollouts(model_policy(*model, h), cfg.data, cfg.eval_episodes, cfg.eval_seed);
  const RolloutStats rnd = evaluate_rollouts(random_policy(h, cfg.random_seed), cfg.data, cfg.eval_episodes,
                                             cfg.eval_seed);
  nlohmann::json train_info = nullptr;
  if (log) {
    log->final_metrics = {{"success_rate", s.success_rate}, {"mean_final_distance", s.mean_final_distance}};
    log->write((dir / "policy_log.jsonl").string());
    save_checkpoint(*model, (dir / "policy.tern").string());
    train_info = {{"final_loss", log->records.back().loss}, {"steps", log->records.size()}};
  }
  nlohmann::json summary = {{"command", "eval-policy"},
                            {"episodes", s.episodes},
                            {"horizon", h},
                            {"success_rate", s.success_rate},
                            {"mean_final_distance", s.mean_final_distance},
                            {"chunks_requested", s.chunks_requested},
                            {"random_baseline",
                             {{"success_rate", rnd.success_rate}, {"mean_final_distance", rnd.mean_final_distance}}},
                            {"mode", to_string(model->mode())},
                            {"train", train_info}};
  if (!cfg.checkpoint) summary["checkpoint"] = "policy.tern";
  write_text(dir / "summary.json", summary.dump(2) + "\n");
  return summary;
}

}  // namespace ternkit
