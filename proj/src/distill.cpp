#include "ternkit/distill.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <sstream>

#include "ternkit/error.hpp"

namespace ternkit {

namespace {

std::string fmt_double(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

std::vector<std::size_t> range_indices(std::size_t begin, std::size_t end) {
  std::vector<std::size_t> idx(end - begin);
  std::iota(idx.begin(), idx.end(), begin);
  return idx;
}

}  // namespace

std::string TrainLog::to_jsonl() const {
  std::string out;
  for (const auto& r : records) {
    nlohmann::json j = {{"step", r.step}, {"lm_loss", r.lm_loss}, {"aux_loss", r.aux_loss},
                        {"total_loss", r.total_loss}};
    out += j.dump() + "\n";
  }
  out += nlohmann::json{{"eval", final_metrics}}.dump() + "\n";
  return out;
}

void TrainLog::write(const std::string& path) const {
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw std::runtime_error("cannot write " + path);
  f << to_jsonl();
}

SequenceEval evaluate_sequence(const SequenceModel& model, const SequenceDataset& ds, std::size_t chunk) {
  double nll = 0.0;
  std::size_t correct = 0, total = 0;
  for (std::size_t begin = 0; begin < ds.samples.size(); begin += chunk) {
    const auto idx = range_indices(begin, std::min(begin + chunk, ds.samples.size()));
    const SequenceBatch b = ds.batch(idx);
    Tape tape;
    const Tensor& logits = model.forward(tape, b.tokens, b.seq_len).logits.value();
    const std::size_t V = logits.cols();
    for (std::size_t r = 0; r < b.tokens.size(); ++r) {
      if (!b.mask[r]) continue;
      const auto row = logits.row(r);
      double mx = row[0];
      std::size_t arg = 0;
      for (std::size_t v = 1; v < V; ++v)
        if (row[v] > mx) {
          mx = row[v];
          arg = v;
        }
      double z = 0.0;
      for (double x : row) z += std::exp(x - mx);
      nll += std::log(z) + mx - row[static_cast<std::size_t>(b.targets[r])];
      correct += arg == static_cast<std::size_t>(b.targets[r]) ? 1 : 0;
      ++total;
    }
  }
  return {nll / static_cast<double>(total), static_cast<double>(correct) / static_cast<double>(total)};
}

void SequenceTrainConfig::validate() const {
  optim.validate();
  std::vector<std::string> bad;
  if (steps < 1) bad.push_back("train.steps: must be >= 1");
  if (batch_size < 1) bad.push_back("train.batch_size: must be >= 1");
  if (!bad.empty()) throw ConfigError(std::move(bad));
}

TrainLog train_sequence_model(SequenceModel& model, const SequenceDataset& train, const SequenceTrainConfig& cfg) {
  cfg.validate();
  Rng rng(cfg.seed);
  Optimizer opt(cfg.optim);
  TrainLog log;
  auto params = model.parameters();
  for (std::size_t s = 0; s < cfg.steps; ++s) {
    const SequenceBatch b = train.batch(sample_batch(rng, train.samples.size(), cfg.batch_size));
    Tape tape;
    Var loss = lm_loss(model.forward(tape, b.tokens, b.seq_len).logits, b.targets, b.mask);
    const double lm = loss.value().data[0];
    if (!std::isfinite(lm)) throw NumericError("step " + std::to_string(s) + ": lm_loss=" + fmt_double(lm));
    tape.backward(loss);
    opt.step(params, tape);
    log.records.push_back({s, lm, 0.0, lm});
  }
  return log;
}

void DistillConfig::validate() const {
  weights.validate();
  optim.validate();
  std::vector<std::string> bad;
  if (steps < 1) bad.push_back("distill.steps: must be >= 1");
  if (batch_size < 1) bad.push_back("distill.batch_size: must be >= 1");
  for (const char* g : {"connector", "decoder"})
    if (!freeze_set.contains(g)) bad.push_back(std::string("distill.freeze_set: must include \"") + g + "\"");
  if (!bad.empty()) throw ConfigError(std::move(bad));
}

SequenceModel init_student_from_teacher(const SequenceModel& teacher, const EncoderConfig& student_cfg) {
  if (!teacher.config().same_shape(student_cfg)) {
    throw ConfigError({"student config " + student_cfg.to_json().dump() + " does not match teacher " +
                       teacher.config().to_json().dump()});
  }
  if (teacher.mode() != Mode::Training) throw ContractError("teacher must be in training mode (master weights)");
  SequenceModel student = teacher;
  student.set_quantized(student_cfg.quantized);
  return student;
}

TrainRecord distill_step(SequenceModel& student, const SequenceModel& teacher, const SequenceBatch& batch,
                         const DistillConfig& cfg, Optimizer& opt, std::uint64_t step) {
  Tape teacher_tape;
  const auto teacher_h = teacher.encoder_hidden_states(teacher_tape, batch.tokens, batch.seq_len);

  Tape tape;
  const SequenceOutput out = student.forward(tape, batch.tokens, batch.seq_len);
  Var lm = lm_loss(out.logits, batch.targets, batch.mask);
  Var aux = aux_loss(teacher_h, out.hiddens);
  Var total = total_loss(lm, aux, cfg.weights);
  TrainRecord rec{step, lm.value().data[0], aux.value().data[0], total.value().data[0]};
  if (!std::isfinite(rec.total_loss) || !std::isfinite(rec.lm_loss) || !std::isfinite(rec.aux_loss)) {
    throw NumericError("non-finite loss at step " + std::to_string(step) + ": lm_loss=" + fmt_double(rec.lm_loss) +
                       " aux_loss=" + fmt_double(rec.aux_loss) + " total_loss=" + fmt_double(rec.total_loss));
  }
  tape.backward(total);
  auto params = student.parameters();
  opt.step(params, tape, cfg.freeze_set);
  return rec;
}

TrainLog distill(SequenceModel& student, const SequenceModel& teacher, const SequenceDataset& train,
                 const DistillConfig& cfg) {
  cfg.validate();
  student.set_frozen(cfg.freeze_set);
  Optimizer opt(cfg.optim);
  Rng rng(cfg.seed);
  TrainLog log;
  for (std::size_t s = 0; s < cfg.steps; ++s) {
    const SequenceBatch b = train.batch(sample_batch(rng, train.samples.size(), cfg.batch_size));
    log.records.push_back(distill_step(student, teacher, b, cfg, opt, s));
  }
  return log;
}

AlignmentReport eval_alignment(const SequenceModel& student, const SequenceModel& teacher,
                               const SequenceDataset& eval_set) {
  const std::size_t L = teacher.config().layers, n = teacher.config().hidden, T = eval_set.seq_len();
  AlignmentReport rep;
  rep.per_layer.assign(L, 0.0);
  const SequenceBatch b = eval_set.all();
  Tape tt, ts;
  const auto th = teacher.encoder_hidden_states(tt, b.tokens, b.seq_len);
  const auto sh = student.encoder_hidden_states(ts, b.tokens, b.seq_len);
  if (th.size() != sh.size()) throw DimensionError("eval_alignment: teacher and student depth differ");
  const std::size_t B = b.batch;
  for (std::size_t l = 0; l < L; ++l) {
    const Tensor& tv = th[l].value();
    const Tensor& sv = sh[l].value();
    double acc = 0.0;
    for (std::size_t i = 0; i < tv.numel(); ++i) acc += (tv.data[i] - sv.data[i]) * (tv.data[i] - sv.data[i]);
    rep.per_layer[l] = acc / static_cast<double>(tv.numel());
  }
  for (std::size_t s = 0; s < B; ++s)
    for (std::size_t l = 0; l < L; ++l)
      for (int role = 0; role < 2; ++role) {
        const Tensor& h = role == 0 ? th[l].value() : sh[l].value();
        AlignmentReport::Row row{s, l, role == 0 ? "teacher" : "student", std::vector<double>(n, 0.0)};
        for (std::size_t t = 0; t < T; ++t)
          for (std::size_t j = 0; j < n; ++j) row.values[j] += h.at(s * T + t, j) / static_cast<double>(T);
        rep.rows.push_back(std::move(row));
      }
  return rep;
}

std::string AlignmentReport::to_csv() const {
  std::ostringstream out;
  out << "sample_id,layer,role";
  const std::size_t n = rows.empty() ? 0 : rows[0].values.size();
  for (std::size_t j = 0; j < n; ++j) out << ",v" << j;
  out << "\n";
  for (const auto& r : rows) {
    out << r.sample_id << "," << r.layer << "," << r.role;
    for (double v : r.values) out << "," << fmt_double(v);
    out << "\n";
  }
  return out.str();
}

void AlignmentReport::write_csv(const std::string& path) const {
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw std::runtime_error("cannot write " + path);
  f << to_csv();
}

}  // namespace ternkit
