#pragma once

#include <cstdint>
#include <set>
#include <string>
#include <vector>

#include "json.hpp"
#include "ternkit/losses.hpp"
#include "ternkit/model.hpp"
#include "ternkit/optim.hpp"
#include "ternkit/toyenv.hpp"

namespace ternkit {

struct TrainRecord {
  std::uint64_t step = 0;
  double lm_loss = 0.0;
  double aux_loss = 0.0;
  double total_loss = 0.0;
};

// Line-delimited JSON: one object per optimizer step, then one "eval" object.
struct TrainLog {
  std::vector<TrainRecord> records;
  nlohmann::json final_metrics = nlohmann::json::object();

  std::string to_jsonl() const;
  void write(const std::string& path) const;
};

struct SequenceEval {
  double loss = 0.0;      // mean answer-token NLL
  double accuracy = 0.0;  // fraction of answer tokens predicted by argmax
};

SequenceEval evaluate_sequence(const SequenceModel& model, const SequenceDataset& ds, std::size_t chunk = 256);

// Plain task training (used for the full-precision teacher).
struct SequenceTrainConfig {
  OptimizerConfig optim{"adam", 2e-3};
  std::size_t steps = 600;
  std::size_t batch_size = 32;
  std::uint64_t seed = 1;
  void validate() const;
};

TrainLog train_sequence_model(SequenceModel& model, const SequenceDataset& train, const SequenceTrainConfig& cfg);

struct DistillConfig {
  LossWeights weights;
  OptimizerConfig optim{"momentum", 0.01};
  std::size_t steps = 200;
  std::size_t batch_size = 32;
  std::uint64_t seed = 1;
  std::set<std::string> freeze_set{"connector", "decoder"};
  void validate() const;
};

// Copies the teacher and switches every QuantLinear to fake quantization.
// Throws ConfigError when student_cfg describes a different architecture.
SequenceModel init_student_from_teacher(const SequenceModel& teacher, const EncoderConfig& student_cfg);

// One update of L_total = L_LM + lambda·L_aux on the non-frozen student
// parameters. Throws NumericError (with step and loss components) when the
// loss is not finite; parameters are untouched in that case.
TrainRecord distill_step(SequenceModel& student, const SequenceModel& teacher, const SequenceBatch& batch,
                         const DistillConfig& cfg, Optimizer& opt, std::uint64_t step);

TrainLog distill(SequenceModel& student, const SequenceModel& teacher, const SequenceDataset& train,
                 const DistillConfig& cfg);

struct AlignmentReport {
  std::vector<double> per_layer;  // mean over tokens of (1/n)||h_t - s_t||^2

  // One mean-pooled vector per (sample, layer, role).
  struct Row {
    std::size_t sample_id = 0;
    std::size_t layer = 0;
    std::string role;  // "teacher" | "student"
    std::vector<double> values;
  };
  std::vector<Row> rows;

  std::string to_csv() const;
  void write_csv(const std::string& path) const;
};

AlignmentReport eval_alignment(const SequenceModel& student, const SequenceModel& teacher,
                               const SequenceDataset& eval_set);

}  // namespace ternkit
