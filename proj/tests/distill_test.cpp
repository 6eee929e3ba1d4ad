#include <gtest/gtest.h>

#include <cmath>
#include <sstream>

#include "ternkit/distill.hpp"
#include "ternkit/error.hpp"

using namespace ternkit;

namespace {

EncoderConfig tiny(bool quantized = false) {
  EncoderConfig c;
  c.layers = 2;
  c.hidden = 32;
  c.heads = 4;
  c.vocab = 32;
  c.max_seq = 16;
  c.mlp_ratio = 2;
  c.quantized = quantized;
  return c;
}

const SequenceDataset& train_set() {
  static const SequenceDataset ds = [] {
    SequenceSpec s;
    s.size = 256;
    s.seed = 1;
    return gen_sequence_dataset(s);
  }();
  return ds;
}

const SequenceDataset& eval_set() {
  static const SequenceDataset ds = [] {
    SequenceSpec s;
    s.size = 24;
    s.seed = 2;
    return gen_sequence_dataset(s);
  }();
  return ds;
}

DistillConfig quick(double lambda, std::size_t steps = 4) {
  DistillConfig c;
  c.weights.lambda = lambda;
  c.steps = steps;
  c.batch_size = 8;
  return c;
}

std::vector<Tensor> snapshot(SequenceModel& m, const std::set<std::string>& groups) {
  std::vector<Tensor> out;
  for (Parameter* p : m.parameters())
    if (groups.empty() || groups.contains(p->group)) out.push_back(p->value);
  return out;
}

}  // namespace

TEST(InitStudent, UnquantizedCopyMatchesTeacherBitwise) {
  SequenceModel teacher(tiny(), 1);
  SequenceModel student = init_student_from_teacher(teacher, tiny(false));
  const auto b = eval_set().all();
  Tape ta, tb;
  EXPECT_EQ(teacher.forward(ta, b.tokens, b.seq_len).logits.value().data,
            student.forward(tb, b.tokens, b.seq_len).logits.value().data);
}

TEST(InitStudent, QuantizedCopyHasPositiveAux) {
  SequenceModel teacher(tiny(), 1);
  SequenceModel student = init_student_from_teacher(teacher, tiny(true));
  for (QuantLinear* ql : student.quant_linears()) EXPECT_TRUE(ql->quantize);
  const auto b = eval_set().all();
  Tape ta, tb;
  const auto th = teacher.encoder_hidden_states(ta, b.tokens, b.seq_len);
  const auto sh = student.encoder_hidden_states(tb, b.tokens, b.seq_len);
  const double aux = aux_loss(th, sh).value().data[0];
  EXPECT_TRUE(std::isfinite(aux));
  EXPECT_GT(aux, 0.0);
}

TEST(InitStudent, ArchitectureMismatchIsConfigError) {
  SequenceModel teacher(tiny(), 1);
  EncoderConfig other = tiny(true);
  other.layers = 3;
  EXPECT_THROW(init_student_from_teacher(teacher, other), ConfigError);
  other = tiny(true);
  other.hidden = 64;
  EXPECT_THROW(init_student_from_teacher(teacher, other), ConfigError);
}

TEST(DistillConfig, FreezeSetMustCoverConnectorAndDecoder) {
  DistillConfig c;
  c.freeze_set = {"decoder"};
  try {
    c.validate();
    FAIL();
  } catch (const ConfigError& e) {
    EXPECT_NE(std::string(e.what()).find("connector"), std::string::npos);
  }
  c.freeze_set = {"connector", "decoder"};
  EXPECT_NO_THROW(c.validate());
  c.steps = 0;
  EXPECT_THROW(c.validate(), ConfigError);
}

TEST(Distill, FrozenGroupsStayBitIdentical) {
  SequenceModel teacher(tiny(), 3);
  SequenceModel student = init_student_from_teacher(teacher, tiny(true));
  const std::set<std::string> frozen{"connector", "decoder"};
  const auto before_frozen = snapshot(student, frozen);
  const auto before_encoder = snapshot(student, {"encoder"});
  distill(student, teacher, train_set(), quick(0.1, 6));
  const auto after_frozen = snapshot(student, frozen);
  for (std::size_t i = 0; i < before_frozen.size(); ++i) EXPECT_EQ(before_frozen[i].data, after_frozen[i].data);
  EXPECT_EQ(snapshot(teacher, frozen).size(), after_frozen.size());
  for (std::size_t i = 0; i < after_frozen.size(); ++i)
    EXPECT_EQ(snapshot(teacher, frozen)[i].data, after_frozen[i].data);
  const auto after_encoder = snapshot(student, {"encoder"});
  bool moved = false;
  for (std::size_t i = 0; i < before_encoder.size(); ++i) moved |= before_encoder[i].data != after_encoder[i].data;
  EXPECT_TRUE(moved);
}

TEST(Distill, TeacherIsNotModified) {
  SequenceModel teacher(tiny(), 3);
  const auto before = snapshot(teacher, {});
  SequenceModel student = init_student_from_teacher(teacher, tiny(true));
  distill(student, teacher, train_set(), quick(0.1, 3));
  const auto after = snapshot(teacher, {});
  for (std::size_t i = 0; i < before.size(); ++i) EXPECT_EQ(before[i].data, after[i].data);
}

TEST(Distill, ZeroLambdaTotalIsLmLoss) {
  SequenceModel teacher(tiny(), 4);
  SequenceModel student = init_student_from_teacher(teacher, tiny(true));
  const auto log = distill(student, teacher, train_set(), quick(0.0, 5));
  ASSERT_EQ(log.records.size(), 5u);
  for (const auto& r : log.records) {
    EXPECT_EQ(r.total_loss, r.lm_loss);
    EXPECT_GT(r.aux_loss, 0.0);
  }
}

TEST(Distill, TotalCombinesComponents) {
  SequenceModel teacher(tiny(), 4);
  SequenceModel student = init_student_from_teacher(teacher, tiny(true));
  const auto log = distill(student, teacher, train_set(), quick(0.1, 3));
  for (const auto& r : log.records) EXPECT_NEAR(r.total_loss, r.lm_loss + 0.1 * r.aux_loss, 1e-12);
}

TEST(Distill, ZeroLearningRateLeavesAllParametersUnchanged) {
  SequenceModel teacher(tiny(), 5);
  SequenceModel student = init_student_from_teacher(teacher, tiny(true));
  const auto before = snapshot(student, {});
  DistillConfig c = quick(0.1, 3);
  c.optim.learning_rate = 0.0;
  distill(student, teacher, train_set(), c);
  const auto after = snapshot(student, {});
  for (std::size_t i = 0; i < before.size(); ++i) EXPECT_EQ(before[i].data, after[i].data);
}

TEST(Distill, SameSeedSameLogAndWeights) {
  SequenceModel teacher(tiny(), 6);
  auto run = [&] {
    SequenceModel s = init_student_from_teacher(teacher, tiny(true));
    const auto log = distill(s, teacher, train_set(), quick(0.1, 5));
    return std::make_pair(log.to_jsonl(), snapshot(s, {}));
  };
  const auto a = run();
  const auto b = run();
  EXPECT_EQ(a.first, b.first);
  for (std::size_t i = 0; i < a.second.size(); ++i) EXPECT_EQ(a.second[i].data, b.second[i].data);
}

TEST(Distill, NonFiniteLossReportsStepAndComponents) {
  SequenceModel teacher(tiny(), 7);
  SequenceModel student = init_student_from_teacher(teacher, tiny(false));
  student.head.weight.value.data[0] = std::nan("");
  const auto before = snapshot(student, {"encoder"});
  DistillConfig c = quick(0.1, 2);
  Optimizer opt(c.optim);
  const auto b = train_set().batch(std::vector<std::size_t>{0, 1, 2});
  try {
    distill_step(student, teacher, b, c, opt, 17);
    FAIL();
  } catch (const NumericError& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find("step 17"), std::string::npos) << msg;
    EXPECT_NE(msg.find("lm_loss"), std::string::npos);
    EXPECT_NE(msg.find("aux_loss"), std::string::npos);
  }
  const auto after = snapshot(student, {"encoder"});
  for (std::size_t i = 0; i < before.size(); ++i) EXPECT_EQ(before[i].data, after[i].data);
}

TEST(TrainLog, OneRecordPerStepThenEval) {
  SequenceModel teacher(tiny(), 8);
  SequenceModel student = init_student_from_teacher(teacher, tiny(true));
  auto log = distill(student, teacher, train_set(), quick(0.1, 4));
  log.final_metrics = {{"loss", 1.5}};
  std::istringstream in(log.to_jsonl());
  std::string line;
  std::size_t n = 0;
  while (std::getline(in, line)) {
    const auto j = nlohmann::json::parse(line);
    if (n < 4) {
      EXPECT_EQ(j.at("step").get<std::size_t>(), n);
      EXPECT_TRUE(j.contains("lm_loss") && j.contains("aux_loss") && j.contains("total_loss"));
    } else {
      EXPECT_EQ(j.at("eval").at("loss").get<double>(), 1.5);
    }
    ++n;
  }
  EXPECT_EQ(n, 5u);
}

TEST(Alignment, TeacherAgainstItselfIsZero) {
  SequenceModel teacher(tiny(), 9);
  const auto rep = eval_alignment(teacher, teacher, eval_set());
  ASSERT_EQ(rep.per_layer.size(), 2u);
  for (double d : rep.per_layer) EXPECT_EQ(d, 0.0);
}

TEST(Alignment, ExportRowCountAndHeader) {
  SequenceModel teacher(tiny(), 9);
  SequenceModel student = init_student_from_teacher(teacher, tiny(true));
  const auto rep = eval_alignment(student, teacher, eval_set());
  EXPECT_EQ(rep.rows.size(), eval_set().samples.size() * 2 * 2);
  for (double d : rep.per_layer) EXPECT_GT(d, 0.0);
  const std::string csv = rep.to_csv();
  std::istringstream in(csv);
  std::string header;
  std::getline(in, header);
  EXPECT_EQ(header.rfind("sample_id,layer,role,v0,", 0), 0u);
  EXPECT_NE(header.find(",v31"), std::string::npos);
  std::size_t lines = 0, teacher_rows = 0;
  for (std::string l; std::getline(in, l); ++lines) teacher_rows += l.find(",teacher,") != std::string::npos;
  EXPECT_EQ(lines, rep.rows.size());
  EXPECT_EQ(teacher_rows, rep.rows.size() / 2);
}

TEST(TeacherTraining, LossDecreases) {
  SequenceModel m(tiny(), 10);
  SequenceTrainConfig c;
  c.steps = 60;
  c.batch_size = 16;
  const double before = evaluate_sequence(m, eval_set()).loss;
  train_sequence_model(m, train_set(), c);
  EXPECT_LT(evaluate_sequence(m, eval_set()).loss, before);
}
