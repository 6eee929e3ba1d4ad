#include <gtest/gtest.h>
#include <sys/wait.h>
#include <unistd.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include "json.hpp"

namespace fs = std::filesystem;

namespace {

struct Outcome {
  int code = -1;
  std::string out;
  std::string err;
};

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

fs::path scratch(const std::string& name) {
  const fs::path p = fs::path(::testing::TempDir()) / ("ternctl_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

Outcome ternctl(const std::string& args) {
  const fs::path dir = fs::path(::testing::TempDir());
  const std::string tag = std::to_string(::getpid());
  const fs::path out = dir / ("ternctl_stdout_" + tag), err = dir / ("ternctl_stderr_" + tag);
  const std::string cmd = std::string(TERNCTL_PATH) + " " + args + " >" + out.string() + " 2>" + err.string();
  const int status = std::system(cmd.c_str());
  Outcome r;
  r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  r.out = slurp(out);
  r.err = slurp(err);
  return r;
}

void write_json(const fs::path& p, const nlohmann::json& j) { std::ofstream(p) << j.dump(2); }

nlohmann::json tiny_toy(const fs::path& out_dir) {
  nlohmann::json j = nlohmann::json::parse(ternctl("train-toy --print-config").out);
  j["data"]["size"] = 64;
  j["eval_data"]["size"] = 16;
  j["model"]["hidden"] = 32;
  j["train"]["steps"] = 4;
  j["train"]["batch_size"] = 8;
  j["output"]["dir"] = out_dir.string();
  return j;
}

}  // namespace

TEST(Cli, UsageErrorsExitWithOne) {
  EXPECT_EQ(ternctl("").code, 1);
  EXPECT_EQ(ternctl("frobnicate").code, 1);
  EXPECT_EQ(ternctl("inspect").code, 1);
  EXPECT_EQ(ternctl("--help").code, 0);
}

TEST(Cli, PrintConfigIsValidJsonForEveryPipeline) {
  for (const char* sub : {"train-toy", "distill", "eval-policy"}) {
    const Outcome r = ternctl(std::string(sub) + " --print-config");
    EXPECT_EQ(r.code, 0) << sub;
    const auto j = nlohmann::json::parse(r.out);
    EXPECT_TRUE(j.at("output").contains("dir")) << sub;
  }
}

TEST(Cli, MissingRequiredFieldExitsOneAndNamesIt) {
  const fs::path dir = scratch("missing");
  write_json(dir / "c.json", {{"distill", {{"lambda", 0.1}}}, {"output", {{"dir", (dir / "o").string()}}}});
  const Outcome r = ternctl("distill --config " + (dir / "c.json").string());
  EXPECT_EQ(r.code, 1);
  EXPECT_NE(r.err.find("teacher"), std::string::npos) << r.err;
}

TEST(Cli, MalformedConfigExitsOne) {
  const fs::path dir = scratch("malformed");
  std::ofstream(dir / "c.json") << "{ not json";
  EXPECT_EQ(ternctl("train-toy --config " + (dir / "c.json").string()).code, 1);
  EXPECT_EQ(ternctl("train-toy --config " + (dir / "absent.json").string()).code, 1);
}

TEST(Cli, CorruptCheckpointExitsTwo) {
  const fs::path dir = scratch("corrupt");
  std::ofstream(dir / "bad.tern", std::ios::binary) << "TERN\x01\x00\x00\x00\xff";
  EXPECT_EQ(ternctl("inspect --checkpoint " + (dir / "bad.tern").string()).code, 2);
  EXPECT_EQ(ternctl("quantize --in " + (dir / "bad.tern").string() + " --out " + (dir / "o.tern").string()).code, 2);
  EXPECT_EQ(ternctl("inspect --checkpoint " + (dir / "absent.tern").string()).code, 2);
}

TEST(Cli, DivergingTrainingExitsThree) {
  const fs::path dir = scratch("diverge");
  auto j = tiny_toy(dir / "o");
  j["train"]["optimizer"]["kind"] = "momentum";
  j["train"]["optimizer"]["learning_rate"] = 1e300;
  write_json(dir / "c.json", j);
  const Outcome r = ternctl("train-toy --config " + (dir / "c.json").string());
  EXPECT_EQ(r.code, 3) << r.err;
}

TEST(Cli, TrainQuantizeInspectRoundTrip) {
  const fs::path dir = scratch("flow");
  write_json(dir / "toy.json", tiny_toy(dir / "toy"));
  ASSERT_EQ(ternctl("train-toy --config " + (dir / "toy.json").string()).code, 0);
  for (const char* f : {"teacher.tern", "train_log.jsonl", "summary.json"}) EXPECT_TRUE(fs::exists(dir / "toy" / f)) << f;

  nlohmann::json d = nlohmann::json::parse(ternctl("distill --print-config").out);
  d["teacher"] = (dir / "toy" / "teacher.tern").string();
  d["data"]["size"] = 64;
  d["eval_data"]["size"] = 8;
  d["distill"]["steps"] = 3;
  d["distill"]["batch_size"] = 8;
  d["output"]["dir"] = (dir / "student").string();
  write_json(dir / "distill.json", d);
  const Outcome dr = ternctl("distill --config " + (dir / "distill.json").string());
  ASSERT_EQ(dr.code, 0) << dr.err;
  for (const char* f : {"student.tern", "distill_log.jsonl", "alignment.csv", "summary.json"})
    EXPECT_TRUE(fs::exists(dir / "student" / f)) << f;

  const std::string student = (dir / "student" / "student.tern").string();
  const std::string packed = (dir / "student_inf.tern").string();
  const Outcome q = ternctl("quantize --in " + student + " --out " + packed);
  ASSERT_EQ(q.code, 0) << q.err;
  EXPECT_NE(q.out.find("ternary2"), std::string::npos);
  EXPECT_LT(fs::file_size(packed), fs::file_size(student));

  const Outcome again = ternctl("quantize --in " + packed + " --out " + (dir / "again.tern").string());
  EXPECT_EQ(again.code, 0);
  EXPECT_NE(again.out.find("no-op"), std::string::npos);
  EXPECT_EQ(slurp(packed), slurp(dir / "again.tern"));

  const Outcome ins = ternctl("inspect --json --checkpoint " + packed);
  ASSERT_EQ(ins.code, 0);
  const auto t = nlohmann::json::parse(ins.out);
  EXPECT_EQ(t.at("mode"), "inference");
  std::size_t sum = 0;
  for (const auto& row : t.at("rows")) sum += row.at("stored_bytes").get<std::size_t>();
  EXPECT_EQ(sum, t.at("total").at("stored_bytes").get<std::size_t>());
}

TEST(Cli, SameConfigTwiceGivesIdenticalArtifacts) {
  const fs::path dir = scratch("determinism");
  for (const char* run : {"a", "b"}) {
    write_json(dir / (std::string(run) + ".json"), tiny_toy(dir / run));
    ASSERT_EQ(ternctl("train-toy --config " + (dir / (std::string(run) + ".json")).string()).code, 0);
  }
  for (const char* f : {"teacher.tern", "train_log.jsonl", "summary.json"})
    EXPECT_EQ(slurp(dir / "a" / f), slurp(dir / "b" / f)) << f;
}

TEST(Cli, BenchWritesAVersionedReport) {
  const fs::path dir = scratch("bench");
  const Outcome r = ternctl("bench --shapes 32,48x40 --reps 10 --out " + (dir / "r.json").string());
  ASSERT_EQ(r.code, 0) << r.err;
  const auto j = nlohmann::json::parse(slurp(dir / "r.json"));
  EXPECT_EQ(j.at("format_version"), 1);
  EXPECT_EQ(j.at("cases").size(), 2u);
  EXPECT_EQ(j.at("cases")[0].at("counters").at("float_muls"), 2 * 32 + 3);
  EXPECT_EQ(ternctl("bench --shapes 32 --reps 3 --out " + (dir / "r2.json").string()).code, 1);
}
