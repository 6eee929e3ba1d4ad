#include <cstdio>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>

#include "CLI11.hpp"
#include "ternkit/checkpoint.hpp"
#include "ternkit/config.hpp"
#include "ternkit/error.hpp"
#include "ternkit/pipelines.hpp"
#include "ternkit/report.hpp"

using namespace ternkit;

namespace {

enum Exit { kOk = 0, kUsage = 1, kData = 2, kNumeric = 3 };

void write_json(const std::string& path, const nlohmann::json& j) {
  std::ofstream out(path, std::ios::binary);
  out << j.dump(2) << "\n";
  if (!out) throw std::runtime_error("cannot write " + path);
}

int cmd_quantize(const std::string& in, const std::string& out) {
  const QuantizeResult r = quantize_checkpoint(in, out);
  if (r.already_inference) {
    std::cout << "no-op: " << in << " is already an inference checkpoint; copied unchanged to " << out << "\n";
    return kOk;
  }
  std::cout << r.table.to_text();
  std::cout << "input " << r.input_bytes << " B, output " << r.output_bytes << " B, predicted "
            << r.predicted_output_bytes << " B\n";
  return kOk;
}

int cmd_inspect(const std::string& path, bool as_json) {
  const MemoryTable t = memory_table(read_checkpoint(path));
  if (as_json)
    std::cout << t.to_json().dump(2) << "\n";
  else
    std::cout << t.to_text();
  return kOk;
}

int cmd_bench(const BenchOptions& opts, const std::string& out) {
  const BenchReport rep = run_bench(opts);
  write_json(out, rep.to_json());
  std::printf("%6s %6s %14s %14s %14s %8s %12s\n", "m", "n", "ternary_us", "linear_us", "float_us", "speedup",
              "float_muls");
  for (const BenchCase& c : rep.cases)
    std::printf("%6zu %6zu %14.2f %14.2f %14.2f %8.2f %12llu\n", c.m, c.n, c.ternary_kernel.median_us,
                c.ternary_linear.median_us, c.float_baseline.median_us, c.speedup(),
                static_cast<unsigned long long>(c.counters.float_muls));
  std::cout << "report written to " << out << "\n";
  return kOk;
}

template <class Config, class Run>
int cmd_pipeline(const std::optional<std::string>& config_path, bool print_config, Config defaults, Run run) {
  if (print_config) {
    std::cout << defaults.to_json().dump(2) << "\n";
    return kOk;
  }
  if (!config_path) throw ConfigError({"--config: required unless --print-config is given"});
  ConfigReader reader = ConfigReader::from_file(*config_path);
  const Config cfg = Config::read(reader);
  std::cout << run(cfg).dump(2) << "\n";
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"ternkit: ternary-weight models, kernels and toy pipelines"};
  app.require_subcommand(1);

  std::string q_in, q_out;
  auto* quantize = app.add_subcommand("quantize", "Pack a training checkpoint into an inference checkpoint");
  quantize->add_option("--in", q_in, "Training-mode checkpoint")->required();
  quantize->add_option("--out", q_out, "Destination for the inference checkpoint")->required();

  std::string i_path;
  bool i_json = false;
  auto* inspect = app.add_subcommand("inspect", "Print the per-layer memory table of a checkpoint");
  inspect->add_option("--checkpoint", i_path, "Checkpoint file")->required();
  inspect->add_flag("--json", i_json, "Emit JSON instead of a text table");

  BenchOptions bench_opts;
  std::string b_shapes = "64,256,1024,2048", b_out;
  auto* bench = app.add_subcommand("bench", "Time the packed ternary matvec against a float baseline");
  bench->add_option("--shapes", b_shapes, "Comma-separated n or mxn list")->capture_default_str();
  bench->add_option("--reps", bench_opts.reps, "Timed repetitions per kernel (>= 10)")->capture_default_str();
  bench->add_option("--warmup", bench_opts.warmup, "Untimed warmup runs")->capture_default_str();
  bench->add_option("--threads", bench_opts.threads, "Also time a row-split run on this many threads")
      ->capture_default_str();
  bench->add_option("--seed", bench_opts.seed, "Seed for the random matrices")->capture_default_str();
  bench->add_option("--out", b_out, "Path of the JSON report")->required();

  struct PipelineFlags {
    std::optional<std::string> config;
    bool print_config = false;
  };
  PipelineFlags toy_flags, distill_flags, policy_flags;
  auto add_pipeline = [&](const std::string& name, const std::string& help, PipelineFlags& f) {
    auto* sub = app.add_subcommand(name, help);
    sub->add_option("--config", f.config, "JSON config file");
    sub->add_flag("--print-config", f.print_config, "Print the default config and exit");
    return sub;
  };
  auto* train_toy = add_pipeline("train-toy", "Train the full-precision teacher on the sequence task", toy_flags);
  auto* distill_cmd = add_pipeline("distill", "Distill a ternary student from a teacher checkpoint", distill_flags);
  auto* eval_policy = add_pipeline("eval-policy", "Train and evaluate the reach policy", policy_flags);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kUsage;
  }

  try {
    if (*quantize) return cmd_quantize(q_in, q_out);
    if (*inspect) return cmd_inspect(i_path, i_json);
    if (*bench) {
      bench_opts.shapes = parse_shapes(b_shapes);
      return cmd_bench(bench_opts, b_out);
    }
    if (*train_toy) {
      TrainToyConfig d;
      d.output_dir = "runs/train-toy";
      return cmd_pipeline(toy_flags.config, toy_flags.print_config, d, run_train_toy);
    }
    if (*distill_cmd) {
      DistillRunConfig d;
      d.teacher = "runs/train-toy/teacher.tern";
      d.output_dir = "runs/distill";
      return cmd_pipeline(distill_flags.config, distill_flags.print_config, d, run_distill);
    }
    if (*eval_policy) {
      EvalPolicyConfig d;
      d.output_dir = "runs/eval-policy";
      return cmd_pipeline(policy_flags.config, policy_flags.print_config, d, run_eval_policy);
    }
  } catch (const ConfigError& e) {
    std::cerr << e.what() << "\n";
    return kUsage;
  } catch (const NumericError& e) {
    std::cerr << "numeric failure: " << e.what() << "\n";
    return kNumeric;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kData;
  }
  return kUsage;
}
