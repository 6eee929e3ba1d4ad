#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "json.hpp"
#include "ternkit/checkpoint.hpp"
#include "ternkit/gemm.hpp"

namespace ternkit {

// ---------------------------------------------------------------------------
// Memory accounting for `ternctl inspect` and `ternctl quantize`.
//
// stored_bytes is what the checkpoint spends on the weight itself: the f64
// payload, or the packed payload plus its 8-byte alpha. fp16/fp32 are the
// same element count at 2 and 4 bytes; master is the f64 training copy.

struct MemoryRow {
  std::string name;
  std::string storage;  // "f64" | "ternary2"
  std::vector<std::uint32_t> dims;
  std::size_t elements = 0;
  std::size_t stored_bytes = 0;
  std::size_t fp16_bytes = 0;
  std::size_t fp32_bytes = 0;
  std::size_t master_bytes = 0;

  double ratio_vs_fp16() const { return static_cast<double>(fp16_bytes) / static_cast<double>(stored_bytes); }
  double ratio_vs_fp32() const { return static_cast<double>(fp32_bytes) / static_cast<double>(stored_bytes); }
  double ratio_vs_master() const { return static_cast<double>(master_bytes) / static_cast<double>(stored_bytes); }
};

struct MemoryTable {
  std::string model_kind;
  std::string mode;
  std::vector<MemoryRow> rows;
  MemoryRow total;  // column sums

  std::string to_text() const;
  nlohmann::json to_json() const;
};

MemoryTable memory_table(const CheckpointFile& file);

struct QuantizeResult {
  bool already_inference = false;
  std::size_t input_bytes = 0;
  std::size_t output_bytes = 0;
  std::size_t predicted_output_bytes = 0;
  MemoryTable table;  // of the output
};

// Reads a checkpoint, packs every quantized weight and writes an inference
// checkpoint. An inference input is copied unchanged.
QuantizeResult quantize_checkpoint(const std::string& in_path, const std::string& out_path);

// ---------------------------------------------------------------------------
// Kernel benchmark for `ternctl bench`.

inline constexpr int kBenchFormatVersion = 1;
inline constexpr std::size_t kMinBenchReps = 10;
inline constexpr double kSpeedupTarget = 1.5;

struct TimeStats {
  double median_us = 0.0;
  double min_us = 0.0;
  double max_us = 0.0;

  static TimeStats of(std::vector<double> samples_us);
};

struct BenchCase {
  std::size_t m = 0;
  std::size_t n = 0;
  std::size_t tokens = 1;
  std::size_t reps = 0;
  TimeStats ternary_kernel;  // gemv_fast on int8 codes
  TimeStats ternary_linear;  // quantize + gemv_fast + rescale
  TimeStats float_baseline;  // float_matvec
  std::size_t threads = 1;
  TimeStats ternary_kernel_threaded;  // only when threads > 1
  OpCounters counters;                // one linear_forward call
  std::size_t packed_bytes = 0;
  std::size_t float32_bytes = 0;

  double speedup() const { return float_baseline.median_us / ternary_kernel.median_us; }
};

struct BenchReport {
  int format_version = kBenchFormatVersion;
  nlohmann::json machine;
  double speedup_target = kSpeedupTarget;
  std::vector<BenchCase> cases;

  nlohmann::json to_json() const;
  // Rejects unknown format versions with VersionError.
  static BenchReport from_json(const nlohmann::json& j);
};

struct BenchOptions {
  std::vector<std::pair<std::size_t, std::size_t>> shapes;  // (m, n)
  std::size_t reps = 20;
  std::size_t warmup = 2;
  std::size_t threads = 1;
  std::uint64_t seed = 1;
  void validate() const;
};

// "64,256x512" -> {(64,64), (256,512)}; throws ConfigError on bad input.
std::vector<std::pair<std::size_t, std::size_t>> parse_shapes(const std::string& text);

nlohmann::json machine_descriptor();
BenchReport run_bench(const BenchOptions& opts);

}  // namespace ternkit
