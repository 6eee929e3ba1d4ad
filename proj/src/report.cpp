#include "ternkit/report.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <thread>

#include "binio.hpp"
#include "ternkit/error.hpp"
#include "ternkit/quantizers.hpp"
#include "ternkit/rng.hpp"
#include "ternkit/ternary_pack.hpp"

namespace ternkit {

namespace {

template <class... Args>
std::string format(const char* fmt, Args... args) {
  char buf[256];
  std::snprintf(buf, sizeof buf, fmt, args...);
  return buf;
}

std::string dims_text(const std::vector<std::uint32_t>& dims) {
  std::string s;
  for (std::size_t i = 0; i < dims.size(); ++i) s += (i ? "x" : "") + std::to_string(dims[i]);
  return s;
}

nlohmann::json row_json(const MemoryRow& r) {
  return {{"name", r.name},
          {"storage", r.storage},
          {"dims", r.dims},
          {"elements", r.elements},
          {"stored_bytes", r.stored_bytes},
          {"fp16_bytes", r.fp16_bytes},
          {"fp32_bytes", r.fp32_bytes},
          {"master_bytes", r.master_bytes},
          {"ratio_vs_fp16", r.ratio_vs_fp16()},
          {"ratio_vs_fp32", r.ratio_vs_fp32()},
          {"ratio_vs_master", r.ratio_vs_master()}};
}

nlohmann::json stats_json(const TimeStats& t) {
  return {{"median_us", t.median_us}, {"min_us", t.min_us}, {"max_us", t.max_us}};
}

TimeStats stats_from(const nlohmann::json& j) {
  return {j.at("median_us").get<double>(), j.at("min_us").get<double>(), j.at("max_us").get<double>()};
}

template <class Fn>
TimeStats time_it(std::size_t warmup, std::size_t reps, Fn fn) {
  for (std::size_t i = 0; i < warmup; ++i) fn();
  std::vector<double> us;
  us.reserve(reps);
  for (std::size_t i = 0; i < reps; ++i) {
    const auto t0 = std::chrono::steady_clock::now();
    fn();
    const auto t1 = std::chrono::steady_clock::now();
    us.push_back(std::chrono::duration<double, std::micro>(t1 - t0).count());
  }
  return TimeStats::of(std::move(us));
}

// Keeps benchmark results observable so the calls are not elided.
std::atomic<std::int64_t> g_sink{0};

}  // namespace

// ---------------------------------------------------------------------------

MemoryTable memory_table(const CheckpointFile& file) {
  MemoryTable t;
  t.model_kind = file.header.at("model_kind").get<std::string>();
  t.mode = file.header.at("mode").get<std::string>();
  t.total.name = "total";
  for (const Blob& b : file.blobs) {
    MemoryRow r;
    r.name = b.name;
    r.dims = b.dims;
    r.elements = std::accumulate(b.dims.begin(), b.dims.end(), std::size_t{1},
                                 [](std::size_t a, std::uint32_t d) { return a * d; });
    if (b.kind == Blob::Packed) {
      r.storage = "ternary2";
      r.stored_bytes = memory_report(b.dims.at(0), b.dims.at(1), 16).packed_bytes;
    } else {
      r.storage = "f64";
      r.stored_bytes = r.elements * 8;
    }
    r.fp16_bytes = r.elements * 2;
    r.fp32_bytes = r.elements * 4;
    r.master_bytes = r.elements * 8;
    t.total.elements += r.elements;
    t.total.stored_bytes += r.stored_bytes;
    t.total.fp16_bytes += r.fp16_bytes;
    t.total.fp32_bytes += r.fp32_bytes;
    t.total.master_bytes += r.master_bytes;
    t.rows.push_back(std::move(r));
  }
  return t;
}

std::string MemoryTable::to_text() const {
  std::string out = model_kind + " checkpoint, " + mode + " mode\n";
  out += format("%-36s %-8s %-10s %12s %12s %12s %8s %8s %8s\n", "layer", "storage", "shape", "stored_B", "fp16_B",
                "fp32_B", "x_fp16", "x_fp32", "x_master");
  auto line = [&](const MemoryRow& r, const std::string& shape) {
    out += format("%-36s %-8s %-10s %12zu %12zu %12zu %8.3f %8.3f %8.3f\n", r.name.c_str(), r.storage.c_str(),
                  shape.c_str(), r.stored_bytes, r.fp16_bytes, r.fp32_bytes, r.ratio_vs_fp16(), r.ratio_vs_fp32(),
                  r.ratio_vs_master());
  };
  for (const MemoryRow& r : rows) line(r, dims_text(r.dims));
  if (!rows.empty()) line(total, "");
  return out;
}

nlohmann::json MemoryTable::to_json() const {
  nlohmann::json rs = nlohmann::json::array();
  for (const MemoryRow& r : rows) rs.push_back(row_json(r));
  return {{"model_kind", model_kind}, {"mode", mode}, {"rows", rs}, {"total", row_json(total)}};
}

QuantizeResult quantize_checkpoint(const std::string& in_path, const std::string& out_path) {
  const std::vector<std::uint8_t> in = detail::read_file(in_path);
  const CheckpointFile file = parse_checkpoint(in);
  QuantizeResult res;
  res.input_bytes = in.size();

  if (file.header.at("mode").get<std::string>() == to_string(Mode::Inference)) {
    res.already_inference = true;
    detail::write_file(out_path, in);
    res.output_bytes = res.predicted_output_bytes = in.size();
    res.table = memory_table(file);
    return res;
  }

  std::unique_ptr<Model> model = restore_model(file);
  // Each packed blob replaces an f64 payload; the alpha field is present in both.
  std::size_t saved = 0;
  for (const Parameter* p : model->parameters()) {
    if (!p->quantized) continue;
    const std::size_t rows = p->value.shape.at(0), cols = p->value.shape.at(1);
    saved += rows * cols * 8 - (memory_report(rows, cols, 16).packed_bytes - kScaleOverheadBytes);
  }
  nlohmann::json header = file.header;
  header["mode"] = to_string(Mode::Inference);
  const std::ptrdiff_t header_delta = static_cast<std::ptrdiff_t>(header.dump().size()) -
                                      static_cast<std::ptrdiff_t>(file.header.dump().size());
  res.predicted_output_bytes =
      static_cast<std::size_t>(static_cast<std::ptrdiff_t>(in.size() - saved) + header_delta);

  model->set_mode(Mode::Inference);
  const std::vector<std::uint8_t> out = serialize_checkpoint(*model);
  detail::write_file(out_path, out);
  res.output_bytes = out.size();
  res.table = memory_table(parse_checkpoint(out));
  return res;
}

// ---------------------------------------------------------------------------

TimeStats TimeStats::of(std::vector<double> s) {
  if (s.empty()) throw ContractError("TimeStats::of needs at least one sample");
  std::sort(s.begin(), s.end());
  const std::size_t k = s.size();
  const double median = k % 2 ? s[k / 2] : 0.5 * (s[k / 2 - 1] + s[k / 2]);
  return {median, s.front(), s.back()};
}

void BenchOptions::validate() const {
  std::vector<std::string> bad;
  if (shapes.empty()) bad.push_back("shapes: at least one shape is required");
  for (const auto& [m, n] : shapes)
    if (m < 1 || n < 1 || n > kMaxInnerDim) bad.push_back("shapes: invalid shape " + format("%zux%zu", m, n));
  if (reps < kMinBenchReps) bad.push_back("reps: must be >= " + std::to_string(kMinBenchReps));
  if (threads < 1) bad.push_back("threads: must be >= 1");
  if (!bad.empty()) throw ConfigError(std::move(bad));
}

std::vector<std::pair<std::size_t, std::size_t>> parse_shapes(const std::string& text) {
  std::vector<std::pair<std::size_t, std::size_t>> out;
  auto number = [&](const std::string& s) -> std::size_t {
    if (s.empty() || s.find_first_not_of("0123456789") != std::string::npos || s.size() > 9)
      throw ConfigError({"shapes: cannot parse '" + text + "'; expected e.g. 64,256x512"});
    return std::stoul(s);
  };
  std::size_t start = 0;
  while (start <= text.size()) {
    const std::size_t comma = std::min(text.find(',', start), text.size());
    const std::string item = text.substr(start, comma - start);
    const std::size_t x = item.find('x');
    if (x == std::string::npos) {
      const std::size_t n = number(item);
      out.emplace_back(n, n);
    } else {
      out.emplace_back(number(item.substr(0, x)), number(item.substr(x + 1)));
    }
    start = comma + 1;
  }
  return out;
}

nlohmann::json machine_descriptor() {
  std::string cpu = "unknown";
  std::ifstream info("/proc/cpuinfo");
  for (std::string line; std::getline(info, line);) {
    if (line.rfind("model name", 0) == 0) {
      cpu = line.substr(line.find(':') + 2);
      break;
    }
  }
  return {{"cpu", cpu},
          {"hardware_threads", std::thread::hardware_concurrency()},
          {"compiler", __VERSION__},
          {"pointer_bits", sizeof(void*) * 8}};
}

BenchReport run_bench(const BenchOptions& opts) {
  opts.validate();
  BenchReport rep;
  rep.machine = machine_descriptor();
  Rng rng(opts.seed);

  for (const auto& [m, n] : opts.shapes) {
    BenchCase c;
    c.m = m;
    c.n = n;
    c.reps = opts.reps;
    c.threads = opts.threads;

    Tensor w = Tensor::zeros({m, n});
    for (double& v : w.data) v = rng.uniform(-1.0, 1.0);
    Tensor x = Tensor::zeros({1, n});
    for (double& v : x.data) v = rng.uniform(-1.0, 1.0);
    const TernaryQuant q = quantize_weights(w);
    const PackedTernaryMatrix packed = pack(q);
    const Int8Acts acts = quantize_acts(x);
    const std::vector<float> wf(w.data.begin(), w.data.end());
    const std::vector<float> xf(x.data.begin(), x.data.end());
    std::vector<float> yf(m);

    counters_reset();
    linear_forward(packed, x);
    c.counters = counters_snapshot();
    c.packed_bytes = memory_report(m, n, 32).packed_bytes;
    c.float32_bytes = m * n * 4;

    c.ternary_kernel = time_it(opts.warmup, opts.reps, [&] { g_sink += gemv_fast(packed, acts)[0]; });
    c.ternary_linear =
        time_it(opts.warmup, opts.reps, [&] { g_sink += static_cast<std::int64_t>(linear_forward(packed, x).data[0]); });
    c.float_baseline = time_it(opts.warmup, opts.reps, [&] {
      float_matvec(wf, xf, yf, m, n);
      g_sink += static_cast<std::int64_t>(yf[0]);
    });

    if (opts.threads > 1) {
      // Row blocks packed separately, one thread per block.
      const std::size_t T = std::min(opts.threads, m);
      std::vector<PackedTernaryMatrix> blocks;
      for (std::size_t b = 0; b < T; ++b) {
        const std::size_t r0 = m * b / T, r1 = m * (b + 1) / T;
        blocks.push_back(pack(std::span<const std::int8_t>(q.codes.data() + r0 * n, (r1 - r0) * n), r1 - r0, n,
                              q.alpha));
      }
      c.threads = T;
      c.ternary_kernel_threaded = time_it(opts.warmup, opts.reps, [&] {
        std::vector<std::thread> pool;
        for (const auto& blk : blocks) pool.emplace_back([&blk, &acts] { g_sink += gemv_fast(blk, acts)[0]; });
        for (auto& t : pool) t.join();
      });
    }
    rep.cases.push_back(c);
  }
  counters_reset();
  return rep;
}

nlohmann::json BenchReport::to_json() const {
  nlohmann::json cs = nlohmann::json::array();
  for (const BenchCase& c : cases) {
    nlohmann::json j = {{"m", c.m},
                        {"n", c.n},
                        {"tokens", c.tokens},
                        {"reps", c.reps},
                        {"threads", c.threads},
                        {"ternary_kernel", stats_json(c.ternary_kernel)},
                        {"ternary_linear", stats_json(c.ternary_linear)},
                        {"float_baseline", stats_json(c.float_baseline)},
                        {"speedup", c.speedup()},
                        {"meets_speedup_target", c.speedup() >= speedup_target},
                        {"counters",
                         {{"int_adds", c.counters.int_adds},
                          {"float_muls", c.counters.float_muls},
                          {"skipped_zero_weights", c.counters.skipped_zero_weights}}},
                        {"packed_bytes", c.packed_bytes},
                        {"float32_bytes", c.float32_bytes}};
    if (c.threads > 1) j["ternary_kernel_threaded"] = stats_json(c.ternary_kernel_threaded);
    cs.push_back(std::move(j));
  }
  return {{"format_version", format_version},
          {"machine", machine},
          {"speedup_target", speedup_target},
          {"float_muls_formula", "n + m + 3 per token"},
          {"cases", cs}};
}

BenchReport BenchReport::from_json(const nlohmann::json& j) {
  const int v = j.at("format_version").get<int>();
  if (v != kBenchFormatVersion) throw VersionError("unsupported bench report version " + std::to_string(v));
  BenchReport r;
  r.machine = j.at("machine");
  r.speedup_target = j.at("speedup_target").get<double>();
  for (const auto& cj : j.at("cases")) {
    BenchCase c;
    c.m = cj.at("m").get<std::size_t>();
    c.n = cj.at("n").get<std::size_t>();
    c.tokens = cj.at("tokens").get<std::size_t>();
    c.reps = cj.at("reps").get<std::size_t>();
    c.threads = cj.at("threads").get<std::size_t>();
    c.ternary_kernel = stats_from(cj.at("ternary_kernel"));
    c.ternary_linear = stats_from(cj.at("ternary_linear"));
    c.float_baseline = stats_from(cj.at("float_baseline"));
    if (cj.contains("ternary_kernel_threaded")) c.ternary_kernel_threaded = stats_from(cj.at("ternary_kernel_threaded"));
    const auto& k = cj.at("counters");
    c.counters.int_adds = k.at("int_adds").get<std::uint64_t>();
    c.counters.float_muls = k.at("float_muls").get<std::uint64_t>();
    c.counters.skipped_zero_weights = k.at("skipped_zero_weights").get<std::uint64_t>();
    c.packed_bytes = cj.at("packed_bytes").get<std::size_t>();
    c.float32_bytes = cj.at("float32_bytes").get<std::size_t>();
    r.cases.push_back(c);
  }
  return r;
}

}  // namespace ternkit
