#include "ternkit/gemm.hpp"

#include <array>
#include <cstring>
#include <mutex>
#include <string>

#include "ternkit/error.hpp"

namespace ternkit {
namespace {

std::mutex g_counter_mutex;
OpCounters g_counters;

constexpr std::size_t kGroupCodes = 64;
constexpr std::size_t kGroupBytes = kGroupCodes / 4;

constexpr std::int8_t decode2(std::uint8_t bits) {
  // Two-bit two's complement; 0b10 never reaches here after validation.
  return static_cast<std::int8_t>(static_cast<std::int8_t>(bits << 6) >> 6);
}

constexpr std::array<std::array<std::int8_t, 4>, 256> make_decode_lut() {
  std::array<std::array<std::int8_t, 4>, 256> lut{};
  for (std::size_t b = 0; b < 256; ++b)
    for (std::size_t k = 0; k < 4; ++k) lut[b][k] = decode2(static_cast<std::uint8_t>((b >> (2 * k)) & 0b11));
  return lut;
}

constexpr auto kDecodeLut = make_decode_lut();

void check_dims(const PackedTernaryMatrix& w, std::size_t act_len) {
  if (w.cols() != act_len) {
    throw DimensionError("gemv: weight is " + std::to_string(w.rows()) + "x" + std::to_string(w.cols()) +
                         " but activation has " + std::to_string(act_len) + " entries");
  }
  if (w.cols() > kMaxInnerDim) {
    throw ContractError("gemv: inner dimension " + std::to_string(w.cols()) + " exceeds int32 accumulation bound " +
                        std::to_string(kMaxInnerDim));
  }
}

const Int8Acts& single_token(const Int8Acts& a) {
  if (a.tokens != 1) throw DimensionError("gemv: expected one token, got " + std::to_string(a.tokens));
  return a;
}

std::vector<std::int32_t> gemv_fast_impl(const PackedTernaryMatrix& w, std::span<const std::int8_t> act,
                                         OpCounters& local) {
  const std::size_t n = w.cols(), m = w.rows(), stride = w.row_stride();
  const std::size_t groups = (n + kGroupCodes - 1) / kGroupCodes;
  // Zero-padded copy so every group can run its full 64 lanes.
  std::vector<std::int8_t> a(groups * kGroupCodes, 0);
  std::memcpy(a.data(), act.data(), n);

  std::vector<std::int32_t> out(m, 0);
  alignas(64) std::int8_t wdec[kGroupCodes];
  for (std::size_t r = 0; r < m; ++r) {
    const std::uint8_t* row = w.bytes().data() + r * stride;
    std::int32_t acc = 0;
    for (std::size_t g = 0; g < groups; ++g) {
      const std::size_t b0 = g * kGroupBytes;
      const std::size_t nb = std::min(kGroupBytes, stride - b0);
      const std::size_t lanes = std::min(kGroupCodes, n - g * kGroupCodes);
      std::uint8_t any = 0;
      for (std::size_t b = 0; b < nb; ++b) any |= row[b0 + b];
      if (any == 0) {
        local.skipped_zero_weights += lanes;
        continue;
      }
      std::memset(wdec, 0, sizeof(wdec));
      for (std::size_t b = 0; b < nb; ++b) std::memcpy(wdec + 4 * b, kDecodeLut[row[b0 + b]].data(), 4);
      const std::int8_t* ag = a.data() + g * kGroupCodes;
      std::int32_t part = 0;
      for (std::size_t j = 0; j < kGroupCodes; ++j) part += static_cast<std::int32_t>(wdec[j]) * ag[j];
      acc += part;
      local.int_adds += lanes;
    }
    out[r] = acc;
  }
  return out;
}

}  // namespace

OpCounters counters_snapshot() {
  std::lock_guard lock(g_counter_mutex);
  return g_counters;
}

void counters_reset() {
  std::lock_guard lock(g_counter_mutex);
  g_counters = {};
}

void counters_merge(const OpCounters& c) {
  std::lock_guard lock(g_counter_mutex);
  g_counters += c;
}

std::vector<std::int32_t> gemv_ref(const PackedTernaryMatrix& w, std::span<const std::int8_t> act) {
  check_dims(w, act.size());
  OpCounters local;
  std::vector<std::int32_t> out(w.rows(), 0);
  const std::size_t n = w.cols();
  for (std::size_t r = 0; r < w.rows(); ++r) {
    const auto bytes = w.row_bytes(r);
    std::int32_t acc = 0;
    for (std::size_t j = 0; j < n; ++j) {
      const std::uint8_t bits = (bytes[j / 4] >> (2 * (j % 4))) & 0b11;
      if (bits == kCodePlus) {
        acc += act[j];
        ++local.int_adds;
      } else if (bits == kCodeMinus) {
        acc -= act[j];
        ++local.int_adds;
      } else {
        ++local.skipped_zero_weights;
      }
    }
    out[r] = acc;
  }
  counters_merge(local);
  return out;
}

std::vector<std::int32_t> gemv_ref(const PackedTernaryMatrix& w, const Int8Acts& a) {
  return gemv_ref(w, single_token(a).token(0));
}

std::vector<std::int32_t> gemv_fast(const PackedTernaryMatrix& w, std::span<const std::int8_t> act) {
  check_dims(w, act.size());
  OpCounters local;
  auto out = gemv_fast_impl(w, act, local);
  counters_merge(local);
  return out;
}

std::vector<std::int32_t> gemv_fast(const PackedTernaryMatrix& w, const Int8Acts& a) {
  return gemv_fast(w, single_token(a).token(0));
}

Tensor linear_forward(const PackedTernaryMatrix& w, const Tensor& x) {
  if (x.cols() != w.cols()) {
    throw DimensionError("linear_forward: input " + x.shape_str() + " does not match weight " +
                         std::to_string(w.rows()) + "x" + std::to_string(w.cols()));
  }
  check_dims(w, x.cols());
  const Int8Acts q = quantize_acts(x);
  const std::size_t m = w.rows(), n = w.cols();
  Tensor y = Tensor::zeros({q.tokens, m});
  OpCounters local;
  for (std::size_t t = 0; t < q.tokens; ++t) {
    const auto acc = gemv_fast_impl(w, q.token(t), local);
    const double s = (w.alpha() * q.beta[t]) / 127.0;
    for (std::size_t i = 0; i < m; ++i) y.data[t * m + i] = static_cast<double>(acc[i]) * s;
    local.float_muls += n + m + kScaleSetupOps;
  }
  counters_merge(local);
  return y;
}

void float_matvec(std::span<const float> w, std::span<const float> x, std::span<float> y, std::size_t rows,
                  std::size_t cols) {
  for (std::size_t r = 0; r < rows; ++r) {
    float acc = 0.0f;
    const float* wr = w.data() + r * cols;
    for (std::size_t j = 0; j < cols; ++j) acc += wr[j] * x[j];
    y[r] = acc;
  }
}

}  // namespace ternkit
