#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "ternkit/quantizers.hpp"
#include "ternkit/tensor.hpp"
#include "ternkit/ternary_pack.hpp"

namespace ternkit {

// Arithmetic accounting for the ternary x INT8 path.
//
// int_adds counts integer accumulate operations actually issued. The
// reference kernel issues one per nonzero weight; the blocked kernel skips
// whole 64-code groups whose weights are all zero and accumulates every
// lane of the remaining groups, so its count is an upper bound on the
// reference count. Both are <= rows*cols per matvec.
//
// float_muls counts floating-point multiplies and divides spent on scaling.
// linear_forward spends, per token, n for quantizing the activations, m for
// rescaling the outputs, plus kScaleSetupOps for 127/beta, alpha*beta and
// (alpha*beta)/127.
struct OpCounters {
  std::uint64_t int_adds = 0;
  std::uint64_t float_muls = 0;
  std::uint64_t skipped_zero_weights = 0;

  OpCounters& operator+=(const OpCounters& o) {
    int_adds += o.int_adds;
    float_muls += o.float_muls;
    skipped_zero_weights += o.skipped_zero_weights;
    return *this;
  }
  bool operator==(const OpCounters&) const = default;
};

inline constexpr std::uint64_t kScaleSetupOps = 3;

// |acc| <= n*128 must fit in int32.
inline constexpr std::size_t kMaxInnerDim = 16'000'000;

// Process-wide totals since the last reset. Kernels tally locally and merge
// once per call under a lock, so a snapshot never observes a partial call.
OpCounters counters_snapshot();
void counters_reset();
void counters_merge(const OpCounters& c);

// Exact integer products codes(W)·codes(a) for a single token.
std::vector<std::int32_t> gemv_ref(const PackedTernaryMatrix& w, std::span<const std::int8_t> act);
std::vector<std::int32_t> gemv_ref(const PackedTernaryMatrix& w, const Int8Acts& a);

// Blocked, branchless variant; bitwise identical to gemv_ref.
std::vector<std::int32_t> gemv_fast(const PackedTernaryMatrix& w, std::span<const std::int8_t> act);
std::vector<std::int32_t> gemv_fast(const PackedTernaryMatrix& w, const Int8Acts& a);

// Quantize x per token, integer matvec, rescale by alpha*beta/127.
Tensor linear_forward(const PackedTernaryMatrix& w, const Tensor& x);

// Naive single-precision baseline y = W x (W row-major m×n).
void float_matvec(std::span<const float> w, std::span<const float> x, std::span<float> y, std::size_t rows,
                  std::size_t cols);

}  // namespace ternkit
