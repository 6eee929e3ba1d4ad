#pragma once

#include <cstdint>
#include <vector>

#include "ternkit/tensor.hpp"

namespace ternkit {

// Lower clamp on alpha and beta so all-zero inputs quantize to zero codes.
inline constexpr double kScaleEpsilon = 1e-5;

// Ternary weight codes with the per-matrix absmean scale.
struct TernaryQuant {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<std::int8_t> codes;  // row-major, each in {-1, 0, 1}
  double alpha = kScaleEpsilon;
};

// INT8 activation codes with one absmax scale per token (row).
struct Int8Acts {
  std::size_t tokens = 0;
  std::size_t width = 0;
  std::vector<std::int8_t> codes;  // row-major, each in [-128, 127]
  std::vector<double> beta;        // one per token

  std::span<const std::int8_t> token(std::size_t t) const { return {codes.data() + t * width, width}; }
};

// Round half away from zero, then clamp to [lo, hi].
int round_clip(double x, int lo, int hi);

// alpha = mean |W|; codes = RoundClip(W / alpha, -1, 1).
TernaryQuant quantize_weights(const Tensor& w);

// Per row: beta = max |x|; codes = RoundClip(127 x / beta, -128, 127).
Int8Acts quantize_acts(const Tensor& x);

// alpha · codes, shaped like the source matrix.
Tensor dequantize(const TernaryQuant& q);
// (beta_t / 127) · codes_t per row.
Tensor dequantize(const Int8Acts& q);

// Tape-attached fake quantizers: forward is the dequantized value, backward
// is the straight-through identity. Honour the tape's QuantTrace mode.
Var fake_quant_weights(Var w);
Var fake_quant_acts(Var x);

// x · Wᵀ on fake-quantized operands. The forward value is computed from the
// integer codes as (alpha · beta_t / 127) · sum(code_x · code_w), the same
// expression the packed kernel evaluates, so both paths round identically at
// requantization ties. Under a Record/Replay trace it falls back to the
// dequantized product so the frozen-code surrogate stays well defined.
Var quant_linear(Var x, Var w);

// Dense evaluation of the packed kernel's output from unpacked codes.
Tensor ternary_linear_value(const TernaryQuant& w, const Int8Acts& x);

}  // namespace ternkit
