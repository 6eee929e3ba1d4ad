#include "ternkit/quantizers.hpp"

#include <algorithm>
#include <cmath>

#include "ternkit/error.hpp"

namespace ternkit {
namespace {

void require_finite(const Tensor& t, const char* what) {
  for (double v : t.data) {
    if (!std::isfinite(v)) throw ContractError(std::string(what) + ": non-finite input");
  }
}

Var fake_quant(Var x, Tensor (*quantize)(const Tensor&)) {
  Tape& tape = *x.tape;
  switch (tape.quant_trace()) {
    case QuantTrace::Replay: {
      const QuantRecord& rec = tape.next_quant_replay();
      const Tensor& xv = x.value();
      if (!xv.same_shape(rec.input)) {
        throw DimensionError("fake-quant replay: recorded " + rec.input.shape_str() + ", got " + xv.shape_str());
      }
      Tensor out = rec.output;
      for (std::size_t i = 0; i < out.numel(); ++i) out.data[i] += xv.data[i] - rec.input.data[i];
      return ad::ste_passthrough(x, std::move(out));
    }
    case QuantTrace::Record: {
      Tensor q = quantize(x.value());
      tape.push_quant_record({x.value(), q});
      return ad::ste_passthrough(x, std::move(q));
    }
    case QuantTrace::Off:
      break;
  }
  return ad::ste_passthrough(x, quantize(x.value()));
}

Tensor weights_roundtrip(const Tensor& w) { return dequantize(quantize_weights(w)); }
Tensor acts_roundtrip(const Tensor& x) { return dequantize(quantize_acts(x)); }

}  // namespace

int round_clip(double x, int lo, int hi) {
  if (lo > hi) throw ContractError("round_clip: lo > hi");
  if (!std::isfinite(x)) throw ContractError("round_clip: non-finite input");
  // std::round rounds halfway cases away from zero.
  const double r = std::round(x);
  if (r < lo) return lo;
  if (r > hi) return hi;
  return static_cast<int>(r);
}

TernaryQuant quantize_weights(const Tensor& w) {
  require_finite(w, "quantize_weights");
  TernaryQuant q;
  q.rows = w.rows();
  q.cols = w.cols();
  double l1 = 0.0;
  for (double v : w.data) l1 += std::fabs(v);
  q.alpha = std::max(l1 / static_cast<double>(w.numel()), kScaleEpsilon);
  q.codes.resize(w.numel());
  for (std::size_t i = 0; i < w.numel(); ++i) {
    q.codes[i] = static_cast<std::int8_t>(round_clip(w.data[i] / q.alpha, -1, 1));
  }
  return q;
}

Int8Acts quantize_acts(const Tensor& x) {
  require_finite(x, "quantize_acts");
  Int8Acts q;
  q.tokens = x.rows();
  q.width = x.cols();
  q.codes.resize(x.numel());
  q.beta.resize(q.tokens);
  for (std::size_t t = 0; t < q.tokens; ++t) {
    auto row = x.row(t);
    double amax = 0.0;
    for (double v : row) amax = std::max(amax, std::fabs(v));
    const double beta = std::max(amax, kScaleEpsilon);
    const double factor = 127.0 / beta;
    q.beta[t] = beta;
    for (std::size_t j = 0; j < q.width; ++j) {
      q.codes[t * q.width + j] = static_cast<std::int8_t>(round_clip(row[j] * factor, -128, 127));
    }
  }
  return q;
}

Tensor dequantize(const TernaryQuant& q) {
  Tensor out = Tensor::zeros({q.rows, q.cols});
  for (std::size_t i = 0; i < q.codes.size(); ++i) out.data[i] = q.alpha * q.codes[i];
  return out;
}

Tensor dequantize(const Int8Acts& q) {
  Tensor out = Tensor::zeros({q.tokens, q.width});
  for (std::size_t t = 0; t < q.tokens; ++t) {
    // code/127 first so that a code of ±127 maps to exactly ±beta.
    for (std::size_t j = 0; j < q.width; ++j) {
      out.data[t * q.width + j] = q.beta[t] * (q.codes[t * q.width + j] / 127.0);
    }
  }
  return out;
}

Var fake_quant_weights(Var w) { return fake_quant(w, weights_roundtrip); }
Var fake_quant_acts(Var x) { return fake_quant(x, acts_roundtrip); }

Tensor ternary_linear_value(const TernaryQuant& w, const Int8Acts& x) {
  if (x.width != w.cols) throw DimensionError("ternary_linear_value: width mismatch");
  Tensor xc = Tensor::zeros({x.tokens, x.width});
  Tensor wc = Tensor::zeros({w.rows, w.cols});
  for (std::size_t i = 0; i < x.codes.size(); ++i) xc.data[i] = x.codes[i];
  for (std::size_t i = 0; i < w.codes.size(); ++i) wc.data[i] = w.codes[i];
  // integer-valued partial sums are exact in double at these widths
  Tensor y = matmul_nt_value(xc, wc);
  for (std::size_t t = 0; t < x.tokens; ++t) {
    const double s = (w.alpha * x.beta[t]) / 127.0;
    for (std::size_t i = 0; i < w.rows; ++i) y.data[t * w.rows + i] *= s;
  }
  return y;
}

Var quant_linear(Var x, Var w) {
  if (x.tape->quant_trace() != QuantTrace::Off) return ad::matmul_nt(fake_quant_acts(x), fake_quant_weights(w));
  const Int8Acts qa = quantize_acts(x.value());
  const TernaryQuant qw = quantize_weights(w.value());
  Tensor value = ternary_linear_value(qw, qa);
  return ad::matmul_nt_given(ad::ste_passthrough(x, dequantize(qa)), ad::ste_passthrough(w, dequantize(qw)),
                             std::move(value));
}

}  // namespace ternkit
