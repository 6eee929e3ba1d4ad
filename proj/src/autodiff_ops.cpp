#include <algorithm>
#include <cmath>
#include <numbers>

#include "ternkit/error.hpp"
#include "ternkit/tensor.hpp"

namespace ternkit {
namespace {

void require_same_tape(Var a, Var b) {
  if (a.tape != b.tape || a.tape == nullptr) throw ContractError("operands live on different tapes");
}

void require_matrix(const Tensor& t, const char* op) {
  if (t.rank() != 2) throw DimensionError(std::string(op) + ": expected a matrix, got " + t.shape_str());
}

// C[m×n] = A[m×k]·B[k×n]
void mm(const double* a, const double* b, double* c, std::size_t m, std::size_t k, std::size_t n) {
  std::fill(c, c + m * n, 0.0);
  for (std::size_t i = 0; i < m; ++i) {
    double* crow = c + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const double av = a[i * k + p];
      if (av == 0.0) continue;
      const double* brow = b + p * n;
      for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

// C[m×n] = A[m×k]·B[n×k]ᵀ, via a transposed copy of B so the inner loop is
// a contiguous axpy like mm().
void mm_nt(const double* a, const double* b, double* c, std::size_t m, std::size_t k, std::size_t n) {
  thread_local std::vector<double> bt;
  bt.resize(k * n);
  for (std::size_t j = 0; j < n; ++j)
    for (std::size_t p = 0; p < k; ++p) bt[p * n + j] = b[j * k + p];
  mm(a, bt.data(), c, m, k, n);
}

// C[k×n] = A[m×k]ᵀ·B[m×n]
void mm_tn(const double* a, const double* b, double* c, std::size_t m, std::size_t k, std::size_t n) {
  std::fill(c, c + k * n, 0.0);
  for (std::size_t i = 0; i < m; ++i) {
    const double* brow = b + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const double av = a[i * k + p];
      if (av == 0.0) continue;
      double* crow = c + p * n;
      for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

enum class Bcast { Same, LeftScalar, RightScalar };

Bcast broadcast_kind(const Tensor& a, const Tensor& b, const char* op) {
  if (a.same_shape(b)) return Bcast::Same;
  if (a.is_scalar()) return Bcast::LeftScalar;
  if (b.is_scalar()) return Bcast::RightScalar;
  throw DimensionError(std::string(op) + ": incompatible shapes " + a.shape_str() + " and " + b.shape_str());
}

double sum_of(const std::vector<double>& v) {
  double s = 0.0;
  for (double x : v) s += x;
  return s;
}

template <class Fwd, class GradA, class GradB>
Var binary_elementwise(Var a, Var b, const char* name, Fwd fwd, GradA ga, GradB gb) {
  require_same_tape(a, b);
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  const Bcast kind = broadcast_kind(av, bv, name);
  const Tensor& big = kind == Bcast::LeftScalar ? bv : av;
  Tensor out = Tensor::zeros(big.shape);
  auto ai = [&](std::size_t i) { return kind == Bcast::LeftScalar ? av.data[0] : av.data[i]; };
  auto bi = [&](std::size_t i) { return kind == Bcast::RightScalar ? bv.data[0] : bv.data[i]; };
  for (std::size_t i = 0; i < out.numel(); ++i) out.data[i] = fwd(ai(i), bi(i));

  const std::size_t ida = a.id, idb = b.id;
  return a.tape->record(std::move(out), {ida, idb}, [=](Tape& t, std::size_t self) {
    const Tensor& g = t.grad_slot(self);
    const Tensor& x = t.value(ida);
    const Tensor& y = t.value(idb);
    auto xi = [&](std::size_t i) { return kind == Bcast::LeftScalar ? x.data[0] : x.data[i]; };
    auto yi = [&](std::size_t i) { return kind == Bcast::RightScalar ? y.data[0] : y.data[i]; };
    if (t.requires_grad(ida)) {
      Tensor d = Tensor::zeros(x.shape);
      for (std::size_t i = 0; i < g.numel(); ++i) {
        const double v = g.data[i] * ga(xi(i), yi(i));
        if (kind == Bcast::LeftScalar) d.data[0] += v; else d.data[i] = v;
      }
      t.accumulate(ida, d);
    }
    if (t.requires_grad(idb)) {
      Tensor d = Tensor::zeros(y.shape);
      for (std::size_t i = 0; i < g.numel(); ++i) {
        const double v = g.data[i] * gb(xi(i), yi(i));
        if (kind == Bcast::RightScalar) d.data[0] += v; else d.data[i] = v;
      }
      t.accumulate(idb, d);
    }
  });
}

template <class Fwd, class Deriv>
Var unary_elementwise(Var a, Fwd fwd, Deriv deriv) {
  const Tensor& av = a.value();
  Tensor out = Tensor::zeros(av.shape);
  for (std::size_t i = 0; i < out.numel(); ++i) out.data[i] = fwd(av.data[i]);
  const std::size_t ida = a.id;
  return a.tape->record(std::move(out), {ida}, [=](Tape& t, std::size_t self) {
    const Tensor& g = t.grad_slot(self);
    const Tensor& x = t.value(ida);
    Tensor d = Tensor::zeros(x.shape);
    for (std::size_t i = 0; i < d.numel(); ++i) d.data[i] = g.data[i] * deriv(x.data[i]);
    t.accumulate(ida, d);
  });
}

}  // namespace

double gelu_value(double x) { return 0.5 * x * (1.0 + std::erf(x / std::numbers::sqrt2)); }

Tensor matmul_nt_value(const Tensor& a, const Tensor& b) {
  require_matrix(a, "matmul_nt");
  require_matrix(b, "matmul_nt");
  if (a.cols() != b.cols()) {
    throw DimensionError("matmul_nt: inner dimensions differ for " + a.shape_str() + " and " + b.shape_str() + "ᵀ");
  }
  Tensor out = Tensor::zeros({a.rows(), b.rows()});
  mm_nt(a.data.data(), b.data.data(), out.data.data(), a.rows(), a.cols(), b.rows());
  return out;
}

namespace ad {

Var matmul(Var a, Var b) {
  require_same_tape(a, b);
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  require_matrix(av, "matmul");
  require_matrix(bv, "matmul");
  if (av.cols() != bv.rows()) {
    throw DimensionError("matmul: inner dimensions differ for " + av.shape_str() + " and " + bv.shape_str());
  }
  const std::size_t m = av.rows(), k = av.cols(), n = bv.cols();
  Tensor out = Tensor::zeros({m, n});
  mm(av.data.data(), bv.data.data(), out.data.data(), m, k, n);
  const std::size_t ida = a.id, idb = b.id;
  return a.tape->record(std::move(out), {ida, idb}, [=](Tape& t, std::size_t self) {
    const Tensor& g = t.grad_slot(self);
    if (t.requires_grad(ida)) {
      Tensor d = Tensor::zeros({m, k});
      mm_nt(g.data.data(), t.value(idb).data.data(), d.data.data(), m, n, k);
      t.accumulate(ida, d);
    }
    if (t.requires_grad(idb)) {
      Tensor d = Tensor::zeros({k, n});
      mm_tn(t.value(ida).data.data(), g.data.data(), d.data.data(), m, k, n);
      t.accumulate(idb, d);
    }
  });
}

Var matmul_nt(Var a, Var b) { return matmul_nt_given(a, b, matmul_nt_value(a.value(), b.value())); }

Var matmul_nt_given(Var a, Var b, Tensor out) {
  require_same_tape(a, b);
  if (out.rows() != a.value().rows() || out.cols() != b.value().rows())
    throw DimensionError("matmul_nt_given: value " + out.shape_str() + " does not match operands");
  const std::size_t m = a.value().rows(), k = a.value().cols(), n = b.value().rows();
  const std::size_t ida = a.id, idb = b.id;
  return a.tape->record(std::move(out), {ida, idb}, [=](Tape& t, std::size_t self) {
    const Tensor& g = t.grad_slot(self);
    if (t.requires_grad(ida)) {
      Tensor d = Tensor::zeros({m, k});
      mm(g.data.data(), t.value(idb).data.data(), d.data.data(), m, n, k);
      t.accumulate(ida, d);
    }
    if (t.requires_grad(idb)) {
      Tensor d = Tensor::zeros({n, k});
      mm_tn(g.data.data(), t.value(ida).data.data(), d.data.data(), m, n, k);
      t.accumulate(idb, d);
    }
  });
}

Var add(Var a, Var b) {
  return binary_elementwise(
      a, b, "add", [](double x, double y) { return x + y; }, [](double, double) { return 1.0; },
      [](double, double) { return 1.0; });
}

Var sub(Var a, Var b) {
  return binary_elementwise(
      a, b, "sub", [](double x, double y) { return x - y; }, [](double, double) { return 1.0; },
      [](double, double) { return -1.0; });
}

Var mul(Var a, Var b) {
  return binary_elementwise(
      a, b, "mul", [](double x, double y) { return x * y; }, [](double, double y) { return y; },
      [](double x, double) { return x; });
}

Var scale(Var a, double c) {
  return unary_elementwise(a, [c](double x) { return c * x; }, [c](double) { return c; });
}

Var abs(Var a) {
  return unary_elementwise(
      a, [](double x) { return std::fabs(x); },
      [](double x) { return x > 0.0 ? 1.0 : (x < 0.0 ? -1.0 : 0.0); });
}

Var gelu(Var a) {
  return unary_elementwise(a, gelu_value, [](double x) {
    const double cdf = 0.5 * (1.0 + std::erf(x / std::numbers::sqrt2));
    const double pdf = std::exp(-0.5 * x * x) / std::sqrt(2.0 * std::numbers::pi);
    return cdf + x * pdf;
  });
}

Var add_row(Var x, Var bias) {
  require_same_tape(x, bias);
  const Tensor& xv = x.value();
  const Tensor& bv = bias.value();
  if (bv.numel() != xv.cols()) {
    throw DimensionError("add_row: bias " + bv.shape_str() + " does not match columns of " + xv.shape_str());
  }
  Tensor out = xv;
  out.requires_grad = false;
  const std::size_t r = xv.rows(), c = xv.cols();
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < c; ++j) out.data[i * c + j] += bv.data[j];
  const std::size_t idx = x.id, idb = bias.id;
  return x.tape->record(std::move(out), {idx, idb}, [=](Tape& t, std::size_t self) {
    const Tensor& g = t.grad_slot(self);
    t.accumulate(idx, g);
    if (t.requires_grad(idb)) {
      Tensor d = Tensor::zeros(t.value(idb).shape);
      for (std::size_t i = 0; i < r; ++i)
        for (std::size_t j = 0; j < c; ++j) d.data[j] += g.data[i * c + j];
      t.accumulate(idb, d);
    }
  });
}

Var mul_row(Var x, Var gain) {
  require_same_tape(x, gain);
  const Tensor& xv = x.value();
  const Tensor& gv = gain.value();
  if (gv.numel() != xv.cols()) {
    throw DimensionError("mul_row: gain " + gv.shape_str() + " does not match columns of " + xv.shape_str());
  }
  Tensor out = Tensor::zeros(xv.shape);
  const std::size_t r = xv.rows(), c = xv.cols();
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < c; ++j) out.data[i * c + j] = xv.data[i * c + j] * gv.data[j];
  const std::size_t idx = x.id, idg = gain.id;
  return x.tape->record(std::move(out), {idx, idg}, [=](Tape& t, std::size_t self) {
    const Tensor& g = t.grad_slot(self);
    const Tensor& xs = t.value(idx);
    const Tensor& gs = t.value(idg);
    if (t.requires_grad(idx)) {
      Tensor d = Tensor::zeros(xs.shape);
      for (std::size_t i = 0; i < r; ++i)
        for (std::size_t j = 0; j < c; ++j) d.data[i * c + j] = g.data[i * c + j] * gs.data[j];
      t.accumulate(idx, d);
    }
    if (t.requires_grad(idg)) {
      Tensor d = Tensor::zeros(gs.shape);
      for (std::size_t i = 0; i < r; ++i)
        for (std::size_t j = 0; j < c; ++j) d.data[j] += g.data[i * c + j] * xs.data[i * c + j];
      t.accumulate(idg, d);
    }
  });
}

Var layernorm(Var x, double eps) {
  const Tensor& xv = x.value();
  const std::size_t r = xv.rows(), c = xv.cols();
  Tensor out = Tensor::zeros(xv.shape);
  std::vector<double> inv_std(r);
  for (std::size_t i = 0; i < r; ++i) {
    const double* row = xv.data.data() + i * c;
    double mu = 0.0;
    for (std::size_t j = 0; j < c; ++j) mu += row[j];
    mu /= static_cast<double>(c);
    double var = 0.0;
    for (std::size_t j = 0; j < c; ++j) var += (row[j] - mu) * (row[j] - mu);
    var /= static_cast<double>(c);
    inv_std[i] = 1.0 / std::sqrt(var + eps);
    for (std::size_t j = 0; j < c; ++j) out.data[i * c + j] = (row[j] - mu) * inv_std[i];
  }
  const std::size_t idx = x.id;
  return x.tape->record(std::move(out), {idx}, [=](Tape& t, std::size_t self) {
    const Tensor& g = t.grad_slot(self);
    const Tensor& yv = t.value(self);
    Tensor d = Tensor::zeros(yv.shape);
    for (std::size_t i = 0; i < r; ++i) {
      const double* gr = g.data.data() + i * c;
      const double* yr = yv.data.data() + i * c;
      double gmean = 0.0, gy = 0.0;
      for (std::size_t j = 0; j < c; ++j) {
        gmean += gr[j];
        gy += gr[j] * yr[j];
      }
      gmean /= static_cast<double>(c);
      gy /= static_cast<double>(c);
      for (std::size_t j = 0; j < c; ++j) d.data[i * c + j] = inv_std[i] * (gr[j] - gmean - yr[j] * gy);
    }
    t.accumulate(idx, d);
  });
}

Var sum(Var a) {
  const Tensor& av = a.value();
  const std::size_t ida = a.id;
  return a.tape->record(Tensor::scalar(sum_of(av.data)), {ida}, [=](Tape& t, std::size_t self) {
    const double g = t.grad_slot(self).data[0];
    t.accumulate(ida, Tensor::full(t.value(ida).shape, g));
  });
}

Var mean(Var a) {
  const double n = static_cast<double>(a.value().numel());
  return scale(sum(a), 1.0 / n);
}

Var reshape(Var a, std::vector<std::size_t> shape) {
  const Tensor& av = a.value();
  Tensor out(std::move(shape), av.data);
  if (out.numel() != av.numel()) {
    throw DimensionError("reshape: " + av.shape_str() + " to " + out.shape_str());
  }
  const std::size_t ida = a.id;
  return a.tape->record(std::move(out), {ida}, [=](Tape& t, std::size_t self) {
    Tensor g = t.grad_slot(self);
    g.shape = t.value(ida).shape;
    t.accumulate(ida, g);
  });
}

Var gather_rows(Var table, std::span<const std::int32_t> ids) {
  const Tensor& tv = table.value();
  require_matrix(tv, "gather_rows");
  const std::size_t v = tv.rows(), c = tv.cols();
  if (ids.empty()) throw DimensionError("gather_rows: empty id list");
  Tensor out = Tensor::zeros({ids.size(), c});
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (ids[i] < 0 || static_cast<std::size_t>(ids[i]) >= v) {
      throw ContractError("gather_rows: id " + std::to_string(ids[i]) + " outside [0," + std::to_string(v) + ")");
    }
    std::copy_n(tv.data.data() + ids[i] * c, c, out.data.data() + i * c);
  }
  const std::size_t idt = table.id;
  std::vector<std::int32_t> idcopy(ids.begin(), ids.end());
  return table.tape->record(std::move(out), {idt}, [=](Tape& t, std::size_t self) {
    const Tensor& g = t.grad_slot(self);
    Tensor d = Tensor::zeros(t.value(idt).shape);
    for (std::size_t i = 0; i < idcopy.size(); ++i)
      for (std::size_t j = 0; j < c; ++j) d.data[idcopy[i] * c + j] += g.data[i * c + j];
    t.accumulate(idt, d);
  });
}

Var select_rows(Var x, std::span<const std::size_t> rows) {
  const Tensor& xv = x.value();
  require_matrix(xv, "select_rows");
  const std::size_t c = xv.cols();
  if (rows.empty()) throw DimensionError("select_rows: empty row list");
  Tensor out = Tensor::zeros({rows.size(), c});
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (rows[i] >= xv.rows()) throw DimensionError("select_rows: row index out of range for " + xv.shape_str());
    std::copy_n(xv.data.data() + rows[i] * c, c, out.data.data() + i * c);
  }
  const std::size_t idx = x.id;
  std::vector<std::size_t> rcopy(rows.begin(), rows.end());
  return x.tape->record(std::move(out), {idx}, [=](Tape& t, std::size_t self) {
    const Tensor& g = t.grad_slot(self);
    Tensor d = Tensor::zeros(t.value(idx).shape);
    for (std::size_t i = 0; i < rcopy.size(); ++i)
      for (std::size_t j = 0; j < c; ++j) d.data[rcopy[i] * c + j] += g.data[i * c + j];
    t.accumulate(idx, d);
  });
}

Var concat_rows(std::span<const Var> parts) {
  if (parts.empty()) throw DimensionError("concat_rows: no inputs");
  const std::size_t c = parts[0].value().cols();
  std::size_t total = 0;
  std::vector<std::size_t> ids, offsets;
  for (const Var& p : parts) {
    require_same_tape(parts[0], p);
    if (p.value().cols() != c) {
      throw DimensionError("concat_rows: column mismatch " + parts[0].value().shape_str() + " vs " +
                           p.value().shape_str());
    }
    ids.push_back(p.id);
    offsets.push_back(total);
    total += p.value().rows();
  }
  Tensor out = Tensor::zeros({total, c});
  for (std::size_t k = 0; k < parts.size(); ++k) {
    const auto& src = parts[k].value().data;
    std::copy(src.begin(), src.end(), out.data.begin() + offsets[k] * c);
  }
  return parts[0].tape->record(std::move(out), ids, [=](Tape& t, std::size_t self) {
    const Tensor& g = t.grad_slot(self);
    for (std::size_t k = 0; k < ids.size(); ++k) {
      if (!t.requires_grad(ids[k])) continue;
      Tensor d = Tensor::zeros(t.value(ids[k]).shape);
      std::copy_n(g.data.begin() + offsets[k] * c, d.numel(), d.data.begin());
      t.accumulate(ids[k], d);
    }
  });
}

Var causal_attention(Var q, Var k, Var v, std::size_t heads, std::size_t seq_len) {
  require_same_tape(q, k);
  require_same_tape(q, v);
  const Tensor& qv = q.value();
  const Tensor& kv = k.value();
  const Tensor& vv = v.value();
  require_matrix(qv, "causal_attention");
  if (!qv.same_shape(kv) || !qv.same_shape(vv)) {
    throw DimensionError("causal_attention: q/k/v shapes differ: " + qv.shape_str() + ", " + kv.shape_str() +
                         ", " + vv.shape_str());
  }
  const std::size_t rows = qv.rows(), n = qv.cols();
  if (heads == 0 || n % heads != 0) throw DimensionError("causal_attention: width not divisible by heads");
  if (seq_len == 0 || rows % seq_len != 0) throw DimensionError("causal_attention: rows not a multiple of seq_len");
  const std::size_t batch = rows / seq_len, dh = n / heads, T = seq_len;
  const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(dh));

  // probs[b][h][t][s] for s <= t (dense T×T with zeros above the diagonal).
  std::vector<double> probs(batch * heads * T * T, 0.0);
  Tensor out = Tensor::zeros({rows, n});
  for (std::size_t b = 0; b < batch; ++b) {
    for (std::size_t h = 0; h < heads; ++h) {
      double* P = probs.data() + (b * heads + h) * T * T;
      for (std::size_t t = 0; t < T; ++t) {
        const double* qt = qv.data.data() + (b * T + t) * n + h * dh;
        double mx = -INFINITY;
        for (std::size_t s = 0; s <= t; ++s) {
          const double* ks = kv.data.data() + (b * T + s) * n + h * dh;
          double dot = 0.0;
          for (std::size_t e = 0; e < dh; ++e) dot += qt[e] * ks[e];
          P[t * T + s] = dot * inv_sqrt;
          mx = std::max(mx, P[t * T + s]);
        }
        double z = 0.0;
        for (std::size_t s = 0; s <= t; ++s) {
          P[t * T + s] = std::exp(P[t * T + s] - mx);
          z += P[t * T + s];
        }
        double* ot = out.data.data() + (b * T + t) * n + h * dh;
        for (std::size_t s = 0; s <= t; ++s) {
          P[t * T + s] /= z;
          const double* vs = vv.data.data() + (b * T + s) * n + h * dh;
          for (std::size_t e = 0; e < dh; ++e) ot[e] += P[t * T + s] * vs[e];
        }
      }
    }
  }

  const std::size_t idq = q.id, idk = k.id, idv = v.id;
  return q.tape->record(std::move(out), {idq, idk, idv}, [=, probs = std::move(probs)](Tape& t, std::size_t self) {
    const Tensor& g = t.grad_slot(self);
    const Tensor& Q = t.value(idq);
    const Tensor& K = t.value(idk);
    const Tensor& V = t.value(idv);
    Tensor dQ = Tensor::zeros(Q.shape), dK = Tensor::zeros(K.shape), dV = Tensor::zeros(V.shape);
    std::vector<double> dP(T), dS(T);
    for (std::size_t b = 0; b < batch; ++b) {
      for (std::size_t h = 0; h < heads; ++h) {
        const double* P = probs.data() + (b * heads + h) * T * T;
        for (std::size_t tt = 0; tt < T; ++tt) {
          const std::size_t rt = (b * T + tt) * n + h * dh;
          const double* go = g.data.data() + rt;
          double dot_pdp = 0.0;
          for (std::size_t s = 0; s <= tt; ++s) {
            const std::size_t rs = (b * T + s) * n + h * dh;
            double acc = 0.0;
            for (std::size_t e = 0; e < dh; ++e) {
              acc += go[e] * V.data[rs + e];
              dV.data[rs + e] += P[tt * T + s] * go[e];
            }
            dP[s] = acc;
            dot_pdp += P[tt * T + s] * acc;
          }
          for (std::size_t s = 0; s <= tt; ++s) dS[s] = P[tt * T + s] * (dP[s] - dot_pdp) * inv_sqrt;
          for (std::size_t s = 0; s <= tt; ++s) {
            const std::size_t rs = (b * T + s) * n + h * dh;
            for (std::size_t e = 0; e < dh; ++e) {
              dQ.data[rt + e] += dS[s] * K.data[rs + e];
              dK.data[rs + e] += dS[s] * Q.data[rt + e];
            }
          }
        }
      }
    }
    t.accumulate(idq, dQ);
    t.accumulate(idk, dK);
    t.accumulate(idv, dV);
  });
}

Var softmax_cross_entropy(Var logits, std::span<const std::int32_t> targets, std::span<const std::uint8_t> mask) {
  const Tensor& lv = logits.value();
  require_matrix(lv, "softmax_cross_entropy");
  const std::size_t T = lv.rows(), V = lv.cols();
  if (targets.size() != T || mask.size() != T) {
    throw DimensionError("softmax_cross_entropy: logits " + lv.shape_str() + " with " +
                         std::to_string(targets.size()) + " targets and " + std::to_string(mask.size()) +
                         " mask entries");
  }
  std::size_t count = 0;
  for (std::size_t i = 0; i < T; ++i) {
    if (targets[i] < 0 || static_cast<std::size_t>(targets[i]) >= V) {
      throw ContractError("softmax_cross_entropy: target " + std::to_string(targets[i]) + " outside [0," +
                          std::to_string(V) + ")");
    }
    count += mask[i] ? 1 : 0;
  }
  if (count == 0) throw EmptySupervisionError();

  std::vector<double> probs(T * V, 0.0);
  double total = 0.0;
  for (std::size_t i = 0; i < T; ++i) {
    if (!mask[i]) continue;
    const double* row = lv.data.data() + i * V;
    const double mx = *std::max_element(row, row + V);
    double z = 0.0;
    for (std::size_t j = 0; j < V; ++j) {
      probs[i * V + j] = std::exp(row[j] - mx);
      z += probs[i * V + j];
    }
    for (std::size_t j = 0; j < V; ++j) probs[i * V + j] /= z;
    total += (mx + std::log(z)) - row[targets[i]];
  }
  const double inv = 1.0 / static_cast<double>(count);
  const std::size_t idl = logits.id;
  std::vector<std::int32_t> tcopy(targets.begin(), targets.end());
  std::vector<std::uint8_t> mcopy(mask.begin(), mask.end());
  return logits.tape->record(
      Tensor::scalar(total * inv), {idl},
      [=, probs = std::move(probs)](Tape& t, std::size_t self) {
        const double g = t.grad_slot(self).data[0] * inv;
        Tensor d = Tensor::zeros({T, V});
        for (std::size_t i = 0; i < T; ++i) {
          if (!mcopy[i]) continue;
          for (std::size_t j = 0; j < V; ++j) d.data[i * V + j] = g * probs[i * V + j];
          d.data[i * V + tcopy[i]] -= g;
        }
        t.accumulate(idl, d);
      });
}

Var ste_passthrough(Var x, Tensor quantized) {
  if (!x.value().same_shape(quantized)) {
    throw DimensionError("ste_passthrough: input " + x.value().shape_str() + " vs quantized " +
                         quantized.shape_str());
  }
  quantized.requires_grad = false;
  const std::size_t idx = x.id;
  return x.tape->record(std::move(quantized), {idx},
                        [=](Tape& t, std::size_t self) { t.accumulate(idx, t.grad_slot(self)); });
}

Var detach(Var x) { return x.tape->constant(x.value()); }

}  // namespace ad
}  // namespace ternkit
