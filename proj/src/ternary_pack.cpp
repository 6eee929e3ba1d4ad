#include "ternkit/ternary_pack.hpp"

#include <string>

#include "ternkit/error.hpp"

namespace ternkit {

PackedTernaryMatrix::PackedTernaryMatrix(std::size_t rows, std::size_t cols, std::vector<std::uint8_t> bytes,
                                         double alpha)
    : rows_(rows), cols_(cols), bytes_(std::move(bytes)), alpha_(alpha) {
  if (rows == 0 || cols == 0) throw DimensionError("packed matrix dimensions must be >= 1");
  if (bytes_.size() != rows_ * row_stride()) {
    throw DimensionError("packed byte length " + std::to_string(bytes_.size()) + " != rows*ceil(cols/4) = " +
                         std::to_string(rows_ * row_stride()));
  }
  const std::size_t stride = row_stride();
  const std::size_t tail = cols_ % 4;
  const std::uint8_t pad_mask = tail == 0 ? 0 : static_cast<std::uint8_t>(0xFF << (2 * tail));
  for (std::size_t off = 0; off < bytes_.size(); ++off) {
    const std::uint8_t b = bytes_[off];
    if (((b >> 1) & ~b & 0x55) != 0) {
      throw CorruptionError(off, "reserved ternary code 0b10 at byte offset " + std::to_string(off));
    }
    if (off % stride == stride - 1 && (b & pad_mask) != 0) {
      throw CorruptionError(off, "nonzero padding bits at byte offset " + std::to_string(off));
    }
  }
}

PackedTernaryMatrix pack(std::span<const std::int8_t> codes, std::size_t rows, std::size_t cols, double alpha) {
  if (codes.size() != rows * cols) {
    throw DimensionError("pack: " + std::to_string(codes.size()) + " codes for a " + std::to_string(rows) + "x" +
                         std::to_string(cols) + " matrix");
  }
  const std::size_t stride = (cols + 3) / 4;
  std::vector<std::uint8_t> bytes(rows * stride, 0);
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t j = 0; j < cols; ++j) {
      const std::int8_t c = codes[r * cols + j];
      std::uint8_t bits;
      switch (c) {
        case 0: bits = kCodeZero; break;
        case 1: bits = kCodePlus; break;
        case -1: bits = kCodeMinus; break;
        default:
          throw ContractError("pack: code " + std::to_string(c) + " at (" + std::to_string(r) + "," +
                              std::to_string(j) + ") is not ternary");
      }
      bytes[r * stride + j / 4] |= static_cast<std::uint8_t>(bits << (2 * (j % 4)));
    }
  }
  return PackedTernaryMatrix(rows, cols, std::move(bytes), alpha);
}

PackedTernaryMatrix pack(const TernaryQuant& q) { return pack(q.codes, q.rows, q.cols, q.alpha); }

TernaryQuant unpack(const PackedTernaryMatrix& p) {
  TernaryQuant q;
  q.rows = p.rows();
  q.cols = p.cols();
  q.alpha = p.alpha();
  q.codes.resize(q.rows * q.cols);
  const std::size_t stride = p.row_stride();
  const auto bytes = p.bytes();
  for (std::size_t r = 0; r < q.rows; ++r) {
    for (std::size_t b = 0; b < stride; ++b) {
      const std::size_t offset = r * stride + b;
      const std::uint8_t byte = bytes[offset];
      for (std::size_t k = 0; k < 4; ++k) {
        const std::size_t j = b * 4 + k;
        const std::uint8_t bits = (byte >> (2 * k)) & 0b11;
        if (bits == kCodeReserved) {
          throw CorruptionError(offset, "reserved ternary code 0b10 at byte offset " + std::to_string(offset));
        }
        if (j >= q.cols) {
          if (bits != 0) {
            throw CorruptionError(offset, "nonzero padding bits at byte offset " + std::to_string(offset));
          }
          continue;
        }
        q.codes[r * q.cols + j] = bits == kCodePlus ? 1 : (bits == kCodeMinus ? -1 : 0);
      }
    }
  }
  return q;
}

PackedTernaryMatrix adopt_packed(std::size_t rows, std::size_t cols, std::vector<std::uint8_t> bytes,
                                 double alpha) {
  return PackedTernaryMatrix(rows, cols, std::move(bytes), alpha);
}

MemoryReport memory_report(std::size_t rows, std::size_t cols, int baseline_bits) {
  if (baseline_bits != 16 && baseline_bits != 32) {
    throw ContractError("memory_report: baseline_bits must be 16 or 32, got " + std::to_string(baseline_bits));
  }
  MemoryReport r;
  r.packed_bytes = rows * ((cols + 3) / 4) + kScaleOverheadBytes;
  r.baseline_bytes = rows * cols * static_cast<std::size_t>(baseline_bits / 8);
  r.ratio = static_cast<double>(r.baseline_bytes) / static_cast<double>(r.packed_bytes);
  return r;
}

}  // namespace ternkit
