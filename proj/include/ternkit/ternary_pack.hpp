#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "ternkit/quantizers.hpp"

namespace ternkit {

// Row-major 2-bit ternary storage, four codes per byte, low bits first:
//   0b00 -> 0, 0b01 -> +1, 0b11 -> -1, 0b10 reserved.
// Code j of a row lives in bits 2*(j%4)..2*(j%4)+1 of byte j/4 of that row.
// Each row starts on a fresh byte; unused trailing bit pairs are zero.
class PackedTernaryMatrix {
 public:
  PackedTernaryMatrix() = default;
  // Throws CorruptionError (with the byte offset) on a reserved code or on
  // nonzero padding, so kernels never see malformed bytes.
  PackedTernaryMatrix(std::size_t rows, std::size_t cols, std::vector<std::uint8_t> bytes, double alpha);

  std::size_t rows() const noexcept { return rows_; }
  std::size_t cols() const noexcept { return cols_; }
  std::size_t row_stride() const noexcept { return (cols_ + 3) / 4; }
  double alpha() const noexcept { return alpha_; }
  std::span<const std::uint8_t> bytes() const noexcept { return bytes_; }
  std::span<const std::uint8_t> row_bytes(std::size_t r) const noexcept {
    return {bytes_.data() + r * row_stride(), row_stride()};
  }

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<std::uint8_t> bytes_;
  double alpha_ = 0.0;
};

inline constexpr std::uint8_t kCodeZero = 0b00;
inline constexpr std::uint8_t kCodePlus = 0b01;
inline constexpr std::uint8_t kCodeMinus = 0b11;
inline constexpr std::uint8_t kCodeReserved = 0b10;

PackedTernaryMatrix pack(std::span<const std::int8_t> codes, std::size_t rows, std::size_t cols, double alpha);
PackedTernaryMatrix pack(const TernaryQuant& q);

TernaryQuant unpack(const PackedTernaryMatrix& p);

// Wraps raw bytes read from disk; same validation as the constructor.
PackedTernaryMatrix adopt_packed(std::size_t rows, std::size_t cols, std::vector<std::uint8_t> bytes, double alpha);

// Bytes for the alpha scale stored alongside each packed matrix.
inline constexpr std::size_t kScaleOverheadBytes = 8;

struct MemoryReport {
  std::size_t packed_bytes = 0;
  std::size_t baseline_bytes = 0;
  double ratio = 0.0;
};

MemoryReport memory_report(std::size_t rows, std::size_t cols, int baseline_bits);

}  // namespace ternkit
