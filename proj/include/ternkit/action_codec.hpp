#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "json.hpp"

namespace ternkit {

// Independent 256-bin uniform discretizer per action dimension.
struct ActionCodec {
  static constexpr int kBins = 256;

  std::vector<double> lo;  // per-dimension calibration range
  std::vector<double> hi;

  ActionCodec() = default;
  ActionCodec(std::vector<double> lo, std::vector<double> hi);
  static ActionCodec uniform(std::size_t dims, double lo, double hi);

  // Ranges from per-dimension percentiles (linear interpolation between order
  // statistics) of row-major actions [count × dims].
  static ActionCodec calibrate(std::span<const double> actions, std::size_t dims, double lo_pct = 1.0,
                               double hi_pct = 99.0);

  std::size_t dims() const noexcept { return lo.size(); }
  double width(std::size_t d) const { return (hi[d] - lo[d]) / kBins; }

  // floor((a - lo) / width), clamped to [0, 255]. Non-finite input throws.
  std::int32_t encode(std::size_t d, double a) const;
  // Bin center lo + (bin + 0.5) width. Bins outside [0, 255] throw.
  double decode(std::size_t d, std::int32_t bin) const;

  std::vector<std::int32_t> encode(std::span<const double> action) const;
  std::vector<double> decode(std::span<const std::int32_t> bins) const;

  nlohmann::json to_json() const;
  static ActionCodec from_json(const nlohmann::json& j);
};

double percentile(std::vector<double> values, double pct);

}  // namespace ternkit
