#include "ternkit/action_codec.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "ternkit/error.hpp"

namespace ternkit {

ActionCodec::ActionCodec(std::vector<double> lo_, std::vector<double> hi_) : lo(std::move(lo_)), hi(std::move(hi_)) {
  if (lo.size() != hi.size() || lo.empty()) throw DimensionError("action codec: range vectors differ in length");
  for (std::size_t d = 0; d < lo.size(); ++d)
    if (!std::isfinite(lo[d]) || !std::isfinite(hi[d]) || !(lo[d] < hi[d]))
      throw ContractError("action codec: dimension " + std::to_string(d) + " needs finite min < max");
}

ActionCodec ActionCodec::uniform(std::size_t dims, double l, double h) {
  return ActionCodec(std::vector<double>(dims, l), std::vector<double>(dims, h));
}

double percentile(std::vector<double> values, double pct) {
  if (values.empty()) throw ContractError("percentile of an empty sample");
  std::sort(values.begin(), values.end());
  const double pos = pct / 100.0 * static_cast<double>(values.size() - 1);
  const auto below = static_cast<std::size_t>(std::floor(pos));
  const std::size_t above = std::min(below + 1, values.size() - 1);
  const double frac = pos - static_cast<double>(below);
  return values[below] + frac * (values[above] - values[below]);
}

ActionCodec ActionCodec::calibrate(std::span<const double> actions, std::size_t dims, double lo_pct, double hi_pct) {
  if (dims == 0 || actions.empty() || actions.size() % dims != 0)
    throw DimensionError("action codec calibration: data is not a whole number of action rows");
  std::vector<double> lo(dims), hi(dims);
  for (std::size_t d = 0; d < dims; ++d) {
    std::vector<double> col;
    col.reserve(actions.size() / dims);
    for (std::size_t i = d; i < actions.size(); i += dims) col.push_back(actions[i]);
    lo[d] = percentile(col, lo_pct);
    hi[d] = percentile(std::move(col), hi_pct);
  }
  return ActionCodec(std::move(lo), std::move(hi));
}

std::int32_t ActionCodec::encode(std::size_t d, double a) const {
  if (!std::isfinite(a)) throw ContractError("encode_action: non-finite action value");
  const double b = std::floor((a - lo[d]) / width(d));
  return static_cast<std::int32_t>(std::clamp(b, 0.0, static_cast<double>(kBins - 1)));
}

double ActionCodec::decode(std::size_t d, std::int32_t bin) const {
  if (bin < 0 || bin >= kBins) throw ContractError("decode_action: bin " + std::to_string(bin) + " out of range");
  return lo[d] + (static_cast<double>(bin) + 0.5) * width(d);
}

std::vector<std::int32_t> ActionCodec::encode(std::span<const double> action) const {
  if (action.size() != dims()) throw DimensionError("encode_action: expected " + std::to_string(dims()) + " dims");
  std::vector<std::int32_t> out(dims());
  for (std::size_t d = 0; d < dims(); ++d) out[d] = encode(d, action[d]);
  return out;
}

std::vector<double> ActionCodec::decode(std::span<const std::int32_t> bins) const {
  if (bins.size() != dims()) throw DimensionError("decode_action: expected " + std::to_string(dims()) + " dims");
  std::vector<double> out(dims());
  for (std::size_t d = 0; d < dims(); ++d) out[d] = decode(d, bins[d]);
  return out;
}

nlohmann::json ActionCodec::to_json() const { return {{"min", lo}, {"max", hi}, {"bins", kBins}}; }

ActionCodec ActionCodec::from_json(const nlohmann::json& j) {
  if (j.at("bins").get<int>() != kBins) throw FormatError("action codec: only 256 bins are supported");
  return ActionCodec(j.at("min").get<std::vector<double>>(), j.at("max").get<std::vector<double>>());
}

}  // namespace ternkit
