#pragma once

#include <cstdint>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"
#include "ternkit/error.hpp"
#include "ternkit/model.hpp"

namespace ternkit {

// Layout (all integers little-endian):
//   "TERN" | u32 version | u32 header_len | header (JSON text)
//   u32 blob_count | blobs...
// blob:
//   u16 name_len | name | u8 kind (0 = f64 array, 1 = packed ternary)
//   u8 rank | u32 dims[rank] | f64 alpha | u64 payload_len | payload
// f64 payloads are the row-major values; packed payloads use the 2-bit
// layout of PackedTernaryMatrix. Inference-mode files store every quantized
// weight as a packed blob and nothing else for it.
inline constexpr std::uint32_t kCheckpointVersion = 1;

struct Blob {
  enum Kind : std::uint8_t { F64 = 0, Packed = 1 };
  std::string name;
  Kind kind = F64;
  std::vector<std::uint32_t> dims;
  double alpha = 0.0;
  std::vector<std::uint8_t> payload;
};

struct CheckpointFile {
  nlohmann::json header;  // model_kind, mode, config
  std::vector<Blob> blobs;
};

std::vector<std::uint8_t> serialize_checkpoint(const Model& model);
void save_checkpoint(const Model& model, const std::string& path);

// Throws FormatError (bad magic or malformed header), VersionError,
// TruncatedError or CorruptionError.
CheckpointFile parse_checkpoint(std::span<const std::uint8_t> bytes);
CheckpointFile read_checkpoint(const std::string& path);

// Builds a fresh model of the recorded kind and fills every parameter.
// Throws UnknownBlobError for a blob that names no parameter and FormatError
// for a missing or misshapen one; nothing partial escapes.
std::unique_ptr<Model> restore_model(const CheckpointFile& file);
std::unique_ptr<Model> load_checkpoint(const std::string& path);

template <class T>
std::unique_ptr<T> load_checkpoint_as(const std::string& path) {
  auto m = load_checkpoint(path);
  if (dynamic_cast<T*>(m.get()) == nullptr) throw FormatError(path + ": unexpected model kind " + m->kind());
  return std::unique_ptr<T>(static_cast<T*>(m.release()));
}

}  // namespace ternkit
