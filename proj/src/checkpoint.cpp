#include "ternkit/checkpoint.hpp"

#include <map>

#include "binio.hpp"
#include "ternkit/error.hpp"
#include "ternkit/policy.hpp"

namespace ternkit {

namespace {

constexpr char kMagic[4] = {'T', 'E', 'R', 'N'};

QuantLinear* owning_linear(Model& m, const Parameter* p) {
  for (QuantLinear* l : m.quant_linears())
    if (&l->weight == p) return l;
  return nullptr;
}

std::unique_ptr<Model> make_model(const std::string& kind, const nlohmann::json& cfg) {
  if (kind == "sequence") return std::make_unique<SequenceModel>(EncoderConfig::from_json(cfg), 0);
  if (kind == "policy") return std::make_unique<PolicyModel>(PolicyConfig::from_json(cfg), 0);
  throw FormatError("unknown model kind '" + kind + "'");
}

}  // namespace

std::vector<std::uint8_t> serialize_checkpoint(const Model& model_in) {
  Model& model = const_cast<Model&>(model_in);  // parameter enumeration only
  const bool inference = model.mode() == Mode::Inference;
  nlohmann::json header = {{"model_kind", model.kind()}, {"mode", to_string(model.mode())},
                           {"config", model.config_json()}};
  const std::string text = header.dump();

  detail::ByteWriter w;
  w.raw(std::string(kMagic, 4));
  w.put<std::uint32_t>(kCheckpointVersion);
  w.put<std::uint32_t>(static_cast<std::uint32_t>(text.size()));
  w.raw(text);
  const auto params = model.parameters();
  w.put<std::uint32_t>(static_cast<std::uint32_t>(params.size()));
  for (const Parameter* p : params) {
    w.put<std::uint16_t>(static_cast<std::uint16_t>(p->name.size()));
    w.raw(p->name);
    const QuantLinear* ql = inference && p->quantized ? owning_linear(model, p) : nullptr;
    if (ql != nullptr) {
      w.put<std::uint8_t>(Blob::Packed);
      w.put<std::uint8_t>(2);
      w.put<std::uint32_t>(static_cast<std::uint32_t>(ql->packed->rows()));
      w.put<std::uint32_t>(static_cast<std::uint32_t>(ql->packed->cols()));
      w.put<double>(ql->packed->alpha());
      w.put<std::uint64_t>(ql->packed->bytes().size());
      w.raw(ql->packed->bytes());
    } else {
      w.put<std::uint8_t>(Blob::F64);
      w.put<std::uint8_t>(static_cast<std::uint8_t>(p->value.rank()));
      for (std::size_t d : p->value.shape) w.put<std::uint32_t>(static_cast<std::uint32_t>(d));
      w.put<double>(0.0);
      w.put<std::uint64_t>(p->value.numel() * 8);
      for (double v : p->value.data) w.put<double>(v);
    }
  }
  return std::move(w.bytes());
}

void save_checkpoint(const Model& model, const std::string& path) {
  detail::write_file(path, serialize_checkpoint(model));
}

CheckpointFile parse_checkpoint(std::span<const std::uint8_t> bytes) {
  if (bytes.size() < 4 || !std::equal(kMagic, kMagic + 4, bytes.begin()))
    throw FormatError("not a checkpoint: bad magic bytes");
  detail::ByteReader r(bytes.subspan(4));
  const auto version = r.get<std::uint32_t>();
  if (version != kCheckpointVersion)
    throw VersionError("checkpoint version " + std::to_string(version) + " is not supported (expected " +
                       std::to_string(kCheckpointVersion) + ")");
  CheckpointFile f;
  const auto header_len = r.get<std::uint32_t>();
  const std::string text = r.str(header_len);
  f.header = nlohmann::json::parse(text, nullptr, false);
  if (f.header.is_discarded() || !f.header.is_object() || !f.header.contains("model_kind") ||
      !f.header.contains("mode") || !f.header.contains("config"))
    throw FormatError("checkpoint header is not a valid object");
  const auto count = r.get<std::uint32_t>();
  for (std::uint32_t i = 0; i < count; ++i) {
    Blob b;
    b.name = r.str(r.get<std::uint16_t>());
    const auto kind = r.get<std::uint8_t>();
    if (kind > Blob::Packed) throw FormatError("blob '" + b.name + "': unknown kind " + std::to_string(kind));
    b.kind = static_cast<Blob::Kind>(kind);
    const auto rank = r.get<std::uint8_t>();
    for (std::uint8_t d = 0; d < rank; ++d) b.dims.push_back(r.get<std::uint32_t>());
    b.alpha = r.get<double>();
    const auto len = r.get<std::uint64_t>();
    if (len > r.remaining()) throw TruncatedError("blob '" + b.name + "' payload runs past end of file");
    const auto payload = r.take(static_cast<std::size_t>(len));
    b.payload.assign(payload.begin(), payload.end());
    f.blobs.push_back(std::move(b));
  }
  if (r.remaining() != 0) throw FormatError("trailing bytes after last blob");
  return f;
}

CheckpointFile read_checkpoint(const std::string& path) { return parse_checkpoint(detail::read_file(path)); }

std::unique_ptr<Model> restore_model(const CheckpointFile& file) {
  const std::string kind = file.header.at("model_kind").get<std::string>();
  const Mode mode = mode_from_string(file.header.at("mode").get<std::string>());
  std::unique_ptr<Model> model;
  try {
    model = make_model(kind, file.header.at("config"));
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("checkpoint config: ") + e.what());
  } catch (const ConfigError& e) {
    throw FormatError(std::string("checkpoint config: ") + e.what());
  }

  std::map<std::string, Parameter*> by_name;
  for (Parameter* p : model->parameters()) by_name[p->name] = p;
  std::map<std::string, bool> seen;
  std::map<QuantLinear*, PackedTernaryMatrix> packs;

  for (const Blob& b : file.blobs) {
    auto it = by_name.find(b.name);
    if (it == by_name.end()) throw UnknownBlobError("unknown blob '" + b.name + "'");
    if (seen[b.name]) throw FormatError("duplicate blob '" + b.name + "'");
    seen[b.name] = true;
    Parameter* p = it->second;
    std::vector<std::size_t> dims(b.dims.begin(), b.dims.end());
    if (dims != p->value.shape)
      throw FormatError("blob '" + b.name + "' has the wrong shape for " + p->value.shape_str());
    if (b.kind == Blob::Packed) {
      QuantLinear* ql = p->quantized ? owning_linear(*model, p) : nullptr;
      if (ql == nullptr) throw FormatError("blob '" + b.name + "' is packed but the parameter is not quantized");
      if (mode != Mode::Inference) throw FormatError("packed blob '" + b.name + "' in a training checkpoint");
      packs.emplace(ql, adopt_packed(dims[0], dims[1], b.payload, b.alpha));
    } else {
      if (b.payload.size() != p->value.numel() * 8)
        throw FormatError("blob '" + b.name + "' payload length does not match its shape");
      if (mode == Mode::Inference && p->quantized)
        throw FormatError("inference checkpoint stores '" + b.name + "' unpacked");
      detail::ByteReader r(b.payload);
      for (double& v : p->value.data) v = r.get<double>();
    }
  }
  for (const auto& [name, p] : by_name)
    if (!seen[name]) throw FormatError("checkpoint is missing blob '" + name + "'");

  if (mode == Mode::Inference) {
    for (auto& [ql, packed] : packs) {
      ql->weight.value = dequantize(unpack(packed));
      ql->weight.value.requires_grad = true;
    }
    model->set_mode(Mode::Inference);
    // set_mode re-derives the packs from the master weights; keep the stored
    // bytes and alpha verbatim instead.
    for (auto& [ql, packed] : packs) ql->packed = std::move(packed);
  }
  return model;
}

std::unique_ptr<Model> load_checkpoint(const std::string& path) { return restore_model(read_checkpoint(path)); }

}  // namespace ternkit
