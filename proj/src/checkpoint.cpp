#include "alure/checkpoint.hpp"

#include "alure/binary_io.hpp"

namespace alure {

namespace {

template <typename P>
std::string serialize(std::string_view magic, const P& params, const ModelConfig& config) {
  ByteWriter w;
  w.raw(magic);
  w.u32(kCheckpointFormatVersion);
  w.str(config.to_json().dump());
  std::uint32_t count = 0;
  params.visit([&count](const std::string&, const auto&) { ++count; });
  w.u32(count);
  params.visit([&w](const std::string&, const auto& t) {
    w.u64(static_cast<std::uint64_t>(t.size()));
    w.f64s(std::span<const double>(t.data(), t.size()));
  });
  w.finish_with_crc();
  return w.bytes();
}

// Reads the header and config; the caller allocates params from the config and
// calls read_tensors.
ModelConfig read_header(ByteReader& r, std::string_view magic) {
  r.expect_magic(magic);
  const auto version = r.u32();
  if (version != kCheckpointFormatVersion) {
    throw FormatError("checkpoint format version " + std::to_string(version) +
                      " is not supported (expected " + std::to_string(kCheckpointFormatVersion) + ")");
  }
  const std::string cfg_text = r.str();
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(cfg_text);
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("checkpoint config is not valid JSON: ") + e.what());
  }
  ModelConfig cfg = ModelConfig::from_json(j);
  cfg.validate();
  return cfg;
}

template <typename P>
void read_tensors(ByteReader& r, P& params) {
  std::uint32_t expected = 0;
  params.visit([&expected](const std::string&, const auto&) { ++expected; });
  const auto count = r.u32();
  if (count != expected) {
    throw FormatError("checkpoint holds " + std::to_string(count) + " tensors, config implies " +
                      std::to_string(expected));
  }
  params.visit([&r](const std::string& name, auto& t) {
    const auto n = r.u64();
    if (n != static_cast<std::uint64_t>(t.size())) {
      throw FormatError("tensor " + name + " has " + std::to_string(n) + " values, expected " +
                        std::to_string(t.size()));
    }
    r.f64s(std::span<double>(t.data(), t.size()));
  });
  if (!r.at_end()) throw FormatError("trailing bytes after checkpoint tensors");
}

}  // namespace

std::string serialize_checkpoint(const ModelParams& params, const ModelConfig& config) {
  return serialize(kCheckpointMagic, params, config);
}

Checkpoint deserialize_checkpoint(std::string_view bytes) {
  ByteReader r(verify_crc(bytes));
  Checkpoint ck;
  ck.config = read_header(r, kCheckpointMagic);
  ModelParams params = zero_params(ck.config);
  read_tensors(r, params);
  ck.params = std::move(params);
  ck.model_version = crc32_of(bytes);
  return ck;
}

void save_checkpoint(const ModelParams& params, const ModelConfig& config, const std::string& path) {
  write_file_atomic(path, serialize_checkpoint(params, config));
}

Checkpoint load_checkpoint(const std::string& path) { return deserialize_checkpoint(read_file(path)); }

std::string serialize_feature_params(const FeatureParams& params, const ModelConfig& config) {
  return serialize(kFeatureArchMagic, params, config);
}

std::pair<ModelConfig, FeatureParams> deserialize_feature_params(std::string_view bytes) {
  ByteReader r(verify_crc(bytes));
  ModelConfig cfg = read_header(r, kFeatureArchMagic);
  FeatureParams params = zero_params(cfg).feature;
  read_tensors(r, params);
  return {cfg, std::move(params)};
}

}  // namespace alure
