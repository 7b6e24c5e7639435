#pragma once

#include <cstdint>
#include <string>
#include <string_view>

#include "alure/encoder.hpp"

namespace alure {

// Checkpoint layout (all integers little-endian):
//   "ALURECKPT"            9 bytes magic
//   format version         u32
//   config                 u64 length + canonical JSON bytes
//   tensor count           u32
//   tensors                per tensor: u64 element count + f64 values, in
//                          ModelParams::visit order
//   CRC32                  u32 over every preceding byte
//
// The feature-arch artifact uses the same layout with magic "ALUREFEAT" and
// only the FeatureParams tensors.
inline constexpr std::uint32_t kCheckpointFormatVersion = 1;
inline constexpr std::string_view kCheckpointMagic = "ALURECKPT";
inline constexpr std::string_view kFeatureArchMagic = "ALUREFEAT";

struct Checkpoint {
  ModelConfig config;
  ModelParams params;
  /// CRC32 of the serialized bytes; identifies the checkpoint.
  std::uint64_t model_version = 0;
};

std::string serialize_checkpoint(const ModelParams& params, const ModelConfig& config);
/// Throws ChecksumError on truncation/corruption, FormatError on a bad magic,
/// version mismatch or shape mismatch. Never returns partial state.
Checkpoint deserialize_checkpoint(std::string_view bytes);

void save_checkpoint(const ModelParams& params, const ModelConfig& config, const std::string& path);
Checkpoint load_checkpoint(const std::string& path);

std::string serialize_feature_params(const FeatureParams& params, const ModelConfig& config);
/// Returns the config and feature parameters; same error contract as above.
std::pair<ModelConfig, FeatureParams> deserialize_feature_params(std::string_view bytes);

}  // namespace alure
