#include <filesystem>
#include <fstream>
#include <sstream>

#include "alure/binary_io.hpp"
#include "alure/checkpoint.hpp"
#include "doctest.h"
#include "json.hpp"
#include "test_support.hpp"

using namespace alure;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / "alure_test_checkpoint";
  fs::create_directories(dir);
  return dir / name;
}

}  // namespace

TEST_CASE("save, load, save produces identical bytes") {
  for (auto v : {CompressionVariant::skip_dot, CompressionVariant::interaction}) {
    ModelConfig cfg = default_toy_config();
    cfg.compression_variant = v;
    ModelParams p = init_params(cfg);
    testing_support::randomize(p, 99);
    const auto path = scratch("rt.ckpt").string();
    save_checkpoint(p, cfg, path);
    const Checkpoint ck = load_checkpoint(path);
    CHECK(ck.config == cfg);
    CHECK(serialize_checkpoint(ck.params, ck.config) == read_file(path));
    CHECK(ck.model_version == crc32_of(read_file(path)));
  }
}

TEST_CASE("corrupted or truncated checkpoints are rejected") {
  const ModelConfig cfg = testing_support::tiny_config(CompressionVariant::skip_dot);
  const std::string bytes = serialize_checkpoint(init_params(cfg), cfg);
  for (std::size_t cut : {std::size_t{0}, std::size_t{3}, bytes.size() / 2, bytes.size() - 1}) {
    CHECK_THROWS_AS(deserialize_checkpoint(std::string_view(bytes).substr(0, cut)), ChecksumError);
  }
  std::string flipped = bytes;
  flipped[bytes.size() / 3] ^= 0x10;
  CHECK_THROWS_AS(deserialize_checkpoint(flipped), ChecksumError);
}

TEST_CASE("format version mismatch is reported") {
  const ModelConfig cfg = testing_support::tiny_config(CompressionVariant::skip_dot);
  std::string bytes = serialize_checkpoint(init_params(cfg), cfg);
  // Rewrite the version field and re-seal the checksum.
  std::string body = bytes.substr(0, bytes.size() - 4);
  body[kCheckpointMagic.size()] = 9;
  ByteWriter w;
  w.raw(body);
  w.finish_with_crc();
  CHECK_THROWS_WITH_AS(deserialize_checkpoint(w.bytes()), doctest::Contains("version"), FormatError);
}

TEST_CASE("wrong magic is rejected") {
  const ModelConfig cfg = testing_support::tiny_config(CompressionVariant::skip_dot);
  const ModelParams p = init_params(cfg);
  const std::string feat = serialize_feature_params(p.feature, cfg);
  CHECK_THROWS_AS(deserialize_checkpoint(feat), FormatError);
  const auto [cfg2, fp] = deserialize_feature_params(feat);
  CHECK(cfg2 == cfg);
  CHECK(serialize_feature_params(fp, cfg2) == feat);
}

TEST_CASE("golden toy checkpoint reproduces its recorded forward output") {
  const std::string dir = ALURE_TEST_DATA;
  const Checkpoint ck = load_checkpoint(dir + "/golden_toy.ckpt");
  CHECK(ck.config == default_toy_config());
  std::ifstream in(dir + "/golden_toy_forward.json");
  REQUIRE(in.good());
  const auto j = nlohmann::json::parse(in);
  std::istringstream hist(j.at("histories").get<std::string>());
  const auto users = parse_histories(hist, {}).histories;
  REQUIRE(users.size() == j.at("embeddings").size());
  for (std::size_t i = 0; i < users.size(); ++i) {
    const auto e = forward_user(ck.params.feature, ck.config, users[i]);
    const auto want = j.at("embeddings")[i].get<std::vector<double>>();
    REQUIRE(want.size() == static_cast<std::size_t>(e.vectors.size()));
    for (std::size_t k = 0; k < want.size(); ++k) CHECK(std::abs(e.vectors.data()[k] - want[k]) < 1e-12);
  }
}
