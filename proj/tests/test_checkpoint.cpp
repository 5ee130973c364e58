#include <fstream>

#include "doctest.h"
#include "helpers.hpp"
#include "x2face/checkpoint.hpp"
#include "x2face/error.hpp"

using namespace x2face;
namespace fs = std::filesystem;

namespace {
const NetConfig kSmall{16, 4, 16, 8};

std::string slurp(const fs::path& p) {
  std::ifstream f(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(f), {}};
}
void spit(const fs::path& p, const std::string& s) {
  std::ofstream f(p, std::ios::binary | std::ios::trunc);
  f << s;
}
ErrorCode load_error(const fs::path& p) {
  try {
    load_checkpoint(p);
  } catch (const Error& e) {
    return e.code();
  }
  FAIL("load unexpectedly succeeded");
  return ErrorCode::kPrecondition;
}
}  // namespace

TEST_CASE("save/load round trip is bitwise exact") {
  auto dir = testing::scratch("ckpt_roundtrip");
  X2FaceModel<float> m(kSmall, 11);
  auto s = testing::random_tensor<float>({1, 3, 16, 16}, 1);
  auto d = testing::random_tensor<float>({1, 3, 16, 16}, 2);
  const auto before = x2face_forward(m, {s}, d);
  save_checkpoint(dir / "m.ckpt", m, {{"stage", 1}, {"step", 42}});
  auto loaded = load_checkpoint(dir / "m.ckpt");
  CHECK(loaded.model.config == kSmall);
  CHECK(loaded.training_meta["step"] == 42);
  CHECK(testing::bitwise_equal(x2face_forward(loaded.model, {s}, d), before));
  // Saving the loaded model reproduces the file byte for byte.
  save_checkpoint(dir / "m2.ckpt", loaded.model, loaded.training_meta);
  CHECK(slurp(dir / "m.ckpt") == slurp(dir / "m2.ckpt"));
  CHECK_FALSE(fs::exists(dir / "m.ckpt.tmp"));
}

TEST_CASE("truncated blob is a length mismatch") {
  auto dir = testing::scratch("ckpt_trunc");
  X2FaceModel<float> m(kSmall, 0);
  save_checkpoint(dir / "m.ckpt", m, {});
  auto bytes = slurp(dir / "m.ckpt");
  spit(dir / "cut.ckpt", bytes.substr(0, bytes.size() - 100));
  CHECK(load_error(dir / "cut.ckpt") == ErrorCode::kLengthMismatch);
}

TEST_CASE("bad magic and garbage are rejected") {
  auto dir = testing::scratch("ckpt_magic");
  X2FaceModel<float> m(kSmall, 0);
  save_checkpoint(dir / "m.ckpt", m, {});
  auto bytes = slurp(dir / "m.ckpt");
  bytes[0] = 'Z';
  spit(dir / "bad.ckpt", bytes);
  CHECK(load_error(dir / "bad.ckpt") == ErrorCode::kBadMagic);
  spit(dir / "tiny.ckpt", "X2");
  CHECK_THROWS_AS(load_checkpoint(dir / "tiny.ckpt"), Error);
  CHECK(load_error(dir / "missing.ckpt") == ErrorCode::kIo);
}

TEST_CASE("manifest shape edited to disagree with the config names the tensor") {
  auto dir = testing::scratch("ckpt_shape");
  X2FaceModel<float> m(kSmall, 0);
  save_checkpoint(dir / "m.ckpt", m, {});
  const auto bytes = slurp(dir / "m.ckpt");
  std::uint64_t len = 0;
  for (int i = 0; i < 8; ++i) len |= static_cast<std::uint64_t>(static_cast<unsigned char>(bytes[8 + i])) << (8 * i);
  auto manifest = nlohmann::json::parse(bytes.substr(16, len));
  auto& t0 = manifest["tensors"][0];
  const std::string name = t0["name"];
  // Same element count, different shape: only the config check can catch it.
  auto shape = t0["shape"].get<std::vector<int>>();
  std::swap(shape[0], shape[1]);
  if (shape == t0["shape"].get<std::vector<int>>()) shape = {shape[0] * shape[1], 1, shape[2], shape[3]};
  t0["shape"] = shape;
  std::string text = manifest.dump();
  std::string out = bytes.substr(0, 8);
  std::uint64_t n = text.size();
  for (int i = 0; i < 8; ++i) out += static_cast<char>((n >> (8 * i)) & 0xff);
  out += text + bytes.substr(16 + len);
  spit(dir / "edited.ckpt", out);
  try {
    load_checkpoint(dir / "edited.ckpt");
    FAIL("expected a shape error");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::kTensorShapeMismatch);
    CHECK(std::string(e.what()).find(name) != std::string::npos);
  }
}

TEST_CASE("format version mismatch is reported") {
  auto dir = testing::scratch("ckpt_version");
  X2FaceModel<float> m(kSmall, 0);
  save_checkpoint(dir / "m.ckpt", m, {});
  auto c = read_container(dir / "m.ckpt", kModelMagic);
  nlohmann::json header = c.manifest;
  header.erase("tensors");
  header.erase("format_version");
  write_container(dir / "v.ckpt", kModelMagic, header, c.tensors);
  // Patch the version field in place.
  auto bytes = slurp(dir / "v.ckpt");
  const auto pos = bytes.find("\"format_version\":1");
  REQUIRE(pos != std::string::npos);
  bytes[pos + 17] = '9';
  spit(dir / "v.ckpt", bytes);
  CHECK(load_error(dir / "v.ckpt") == ErrorCode::kVersionMismatch);
}
