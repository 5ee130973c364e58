#include "x2face/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>
#include <map>

namespace x2face {
namespace {

void put_u64_le(std::string& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}

std::uint64_t get_u64_le(const unsigned char* p) {
  std::uint64_t v = 0;
  for (int i = 7; i >= 0; --i) v = (v << 8) | p[i];
  return v;
}

void put_f32_le(std::string& out, float f) {
  const auto bits = std::bit_cast<std::uint32_t>(f);
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((bits >> (8 * i)) & 0xFF));
}

float get_f32_le(const unsigned char* p) {
  std::uint32_t bits = 0;
  for (int i = 3; i >= 0; --i) bits = (bits << 8) | p[i];
  return std::bit_cast<float>(bits);
}

}  // namespace

void write_container(const std::filesystem::path& path, std::string_view magic,
                     const nlohmann::json& header, const std::vector<NamedTensor>& tensors) {
  require(magic.size() == 8, ErrorCode::kPrecondition, "container magic must be 8 bytes");
  nlohmann::json manifest = header;
  manifest["format_version"] = kFormatVersion;
  nlohmann::json list = nlohmann::json::array();
  std::uint64_t offset = 0;
  std::string blob;
  for (const auto& t : tensors) {
    const Shape4 s = t.value.shape();
    const std::uint64_t length = t.value.size() * sizeof(float);
    list.push_back({{"name", t.name},
                    {"shape", {s.d0, s.d1, s.d2, s.d3}},
                    {"offset", offset},
                    {"length", length}});
    for (float v : t.value.data()) put_f32_le(blob, v);
    offset += length;
  }
  manifest["tensors"] = std::move(list);
  const std::string text = manifest.dump();

  std::string out(magic);
  put_u64_le(out, text.size());
  out += text;
  out += blob;
  // Write-then-rename so a crash never leaves a truncated checkpoint behind.
  std::filesystem::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream f(tmp, std::ios::binary | std::ios::trunc);
    require(static_cast<bool>(f), ErrorCode::kIo, "cannot write " + tmp.string());
    f.write(out.data(), static_cast<std::streamsize>(out.size()));
    f.flush();
    require(static_cast<bool>(f), ErrorCode::kIo, "short write to " + tmp.string());
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  require(!ec, ErrorCode::kIo, "cannot move checkpoint into place: " + ec.message());
}

Container read_container(const std::filesystem::path& path, std::string_view magic) {
  std::ifstream f(path, std::ios::binary);
  require(static_cast<bool>(f), ErrorCode::kIo, "cannot open " + path.string());
  const std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(f)),
                                         std::istreambuf_iterator<char>());
  require(bytes.size() >= 8 && std::memcmp(bytes.data(), magic.data(), 8) == 0,
          ErrorCode::kBadMagic, path.string() + ": bad magic");
  require(bytes.size() >= 16, ErrorCode::kLengthMismatch, path.string() + ": truncated header");
  const std::uint64_t manifest_len = get_u64_le(bytes.data() + 8);
  require(manifest_len <= bytes.size() - 16, ErrorCode::kLengthMismatch,
          path.string() + ": manifest length exceeds file size");

  Container c;
  try {
    c.manifest = nlohmann::json::parse(bytes.begin() + 16, bytes.begin() + 16 + manifest_len);
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCode::kLengthMismatch, path.string() + ": unreadable manifest: " + e.what());
  }
  require(c.manifest.value("format_version", -1) == kFormatVersion, ErrorCode::kVersionMismatch,
          path.string() + ": unsupported format_version " +
              c.manifest.value("format_version", nlohmann::json()).dump());

  const unsigned char* blob = bytes.data() + 16 + manifest_len;
  const std::uint64_t blob_len = bytes.size() - 16 - manifest_len;
  std::uint64_t expected = 0;
  for (const auto& rec : c.manifest.at("tensors")) {
    const auto name = rec.at("name").get<std::string>();
    const auto shape = rec.at("shape").get<std::vector<int>>();
    const auto offset = rec.at("offset").get<std::uint64_t>();
    const auto length = rec.at("length").get<std::uint64_t>();
    require(shape.size() == 4, ErrorCode::kTensorShapeMismatch, "tensor " + name + ": rank must be 4");
    const Shape4 s{shape[0], shape[1], shape[2], shape[3]};
    require(length == s.numel() * sizeof(float) && offset == expected, ErrorCode::kLengthMismatch,
            "tensor " + name + ": manifest offset/length inconsistent with shape");
    require(offset + length <= blob_len, ErrorCode::kLengthMismatch,
            path.string() + ": blob shorter than manifest (tensor " + name + ")");
    Tensor<float> t(s);
    for (std::size_t i = 0; i < t.size(); ++i) t[i] = get_f32_le(blob + offset + 4 * i);
    c.tensors.push_back({name, std::move(t)});
    expected += length;
  }
  require(expected == blob_len, ErrorCode::kLengthMismatch,
          path.string() + ": blob length " + std::to_string(blob_len) + " != manifest total " +
              std::to_string(expected));
  return c;
}

std::vector<NamedTensor> collect_tensors(const std::vector<Parameter<float>*>& params,
                                         const std::vector<Buffer<float>*>& buffers) {
  std::vector<NamedTensor> out;
  for (auto* p : params) out.push_back({p->name, p->value});
  for (auto* b : buffers) out.push_back({b->name, b->value});
  return out;
}

void assign_tensors(const Container& c, const std::vector<Parameter<float>*>& params,
                    const std::vector<Buffer<float>*>& buffers) {
  std::map<std::string, const Tensor<float>*> by_name;
  for (const auto& t : c.tensors) by_name[t.name] = &t.value;
  auto take = [&](const std::string& name, Tensor<float>& dst) {
    auto it = by_name.find(name);
    require(it != by_name.end(), ErrorCode::kTensorShapeMismatch, "checkpoint lacks tensor " + name);
    require(it->second->shape() == dst.shape(), ErrorCode::kTensorShapeMismatch,
            "tensor " + name + " has shape " + it->second->shape().str() +
                " but the configuration requires " + dst.shape().str());
    dst = *it->second;
  };
  for (auto* p : params) take(p->name, p->value);
  for (auto* b : buffers) take(b->name, b->value);
  require(by_name.size() == params.size() + buffers.size(), ErrorCode::kTensorShapeMismatch,
          "checkpoint holds tensors the configuration does not define");
}

nlohmann::json to_json(const NetConfig& cfg) {
  return {{"resolution", cfg.resolution},
          {"base_channels", cfg.base_channels},
          {"max_channels", cfg.max_channels},
          {"driving_vector_dim", cfg.driving_vector_dim}};
}

NetConfig net_config_from_json(const nlohmann::json& j) {
  NetConfig cfg;
  cfg.resolution = j.at("resolution").get<int>();
  cfg.base_channels = j.at("base_channels").get<int>();
  cfg.max_channels = j.at("max_channels").get<int>();
  cfg.driving_vector_dim = j.at("driving_vector_dim").get<int>();
  cfg.validate();
  return cfg;
}

void save_checkpoint(const std::filesystem::path& path, X2FaceModel<float>& model,
                     const nlohmann::json& training_meta) {
  nlohmann::json header;
  header["net_config"] = to_json(model.config);
  header["training_meta"] = training_meta;
  write_container(path, kModelMagic, header, collect_tensors(model.parameters(), model.buffers()));
}

LoadedCheckpoint load_checkpoint(const std::filesystem::path& path) {
  Container c = read_container(path, kModelMagic);
  LoadedCheckpoint out;
  out.model = X2FaceModel<float>(net_config_from_json(c.manifest.at("net_config")), 0);
  assign_tensors(c, out.model.parameters(), out.model.buffers());
  out.training_meta = c.manifest.value("training_meta", nlohmann::json::object());
  return out;
}

}  // namespace x2face
