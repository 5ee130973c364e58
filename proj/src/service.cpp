#include "x2face/service.hpp"

#include <array>
#include <random>
#include <sstream>

#include "httplib.h"
#include "x2face/diffops.hpp"
#include "x2face/editing.hpp"
#include "x2face/error.hpp"
#include "x2face/image_io.hpp"

namespace x2face {

// ------------------------------------------------------------ base64

namespace {
constexpr char kB64[] = "ABCDEFGHIJKLMNOPQRSTUVWXYZabcdefghijklmnopqrstuvwxyz0123456789+/";

int b64_value(char c) {
  if (c >= 'A' && c <= 'Z') return c - 'A';
  if (c >= 'a' && c <= 'z') return c - 'a' + 26;
  if (c >= '0' && c <= '9') return c - '0' + 52;
  if (c == '+' || c == '-') return 62;
  if (c == '/' || c == '_') return 63;
  return -1;
}
}  // namespace

std::string base64_encode(std::string_view bytes) {
  std::string out;
  out.reserve((bytes.size() + 2) / 3 * 4);
  std::size_t i = 0;
  for (; i + 2 < bytes.size(); i += 3) {
    const unsigned v = (static_cast<unsigned char>(bytes[i]) << 16) |
                       (static_cast<unsigned char>(bytes[i + 1]) << 8) |
                       static_cast<unsigned char>(bytes[i + 2]);
    out += kB64[v >> 18];
    out += kB64[(v >> 12) & 63];
    out += kB64[(v >> 6) & 63];
    out += kB64[v & 63];
  }
  if (i < bytes.size()) {
    unsigned v = static_cast<unsigned char>(bytes[i]) << 16;
    if (i + 1 < bytes.size()) v |= static_cast<unsigned char>(bytes[i + 1]) << 8;
    out += kB64[v >> 18];
    out += kB64[(v >> 12) & 63];
    out += i + 1 < bytes.size() ? kB64[(v >> 6) & 63] : '=';
    out += '=';
  }
  return out;
}

std::string base64_decode(std::string_view text) {
  // Tolerate data URLs from canvas exports.
  if (text.starts_with("data:")) {
    const auto comma = text.find(',');
    require(comma != std::string_view::npos, ErrorCode::kPrecondition, "malformed data URL");
    text.remove_prefix(comma + 1);
  }
  std::string out;
  unsigned acc = 0;
  int bits = 0;
  for (char c : text) {
    if (c == '=' || c == '\n' || c == '\r' || c == ' ') continue;
    const int v = b64_value(c);
    require(v >= 0, ErrorCode::kPrecondition, "invalid base64 character");
    acc = (acc << 6) | static_cast<unsigned>(v);
    bits += 6;
    if (bits >= 8) {
      bits -= 8;
      out += static_cast<char>((acc >> bits) & 0xff);
    }
  }
  return out;
}

// ------------------------------------------------------------ store

std::string EmbeddedStore::insert(EmbeddedFace face) {
  static thread_local std::random_device rd;
  std::array<std::uint32_t, 4> words{rd(), rd(), rd(), rd()};
  std::ostringstream os;
  os << std::hex;
  for (auto w : words) {
    os.width(8);
    os.fill('0');
    os << w;
  }
  const std::string id = os.str();
  std::unique_lock lock(mutex_);
  evict_locked(now());
  // A collision at 128 bits means the entropy source is broken.
  require(entries_.find(id) == entries_.end(), ErrorCode::kPrecondition, "id collision");
  entries_.emplace(id, Entry{std::make_shared<const EmbeddedFace>(std::move(face)), now()});
  return id;
}

std::shared_ptr<const EmbeddedFace> EmbeddedStore::find(const std::string& id) {
  std::unique_lock lock(mutex_);
  evict_locked(now());
  auto it = entries_.find(id);
  return it == entries_.end() ? nullptr : it->second.face;
}

std::size_t EmbeddedStore::size() const {
  std::shared_lock lock(mutex_);
  return entries_.size();
}

void EmbeddedStore::evict_locked(Clock::time_point t) {
  for (auto it = entries_.begin(); it != entries_.end();)
    it = t - it->second.created >= ttl_ ? entries_.erase(it) : std::next(it);
}

// ------------------------------------------------------------ handlers

std::size_t ServiceRequest::payload_bytes() const {
  std::size_t n = body.size();
  for (const auto& p : parts) n += p.content.size();
  return n;
}

ServiceResponse error_response(int status, const std::string& code, const std::string& message) {
  return {status, "application/json", nlohmann::json{{"code", code}, {"message", message}}.dump()};
}

namespace {

struct HttpError {
  int status;
  std::string code;
  std::string message;
};

[[noreturn]] void http_fail(int status, std::string code, std::string message) {
  throw HttpError{status, std::move(code), std::move(message)};
}

int status_for(ErrorCode c) {
  switch (c) {
    case ErrorCode::kNotFound: return 404;
    case ErrorCode::kNotFitted: return 409;
    case ErrorCode::kNonFinite:
    case ErrorCode::kIo: return 500;
    default: return 400;
  }
}

template <typename F>
ServiceResponse guarded(const ServiceRequest* req, std::size_t limit, F&& f) {
  try {
    if (req && req->payload_bytes() > limit)
      http_fail(413, "payload_too_large",
                "request carries " + std::to_string(req->payload_bytes()) + " bytes; limit is " +
                    std::to_string(limit));
    return f();
  } catch (const HttpError& e) {
    return error_response(e.status, e.code, e.message);
  } catch (const Error& e) {
    return error_response(status_for(e.code()), std::string(error_code_name(e.code())), e.what());
  } catch (const nlohmann::json::exception& e) {
    return error_response(400, "malformed_request", e.what());
  } catch (const std::exception& e) {
    return error_response(500, "internal", e.what());
  }
}

nlohmann::json json_body(const ServiceRequest& req) {
  for (const auto& p : req.parts)
    if (p.name == "request" || p.name == "json") return nlohmann::json::parse(p.content);
  if (req.body.empty()) return nlohmann::json::object();
  auto j = nlohmann::json::parse(req.body, nullptr, false);
  if (j.is_discarded() || !j.is_object())
    http_fail(400, "malformed_request", "request body is not a JSON object");
  return j;
}

std::optional<std::string> field(const ServiceRequest& req, const nlohmann::json& body,
                                 const std::string& name) {
  for (const auto& p : req.parts)
    if (p.name == name) return p.content;
  if (body.contains(name)) {
    if (!body[name].is_string()) http_fail(400, "malformed_request", name + " must be a string");
    return body[name].get<std::string>();
  }
  return std::nullopt;
}

// PNG bytes from a multipart file part or a base64 JSON string.
std::optional<std::string> image_field(const ServiceRequest& req, const nlohmann::json& body,
                                       const std::string& name) {
  for (const auto& p : req.parts)
    if (p.name == name) return p.content;
  if (body.contains(name)) {
    if (!body[name].is_string())
      http_fail(400, "malformed_request", name + " must be a base64 PNG string");
    return base64_decode(body[name].get<std::string>());
  }
  return std::nullopt;
}

std::string png_bytes(const Tensor<float>& img) {
  const auto bytes = encode_png(img);
  return {bytes.begin(), bytes.end()};
}

std::shared_ptr<const EmbeddedFace> lookup(EmbeddedStore& store, const std::string& id) {
  auto face = store.find(id);
  if (!face) http_fail(404, "not_found", "unknown embedded_id '" + id + "'");
  return face;
}

Vec json_vector(const nlohmann::json& j, const char* what, int expected) {
  if (!j.is_array()) http_fail(400, "malformed_request", std::string(what) + " must be an array");
  if (static_cast<int>(j.size()) != expected)
    http_fail(400, "dimension_mismatch",
              std::string(what) + " has " + std::to_string(j.size()) + " entries; expected " +
                  std::to_string(expected));
  Vec v(expected);
  for (int i = 0; i < expected; ++i) {
    if (!j[i].is_number()) http_fail(400, "malformed_request", std::string(what) + " must be numeric");
    v[i] = j[i].get<double>();
  }
  return v;
}

}  // namespace

InferenceService::InferenceService(LoadedCheckpoint checkpoint, std::optional<ControlMaps> maps,
                                   ServiceConfig cfg)
    : model_(std::move(checkpoint.model)),
      training_meta_(std::move(checkpoint.training_meta)),
      maps_(std::move(maps)),
      cfg_(cfg),
      store_(cfg.ttl) {
  if (maps_ && maps_->v_to_p)
    require(maps_->v_to_p->vec_dim() == model_.config.driving_vector_dim,
            ErrorCode::kShapeMismatch, "control maps do not match the checkpoint's vector size");
}

FaceFrame InferenceService::load_frame(const std::string& png) const {
  FaceFrame f;
  try {
    f = decode_png(std::span(reinterpret_cast<const std::uint8_t*>(png.data()), png.size()), 3);
  } catch (const Error& e) {
    http_fail(400, "bad_image", std::string("image could not be decoded: ") + e.what());
  }
  const int r = model_.config.resolution;
  if (f.height() != r || f.width() != r) f = ops::bilinear_resize(f, r, r);
  return f;
}

ServiceResponse InferenceService::health() const {
  const bool loaded = maps_.has_value() && maps_->pose_ready();
  nlohmann::json j{{"status", "ok"},
                   {"model",
                    {{"resolution", model_.config.resolution},
                     {"vector_dim", model_.config.driving_vector_dim}}},
                   {"maps_loaded", loaded}};
  return {200, "application/json", j.dump()};
}

ServiceResponse InferenceService::model_info() const {
  return {200, "application/json", nlohmann::json{{"training_meta", training_meta_}}.dump()};
}

ServiceResponse InferenceService::embed(const ServiceRequest& req) {
  return guarded(&req, cfg_.max_request_bytes, [&] {
    std::vector<std::string> blobs;
    for (const auto& p : req.parts)
      if (p.name.starts_with("source")) blobs.push_back(p.content);
    if (req.parts.empty()) {
      const auto body = json_body(req);
      if (body.contains("sources")) {
        if (!body["sources"].is_array())
          http_fail(400, "malformed_request", "sources must be an array of base64 PNGs");
        for (const auto& s : body["sources"]) {
          if (!s.is_string()) http_fail(400, "malformed_request", "sources must be strings");
          blobs.push_back(base64_decode(s.get<std::string>()));
        }
      }
    }
    if (blobs.empty()) http_fail(400, "no_images", "at least one source image is required");
    std::vector<FaceFrame> frames;
    for (const auto& b : blobs) frames.push_back(load_frame(b));
    EmbeddedFace face;
    {
      std::lock_guard lock(model_mutex_);
      face.image = embed_multi(model_.embedding, frames);
    }
    face.self_frame = frames.front();
    const std::string png = png_bytes(face.image);
    const std::string id = store_.insert(std::move(face));
    nlohmann::json j{{"embedded_id", id}, {"embedded_png", base64_encode(png)}};
    return ServiceResponse{200, "application/json", j.dump()};
  });
}

ServiceResponse InferenceService::generate(const ServiceRequest& req) {
  return guarded(&req, cfg_.max_request_bytes, [&] {
    const auto body = json_body(req);
    const auto id = field(req, body, "embedded_id");
    if (!id) http_fail(400, "malformed_request", "embedded_id is required");
    const auto mode = field(req, body, "mode");
    if (!mode) http_fail(400, "malformed_request", "mode is required");
    const nlohmann::json payload = body.value("payload", nlohmann::json::object());
    if (!payload.is_object()) http_fail(400, "malformed_request", "payload must be an object");
    auto face = lookup(store_, *id);
    const int V = model_.config.driving_vector_dim;

    Tensor<float> out;
    if (*mode == "driving-image") {
      std::optional<std::string> png = image_field(req, payload, "image");
      if (!png) png = image_field(req, body, "driving");
      if (!png) http_fail(400, "malformed_request", "driving-image mode needs payload.image");
      const FaceFrame drv = load_frame(*png);
      std::lock_guard lock(model_mutex_);
      out = drive_decode(model_.driving, drive_encode(model_.driving, drv), face->image).image;
    } else if (*mode == "pose") {
      if (!maps_ || !maps_->pose_ready())
        http_fail(409, "maps_not_loaded", "pose mode needs control maps loaded at startup");
      if (!face->self_frame)
        http_fail(400, "no_self_frame", "embedding has no stored self-frame");
      const Vec p = json_vector(payload.value("pose", nlohmann::json()), "payload.pose",
                                maps_->v_to_p->pose_dim());
      std::lock_guard lock(model_mutex_);
      const Vec v_s = to_vec(drive_encode(model_.driving, *face->self_frame));
      const Vec v_d = pose_drive_vector(v_s, *maps_->p_to_v, *maps_->v_to_p, p);
      out = drive_decode(model_.driving, to_tensor(v_d), face->image).image;
    } else if (*mode == "vector-delta") {
      if (!face->self_frame)
        http_fail(400, "no_self_frame", "vector-delta mode needs a stored self-frame");
      const Vec delta = json_vector(payload.value("delta", nlohmann::json()), "payload.delta", V);
      std::lock_guard lock(model_mutex_);
      Tensor<float> v = drive_encode(model_.driving, *face->self_frame);
      for (int i = 0; i < V; ++i) v[i] += static_cast<float>(delta[i]);
      out = drive_decode(model_.driving, v, face->image).image;
    } else {
      http_fail(400, "malformed_request", "unknown mode '" + *mode + "'");
    }
    return ServiceResponse{200, "image/png", png_bytes(out)};
  });
}

ServiceResponse InferenceService::edit(const ServiceRequest& req) {
  return guarded(&req, cfg_.max_request_bytes, [&] {
    const auto body = json_body(req);
    const auto id = field(req, body, "embedded_id");
    if (!id) http_fail(400, "malformed_request", "embedded_id is required");
    const auto png = image_field(req, body, "overlay");
    if (!png) http_fail(400, "malformed_request", "overlay image is required");
    auto face = lookup(store_, *id);
    Tensor<float> overlay;
    try {
      overlay = decode_png(
          std::span(reinterpret_cast<const std::uint8_t*>(png->data()), png->size()), 4);
    } catch (const Error& e) {
      http_fail(400, "bad_image", std::string("overlay could not be decoded: ") + e.what());
    }
    EmbeddedFace edited;
    edited.image = apply_overlay(face->image, overlay);
    edited.self_frame = face->self_frame;
    const std::string preview = png_bytes(edited.image);
    const std::string new_id = store_.insert(std::move(edited));
    nlohmann::json j{{"embedded_id", new_id}, {"preview_png", base64_encode(preview)}};
    return ServiceResponse{200, "application/json", j.dump()};
  });
}

// ------------------------------------------------------------ transport

namespace {

ServiceRequest to_service_request(const httplib::Request& r) {
  ServiceRequest s;
  s.body = r.body;
  s.content_type = r.get_header_value("Content-Type");
  for (const auto& [name, file] : r.files) s.parts.push_back({name, file.content, file.filename});
  return s;
}

void reply(httplib::Response& res, const ServiceResponse& s) {
  res.status = s.status;
  res.set_content(s.body, s.content_type);
}

}  // namespace

void register_routes(httplib::Server& server, InferenceService& service) {
  server.Get("/health", [&](const httplib::Request&, httplib::Response& res) {
    reply(res, service.health());
  });
  server.Get("/model-info", [&](const httplib::Request&, httplib::Response& res) {
    reply(res, service.model_info());
  });
  server.Post("/embed", [&](const httplib::Request& req, httplib::Response& res) {
    reply(res, service.embed(to_service_request(req)));
  });
  server.Post("/generate", [&](const httplib::Request& req, httplib::Response& res) {
    reply(res, service.generate(to_service_request(req)));
  });
  server.Post("/edit", [&](const httplib::Request& req, httplib::Response& res) {
    reply(res, service.edit(to_service_request(req)));
  });
  // Errors raised by the transport itself (404 route, oversize body) get JSON too.
  server.set_error_handler([](const httplib::Request&, httplib::Response& res) {
    if (!res.body.empty()) return;
    const char* code = res.status == 404   ? "not_found"
                       : res.status == 413 ? "payload_too_large"
                                           : "http_error";
    res.set_content(nlohmann::json{{"code", code}, {"message", httplib::status_message(res.status)}}
                        .dump(),
                    "application/json");
  });
}

void run_server(InferenceService& service, const std::string& host, int port) {
  httplib::Server server;
  // Anything far past the limit is cut off by the transport; the handlers
  // enforce the exact limit with a JSON 413.
  server.set_payload_max_length(64u << 20);
  register_routes(server, service);
  require(server.bind_to_port(host, port), ErrorCode::kIo,
          "cannot bind " + host + ":" + std::to_string(port));
  server.listen_after_bind();
}

}  // namespace x2face
