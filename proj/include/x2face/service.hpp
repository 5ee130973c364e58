#pragma once

#include <chrono>
#include <cstdint>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <shared_mutex>
#include <string>
#include <vector>

#include "json.hpp"
#include "x2face/checkpoint.hpp"
#include "x2face/control.hpp"

namespace httplib {
class Server;
}

namespace x2face {

std::string base64_encode(std::string_view bytes);
// Throws kPrecondition on characters outside the standard alphabet.
std::string base64_decode(std::string_view text);

struct EmbeddedFace {
  Tensor<float> image;                     // (1, 3, r, r)
  std::optional<Tensor<float>> self_frame; // source frame used for vector-delta mode
};

// Insert-only store keyed by random 128-bit hex tokens. Entries older than
// the TTL are dropped on access.
class EmbeddedStore {
 public:
  using Clock = std::chrono::steady_clock;
  explicit EmbeddedStore(std::chrono::seconds ttl = std::chrono::hours(1)) : ttl_(ttl) {}

  std::string insert(EmbeddedFace face);
  std::shared_ptr<const EmbeddedFace> find(const std::string& id);
  std::size_t size() const;

  // Test hook: pretend `offset` has elapsed.
  void advance_clock(std::chrono::seconds offset) { skew_ += offset; }

 private:
  struct Entry {
    std::shared_ptr<const EmbeddedFace> face;
    Clock::time_point created;
  };
  Clock::time_point now() const { return Clock::now() + skew_; }
  void evict_locked(Clock::time_point t);

  std::chrono::seconds ttl_;
  std::chrono::seconds skew_{0};
  mutable std::shared_mutex mutex_;
  std::map<std::string, Entry> entries_;
};

struct ServiceConfig {
  std::size_t max_request_bytes = 8u << 20;
  std::chrono::seconds ttl = std::chrono::hours(1);
};

struct ServiceResponse {
  int status = 200;
  std::string content_type = "application/json";
  std::string body;

  nlohmann::json json() const { return nlohmann::json::parse(body); }
};

// One uploaded part: raw bytes (PNG) or a form field value.
struct RequestPart {
  std::string name;
  std::string content;
  std::string filename;
};

// Transport-independent request: a body (JSON) plus multipart parts.
struct ServiceRequest {
  std::string body;
  std::string content_type;
  std::vector<RequestPart> parts;

  std::size_t payload_bytes() const;
};

class InferenceService {
 public:
  InferenceService(LoadedCheckpoint checkpoint, std::optional<ControlMaps> maps,
                   ServiceConfig cfg = {});

  ServiceResponse health() const;
  ServiceResponse model_info() const;
  ServiceResponse embed(const ServiceRequest& req);
  ServiceResponse generate(const ServiceRequest& req);
  ServiceResponse edit(const ServiceRequest& req);

  EmbeddedStore& store() { return store_; }
  const NetConfig& net_config() const { return model_.config; }

 private:
  FaceFrame load_frame(const std::string& png) const;

  X2FaceModel<float> model_;
  nlohmann::json training_meta_;
  std::optional<ControlMaps> maps_;
  ServiceConfig cfg_;
  EmbeddedStore store_;
  // Network forwards reuse per-layer scratch, so evaluation is serialized.
  mutable std::mutex model_mutex_;
};

ServiceResponse error_response(int status, const std::string& code, const std::string& message);

void register_routes(httplib::Server& server, InferenceService& service);

// Blocks until the server stops.
void run_server(InferenceService& service, const std::string& host, int port);

}  // namespace x2face
