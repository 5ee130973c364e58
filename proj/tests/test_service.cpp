#include <thread>

#include "doctest.h"
#include "helpers.hpp"
#include "x2face/image_io.hpp"
#include "x2face/service.hpp"

// After Eigen: resolv.h defines a `_res` macro.
#include "httplib.h"

using namespace x2face;

namespace {
const NetConfig kSmall{16, 4, 16, 8};

LoadedCheckpoint small_checkpoint() {
  return LoadedCheckpoint{X2FaceModel<float>(kSmall, 0), nlohmann::json{{"stage", 1}, {"step", 7}}};
}

std::string png_of(const Tensor<float>& t) {
  const auto b = encode_png(t);
  return {b.begin(), b.end()};
}

Tensor<float> from_png(const std::string& s) {
  return decode_png(std::span(reinterpret_cast<const std::uint8_t*>(s.data()), s.size()));
}

Tensor<float> rgba(const Tensor<float>& rgb, float alpha) {
  Tensor<float> o(Shape4{1, 4, rgb.height(), rgb.width()}, alpha);
  for (int c = 0; c < 3; ++c)
    for (int y = 0; y < rgb.height(); ++y)
      for (int x = 0; x < rgb.width(); ++x) o(0, c, y, x) = rgb(0, c, y, x);
  return o;
}

ServiceRequest json_request(const nlohmann::json& j) { return {j.dump(), "application/json", {}}; }

ServiceRequest embed_request(const std::vector<std::string>& pngs) {
  ServiceRequest r;
  for (std::size_t i = 0; i < pngs.size(); ++i)
    r.parts.push_back({"source" + std::to_string(i), pngs[i], "s.png"});
  return r;
}

// PNG-quantized random frame so the service sees exactly what we compute with.
Tensor<float> frame(std::uint64_t seed) {
  return from_png(png_of(testing::random_tensor<float>({1, 3, 16, 16}, seed)));
}

ControlMaps stub_maps() {
  ControlMaps maps;
  VecToPoseMap vp;
  vp.weight = Mat::Zero(3, kSmall.driving_vector_dim);
  vp.bias = Vec::LinSpaced(3, 0.1, 0.3);
  maps.v_to_p = vp;
  maps.p_to_v = PoseToVecMap::affine(Mat::Ones(kSmall.driving_vector_dim, 3), Vec::Zero(kSmall.driving_vector_dim));
  return maps;
}
}  // namespace

TEST_CASE("base64 round trip") {
  const std::string raw("\x00\x01\xfe\xff hello", 10);
  CHECK(base64_decode(base64_encode(raw)) == raw);
  CHECK(base64_encode("Man") == "TWFu");
  CHECK(base64_decode("data:image/png;base64,TWE=") == "Ma");
  CHECK_THROWS_AS(base64_decode("***"), Error);
}

TEST_CASE("store ids and TTL") {
  EmbeddedStore store(std::chrono::seconds(3600));
  const auto a = store.insert({Tensor<float>(Shape4{1, 3, 2, 2}), std::nullopt});
  const auto b = store.insert({Tensor<float>(Shape4{1, 3, 2, 2}), std::nullopt});
  CHECK(a.size() >= 32);  // 128 bits of hex
  CHECK(a != b);
  CHECK(store.find(a) != nullptr);
  CHECK(store.find("nope") == nullptr);
  store.advance_clock(std::chrono::seconds(3599));
  CHECK(store.find(a) != nullptr);
  store.advance_clock(std::chrono::seconds(2));
  CHECK(store.find(a) == nullptr);
  CHECK(store.size() == 0);
}

TEST_CASE("health and model info") {
  InferenceService svc(small_checkpoint(), std::nullopt);
  auto h = svc.health().json();
  CHECK(h["status"] == "ok");
  CHECK(h["model"]["resolution"] == 16);
  CHECK(h["model"]["vector_dim"] == 8);
  CHECK(h["maps_loaded"] == false);
  CHECK(svc.model_info().json()["training_meta"]["step"] == 7);
  InferenceService with_maps(small_checkpoint(), stub_maps());
  CHECK(with_maps.health().json()["maps_loaded"] == true);
}

TEST_CASE("embed") {
  InferenceService svc(small_checkpoint(), std::nullopt);
  const auto src = png_of(frame(1));
  auto one = svc.embed(embed_request({src}));
  REQUIRE(one.status == 200);
  auto two = svc.embed(embed_request({src, src}));
  REQUIRE(two.status == 200);
  CHECK(one.json()["embedded_png"] == two.json()["embedded_png"]);
  CHECK(one.json()["embedded_id"] != two.json()["embedded_id"]);

  auto js = svc.embed(json_request({{"sources", {base64_encode(src)}}}));
  CHECK(js.status == 200);
  CHECK(js.json()["embedded_png"] == one.json()["embedded_png"]);

  auto none = svc.embed(json_request(nlohmann::json::object()));
  CHECK(none.status == 400);
  CHECK(none.json()["code"] == "no_images");
  CHECK(svc.embed(embed_request({"not a png"})).status == 400);
  CHECK(svc.embed(ServiceRequest{"{oops", "application/json", {}}).status == 400);

  // Larger inputs are resized server-side.
  auto big = svc.embed(embed_request({png_of(testing::random_tensor<float>({1, 3, 40, 40}, 2))}));
  CHECK(big.status == 200);
  CHECK(from_png(base64_decode(big.json()["embedded_png"].get<std::string>())).height() == 16);
}

TEST_CASE("generate modes") {
  InferenceService svc(small_checkpoint(), std::nullopt);
  X2FaceModel<float> ref(kSmall, 0);
  const auto src = frame(3), drv = frame(4);
  const auto id = svc.embed(embed_request({png_of(src)})).json()["embedded_id"].get<std::string>();

  auto unknown = svc.generate(json_request({{"embedded_id", "abc"}, {"mode", "vector-delta"},
                                            {"payload", {{"delta", std::vector<double>(8, 0.0)}}}}));
  CHECK(unknown.status == 404);
  CHECK(unknown.json()["code"] == "not_found");

  auto d = svc.generate(json_request({{"embedded_id", id}, {"mode", "driving-image"},
                                      {"payload", {{"image", base64_encode(png_of(drv))}}}}));
  REQUIRE(d.status == 200);
  CHECK(d.content_type == "image/png");
  CHECK(d.body == png_of(x2face_forward(ref, {src}, drv)));

  const auto self_driven = png_of(x2face_forward(ref, {src}, src));
  auto z = svc.generate(json_request({{"embedded_id", id}, {"mode", "vector-delta"},
                                      {"payload", {{"delta", std::vector<double>(8, 0.0)}}}}));
  REQUIRE(z.status == 200);
  CHECK(z.body == self_driven);

  auto wrong = svc.generate(json_request({{"embedded_id", id}, {"mode", "vector-delta"},
                                          {"payload", {{"delta", std::vector<double>(5, 0.0)}}}}));
  CHECK(wrong.status == 400);
  CHECK(wrong.json()["code"] == "dimension_mismatch");

  auto pose = svc.generate(json_request({{"embedded_id", id}, {"mode", "pose"},
                                         {"payload", {{"pose", {0.0, 0.0, 0.0}}}}}));
  CHECK(pose.status == 409);

  CHECK(svc.generate(json_request({{"embedded_id", id}, {"mode", "warp"}})).status == 400);
  CHECK(svc.generate(json_request({{"mode", "pose"}})).status == 400);
}

TEST_CASE("pose mode with a pure linear map reproduces the self-driven frame") {
  InferenceService svc(small_checkpoint(), stub_maps());
  X2FaceModel<float> ref(kSmall, 0);
  const auto src = frame(5);
  const auto id = svc.embed(embed_request({png_of(src)})).json()["embedded_id"].get<std::string>();
  // The stub's v->p map is constant, so p_driving = (0.1, 0.2, 0.3) is a zero pose change.
  auto r = svc.generate(json_request({{"embedded_id", id}, {"mode", "pose"},
                                      {"payload", {{"pose", {0.1, 0.2, 0.3}}}}}));
  REQUIRE(r.status == 200);
  CHECK(r.body == png_of(x2face_forward(ref, {src}, src)));
  auto moved = svc.generate(json_request({{"embedded_id", id}, {"mode", "pose"},
                                          {"payload", {{"pose", {50.0, 0.2, 0.3}}}}}));
  CHECK(moved.status == 200);
  CHECK(moved.body != r.body);
  CHECK(svc.generate(json_request({{"embedded_id", id}, {"mode", "pose"},
                                   {"payload", {{"pose", {0.1, 0.2}}}}}))
            .status == 400);
}

TEST_CASE("edit") {
  InferenceService svc(small_checkpoint(), std::nullopt);
  const auto src = frame(6);
  auto emb = svc.embed(embed_request({png_of(src)})).json();
  const auto id = emb["embedded_id"].get<std::string>();
  const auto embedded_png = base64_decode(emb["embedded_png"].get<std::string>());

  ServiceRequest clear;
  clear.parts = {{"embedded_id", id, ""}, {"overlay", png_of(rgba(frame(7), 0.0f)), "o.png"}};
  auto e = svc.edit(clear);
  REQUIRE(e.status == 200);
  const auto new_id = e.json()["embedded_id"].get<std::string>();
  CHECK(new_id != id);
  CHECK(base64_decode(e.json()["preview_png"].get<std::string>()) == embedded_png);
  CHECK(svc.store().find(id) != nullptr);

  const auto paint = frame(8);
  auto o = svc.edit(json_request({{"embedded_id", id}, {"overlay", base64_encode(png_of(rgba(paint, 1.0f)))}}));
  REQUIRE(o.status == 200);
  CHECK(base64_decode(o.json()["preview_png"].get<std::string>()) == png_of(paint));
  // The original entry is untouched.
  auto again = svc.generate(json_request({{"embedded_id", id}, {"mode", "vector-delta"},
                                          {"payload", {{"delta", std::vector<double>(8, 0.0)}}}}));
  X2FaceModel<float> ref(kSmall, 0);
  CHECK(again.body == png_of(x2face_forward(ref, {src}, src)));

  auto mismatch = svc.edit(json_request(
      {{"embedded_id", id},
       {"overlay", base64_encode(png_of(rgba(testing::random_tensor<float>({1, 3, 8, 8}, 9), 1.0f)))}}));
  CHECK(mismatch.status == 400);
  CHECK(svc.edit(json_request({{"embedded_id", "zz"}, {"overlay", base64_encode(png_of(rgba(paint, 1.0f)))}}))
            .status == 404);
}

TEST_CASE("oversized payloads are rejected") {
  InferenceService svc(small_checkpoint(), std::nullopt);
  ServiceRequest r;
  r.body = std::string((8u << 20) + 1, 'x');
  auto e = svc.embed(r);
  CHECK(e.status == 413);
  CHECK(e.json()["code"] == "payload_too_large");
  CHECK(svc.generate(r).status == 413);
  CHECK(svc.edit(r).status == 413);
}

TEST_CASE("HTTP round trip") {
  InferenceService svc(small_checkpoint(), std::nullopt);
  httplib::Server server;
  register_routes(server, svc);
  const int port = server.bind_to_any_port("127.0.0.1");
  REQUIRE(port > 0);
  std::thread t([&] { server.listen_after_bind(); });
  server.wait_until_ready();

  httplib::Client cli("127.0.0.1", port);
  auto h = cli.Get("/health");
  REQUIRE(h);
  CHECK(h->status == 200);
  CHECK(nlohmann::json::parse(h->body)["model"]["resolution"] == 16);

  httplib::MultipartFormDataItems items{{"source0", png_of(frame(10)), "a.png", "image/png"}};
  auto e = cli.Post("/embed", items);
  REQUIRE(e);
  CHECK(e->status == 200);
  const auto id = nlohmann::json::parse(e->body)["embedded_id"].get<std::string>();

  auto g = cli.Post("/generate",
                    nlohmann::json{{"embedded_id", id}, {"mode", "vector-delta"},
                                   {"payload", {{"delta", std::vector<double>(8, 0.1)}}}}
                        .dump(),
                    "application/json");
  REQUIRE(g);
  CHECK(g->status == 200);
  CHECK(from_png(g->body).height() == 16);

  auto missing = cli.Post("/generate", R"({"embedded_id":"x","mode":"pose","payload":{}})",
                          "application/json");
  REQUIRE(missing);
  CHECK(missing->status == 404);
  CHECK(nlohmann::json::parse(missing->body).contains("code"));

  server.stop();
  t.join();
}
