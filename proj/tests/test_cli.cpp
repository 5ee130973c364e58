#include <cstdlib>
#include <fstream>
#include <sstream>

#include "doctest.h"
#include "helpers.hpp"
#include "x2face/checkpoint.hpp"
#include "x2face/cli.hpp"
#include "x2face/image_io.hpp"

using namespace x2face;
namespace fs = std::filesystem;

namespace {
struct Run {
  int code;
  std::string out, err;
};

Run cli(std::vector<std::string> args) {
  std::ostringstream out, err;
  int code = run_cli(args, out, err);
  return {code, out.str(), err.str()};
}

std::string slurp(const fs::path& p) {
  std::ifstream f(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(f), {}};
}
}  // namespace

TEST_CASE("usage errors exit 2") {
  CHECK(cli({"synth-data", "--bogus-flag", "1", "--out", "x"}).code == 2);
  CHECK(cli({"no-such-command"}).code == 2);
  CHECK(cli({"synth-data"}).code == 2);  // --out is required
  CHECK(cli({}).code == 2);
}

TEST_CASE("help lists defaults") {
  auto r = cli({"synth-data", "--help"});
  CHECK(r.code == 0);
  const auto text = r.out + r.err;
  CHECK(text.find("--identities") != std::string::npos);
  CHECK(text.find("[8]") != std::string::npos);
  auto t = cli({"train", "--help"});
  CHECK((t.out + t.err).find("--seed") != std::string::npos);
}

TEST_CASE("synth-data writes the requested tree") {
  auto root = testing::scratch("cli_synth");
  auto r = cli({"synth-data", "--seed", "7", "--out", (root / "d").string()});
  REQUIRE(r.code == 0);
  int pngs = 0;
  for (const auto& e : fs::recursive_directory_iterator(root / "d"))
    if (e.path().extension() == ".png") ++pngs;
  CHECK(pngs == 8 * 2 * 20);
  // Refuses to overwrite without --overwrite.
  auto again = cli({"synth-data", "--seed", "7", "--out", (root / "d").string()});
  CHECK(again.code == 1);
  CHECK(again.err.find(' ') != std::string::npos);
}

TEST_CASE("domain errors exit 1 with one line") {
  auto root = testing::scratch("cli_domain");
  X2FaceModel<float> m(NetConfig{16, 4, 16, 8}, 0);
  save_checkpoint(root / "m.ckpt", m, {{"stage", 1}});
  write_png(root / "big.png", testing::random_tensor<float>({1, 3, 32, 32}, 1));
  auto r = cli({"reconstruct", "--checkpoint", (root / "m.ckpt").string(), "--sources",
                (root / "big.png").string(), "--driving", (root / "big.png").string(), "--out",
                (root / "o.png").string()});
  CHECK(r.code == 1);
  CHECK(r.err.find("32x32") != std::string::npos);
  CHECK(r.err.find("16x16") != std::string::npos);
  CHECK(std::count(r.err.begin(), r.err.end(), '\n') == 1);

  auto missing = cli({"reconstruct", "--checkpoint", (root / "nope.ckpt").string(), "--sources",
                      (root / "big.png").string(), "--driving", (root / "big.png").string(),
                      "--out", (root / "o.png").string()});
  CHECK(missing.code == 1);
}

TEST_CASE("reconstruct and eval-recon are deterministic") {
  auto root = testing::scratch("cli_eval");
  REQUIRE(cli({"synth-data", "--identities", "8", "--frames", "5", "--resolution", "16", "--out",
               (root / "d").string()})
              .code == 0);
  X2FaceModel<float> m(NetConfig{16, 4, 16, 8}, 0);
  save_checkpoint(root / "m.ckpt", m, {{"stage", 1}});
  const auto ck = (root / "m.ckpt").string();
  const auto frame = (root / "d").string();
  std::vector<std::string> args{"eval-recon", "--checkpoint", ck, "--stage2-checkpoint", ck,
                                "--data", frame, "--split", "train", "--pairs", "10"};
  auto a = args, b = args;
  a.insert(a.end(), {"--out", (root / "a.json").string()});
  b.insert(b.end(), {"--out", (root / "b.json").string()});
  REQUIRE(cli(a).code == 0);
  REQUIRE(cli(b).code == 0);
  CHECK(slurp(root / "a.json") == slurp(root / "b.json"));
  CHECK(slurp(root / "a.json").size() > 10);
}

TEST_CASE("check-ops passes") {
  auto root = testing::scratch("cli_ops");
  auto r = cli({"check-ops", "--out", (root / "ops.json").string()});
  CHECK(r.code == 0);
  auto j = nlohmann::json::parse(slurp(root / "ops.json"));
  CHECK(j["passed"] == true);
}

TEST_CASE("binary exit codes") {
  const std::string bin = X2FACE_BIN;
  CHECK(WEXITSTATUS(std::system((bin + " frobnicate >/dev/null 2>&1").c_str())) == 2);
  CHECK(WEXITSTATUS(std::system((bin + " reconstruct --checkpoint /nonexistent --sources a --driving b --out c >/dev/null 2>&1").c_str())) == 1);
  CHECK(WEXITSTATUS(std::system((bin + " --help >/dev/null 2>&1").c_str())) == 0);
}
