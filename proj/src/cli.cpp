#include "x2face/cli.hpp"

#include <algorithm>
#include <fstream>
#include <iostream>
#include <sstream>

#include "CLI11.hpp"
#include "x2face/checkpoint.hpp"
#include "x2face/control.hpp"
#include "x2face/dataset.hpp"
#include "x2face/editing.hpp"
#include "x2face/error.hpp"
#include "x2face/evaluation.hpp"
#include "x2face/image_io.hpp"
#include "x2face/losses.hpp"
#include "x2face/selfcheck.hpp"
#include "x2face/service.hpp"
#include "x2face/training.hpp"

namespace fs = std::filesystem;

namespace x2face {
namespace {

// Failures that are not library errors (thresholds, bad flag values).
struct CliFailure {
  std::string code;
  std::string message;
};

[[noreturn]] void cli_fail(std::string code, std::string message) {
  throw CliFailure{std::move(code), std::move(message)};
}

std::vector<FaceFrame> read_frames(const std::vector<std::string>& paths) {
  std::vector<FaceFrame> out;
  for (const auto& p : paths) out.push_back(read_png(p));
  return out;
}

std::vector<fs::path> png_files(const fs::path& dir) {
  require(fs::is_directory(dir), ErrorCode::kIo, "not a directory: " + dir.string());
  std::vector<fs::path> out;
  for (const auto& e : fs::directory_iterator(dir))
    if (e.is_regular_file() && e.path().extension() == ".png") out.push_back(e.path());
  std::sort(out.begin(), out.end());
  require(!out.empty(), ErrorCode::kIo, "no PNG frames in " + dir.string());
  return out;
}

void ensure_parent(const fs::path& p) {
  if (p.has_parent_path()) fs::create_directories(p.parent_path());
}

void write_text(const fs::path& p, const std::string& text) {
  ensure_parent(p);
  std::ofstream f(p, std::ios::binary | std::ios::trunc);
  require(static_cast<bool>(f), ErrorCode::kIo, "cannot write " + p.string());
  f << text;
  require(static_cast<bool>(f), ErrorCode::kIo, "write failed: " + p.string());
}

nlohmann::json read_json(const fs::path& p) {
  std::ifstream f(p);
  require(static_cast<bool>(f), ErrorCode::kIo, "cannot read " + p.string());
  auto j = nlohmann::json::parse(f, nullptr, false);
  require(!j.is_discarded(), ErrorCode::kPrecondition, "invalid JSON in " + p.string());
  return j;
}

std::vector<double> parse_list(const std::string& text, const char* what) {
  std::vector<double> v;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    try {
      std::size_t used = 0;
      v.push_back(std::stod(item, &used));
      if (used != item.size()) throw std::invalid_argument(item);
    } catch (const std::exception&) {
      cli_fail("bad_argument", std::string(what) + ": cannot parse '" + item + "' as a number");
    }
  }
  return v;
}

Vec read_audio(const fs::path& p) {
  nlohmann::json j = read_json(p);
  if (j.is_object() && j.contains("audio")) j = j["audio"];
  require(j.is_array(), ErrorCode::kPrecondition, p.string() + ": expected a JSON array of numbers");
  Vec v(j.size());
  for (std::size_t i = 0; i < j.size(); ++i) {
    require(j[i].is_number(), ErrorCode::kPrecondition, p.string() + ": non-numeric entry");
    v[i] = j[i].get<double>();
  }
  return v;
}

nlohmann::json vec_json(const Vec& v) { return std::vector<double>(v.data(), v.data() + v.size()); }

void dump_drive(const std::string& path, const DriveResult& r) {
  if (path.empty()) return;
  write_text(path, nlohmann::json{{"v_source", vec_json(r.v_source)},
                                  {"p_source", vec_json(r.p_source)},
                                  {"v_driving", vec_json(r.v_driving)}}
                       .dump(2) +
                       "\n");
}

std::vector<Split> parse_splits(const std::string& s) {
  if (s == "train") return {Split::kTrain};
  if (s == "val") return {Split::kVal};
  if (s == "test") return {Split::kTest};
  if (s == "heldout") return {Split::kVal, Split::kTest};
  cli_fail("bad_argument", "unknown split '" + s + "' (train, val, test, heldout)");
}

// ------------------------------------------------------------ subcommands

struct SynthArgs {
  int identities = 8, videos = 2, frames = 20, resolution = 64;
  std::uint64_t seed = 0;
  std::string out;
  bool overwrite = false;
};

void cmd_synth(const SynthArgs& a, std::ostream& out) {
  SynthDatasetSpec spec;
  spec.identities = a.identities;
  spec.videos_per_identity = a.videos;
  spec.frames_per_video = a.frames;
  spec.resolution = a.resolution;
  spec.seed = a.seed;
  spec.overwrite = a.overwrite;
  const DatasetIndex idx = generate_synthetic_dataset(spec, a.out);
  out << nlohmann::json{{"identities", idx.identities.size()}, {"frames", idx.frame_count()},
                        {"out", a.out}}
             .dump()
      << "\n";
}

struct TrainArgs {
  int stage = 1;
  std::string config, data, init, out, comparator, metrics;
  int steps = 0, batch = 0, eval_every = 0, checkpoint_every = 0, flow_prior = 0, val_pairs = 0;
  double lr = 0;
  std::uint64_t seed = 0;
  bool auto_transition = false;
  NetConfig net = NetConfig::desk_scale();
};

void cmd_train(const TrainArgs& a, CLI::App& sub, std::ostream& out) {
  nlohmann::json file_cfg = nlohmann::json::object();
  if (!a.config.empty()) file_cfg = read_json(a.config);
  require(file_cfg.is_object(), ErrorCode::kPrecondition, "train config must be a JSON object");
  int stage = a.stage;
  if (sub.count("--stage") == 0 && file_cfg.contains("stage")) stage = file_cfg["stage"].get<int>();
  if (stage != 1 && stage != 2) cli_fail("bad_argument", "--stage must be 1 or 2");
  // defaults, then config file, then explicit flags
  TrainConfig cfg = train_config_from_json(file_cfg, TrainConfig::for_stage(stage));
  cfg.stage = stage;
  auto given = [&](const char* flag) { return sub.count(flag) > 0; };
  if (given("--steps")) cfg.max_steps = a.steps;
  if (given("--lr")) cfg.lr = a.lr;
  if (given("--batch-size")) cfg.batch_size = a.batch;
  if (given("--seed")) cfg.seed = a.seed;
  if (given("--eval-every")) cfg.eval_every = a.eval_every;
  if (given("--checkpoint-every")) cfg.checkpoint_every = a.checkpoint_every;
  if (given("--flow-prior-steps")) cfg.flow_prior_steps = a.flow_prior;
  if (given("--val-pairs")) cfg.val_pairs = a.val_pairs;
  if (given("--auto-transition")) cfg.auto_transition = a.auto_transition;
  cfg.validate();

  const DatasetIndex index = index_dataset(a.data);
  TrainOptions opts;
  opts.checkpoint_out = a.out;
  if (!a.metrics.empty()) {
    ensure_parent(a.metrics);
    opts.metrics_out = a.metrics;
  }
  ensure_parent(a.out);

  X2FaceModel<float> model;
  if (!a.init.empty()) {
    LoadedCheckpoint ck = load_checkpoint(a.init);
    model = std::move(ck.model);
    if (stage == 2 && ck.training_meta.contains("loss_weights"))
      opts.loss_weights = LossWeightState::from_json(ck.training_meta["loss_weights"]);
  } else {
    if (stage == 2) cli_fail("bad_argument", "stage 2 needs --init-checkpoint");
    NetConfig net = a.net;
    const auto& first = index.identities.at(index.members(Split::kTrain).at(0)).videos.at(0);
    net.resolution = read_png(first.frames.at(0)).height();
    model = X2FaceModel<float>(net, cfg.seed);
  }
  IdentityComparator<float> cmp;
  if (!a.comparator.empty()) {
    cmp = load_comparator(a.comparator);
    opts.comparator = &cmp;
  } else if (stage == 2 || cfg.auto_transition) {
    cli_fail("bad_argument", "stage 2 needs --comparator");
  }
  const TrainResult r = train(model, index, cfg, opts);
  out << nlohmann::json{{"steps", r.steps},
                        {"final_stage", r.final_stage},
                        {"final_lr", r.final_lr},
                        {"initial_val_l1", r.initial_val_l1},
                        {"final_val_l1", r.final_val_l1},
                        {"checkpoint", a.out}}
             .dump()
      << "\n";
}

struct ComparatorArgs {
  std::string data, out;
  int steps = 300, batch = 16;
  double lr = 0.01, min_accuracy = 0.9;
  std::uint64_t seed = 0;
};

void cmd_train_comparator(const ComparatorArgs& a, std::ostream& out) {
  const DatasetIndex index = index_dataset(a.data);
  ComparatorTrainConfig cfg;
  cfg.steps = a.steps;
  cfg.batch_size = a.batch;
  cfg.lr = a.lr;
  auto r = train_identity_comparator(index, cfg, a.seed);
  ensure_parent(a.out);
  save_comparator(a.out, r.comparator,
                  {{"steps", a.steps},
                   {"seed", a.seed},
                   {"classes", r.classes},
                   {"train_accuracy", r.train_accuracy},
                   {"heldout_accuracy", r.heldout_accuracy}});
  out << nlohmann::json{{"train_accuracy", r.train_accuracy},
                        {"heldout_accuracy", r.heldout_accuracy},
                        {"out", a.out}}
             .dump()
      << "\n";
  if (r.heldout_accuracy < a.min_accuracy)
    cli_fail("accuracy_below_threshold",
             "held-out accuracy " + std::to_string(r.heldout_accuracy) + " < " +
                 std::to_string(a.min_accuracy) + " (comparator saved anyway)");
}

struct InferArgs {
  std::string checkpoint, maps, driving, driving_dir, out, out_dir, pose, audio, source_audio,
      dump_vector, embedded, overlay, data, out_maps, out_embedded;
  std::vector<std::string> sources;
  std::uint64_t seed = 0;
  int epochs = 400;
};

void cmd_reconstruct(const InferArgs& a) {
  auto model = load_checkpoint(a.checkpoint).model;
  const auto sources = read_frames(a.sources);
  const FaceFrame drv = read_png(a.driving);
  ensure_parent(a.out);
  write_png(a.out, x2face_forward(model, sources, drv));
}

void cmd_drive(const InferArgs& a, std::ostream& out) {
  auto model = load_checkpoint(a.checkpoint).model;
  const auto sources = read_frames(a.sources);
  const Tensor<float> embedded = embed_multi(model.embedding, sources);
  fs::create_directories(a.out_dir);
  const auto frames = png_files(a.driving_dir);
  for (const auto& f : frames) {
    const FaceFrame d = read_png(f);
    check_frame(d, model.config, "driving frame");
    write_png(fs::path(a.out_dir) / f.filename(),
              drive_decode(model.driving, drive_encode(model.driving, d), embedded).image);
  }
  out << nlohmann::json{{"frames", frames.size()}, {"out_dir", a.out_dir}}.dump() << "\n";
}

void cmd_fit_pose_maps(const InferArgs& a, std::ostream& out) {
  auto model = load_checkpoint(a.checkpoint).model;
  const DatasetIndex index = index_dataset(a.data);
  const LabeledVectors lv = collect_labeled_vectors(model, index, {Split::kTrain});
  LinearFitConfig fc;
  fc.seed = a.seed;
  fc.epochs = a.epochs;
  FitReport rv, rp;
  ControlMaps maps;
  maps.v_to_p = fit_v_to_p(lv.vectors, lv.poses, fc, &rv);
  maps.p_to_v = fit_p_to_v(lv.poses, lv.vectors, fc, &rp);
  ensure_parent(a.out_maps);
  save_control_maps(a.out_maps, maps);
  out << nlohmann::json{{"frames", lv.refs.size()},
                        {"v_to_p_train_l1", rv.train_l1},
                        {"p_to_v_train_l1", rp.train_l1},
                        {"out", a.out_maps}}
             .dump()
      << "\n";
}

void cmd_fit_audio_map(const InferArgs& a, std::ostream& out, std::ostream& err) {
  auto model = load_checkpoint(a.checkpoint).model;
  const DatasetIndex index = index_dataset(a.data);
  ControlMaps maps = load_control_maps(a.maps);
  const LabeledVectors lv = collect_labeled_vectors(model, index, {Split::kTrain});
  require(lv.audio.size() > 0, ErrorCode::kInvalidDataset, "dataset has no audio features");
  FitReport rep;
  maps.a_to_v = fit_a_to_v(lv.audio, lv.vectors, &rep);
  for (const auto& w : rep.warnings) err << "warning " << w << "\n";
  const std::string dest = a.out_maps.empty() ? a.maps : a.out_maps;
  ensure_parent(dest);
  save_control_maps(dest, maps);
  out << nlohmann::json{{"frames", lv.refs.size()},
                        {"train_l1", rep.train_l1},
                        {"dropped_features", std::count(maps.a_to_v->kept.begin(),
                                                        maps.a_to_v->kept.end(), false)},
                        {"out", dest}}
             .dump()
      << "\n";
}

void cmd_drive_pose(const InferArgs& a) {
  auto model = load_checkpoint(a.checkpoint).model;
  const ControlMaps maps = load_control_maps(a.maps);
  const auto p = parse_list(a.pose, "--pose");
  if (p.size() != 3) cli_fail("bad_argument", "--pose needs three comma-separated values");
  const DriveResult r =
      drive_with_pose(model, maps, read_frames(a.sources), Eigen::Map<const Vec>(p.data(), 3));
  ensure_parent(a.out);
  write_png(a.out, r.frame);
  dump_drive(a.dump_vector, r);
}

void cmd_drive_audio(const InferArgs& a) {
  auto model = load_checkpoint(a.checkpoint).model;
  const ControlMaps maps = load_control_maps(a.maps);
  const DriveResult r = drive_with_audio(model, maps, read_frames(a.sources), read_audio(a.audio),
                                         read_audio(a.source_audio));
  ensure_parent(a.out);
  write_png(a.out, r.frame);
  dump_drive(a.dump_vector, r);
}

void cmd_embed(const InferArgs& a) {
  auto model = load_checkpoint(a.checkpoint).model;
  ensure_parent(a.out);
  write_png(a.out, embed_multi(model.embedding, read_frames(a.sources)));
}

void cmd_edit(const InferArgs& a, std::ostream& out) {
  auto model = load_checkpoint(a.checkpoint).model;
  const FaceFrame embedded = read_png(a.embedded);
  check_frame(embedded, model.config, "embedded face");
  const Tensor<float> modified = apply_overlay(embedded, read_png(a.overlay, 4));
  const auto files = png_files(a.driving_dir);
  std::vector<FaceFrame> driving;
  for (const auto& f : files) driving.push_back(read_png(f));
  const auto frames = render_edited_sequence(model.driving, modified, driving);
  fs::create_directories(a.out_dir);
  for (std::size_t i = 0; i < frames.size(); ++i)
    write_png(fs::path(a.out_dir) / files[i].filename(), frames[i]);
  if (!a.out_embedded.empty()) {
    ensure_parent(a.out_embedded);
    write_png(a.out_embedded, modified);
  }
  out << nlohmann::json{{"frames", frames.size()}, {"out_dir", a.out_dir}}.dump() << "\n";
}

struct EvalArgs {
  std::string checkpoint, stage2, data, comparator, out, maps, split;
  std::string n_sources = "1,3";
  int pairs = 200;
  std::uint64_t seed = 0;
};

void cmd_eval_recon(const EvalArgs& a, std::ostream& out) {
  auto m1 = load_checkpoint(a.checkpoint).model;
  std::optional<X2FaceModel<float>> m2;
  if (!a.stage2.empty()) m2 = load_checkpoint(a.stage2).model;
  std::optional<IdentityComparator<float>> cmp;
  if (!a.comparator.empty()) cmp = load_comparator(a.comparator);
  const DatasetIndex index = index_dataset(a.data);
  ReconEvalConfig cfg;
  const auto splits = parse_splits(a.split);
  if (splits.size() != 1) cli_fail("bad_argument", "eval-recon needs a single split");
  cfg.split = splits.front();
  cfg.n_pairs = a.pairs;
  cfg.seed = a.seed;
  cfg.n_sources.clear();
  for (double k : parse_list(a.n_sources, "--n-sources")) cfg.n_sources.push_back(static_cast<int>(k));
  const ReconReport rep =
      eval_reconstruction(m1, m2 ? &*m2 : nullptr, index, cfg, cmp ? &*cmp : nullptr);
  if (!a.out.empty()) write_text(a.out, rep.to_json().dump(2) + "\n");
  out << rep.table();
}

void cmd_eval_pose(const EvalArgs& a, std::ostream& out) {
  auto model = load_checkpoint(a.checkpoint).model;
  const ControlMaps maps = load_control_maps(a.maps);
  require(maps.v_to_p.has_value(), ErrorCode::kNotFitted, "maps bundle has no v_to_p map");
  const DatasetIndex index = index_dataset(a.data);
  const LabeledVectors lv = collect_labeled_vectors(model, index, parse_splits(a.split));
  const PoseReport rep = eval_pose_probe(*maps.v_to_p, lv);
  if (!a.out.empty()) write_text(a.out, rep.to_json().dump(2) + "\n");
  out << rep.table();
}

struct ServeArgs {
  std::string checkpoint, maps, host = "127.0.0.1";
  int port = 8080;
  int ttl = 3600;
  double max_mib = 8.0;
};

void cmd_serve(const ServeArgs& a, std::ostream& out) {
  std::optional<ControlMaps> maps;
  if (!a.maps.empty()) maps = load_control_maps(a.maps);
  ServiceConfig cfg;
  cfg.ttl = std::chrono::seconds(a.ttl);
  cfg.max_request_bytes = static_cast<std::size_t>(a.max_mib * 1024 * 1024);
  InferenceService svc(load_checkpoint(a.checkpoint), std::move(maps), cfg);
  out << "listening on " << a.host << ":" << a.port << std::endl;
  run_server(svc, a.host, a.port);
}

void cmd_check_ops(std::uint64_t seed, const std::string& out_path, std::ostream& out) {
  const OpsCheckReport rep = run_ops_checks(seed);
  for (const auto& c : rep.checks)
    out << (c.passed ? "ok   " : "FAIL ") << c.name << " error=" << c.error
        << " tol=" << c.tolerance << "\n";
  out << "seconds=" << rep.seconds << "\n";
  if (!out_path.empty()) write_text(out_path, rep.to_json().dump(2) + "\n");
  if (!rep.passed()) cli_fail("check_failed", "one or more primitive checks failed");
}

}  // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Face reenactment toolkit: synthetic data, training, control and editing.", "x2face"};
  app.require_subcommand(1);
  app.option_defaults()->always_capture_default();
  app.failure_message(CLI::FailureMessage::help);

  // synth-data
  SynthArgs sa;
  auto* synth = app.add_subcommand("synth-data", "Generate a procedural face-track dataset");
  synth->add_option("--identities", sa.identities, "Number of identities");
  synth->add_option("--videos", sa.videos, "Videos per identity");
  synth->add_option("--frames", sa.frames, "Frames per video");
  synth->add_option("--resolution", sa.resolution, "Frame side in pixels");
  synth->add_option("--seed", sa.seed, "Dataset seed");
  synth->add_option("--out", sa.out, "Output directory")->required();
  synth->add_flag("--overwrite", sa.overwrite, "Allow a non-empty output directory");

  // train
  TrainArgs ta;
  const TrainConfig d1 = TrainConfig::for_stage(1);
  ta.steps = d1.max_steps;
  ta.lr = d1.lr;
  ta.batch = d1.batch_size;
  ta.eval_every = d1.eval_every;
  ta.checkpoint_every = d1.checkpoint_every;
  ta.flow_prior = d1.flow_prior_steps;
  ta.val_pairs = d1.val_pairs;
  auto* train_cmd = app.add_subcommand(
      "train", "Train stage 1 (photometric) or stage 2 (identity losses); flags override --config");
  train_cmd->add_option("--stage", ta.stage, "Training stage (1 or 2)");
  train_cmd->add_option("--config", ta.config, "JSON file with training config fields");
  train_cmd->add_option("--data", ta.data, "Dataset root")->required();
  train_cmd->add_option("--init-checkpoint", ta.init, "Start from this checkpoint");
  train_cmd->add_option("--out", ta.out, "Checkpoint output path")->required();
  train_cmd->add_option("--comparator", ta.comparator, "Identity comparator (stage 2)");
  train_cmd->add_option("--metrics", ta.metrics, "NDJSON metrics log path");
  train_cmd->add_option("--steps", ta.steps, "Max steps (stage 2 default: 1000)");
  train_cmd->add_option("--lr", ta.lr, "Learning rate (stage 2 default: 1e-4)");
  train_cmd->add_option("--batch-size", ta.batch, "Batch size");
  train_cmd->add_option("--seed", ta.seed, "Seed for init and sampling");
  train_cmd->add_option("--eval-every", ta.eval_every, "Validation interval in steps");
  train_cmd->add_option("--checkpoint-every", ta.checkpoint_every, "Checkpoint interval");
  train_cmd->add_option("--flow-prior-steps", ta.flow_prior,
                        "Identity-flow warm-start steps (stage 2 default: 0)");
  train_cmd->add_option("--val-pairs", ta.val_pairs, "Fixed validation pairs");
  train_cmd->add_flag("--auto-transition", ta.auto_transition,
                      "Switch to stage 2 when validation plateaus");
  train_cmd->add_option("--base-channels", ta.net.base_channels, "New model: first-level width");
  train_cmd->add_option("--max-channels", ta.net.max_channels, "New model: width cap");
  train_cmd->add_option("--vector-dim", ta.net.driving_vector_dim, "New model: driving vector size");

  // train-comparator
  ComparatorArgs ca;
  auto* tcmp = app.add_subcommand("train-comparator", "Train the identity comparator network");
  tcmp->add_option("--data", ca.data, "Dataset root")->required();
  tcmp->add_option("--out", ca.out, "Comparator output path")->required();
  tcmp->add_option("--steps", ca.steps, "SGD steps");
  tcmp->add_option("--batch-size", ca.batch, "Batch size");
  tcmp->add_option("--lr", ca.lr, "Learning rate");
  tcmp->add_option("--seed", ca.seed, "Seed");
  tcmp->add_option("--min-accuracy", ca.min_accuracy, "Fail below this held-out accuracy");

  InferArgs ia;
  auto add_ckpt = [&](CLI::App* s) {
    s->add_option("--checkpoint", ia.checkpoint, "Model checkpoint")->required();
  };
  auto add_sources = [&](CLI::App* s) {
    s->add_option("--sources", ia.sources, "Source frame PNG (repeatable)")->required()->expected(1, -1);
  };

  auto* recon = app.add_subcommand("reconstruct", "Generate one frame from sources and a driver");
  add_ckpt(recon);
  add_sources(recon);
  recon->add_option("--driving", ia.driving, "Driving frame PNG")->required();
  recon->add_option("--out", ia.out, "Output PNG")->required();

  auto* drive = app.add_subcommand("drive", "Drive sources with every frame of a directory");
  add_ckpt(drive);
  add_sources(drive);
  drive->add_option("--driving-video-dir", ia.driving_dir, "Directory of driving PNGs")->required();
  drive->add_option("--out-dir", ia.out_dir, "Output directory")->required();

  auto* fpm = app.add_subcommand("fit-pose-maps", "Fit vector/pose maps on the training split");
  add_ckpt(fpm);
  fpm->add_option("--data", ia.data, "Dataset root")->required();
  fpm->add_option("--out-maps", ia.out_maps, "Maps JSON output")->required();
  fpm->add_option("--epochs", ia.epochs, "SGD epochs");
  fpm->add_option("--seed", ia.seed, "Seed");

  auto* dpose = app.add_subcommand("drive-pose", "Generate a frame at a target pose");
  add_ckpt(dpose);
  dpose->add_option("--maps", ia.maps, "Maps JSON")->required();
  add_sources(dpose);
  dpose->add_option("--pose", ia.pose, "Target pose tx,ty,rot")->required();
  dpose->add_option("--out", ia.out, "Output PNG")->required();
  dpose->add_option("--dump-vector", ia.dump_vector, "Write vectors as JSON");

  auto* fam = app.add_subcommand("fit-audio-map", "Fit the audio map and add it to a maps bundle");
  add_ckpt(fam);
  fam->add_option("--data", ia.data, "Dataset root")->required();
  fam->add_option("--maps", ia.maps, "Existing maps JSON")->required();
  fam->add_option("--out-maps", ia.out_maps, "Output maps JSON (default: overwrite --maps)");

  auto* daud = app.add_subcommand("drive-audio", "Generate a frame driven by an audio feature");
  add_ckpt(daud);
  daud->add_option("--maps", ia.maps, "Maps JSON with audio map")->required();
  add_sources(daud);
  daud->add_option("--audio", ia.audio, "Driving audio feature (JSON array)")->required();
  daud->add_option("--source-audio", ia.source_audio, "Source audio feature (JSON array)")
      ->required();
  daud->add_option("--out", ia.out, "Output PNG")->required();
  daud->add_option("--dump-vector", ia.dump_vector, "Write vectors as JSON");

  auto* emb = app.add_subcommand("embed", "Write the embedded face of the sources");
  add_ckpt(emb);
  add_sources(emb);
  emb->add_option("--out", ia.out, "Output PNG")->required();

  auto* ed = app.add_subcommand("edit", "Paint an overlay onto an embedded face and re-drive it");
  add_ckpt(ed);
  ed->add_option("--embedded", ia.embedded, "Embedded face PNG")->required();
  ed->add_option("--overlay", ia.overlay, "RGBA overlay PNG")->required();
  ed->add_option("--driving-video-dir", ia.driving_dir, "Directory of driving PNGs")->required();
  ed->add_option("--out-dir", ia.out_dir, "Output directory")->required();
  ed->add_option("--out-embedded", ia.out_embedded, "Also write the edited embedded face");

  EvalArgs ea;
  auto* er = app.add_subcommand("eval-recon", "Reconstruction L1 over paired test tuples");
  er->add_option("--checkpoint", ea.checkpoint, "Stage-1 checkpoint")->required();
  er->add_option("--stage2-checkpoint", ea.stage2, "Stage-2 checkpoint");
  er->add_option("--comparator", ea.comparator, "Comparator for the cross-identity metric");
  er->add_option("--data", ea.data, "Dataset root")->required();
  ea.split = "test";
  er->add_option("--split", ea.split, "train, val or test");
  er->add_option("--pairs", ea.pairs, "Number of tuples");
  er->add_option("--n-sources", ea.n_sources, "Comma-separated source counts");
  er->add_option("--seed", ea.seed, "Tuple sampling seed");
  er->add_option("--out", ea.out, "JSON report path");

  EvalArgs pa;
  auto* ep = app.add_subcommand("eval-pose", "Pose-probe error of the vector-to-pose map");
  ep->add_option("--checkpoint", pa.checkpoint, "Model checkpoint")->required();
  ep->add_option("--maps", pa.maps, "Maps JSON")->required();
  ep->add_option("--data", pa.data, "Dataset root")->required();
  pa.split = "heldout";
  ep->add_option("--split", pa.split, "train, val, test or heldout (val+test)");
  ep->add_option("--out", pa.out, "JSON report path");

  ServeArgs sv;
  auto* serve = app.add_subcommand("serve", "Run the HTTP inference service");
  serve->add_option("--checkpoint", sv.checkpoint, "Model checkpoint")->required();
  serve->add_option("--maps", sv.maps, "Maps JSON (enables pose mode)");
  serve->add_option("--port", sv.port, "Port");
  serve->add_option("--host", sv.host, "Bind address");
  serve->add_option("--ttl", sv.ttl, "Embedded-face lifetime in seconds");
  serve->add_option("--max-request-mib", sv.max_mib, "Request size limit");

  std::uint64_t check_seed = 0;
  std::string check_out;
  auto* chk = app.add_subcommand("check-ops", "Verify sampler values and primitive gradients");
  chk->add_option("--seed", check_seed, "Seed for random test tensors");
  chk->add_option("--out", check_out, "JSON report path");

  std::vector<std::string> rev(args.rbegin(), args.rend());
  try {
    app.parse(rev);
  } catch (const CLI::CallForHelp& e) {
    out << app.help();
    return 0;
  } catch (const CLI::CallForAllHelp& e) {
    out << app.help("", CLI::AppFormatMode::All);
    return 0;
  } catch (const CLI::ParseError& e) {
    app.exit(e, out, err);
    return 2;
  }

  try {
    if (*synth) cmd_synth(sa, out);
    else if (*train_cmd) cmd_train(ta, *train_cmd, out);
    else if (*tcmp) cmd_train_comparator(ca, out);
    else if (*recon) cmd_reconstruct(ia);
    else if (*drive) cmd_drive(ia, out);
    else if (*fpm) cmd_fit_pose_maps(ia, out);
    else if (*dpose) cmd_drive_pose(ia);
    else if (*fam) cmd_fit_audio_map(ia, out, err);
    else if (*daud) cmd_drive_audio(ia);
    else if (*emb) cmd_embed(ia);
    else if (*ed) cmd_edit(ia, out);
    else if (*er) cmd_eval_recon(ea, out);
    else if (*ep) cmd_eval_pose(pa, out);
    else if (*serve) cmd_serve(sv, out);
    else if (*chk) cmd_check_ops(check_seed, check_out, out);
  } catch (const Error& e) {
    err << error_code_name(e.code()) << " " << e.what() << "\n";
    return 1;
  } catch (const CliFailure& e) {
    err << e.code << " " << e.message << "\n";
    return 1;
  } catch (const fs::filesystem_error& e) {
    err << "io " << e.what() << "\n";
    return 1;
  } catch (const nlohmann::json::exception& e) {
    err << "precondition " << e.what() << "\n";
    return 1;
  }
  return 0;
}

}  // namespace x2face
