#include "x2face/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numbers>
#include <set>

#include "json.hpp"
#include "x2face/image_io.hpp"

namespace x2face {
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

std::uint64_t mix(std::uint64_t a, std::uint64_t b) {
  // splitmix64 finalizer over a combined key
  std::uint64_t z = a * 0x9E3779B97F4A7C15ULL + b + 0x632BE59BD9B4E019ULL;
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

std::array<double, 3> hsv(double h, double s, double v) {
  h = h - std::floor(h);
  const double x = h * 6.0;
  const int sector = static_cast<int>(x) % 6;
  const double f = x - std::floor(x);
  const double p = v * (1 - s), q = v * (1 - s * f), t = v * (1 - s * (1 - f));
  switch (sector) {
    case 0: return {v, t, p};
    case 1: return {q, v, p};
    case 2: return {p, v, t};
    case 3: return {p, q, v};
    case 4: return {t, p, v};
    default: return {v, p, q};
  }
}

constexpr std::array<double, 3> kEyeRgb{0.08, 0.08, 0.12};
constexpr std::array<double, 3> kMouthRgb{0.35, 0.04, 0.08};

struct Local {
  double x, y;
};

Local to_local(const SynthPose& pose, double u, double v) {
  const double dx = u - 2.0 * pose.tx, dy = v - 2.0 * pose.ty;
  const double th = pose.rot * std::numbers::pi / 180.0;
  const double c = std::cos(th), s = std::sin(th);
  return {(c * dx + s * dy) / pose.scale, (-s * dx + c * dy) / pose.scale};
}

bool in_face(const SynthIdentity& id, Local l) {
  const double ry = synth_geometry::kFaceHalfHeight, rx = ry * id.aspect;
  return (l.x / rx) * (l.x / rx) + (l.y / ry) * (l.y / ry) <= 1.0;
}

std::array<double, 3> shade(const SynthIdentity& id, const SynthPose& pose, double u, double v) {
  namespace g = synth_geometry;
  const Local l = to_local(pose, u, v);
  if (!in_face(id, l)) return background_rgb(id);
  const double rx = g::kFaceHalfHeight * id.aspect;
  for (double side : {-1.0, 1.0}) {
    const double ex = side * id.eye_spacing * rx;
    if ((l.x - ex) * (l.x - ex) + (l.y - g::kEyeY) * (l.y - g::kEyeY) <= g::kEyeRadius * g::kEyeRadius)
      return kEyeRgb;
  }
  const double mh = g::kMouthMinHalfHeight + g::kMouthGain * pose.mouth;
  const double mx = l.x / g::kMouthHalfWidth, my = (l.y - g::kMouthY) / mh;
  if (mx * mx + my * my <= 1.0) return kMouthRgb;
  // Smooth face-local shading: brighter at the center, slightly lit from one side.
  const double ry = g::kFaceHalfHeight;
  const double rho2 = (l.x / rx) * (l.x / rx) + (l.y / ry) * (l.y / ry);
  const double light = 0.74 + 0.22 * (1.0 - rho2) + 0.08 * (l.x / rx) - 0.05 * (l.y / ry);
  auto base = (l.y >= g::kHairTop && l.y <= g::kHairBottom) ? hsv(id.hair_hue, 0.8, 0.55) : skin_rgb(id);
  for (auto& c : base) c = std::clamp(c * light, 0.0, 1.0);
  return base;
}

template <typename F>
void supersample(int res, F&& f) {
  constexpr double kOffsets[2] = {-0.25, 0.25};
  for (int i = 0; i < res; ++i)
    for (int j = 0; j < res; ++j)
      for (double oy : kOffsets)
        for (double ox : kOffsets) {
          const double u = -1.0 + 2.0 * (j + 0.5 + ox) / res;
          const double v = -1.0 + 2.0 * (i + 0.5 + oy) / res;
          f(i, j, u, v);
        }
}

}  // namespace

SynthIdentity SynthIdentity::from_seed(std::uint64_t dataset_seed, int identity_index) {
  std::mt19937_64 rng(mix(dataset_seed, 0x1D000000ULL + static_cast<std::uint64_t>(identity_index)));
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  SynthIdentity id;
  id.background_hue = unit(rng);
  // Keep skin and background hues apart so the face always separates.
  id.skin_hue = id.background_hue + 0.2 + 0.6 * unit(rng);
  id.skin_hue -= std::floor(id.skin_hue);
  id.aspect = 0.75 + 0.20 * unit(rng);
  id.eye_spacing = 0.25 + 0.20 * unit(rng);
  id.hair_hue = unit(rng);
  return id;
}

void SynthPose::validate() const {
  auto in = [](double v, const double (&r)[2]) { return std::isfinite(v) && v >= r[0] && v <= r[1]; };
  require(in(tx, kTxRange) && in(ty, kTyRange) && in(rot, kRotRange) && in(scale, kScaleRange) &&
              in(mouth, kMouthRange),
          ErrorCode::kPrecondition, "synthetic pose out of range");
}

std::array<double, 3> background_rgb(const SynthIdentity& id) { return hsv(id.background_hue, 0.35, 0.55); }
std::array<double, 3> skin_rgb(const SynthIdentity& id) { return hsv(id.skin_hue, 0.5, 0.92); }

FaceFrame render_synth_frame(const SynthIdentity& identity, const SynthPose& pose, int resolution) {
  pose.validate();
  require(resolution >= 2, ErrorCode::kPrecondition, "resolution must be >= 2");
  std::vector<double> acc(static_cast<std::size_t>(3) * resolution * resolution, 0.0);
  supersample(resolution, [&](int i, int j, double u, double v) {
    const auto rgb = shade(identity, pose, u, v);
    for (int c = 0; c < 3; ++c) acc[(static_cast<std::size_t>(c) * resolution + i) * resolution + j] += rgb[c];
  });
  FaceFrame out(1, 3, resolution, resolution);
  for (std::size_t k = 0; k < acc.size(); ++k) out[k] = static_cast<float>(acc[k] / 4.0);
  return out;
}

Tensor<float> render_synth_face_mask(const SynthIdentity& identity, const SynthPose& pose,
                                     int resolution) {
  pose.validate();
  Tensor<float> out(1, 1, resolution, resolution);
  supersample(resolution, [&](int i, int j, double u, double v) {
    if (in_face(identity, to_local(pose, u, v))) out(0, 0, i, j) += 0.25f;
  });
  return out;
}

std::array<double, 2> face_to_image(const SynthPose& pose, double lx, double ly) {
  const double th = pose.rot * std::numbers::pi / 180.0;
  const double c = std::cos(th), s = std::sin(th);
  const double x = lx * pose.scale, y = ly * pose.scale;
  return {c * x - s * y + 2.0 * pose.tx, s * x + c * y + 2.0 * pose.ty};
}

std::vector<double> synth_audio_feature(std::uint64_t dataset_seed, const SynthPose& pose,
                                        std::mt19937_64& noise_rng) {
  std::mt19937_64 proj_rng(mix(dataset_seed, 0xA0D10ULL));
  std::normal_distribution<double> unit(0.0, 1.0);
  std::normal_distribution<double> noise(0.0, 0.05);
  const double basis[3] = {pose.mouth, pose.mouth * pose.mouth, pose.tx};
  std::vector<double> a(kAudioDim);
  for (int k = 0; k < kAudioDim; ++k) {
    double v = 0.0;
    for (double b : basis) v += unit(proj_rng) * b;
    a[k] = v + noise(noise_rng);
  }
  return a;
}

const char* split_name(Split s) {
  switch (s) {
    case Split::kTrain: return "train";
    case Split::kVal: return "val";
    case Split::kTest: return "test";
  }
  return "?";
}

std::vector<int> DatasetIndex::members(Split s) const {
  std::vector<int> out;
  for (int i = 0; i < static_cast<int>(identities.size()); ++i)
    if (identities[i].split == s) out.push_back(i);
  return out;
}

std::size_t DatasetIndex::frame_count() const {
  std::size_t n = 0;
  for (const auto& id : identities)
    for (const auto& v : id.videos) n += v.frames.size();
  return n;
}

std::array<int, 3> split_sizes(int n, const SplitFractions& f) {
  const int train = static_cast<int>(std::lround(n * f.train));
  const int val = std::min(n - train, static_cast<int>(std::lround(n * f.val)));
  return {train, val, n - train - val};
}

namespace {

std::string identity_name(int k) {
  char buf[16];
  std::snprintf(buf, sizeof buf, "id%04d", k);
  return buf;
}

std::string video_name(int k) {
  char buf[16];
  std::snprintf(buf, sizeof buf, "vid%03d", k);
  return buf;
}

std::string frame_name(int k) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "frame_%05d.png", k);
  return buf;
}

double clip(double v, const double (&r)[2]) { return std::clamp(v, r[0], r[1]); }

void write_text(const fs::path& p, const std::string& text) {
  std::ofstream f(p, std::ios::binary | std::ios::trunc);
  require(static_cast<bool>(f), ErrorCode::kIo, "cannot write " + p.string());
  f << text;
}

}  // namespace

DatasetIndex generate_synthetic_dataset(const SynthDatasetSpec& spec, const fs::path& out_dir) {
  require(spec.identities >= 1 && spec.videos_per_identity >= 1 && spec.frames_per_video >= 2,
          ErrorCode::kPrecondition, "dataset needs >= 1 identity, >= 1 video, >= 2 frames per video");
  if (fs::exists(out_dir) && !fs::is_empty(out_dir)) {
    require(spec.overwrite, ErrorCode::kIo,
            "output directory " + out_dir.string() + " is not empty (pass overwrite)");
    fs::remove_all(out_dir);
  }
  fs::create_directories(out_dir);

  for (int k = 0; k < spec.identities; ++k) {
    const SynthIdentity identity = SynthIdentity::from_seed(spec.seed, k);
    for (int v = 0; v < spec.videos_per_identity; ++v) {
      const fs::path dir = out_dir / identity_name(k) / video_name(v);
      fs::create_directories(dir);
      std::mt19937_64 rng(mix(mix(spec.seed, 0xF00DULL + k), static_cast<std::uint64_t>(v)));
      std::uniform_real_distribution<double> unit(0.0, 1.0);
      auto draw = [&](const double (&r)[2]) { return r[0] + (r[1] - r[0]) * unit(rng); };
      SynthPose pose{draw(SynthPose::kTxRange), draw(SynthPose::kTyRange), draw(SynthPose::kRotRange),
                     draw(SynthPose::kScaleRange), draw(SynthPose::kMouthRange)};
      json pose_list = json::array(), nuisance_list = json::array(), audio_list = json::array();
      for (int f = 0; f < spec.frames_per_video; ++f) {
        if (f > 0) {
          auto step = [&](double value, const double (&r)[2]) {
            std::normal_distribution<double> d(0.0, 0.1 * (r[1] - r[0]));
            return clip(value + d(rng), r);
          };
          pose.tx = step(pose.tx, SynthPose::kTxRange);
          pose.ty = step(pose.ty, SynthPose::kTyRange);
          pose.rot = step(pose.rot, SynthPose::kRotRange);
          pose.scale = step(pose.scale, SynthPose::kScaleRange);
          pose.mouth = step(pose.mouth, SynthPose::kMouthRange);
        }
        write_png(dir / frame_name(f), render_synth_frame(identity, pose, spec.resolution));
        pose_list.push_back({pose.tx, pose.ty, pose.rot});
        nuisance_list.push_back({pose.scale, pose.mouth});
        audio_list.push_back(synth_audio_feature(spec.seed, pose, rng));
      }
      json labels{{"pose", pose_list}, {"nuisance", nuisance_list}, {"audio_features", audio_list}};
      write_text(dir / "labels.json", labels.dump());
    }
  }

  // Seeded identity permutation for the split assignment.
  std::vector<int> order(spec.identities);
  for (int k = 0; k < spec.identities; ++k) order[k] = k;
  std::mt19937_64 split_rng(mix(spec.seed, 0x5B117ULL));
  std::shuffle(order.begin(), order.end(), split_rng);
  const auto sizes = split_sizes(spec.identities);
  json splits{{"train", json::array()}, {"val", json::array()}, {"test", json::array()}};
  for (int i = 0; i < spec.identities; ++i) {
    const char* key = i < sizes[0] ? "train" : (i < sizes[0] + sizes[1] ? "val" : "test");
    splits[key].push_back(identity_name(order[i]));
  }
  for (auto& [k, v] : splits.items()) std::sort(v.begin(), v.end());
  write_text(out_dir / "splits.json", splits.dump(2));
  return index_dataset(out_dir);
}

namespace {

VideoLabels parse_labels(const fs::path& p, std::size_t frames, const std::string& video) {
  std::ifstream f(p);
  require(static_cast<bool>(f), ErrorCode::kIo, "cannot read " + p.string());
  json j;
  try {
    j = json::parse(f);
  } catch (const json::exception& e) {
    fail(ErrorCode::kInvalidDataset, p.string() + ": " + e.what());
  }
  VideoLabels l;
  auto check = [&](const char* key, std::size_t n) {
    require(n == frames, ErrorCode::kInvalidDataset,
            "video " + video + ": labels '" + key + "' has " + std::to_string(n) + " entries for " +
                std::to_string(frames) + " frames");
  };
  if (j.contains("pose")) {
    l.pose = j["pose"].get<std::vector<std::array<double, 3>>>();
    check("pose", l.pose.size());
  }
  if (j.contains("nuisance")) {
    l.nuisance = j["nuisance"].get<std::vector<std::array<double, 2>>>();
    check("nuisance", l.nuisance.size());
  }
  if (j.contains("audio_features")) {
    l.audio = j["audio_features"].get<std::vector<std::vector<double>>>();
    check("audio_features", l.audio.size());
  }
  return l;
}

std::vector<fs::path> sorted_dirs(const fs::path& p) {
  std::vector<fs::path> out;
  for (const auto& e : fs::directory_iterator(p))
    if (e.is_directory()) out.push_back(e.path());
  std::sort(out.begin(), out.end());
  return out;
}

}  // namespace

DatasetIndex index_dataset(const fs::path& root) {
  require(fs::is_directory(root), ErrorCode::kInvalidDataset, root.string() + " is not a directory");
  DatasetIndex index;
  index.root = root;
  for (const auto& idir : sorted_dirs(root)) {
    IdentityEntry identity;
    identity.id = idir.filename().string();
    for (const auto& vdir : sorted_dirs(idir)) {
      VideoEntry video;
      video.id = vdir.filename().string();
      const std::string where = identity.id + "/" + video.id;
      for (const auto& e : fs::directory_iterator(vdir)) {
        const std::string name = e.path().filename().string();
        if (e.is_regular_file() && name.starts_with("frame_") && e.path().extension() == ".png")
          video.frames.push_back(e.path());
      }
      std::sort(video.frames.begin(), video.frames.end());
      require(!video.frames.empty(), ErrorCode::kInvalidDataset, "video " + where + " is empty");
      require(video.frames.size() >= 2, ErrorCode::kInvalidDataset,
              "video " + where + " has a single frame; at least 2 are required");
      if (fs::exists(vdir / "labels.json"))
        video.labels = parse_labels(vdir / "labels.json", video.frames.size(), where);
      identity.videos.push_back(std::move(video));
    }
    require(!identity.videos.empty(), ErrorCode::kInvalidDataset,
            "identity " + identity.id + " has no videos");
    index.identities.push_back(std::move(identity));
  }
  require(!index.identities.empty(), ErrorCode::kInvalidDataset, root.string() + " has no identities");

  const fs::path splits_path = root / "splits.json";
  if (fs::exists(splits_path)) {
    std::ifstream f(splits_path);
    const json j = json::parse(f);
    std::map<std::string, Split> assigned;
    for (auto [key, split] : {std::pair{"train", Split::kTrain}, std::pair{"val", Split::kVal},
                              std::pair{"test", Split::kTest}})
      if (j.contains(key))
        for (const auto& id : j[key]) assigned[id.get<std::string>()] = split;
    for (auto& identity : index.identities) {
      auto it = assigned.find(identity.id);
      require(it != assigned.end(), ErrorCode::kInvalidDataset,
              "identity " + identity.id + " missing from splits.json");
      identity.split = it->second;
    }
  } else {
    const auto sizes = split_sizes(static_cast<int>(index.identities.size()));
    for (int i = 0; i < static_cast<int>(index.identities.size()); ++i)
      index.identities[i].split =
          i < sizes[0] ? Split::kTrain : (i < sizes[0] + sizes[1] ? Split::kVal : Split::kTest);
  }
  return index;
}

PairSample sample_pair(const DatasetIndex& index, Split split, std::mt19937_64& rng) {
  const auto ids = index.members(split);
  require(!ids.empty(), ErrorCode::kInvalidDataset,
          std::string("split '") + split_name(split) + "' is empty");
  const int identity = ids[std::uniform_int_distribution<int>(0, static_cast<int>(ids.size()) - 1)(rng)];
  const auto& videos = index.identities[identity].videos;
  const int video = std::uniform_int_distribution<int>(0, static_cast<int>(videos.size()) - 1)(rng);
  const int n = static_cast<int>(videos[video].frames.size());
  const int a = std::uniform_int_distribution<int>(0, n - 1)(rng);
  int b = std::uniform_int_distribution<int>(0, n - 2)(rng);
  if (b >= a) ++b;
  return {{identity, video, a}, {identity, video, b}};
}

TripletSample sample_triplet(const DatasetIndex& index, Split split, std::mt19937_64& rng) {
  const auto ids = index.members(split);
  require(ids.size() >= 2, ErrorCode::kInvalidDataset,
          std::string("split '") + split_name(split) + "' needs at least 2 identities");
  const PairSample pair = sample_pair(index, split, rng);
  std::vector<int> others;
  for (int id : ids)
    if (id != pair.source.identity) others.push_back(id);
  const int other = others[std::uniform_int_distribution<int>(0, static_cast<int>(others.size()) - 1)(rng)];
  const auto& videos = index.identities[other].videos;
  const int video = std::uniform_int_distribution<int>(0, static_cast<int>(videos.size()) - 1)(rng);
  const int frame = std::uniform_int_distribution<int>(0, static_cast<int>(videos[video].frames.size()) - 1)(rng);
  return {pair.source, pair.driving, {other, video, frame}};
}

const FaceFrame& FrameCache::get(const FrameRef& ref) {
  std::lock_guard lock(mutex_);
  const auto key = std::make_tuple(ref.identity, ref.video, ref.frame);
  auto it = frames_.find(key);
  if (it == frames_.end()) it = frames_.emplace(key, read_png(index_->frame_path(ref))).first;
  return it->second;
}

Tensor<float> stack_frames(FrameCache& cache, const std::vector<FrameRef>& refs) {
  std::vector<const Tensor<float>*> parts;
  parts.reserve(refs.size());
  for (const auto& r : refs) parts.push_back(&cache.get(r));
  return concat_batch(parts);
}

}  // namespace x2face
