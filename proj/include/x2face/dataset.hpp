#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <map>
#include <mutex>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "x2face/tensor.hpp"

namespace x2face {

using FaceFrame = Tensor<float>;  // (1, 3, res, res), values in [0, 1]

// ------------------------------------------------------------ synthetic faces

struct SynthIdentity {
  double background_hue = 0.0;  // [0, 1)
  double skin_hue = 0.0;        // [0, 1)
  double aspect = 0.85;         // face width / height, [0.75, 0.95]
  double eye_spacing = 0.35;    // eye offset as a fraction of face half-width, [0.25, 0.45]
  double hair_hue = 0.0;        // [0, 1)

  static SynthIdentity from_seed(std::uint64_t dataset_seed, int identity_index);
};

struct SynthPose {
  double tx = 0.0;     // [-0.25, 0.25], fraction of width
  double ty = 0.0;     // [-0.25, 0.25], fraction of height
  double rot = 0.0;    // [-30, 30] degrees
  double scale = 1.0;  // [0.8, 1.2]
  double mouth = 0.5;  // [0, 1]

  static constexpr double kTxRange[2] = {-0.25, 0.25};
  static constexpr double kTyRange[2] = {-0.25, 0.25};
  static constexpr double kRotRange[2] = {-30.0, 30.0};
  static constexpr double kScaleRange[2] = {0.8, 1.2};
  static constexpr double kMouthRange[2] = {0.0, 1.0};

  void validate() const;
};

// Face-local geometry shared by the renderer and test oracles (normalized
// image units, y pointing down, before scale/rotation/translation).
namespace synth_geometry {
inline constexpr double kFaceHalfHeight = 0.55;
inline constexpr double kEyeY = -0.10;
inline constexpr double kEyeRadius = 0.075;
inline constexpr double kMouthY = 0.28;
inline constexpr double kMouthHalfWidth = 0.18;
inline constexpr double kMouthMinHalfHeight = 0.02;
inline constexpr double kMouthGain = 0.12;
inline constexpr double kHairTop = -0.62;
inline constexpr double kHairBottom = -0.32;
inline constexpr double kForeheadY = -0.22;
}  // namespace synth_geometry

std::array<double, 3> background_rgb(const SynthIdentity& id);
std::array<double, 3> skin_rgb(const SynthIdentity& id);

// Analytic rendering with 2x2 supersampling.
FaceFrame render_synth_frame(const SynthIdentity& identity, const SynthPose& pose, int resolution);

// Coverage in [0, 1] of the face ellipse (same supersampling), shape (1, 1, res, res).
Tensor<float> render_synth_face_mask(const SynthIdentity& identity, const SynthPose& pose,
                                     int resolution);

// Maps a face-local point to normalized image coordinates under `pose`.
std::array<double, 2> face_to_image(const SynthPose& pose, double lx, double ly);

// Fixed random projection used for the synthetic audio features.
inline constexpr int kAudioDim = 256;
std::vector<double> synth_audio_feature(std::uint64_t dataset_seed, const SynthPose& pose,
                                        std::mt19937_64& noise_rng);

// ------------------------------------------------------------ index

enum class Split { kTrain, kVal, kTest };
const char* split_name(Split s);

struct VideoLabels {
  std::vector<std::array<double, 3>> pose;      // (tx, ty, rot)
  std::vector<std::array<double, 2>> nuisance;  // (scale, mouth)
  std::vector<std::vector<double>> audio;       // kAudioDim each; may be empty
};

struct VideoEntry {
  std::string id;
  std::vector<std::filesystem::path> frames;
  std::optional<VideoLabels> labels;
};

struct IdentityEntry {
  std::string id;
  Split split = Split::kTrain;
  std::vector<VideoEntry> videos;
};

struct FrameRef {
  int identity = 0;
  int video = 0;
  int frame = 0;
  friend bool operator==(const FrameRef&, const FrameRef&) = default;
};

struct SplitFractions {
  double train = 0.75;
  double val = 0.15;
  double test = 0.10;
};

struct DatasetIndex {
  std::filesystem::path root;
  std::vector<IdentityEntry> identities;

  std::vector<int> members(Split s) const;
  const VideoEntry& video(const FrameRef& r) const { return identities[r.identity].videos[r.video]; }
  const std::filesystem::path& frame_path(const FrameRef& r) const { return video(r).frames[r.frame]; }
  std::size_t frame_count() const;
};

// Split sizes for n identities: train = round(n * f.train), val = round(n * f.val),
// test gets the rest.
std::array<int, 3> split_sizes(int n_identities, const SplitFractions& f = {});

struct SynthDatasetSpec {
  int identities = 8;
  int videos_per_identity = 2;
  int frames_per_video = 20;
  int resolution = 64;
  std::uint64_t seed = 0;
  bool overwrite = false;
};

DatasetIndex generate_synthetic_dataset(const SynthDatasetSpec& spec, const std::filesystem::path& out_dir);

// Reads root/<identity>/<video>/frame_*.png and optional labels.json. Split
// assignment comes from root/splits.json when present, otherwise identities
// are assigned in sorted order using the default fractions.
DatasetIndex index_dataset(const std::filesystem::path& root);

// ------------------------------------------------------------ sampling

struct PairSample {
  FrameRef source;
  FrameRef driving;
};

struct TripletSample {
  FrameRef source;       // s_A
  FrameRef driving_same; // d_A, same video as s_A
  FrameRef driving_other;// d_R, another identity
};

PairSample sample_pair(const DatasetIndex& index, Split split, std::mt19937_64& rng);
TripletSample sample_triplet(const DatasetIndex& index, Split split, std::mt19937_64& rng);

// Thread-safe decoded-frame cache.
class FrameCache {
 public:
  explicit FrameCache(const DatasetIndex& index) : index_(&index) {}
  const FaceFrame& get(const FrameRef& ref);

 private:
  const DatasetIndex* index_;
  std::mutex mutex_;
  std::map<std::tuple<int, int, int>, FaceFrame> frames_;
};

// Stacks frames into one (n, 3, r, r) batch.
Tensor<float> stack_frames(FrameCache& cache, const std::vector<FrameRef>& refs);

}  // namespace x2face
