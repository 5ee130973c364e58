#pragma once

#include <array>
#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "x2face/control.hpp"
#include "x2face/dataset.hpp"
#include "x2face/losses.hpp"
#include "x2face/networks.hpp"

namespace x2face {

// ------------------------------------------------------------ reconstruction

// Full-scale reference figures (L1 on the test set), kept for the report
// footer; desk-scale runs are judged on trends only.
struct ReconReference {
  int stage;
  int n_source;
  double l1;
  double improvement_pct;
};
inline constexpr std::array<ReconReference, 4> kReconReference{{
    {1, 1, 0.0632, 0.0},
    {2, 1, 0.0630, 0.32},
    {1, 3, 0.0524, 17.14},
    {2, 3, 0.0521, 17.62},
}};

// One evaluation tuple: up to three sources and a driving frame from one
// video (all indices distinct), plus a frame of another identity.
struct ReconTuple {
  std::vector<FrameRef> sources;
  FrameRef driving;
  FrameRef other;
};

std::vector<ReconTuple> sample_recon_tuples(const DatasetIndex& index, Split split, int n_tuples,
                                            int max_sources, std::uint64_t seed);

// Maps per-slot source batches and a driving batch to generated frames.
using Generator = std::function<Tensor<float>(const std::vector<Tensor<float>>& sources,
                                              const Tensor<float>& driving)>;

// Mean photometric L1 of the reconstruction from the first n_source sources.
double mean_reconstruction_l1(const Generator& gen, FrameCache& cache,
                              const std::vector<ReconTuple>& tuples, int n_source);
double mean_reconstruction_l1(X2FaceModel<float>& model, FrameCache& cache,
                              const std::vector<ReconTuple>& tuples, int n_source);

// Mean HIGH-layer content loss (summed over layers) between the source and
// its reconstruction when driven by the tuple's other-identity frame.
double mean_cross_identity_high(X2FaceModel<float>& model, IdentityComparator<float>& cmp,
                                FrameCache& cache, const std::vector<ReconTuple>& tuples);

struct ReconSetting {
  int stage = 1;
  int n_source = 1;
  double l1 = 0.0;
  double improvement_pct = 0.0;  // relative to (stage I, 1 source)
};

struct ReconReport {
  std::string split;
  int n_pairs = 0;
  std::uint64_t seed = 0;
  std::vector<ReconSetting> settings;
  // Mean HIGH-layer content loss between generated and source frames under
  // cross-identity driving, per stage (needs a comparator).
  std::map<int, double> cross_identity_high;

  nlohmann::json to_json() const;
  std::string table() const;
};

struct ReconEvalConfig {
  Split split = Split::kTest;
  int n_pairs = 200;
  std::uint64_t seed = 0;
  std::vector<int> n_sources{1, 3};
};

// `stage2` may be null, in which case only stage-I rows are produced.
ReconReport eval_reconstruction(X2FaceModel<float>& stage1, X2FaceModel<float>* stage2,
                                const DatasetIndex& index, const ReconEvalConfig& cfg,
                                IdentityComparator<float>* comparator = nullptr);

// ------------------------------------------------------------ pose probe

struct PoseReference {
  const char* method;
  double roll, pitch, yaw, mae;
};
inline constexpr std::array<PoseReference, 2> kPoseReference{{
    {"X2Face", 5.85, 7.59, 14.62, 9.36},
    {"Supervised", 8.75, 5.85, 6.45, 7.02},
}};

struct PoseReport {
  std::vector<std::string> axes{"tx", "ty", "rot"};
  std::vector<double> half_range{0.25, 0.25, 30.0};
  std::vector<double> mae;  // per axis
  double mean_mae = 0.0;
  int n = 0;

  nlohmann::json to_json() const;
  std::string table() const;
};

// Per-axis mean absolute error between predictions and labels (rows = samples).
PoseReport pose_errors(const Mat& predicted, const Mat& truth);

PoseReport eval_pose_probe(const VecToPoseMap& f_vp, const LabeledVectors& data);

// ------------------------------------------------------------ image probes

// Centroid (x, y) in pixels of pixels farther than `threshold` (RGB L2) from
// the background colour.
std::array<double, 2> foreground_centroid(const FaceFrame& frame,
                                          const std::array<double, 3>& background,
                                          double threshold = 0.12);

// Pixels with luma below `threshold` inside [x0, x1) x [y0, y1).
int dark_pixel_count(const FaceFrame& frame, int x0, int y0, int x1, int y1,
                     double threshold = 0.25);

struct TemplateMatch {
  double score = 0.0;  // mean colour similarity over the disk, in [0, 1]
  int x = 0;
  int y = 0;
};

// Best placement of a solid disk of `rgb` with the given radius within
// `search` pixels of (cx, cy).
TemplateMatch match_disk(const FaceFrame& frame, const std::array<double, 3>& rgb, int radius,
                         int cx, int cy, int search);

// Spearman rank correlation with average ranks for ties.
double spearman(const std::vector<double>& x, const std::vector<double>& y);

}  // namespace x2face
