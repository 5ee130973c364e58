#pragma once

// Cross-modal control: affine probes between driving vectors and pose codes,
// the audio regression, and the drive equations built on them.

#include <Eigen/Dense>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "x2face/dataset.hpp"
#include "x2face/networks.hpp"

namespace x2face {

using Vec = Eigen::VectorXd;
using Mat = Eigen::MatrixXd;  // samples are rows

// f_{v->p}: p = W v + b.
struct VecToPoseMap {
  Mat weight;  // (pose_dim, vec_dim)
  Vec bias;

  int pose_dim() const { return static_cast<int>(weight.rows()); }
  int vec_dim() const { return static_cast<int>(weight.cols()); }
};

// f_{p->v}: linear layer followed by batch norm. At inference it is affine
// with linear part `linear_part()` and constant `constant_term()`.
struct PoseToVecMap {
  Mat weight;  // (vec_dim, pose_dim)
  Vec bias;
  Vec gamma, beta, running_mean, running_var;
  double eps = 1e-5;

  int pose_dim() const { return static_cast<int>(weight.cols()); }
  int vec_dim() const { return static_cast<int>(weight.rows()); }
  Mat linear_part() const;
  Vec constant_term() const;
  Vec apply(const Vec& p) const;

  // Pass-through batch norm around a given affine map (test stubs).
  static PoseToVecMap affine(const Mat& m, const Vec& c);
};

// f_{a->v}: OLS on standardized audio features.
struct AudioToVecMap {
  Mat weight;  // (vec_dim, audio_dim); dropped features have zero columns
  Vec bias;
  Vec mu, sigma;
  std::vector<bool> kept;

  int vec_dim() const { return static_cast<int>(weight.rows()); }
  int audio_dim() const { return static_cast<int>(weight.cols()); }
};

struct LinearFitConfig {
  int epochs = 400;
  int batch_size = 64;
  double lr = 0.05;
  double momentum = 0.9;
  std::uint64_t seed = 0;
};

struct FitReport {
  double train_l1 = 0.0;  // mean absolute error on the fitting data
  std::vector<std::string> warnings;
};

// L1 regression by minibatch SGD (momentum, cosine-decayed step), started from
// the least-squares solution. Inputs and targets are standardized internally.
VecToPoseMap fit_v_to_p(const Mat& vectors, const Mat& poses, const LinearFitConfig& cfg = {},
                        FitReport* report = nullptr);
Vec predict_pose(const VecToPoseMap& map, const Vec& v);

// L1 regression through linear + batch norm; batch statistics during the fit,
// running statistics frozen afterwards.
PoseToVecMap fit_p_to_v(const Mat& poses, const Mat& vectors, const LinearFitConfig& cfg = {},
                        FitReport* report = nullptr);

// Population-std standardization, then OLS via the normal equations (minimum
// norm when underdetermined). Zero-variance features are dropped with a warning.
AudioToVecMap fit_a_to_v(const Mat& audio, const Mat& vectors, FitReport* report = nullptr);
// normalize = false feeds raw features to the standardized-space weights.
Vec apply_a_to_v(const AudioToVecMap& map, const Vec& a, bool normalize);

// v_source + f_pv(p_driving - f_vp(v_source)), constant term included.
Vec pose_drive_vector(const Vec& v_source, const PoseToVecMap& f_pv, const VecToPoseMap& f_vp,
                      const Vec& p_driving);

// v_source + f_av(a_d) - f_av(a_s) + f_pv(f_vp(f_av(a_d)) - f_vp(v_source)),
// every f_av evaluated on raw features.
Vec audio_drive_vector(const Vec& v_source, const AudioToVecMap& f_av, const VecToPoseMap& f_vp,
                       const PoseToVecMap& f_pv, const Vec& a_driving, const Vec& a_source);

struct ControlMaps {
  std::optional<VecToPoseMap> v_to_p;
  std::optional<PoseToVecMap> p_to_v;
  std::optional<AudioToVecMap> a_to_v;

  bool pose_ready() const { return v_to_p && p_to_v; }
  bool audio_ready() const { return pose_ready() && a_to_v; }
};

nlohmann::json to_json(const VecToPoseMap& m);
nlohmann::json to_json(const PoseToVecMap& m);
nlohmann::json to_json(const AudioToVecMap& m);
nlohmann::json to_json(const ControlMaps& maps);
ControlMaps control_maps_from_json(const nlohmann::json& j);
void save_control_maps(const std::filesystem::path& path, const ControlMaps& maps);
ControlMaps load_control_maps(const std::filesystem::path& path);

struct DriveResult {
  Tensor<float> frame;
  Vec v_source;
  Vec p_source;
  Vec v_driving;
};

Vec to_vec(const Tensor<float>& driving_vector);
Tensor<float> to_tensor(const Vec& v);

DriveResult drive_with_pose(X2FaceModel<float>& model, const ControlMaps& maps,
                            const std::vector<FaceFrame>& sources, const Vec& p_driving);
DriveResult drive_with_audio(X2FaceModel<float>& model, const ControlMaps& maps,
                             const std::vector<FaceFrame>& sources, const Vec& a_driving,
                             const Vec& a_source);

// Driving vectors and labels for every frame of the given splits, in index order.
struct LabeledVectors {
  std::vector<FrameRef> refs;
  Mat vectors;  // (n, vec_dim)
  Mat poses;    // (n, 3)
  Mat audio;    // (n, kAudioDim) or empty when any video lacks audio features
};

LabeledVectors collect_labeled_vectors(X2FaceModel<float>& model, const DatasetIndex& index,
                                       const std::vector<Split>& splits);

}  // namespace x2face
