#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <vector>

#include "json.hpp"
#include "x2face/dataset.hpp"
#include "x2face/losses.hpp"
#include "x2face/networks.hpp"

namespace x2face {

struct PlateauConfig {
  int window = 5;
  double min_rel_improve = 0.01;
  double decay_factor = 10.0;
  double lr_floor = 1e-6;
};

struct TrainConfig {
  int stage = 1;
  double lr = 0.001;
  double momentum = 0.9;
  int batch_size = 8;
  int max_steps = 2000;
  int eval_every = 100;
  PlateauConfig plateau;
  std::uint64_t seed = 0;
  int checkpoint_every = 500;
  double clip_norm = 10.0;  // <= 0 disables clipping
  int val_pairs = 64;
  // Stage I from scratch: the first steps regress both flow heads onto the
  // identity grid before the photometric loss takes over. 0 disables.
  int flow_prior_steps = 300;
  double flow_prior_lr = 0.01;
  // Stage I coarse-to-fine: training frames are Gaussian blurred with a sigma
  // (pixels) that falls linearly from blur_sigma to 0 over blur_steps
  // photometric steps. LR plateau checks wait until the blur is gone.
  double blur_sigma = 0.0;
  int blur_steps = 0;
  // Switch a stage-I run to stage II once validation stalls for
  // `transition_patience` evals (needs a comparator).
  bool auto_transition = false;
  int transition_patience = 10;

  static TrainConfig for_stage(int stage);
  void validate() const;
};

nlohmann::json to_json(const TrainConfig& cfg);
// Fields absent from `j` keep their value from `base`; unknown fields are rejected.
TrainConfig train_config_from_json(const nlohmann::json& j, TrainConfig base);

// v <- momentum * v + g; theta <- theta - lr * v. Throws kNonFinite on a
// non-finite gradient before touching anything.
template <typename T>
void sgd_momentum_step(std::span<T> theta, std::span<const T> grad, std::span<T> velocity,
                       double lr, double momentum);

class SgdMomentum {
 public:
  explicit SgdMomentum(std::vector<Parameter<float>*> params);
  void step(double lr, double momentum);
  void reset();
  // Global L2 norm of the current gradients.
  double grad_norm() const;
  void scale_grads(double factor);

 private:
  std::vector<Parameter<float>*> params_;
  std::vector<Tensor<float>> velocity_;
};

// True when the best of the last `window` values fails to improve on the best
// before them by the relative margin.
// Separable Gaussian blur with clamped borders; sigma <= 0 returns a copy.
Tensor<float> gaussian_blur(const Tensor<float>& x, double sigma);

bool plateaued(std::span<const double> history, int window, double min_rel_improve);

struct PlateauDecision {
  double lr = 0.0;
  bool decayed = false;
};

// `history` is the validation losses since the last decay (or run start).
PlateauDecision lr_plateau_step(std::span<const double> history, const PlateauConfig& cfg,
                                double lr);

struct TrainOptions {
  std::optional<std::filesystem::path> checkpoint_out;
  std::optional<std::filesystem::path> metrics_out;
  IdentityComparator<float>* comparator = nullptr;  // stage II
  std::optional<LossWeightState> loss_weights;      // resumes weighting state
  std::function<void(const nlohmann::json&)> on_record;
};

struct TrainResult {
  int steps = 0;
  int final_stage = 1;
  double final_lr = 0.0;
  double initial_val_l1 = 0.0;
  double final_val_l1 = 0.0;
  std::vector<double> val_history;
  LossWeightState loss_weights;
};

// Runs the configured stage. Stage II needs options.comparator. Each eval
// appends one NDJSON record {step, stage, lr, train, val_l1}.
TrainResult train(X2FaceModel<float>& model, const DatasetIndex& index, const TrainConfig& cfg,
                  const TrainOptions& options);

TrainResult train_stage1(X2FaceModel<float>& model, const DatasetIndex& index,
                         const TrainConfig& cfg, const TrainOptions& options);
TrainResult train_stage2(X2FaceModel<float>& model, const DatasetIndex& index,
                         const TrainConfig& cfg, IdentityComparator<float>& comparator,
                         TrainOptions options);

// Mean photometric L1 over fixed same-video pairs, inference mode.
double validation_l1(X2FaceModel<float>& model, FrameCache& cache,
                     const std::vector<PairSample>& pairs, int batch_size = 16);

}  // namespace x2face
