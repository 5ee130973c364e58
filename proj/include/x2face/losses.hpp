#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <random>
#include <string>
#include <vector>

#include "json.hpp"
#include "x2face/dataset.hpp"
#include "x2face/layers.hpp"

namespace x2face {

// Mean over all elements of |a - b|.
template <typename T>
double photometric_l1(const Tensor<T>& a, const Tensor<T>& b);

// Subgradient of photometric_l1 with respect to `a` (zero at ties).
template <typename T>
Tensor<T> photometric_l1_grad(const Tensor<T>& a, const Tensor<T>& b);

// Layer sets used by the identity losses.
inline const std::vector<std::string>& low_high_layers() {
  static const std::vector<std::string> v{"Conv2", "Conv3", "Conv4", "Conv5", "Conv7"};
  return v;
}
inline const std::vector<std::string>& high_layers() {
  static const std::vector<std::string> v{"Conv6", "Conv7"};
  return v;
}

struct ComparatorStage {
  int out_channels = 16;
  int kernel = 3;
  bool pool = false;  // 2x max pooling after the ReLU

  friend bool operator==(const ComparatorStage&, const ComparatorStage&) = default;
};

struct ComparatorConfig {
  int in_channels = 3;
  std::vector<ComparatorStage> stages;
  int n_classes = 0;  // 0 means no classifier head
  double input_offset = 0.5;  // subtracted from [0, 1] inputs before Conv1

  // Seven 3x3 stages, widths 16 * min(2^i, 8), pooling after Conv2, Conv4, Conv6.
  static ComparatorConfig standard(int n_classes = 0);
  friend bool operator==(const ComparatorConfig&, const ComparatorConfig&) = default;
};

nlohmann::json to_json(const ComparatorConfig& cfg);
ComparatorConfig comparator_config_from_json(const nlohmann::json& j);

// Feature network whose stage activations (post-ReLU, pre-pooling) are
// compared by the content loss. Stage i is named "Conv<i+1>".
template <typename T>
class IdentityComparator {
 public:
  IdentityComparator() = default;
  explicit IdentityComparator(const ComparatorConfig& cfg);

  void init(std::mt19937_64& rng);
  const ComparatorConfig& config() const { return cfg_; }
  int stages() const { return static_cast<int>(stages_.size()); }
  static std::string stage_name(int i) { return "Conv" + std::to_string(i + 1); }
  // Throws kUnknownLayer for names outside this comparator.
  int stage_index(const std::string& name) const;

  // Activations of stages [0, count).
  std::vector<Tensor<T>> forward(const Tensor<T>& x, int count, bool record);
  // Gradient wrt the recorded input given per-stage activation gradients
  // (empty tensors are skipped). Weight gradients accumulate only when
  // `weight_grads` is set.
  Tensor<T> backward(const std::vector<Tensor<T>>& stage_grads, bool weight_grads = false);

  // Classifier head: global average pool of the last stage, then affine.
  Tensor<T> logits(const Tensor<T>& x, bool record);
  Tensor<T> logits_backward(const Tensor<T>& grad_logits);
  void drop_classifier();

  std::vector<Parameter<T>*> parameters();

 private:
  struct Stage {
    Conv2d<T> conv;
    bool pool = false;
    Tensor<T> pre_relu;
    std::vector<std::size_t> argmax;
    Shape4 act_shape{};
  };
  ComparatorConfig cfg_;
  std::vector<Stage> stages_;
  Linear<T> head_;
  int recorded_ = 0;
  Tensor<T> pooled_;
  Shape4 last_shape_{};
};

// Per-layer mean absolute difference of comparator activations.
template <typename T>
std::map<std::string, double> content_loss(IdentityComparator<T>& cmp, const Tensor<T>& a,
                                           const Tensor<T>& b,
                                           const std::vector<std::string>& layers);

// Exponential moving averages of raw loss magnitudes, used to balance the
// identity terms against the photometric term.
struct LossWeightState {
  double decay = 0.99;
  double target_ratio_same = 1.0;
  double target_ratio_diff = 0.1;
  std::map<std::string, double> ema;

  // First observation of a key initializes it; later ones blend with `decay`.
  double update(const std::string& key, double observation);
  double at(const std::string& key) const;

  nlohmann::json to_json() const;
  static LossWeightState from_json(const nlohmann::json& j);
};

template <typename T>
struct Stage2Loss {
  double total = 0.0;
  // Weighted addends: "photometric", "same.ConvN" for LOW_HIGH, "diff.ConvN" for HIGH.
  std::map<std::string, double> components;
  std::map<std::string, double> raw;  // unweighted magnitudes, same keys
  Tensor<T> grad_same;   // d total / d g_dA
  Tensor<T> grad_other;  // d total / d g_dR
};

// total = L1(g_dA, d_A) + sum_l w_l CL_l(g_dA, d_A) + sum_l w'_l CL_l(g_dR, s_A).
// EMAs are updated from this batch before the weights are formed.
template <typename T>
Stage2Loss<T> stage2_loss(IdentityComparator<T>& cmp, const Tensor<T>& s_A, const Tensor<T>& d_A,
                          const Tensor<T>& g_dA, const Tensor<T>& g_dR, LossWeightState& state,
                          bool compute_grad = true);

struct ComparatorTrainConfig {
  int steps = 300;
  int batch_size = 16;
  double lr = 0.01;
  double momentum = 0.9;
  double clip_norm = 5.0;
  int holdout_every = 5;  // every k-th frame of each video is held out
  std::function<void(int step, double loss)> on_step;
};

struct ComparatorTrainResult {
  IdentityComparator<float> comparator;  // classifier head removed
  double train_accuracy = 0.0;
  double heldout_accuracy = 0.0;
  std::vector<std::string> classes;
};

// Identity classifier over every identity in the index. Throws for fewer than
// two identities.
ComparatorTrainResult train_identity_comparator(const DatasetIndex& index,
                                                const ComparatorTrainConfig& cfg,
                                                std::uint64_t seed);

void save_comparator(const std::filesystem::path& path, IdentityComparator<float>& cmp,
                     const nlohmann::json& training_meta);
IdentityComparator<float> load_comparator(const std::filesystem::path& path,
                                          nlohmann::json* training_meta = nullptr);

}  // namespace x2face
