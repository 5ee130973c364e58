#pragma once

#include <cstdint>
#include <optional>
#include <random>
#include <vector>

#include "x2face/layers.hpp"

namespace x2face {

struct NetConfig {
  int resolution = 64;
  int base_channels = 16;
  int max_channels = 128;
  int driving_vector_dim = 128;

  static NetConfig full_scale() { return {256, 64, 512, 128}; }
  static NetConfig desk_scale() { return {64, 16, 128, 128}; }

  // Number of stride-2 encoder levels; the bottleneck is spatially 1x1.
  int n_down() const;
  // Channel width of encoder level `depth` (0-based), ignoring the driving bottleneck.
  int channels_at(int depth) const;
  void validate() const;

  friend bool operator==(const NetConfig&, const NetConfig&) = default;
};

// Strided encoder: conv 4x4/2/1, leaky ReLU 0.2, batch norm on every level but
// the first. Returns the activation of every level, the last being the 1x1
// bottleneck.
template <typename T>
class Encoder {
 public:
  Encoder() = default;
  Encoder(const std::string& prefix, const NetConfig& cfg, int bottleneck_channels);

  void init(std::mt19937_64& rng);
  std::vector<Tensor<T>> forward(const Tensor<T>& x, Mode mode, bool record);
  // level_grads[i] is the gradient flowing into level i's output from outside
  // the encoder (skip connections, bottleneck consumer). Consumed in place.
  void backward(std::vector<Tensor<T>>& level_grads);

  std::vector<Parameter<T>*> parameters();
  std::vector<Buffer<T>*> buffers();
  int levels() const { return static_cast<int>(convs_.size()); }

 private:
  std::vector<Conv2d<T>> convs_;
  std::vector<BatchNorm2d<T>> norms_;  // norms_[i] belongs to level i + 1
  std::vector<Tensor<T>> pre_act_;
};

// Upsampling decoder: conv 3x3/1/1, ReLU, 2x bilinear upsample, batch norm,
// optionally concatenating the matching encoder level; then a 3x3 head to two
// channels and tanh.
template <typename T>
class Decoder {
 public:
  Decoder() = default;
  Decoder(const std::string& prefix, const NetConfig& cfg, int bottleneck_channels, bool skips);

  void init(std::mt19937_64& rng);
  // `levels` holds all encoder outputs when skips are enabled, otherwise only
  // the last entry (the bottleneck) is read. Returns (n, 2, res, res) in (-1, 1).
  Tensor<T> forward(const std::vector<Tensor<T>>& levels, Mode mode, bool record);
  // Returns per-level input gradients (same indexing as `levels`).
  std::vector<Tensor<T>> backward(const Tensor<T>& grad_flow);

  std::vector<Parameter<T>*> parameters();
  std::vector<Buffer<T>*> buffers();
  bool has_skips() const { return skips_; }

 private:
  struct Stage {
    Conv2d<T> conv;
    BatchNorm2d<T> norm;
  };
  bool skips_ = false;
  int levels_ = 0;
  std::vector<Stage> stages_;  // stages_[s] runs at encoder depth levels_-1-s
  Conv2d<T> head_;
  std::vector<Tensor<T>> pre_act_;
  std::vector<Shape4> pre_up_shape_;
  std::vector<int> skip_split_;
  Tensor<T> flow_;
};

template <typename T>
class EmbeddingNetwork {
 public:
  EmbeddingNetwork() = default;
  explicit EmbeddingNetwork(const NetConfig& cfg);

  void init(std::mt19937_64& rng);
  // Flow head output, (n, 2, res, res).
  Tensor<T> forward(const Tensor<T>& source, Mode mode, bool record);
  void backward(const Tensor<T>& grad_flow);

  std::vector<Parameter<T>*> parameters();
  std::vector<Buffer<T>*> buffers();
  const NetConfig& config() const { return cfg_; }
  Encoder<T>& encoder() { return encoder_; }
  Decoder<T>& decoder() { return decoder_; }

 private:
  NetConfig cfg_;
  Encoder<T> encoder_;
  Decoder<T> decoder_;
};

template <typename T>
class DrivingNetwork {
 public:
  DrivingNetwork() = default;
  explicit DrivingNetwork(const NetConfig& cfg);

  void init(std::mt19937_64& rng);
  // Bottleneck activation, (n, driving_vector_dim, 1, 1).
  Tensor<T> encode(const Tensor<T>& driving, Mode mode, bool record);
  // Flow head output for driving vectors, (n, 2, res, res).
  Tensor<T> decode(const Tensor<T>& vectors, Mode mode, bool record);
  // Returns the gradient with respect to the decoded vectors.
  Tensor<T> backward_decode(const Tensor<T>& grad_flow);
  void backward_encode(const Tensor<T>& grad_vectors);

  std::vector<Parameter<T>*> parameters();
  std::vector<Buffer<T>*> buffers();
  const NetConfig& config() const { return cfg_; }
  Encoder<T>& encoder() { return encoder_; }
  Decoder<T>& decoder() { return decoder_; }

 private:
  NetConfig cfg_;
  Encoder<T> encoder_;
  Decoder<T> decoder_;
};

// The pair of subnetworks plus their shared configuration.
template <typename T>
struct X2FaceModel {
  NetConfig config;
  EmbeddingNetwork<T> embedding;
  DrivingNetwork<T> driving;

  X2FaceModel() = default;
  explicit X2FaceModel(const NetConfig& cfg, std::uint64_t seed = 0);

  std::vector<Parameter<T>*> parameters();
  std::vector<Buffer<T>*> buffers();
};

template <typename T>
struct WarpResult {
  SamplerGrid<T> flow;
  Tensor<T> image;
};

// Frames are (n, 3, res, res). All inference entry points use running
// batch-norm statistics. `flow_override` replaces the network head output.
template <typename T>
WarpResult<T> embed_source(EmbeddingNetwork<T>& net, const Tensor<T>& source,
                           const SamplerGrid<T>* flow_override = nullptr);

// Pixelwise mean of the embedded faces of equally shaped source batches
// (one tensor per source slot). Exactly
// permutation invariant; M copies of one frame reproduce embed_source.
template <typename T>
Tensor<T> embed_multi(EmbeddingNetwork<T>& net, const std::vector<Tensor<T>>& sources,
                      const SamplerGrid<T>* flow_override = nullptr);

template <typename T>
Tensor<T> drive_encode(DrivingNetwork<T>& net, const Tensor<T>& driving);

template <typename T>
WarpResult<T> drive_decode(DrivingNetwork<T>& net, const Tensor<T>& vectors,
                           const Tensor<T>& embedded, const SamplerGrid<T>* flow_override = nullptr);

template <typename T>
Tensor<T> x2face_forward(X2FaceModel<T>& model, const std::vector<Tensor<T>>& sources,
                         const Tensor<T>& driving, const SamplerGrid<T>* embed_flow = nullptr,
                         const SamplerGrid<T>* drive_flow = nullptr);

// Recorded training-mode forward. `driving` holds k * n frames for n sources;
// each source's embedded face is reused for the k driving frames that share
// its position modulo n.
template <typename T>
struct TrainingTrace {
  Tensor<T> source;
  SamplerGrid<T> embed_flow;
  Tensor<T> embedded;       // (n, 3, r, r)
  Tensor<T> embedded_rep;   // (k*n, 3, r, r)
  SamplerGrid<T> drive_flow;
  Tensor<T> generated;      // (k*n, 3, r, r)
};

template <typename T>
TrainingTrace<T> train_forward(X2FaceModel<T>& model, const Tensor<T>& source,
                               const Tensor<T>& driving, Mode mode = Mode::kTrain);

// Backpropagates d(loss)/d(generated) into both networks' parameter grads.
template <typename T>
void train_backward(X2FaceModel<T>& model, const TrainingTrace<T>& trace,
                    const Tensor<T>& grad_generated);

// Raises kResolutionMismatch naming both resolutions.
template <typename T>
void check_frame(const Tensor<T>& frame, const NetConfig& cfg, const char* what) {
  require(frame.channels() == 3, ErrorCode::kShapeMismatch,
          std::string(what) + ": expected 3 channels, got " + frame.shape().str());
  require(frame.height() == cfg.resolution && frame.width() == cfg.resolution,
          ErrorCode::kResolutionMismatch,
          std::string(what) + " resolution " + std::to_string(frame.height()) + "x" +
              std::to_string(frame.width()) + " does not match model resolution " +
              std::to_string(cfg.resolution) + "x" + std::to_string(cfg.resolution));
}

}  // namespace x2face
