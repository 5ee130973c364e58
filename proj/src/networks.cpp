#include "x2face/networks.hpp"

#include <algorithm>
#include <bit>

namespace x2face {

int NetConfig::n_down() const { return std::countr_zero(static_cast<unsigned>(resolution)); }

int NetConfig::channels_at(int depth) const {
  long c = static_cast<long>(base_channels) << depth;
  return static_cast<int>(std::min<long>(c, max_channels));
}

void NetConfig::validate() const {
  require(resolution >= 2 && std::has_single_bit(static_cast<unsigned>(resolution)),
          ErrorCode::kPrecondition,
          "resolution must be a power of two >= 2, got " + std::to_string(resolution));
  require(base_channels >= 1 && max_channels >= 1 && driving_vector_dim >= 1,
          ErrorCode::kPrecondition, "channel counts must be positive");
}

// ---------------------------------------------------------------- Encoder

template <typename T>
Encoder<T>::Encoder(const std::string& prefix, const NetConfig& cfg, int bottleneck_channels) {
  const int levels = cfg.n_down();
  int in = 3;
  for (int i = 0; i < levels; ++i) {
    const int out = i == levels - 1 ? bottleneck_channels : cfg.channels_at(i);
    const std::string name = prefix + ".enc" + std::to_string(i);
    convs_.emplace_back(name + ".conv", in, out, 4, 2, 1);
    if (i > 0) norms_.emplace_back(name + ".bn", out);
    in = out;
  }
  pre_act_.resize(levels);
}

template <typename T>
void Encoder<T>::init(std::mt19937_64& rng) {
  for (auto& c : convs_) c.init(rng);
}

template <typename T>
std::vector<Tensor<T>> Encoder<T>::forward(const Tensor<T>& x, Mode mode, bool record) {
  std::vector<Tensor<T>> out;
  out.reserve(convs_.size());
  const Tensor<T>* h = &x;
  for (std::size_t i = 0; i < convs_.size(); ++i) {
    Tensor<T> c = convs_[i].forward(*h, record);
    Tensor<T> a = ops::leaky_relu(c, T(0.2));
    if (i > 0) a = norms_[i - 1].forward(a, mode, record);
    if (record) pre_act_[i] = std::move(c);
    out.push_back(std::move(a));
    h = &out.back();
  }
  return out;
}

template <typename T>
void Encoder<T>::backward(std::vector<Tensor<T>>& level_grads) {
  for (int i = levels() - 1; i >= 0; --i) {
    Tensor<T> g = std::move(level_grads[i]);
    if (g.empty()) continue;
    if (i > 0) g = norms_[i - 1].backward(g);
    g = ops::leaky_relu_backward(pre_act_[i], g, T(0.2));
    Tensor<T> gin = convs_[i].backward(g, i > 0);
    if (i > 0) {
      if (level_grads[i - 1].empty())
        level_grads[i - 1] = std::move(gin);
      else
        ops::add_inplace(level_grads[i - 1], gin);
    }
  }
}

template <typename T>
std::vector<Parameter<T>*> Encoder<T>::parameters() {
  std::vector<Parameter<T>*> p;
  for (std::size_t i = 0; i < convs_.size(); ++i) {
    for (auto* q : convs_[i].parameters()) p.push_back(q);
    if (i > 0)
      for (auto* q : norms_[i - 1].parameters()) p.push_back(q);
  }
  return p;
}

template <typename T>
std::vector<Buffer<T>*> Encoder<T>::buffers() {
  std::vector<Buffer<T>*> b;
  for (auto& n : norms_)
    for (auto* q : n.buffers()) b.push_back(q);
  return b;
}

// ---------------------------------------------------------------- Decoder

template <typename T>
Decoder<T>::Decoder(const std::string& prefix, const NetConfig& cfg, int bottleneck_channels,
                    bool skips)
    : skips_(skips), levels_(cfg.n_down()) {
  int in = bottleneck_channels;
  for (int s = 0; s < levels_; ++s) {
    const int depth = levels_ - 1 - s;
    const int out = depth > 0 ? cfg.channels_at(depth - 1) : cfg.channels_at(0);
    const std::string name = prefix + ".dec" + std::to_string(s);
    stages_.push_back(Stage{Conv2d<T>(name + ".conv", in, out, 3, 1, 1), BatchNorm2d<T>(name + ".bn", out)});
    in = (skips_ && depth > 0) ? 2 * out : out;
  }
  head_ = Conv2d<T>(prefix + ".head", in, 2, 3, 1, 1);
  pre_act_.resize(levels_);
  pre_up_shape_.resize(levels_);
  skip_split_.assign(levels_, 0);
}

template <typename T>
void Decoder<T>::init(std::mt19937_64& rng) {
  for (auto& s : stages_) s.conv.init(rng);
  head_.init(rng);
}

template <typename T>
Tensor<T> Decoder<T>::forward(const std::vector<Tensor<T>>& levels, Mode mode, bool record) {
  require(!levels.empty(), ErrorCode::kPrecondition, "decoder: no input");
  if (skips_)
    require(static_cast<int>(levels.size()) == levels_, ErrorCode::kShapeMismatch,
            "decoder: expected every encoder level for skip connections");
  Tensor<T> h = levels.back();
  for (int s = 0; s < levels_; ++s) {
    const int depth = levels_ - 1 - s;
    Tensor<T> c = stages_[s].conv.forward(h, record);
    Tensor<T> r = ops::relu(c);
    if (record) {
      pre_up_shape_[s] = r.shape();
      pre_act_[s] = std::move(c);
    }
    Tensor<T> b = stages_[s].norm.forward(ops::bilinear_upsample2x(r), mode, record);
    if (skips_ && depth > 0) {
      if (record) skip_split_[s] = b.channels();
      h = ops::concat_channels(b, levels[depth - 1]);
    } else {
      h = std::move(b);
    }
  }
  Tensor<T> flow = ops::tanh(head_.forward(h, record));
  if (record) flow_ = flow;
  return flow;
}

template <typename T>
std::vector<Tensor<T>> Decoder<T>::backward(const Tensor<T>& grad_flow) {
  std::vector<Tensor<T>> level_grads(levels_);
  Tensor<T> g = head_.backward(ops::tanh_backward(flow_, grad_flow));
  for (int s = levels_ - 1; s >= 0; --s) {
    const int depth = levels_ - 1 - s;
    if (skips_ && depth > 0) {
      Tensor<T> own, skip;
      ops::split_channels(g, skip_split_[s], own, skip);
      level_grads[depth - 1] = std::move(skip);
      g = std::move(own);
    }
    g = stages_[s].norm.backward(g);
    g = ops::bilinear_upsample2x_backward(g, pre_up_shape_[s]);
    g = ops::relu_backward(pre_act_[s], g);
    g = stages_[s].conv.backward(g);
  }
  level_grads[levels_ - 1] = std::move(g);
  return level_grads;
}

template <typename T>
std::vector<Parameter<T>*> Decoder<T>::parameters() {
  std::vector<Parameter<T>*> p;
  for (auto& s : stages_) {
    for (auto* q : s.conv.parameters()) p.push_back(q);
    for (auto* q : s.norm.parameters()) p.push_back(q);
  }
  for (auto* q : head_.parameters()) p.push_back(q);
  return p;
}

template <typename T>
std::vector<Buffer<T>*> Decoder<T>::buffers() {
  std::vector<Buffer<T>*> b;
  for (auto& s : stages_)
    for (auto* q : s.norm.buffers()) b.push_back(q);
  return b;
}

// ---------------------------------------------------------------- Networks

template <typename T>
EmbeddingNetwork<T>::EmbeddingNetwork(const NetConfig& cfg)
    : cfg_(cfg),
      encoder_("embedding", cfg, cfg.channels_at(cfg.n_down() - 1)),
      decoder_("embedding", cfg, cfg.channels_at(cfg.n_down() - 1), true) {
  cfg.validate();
}

template <typename T>
void EmbeddingNetwork<T>::init(std::mt19937_64& rng) {
  encoder_.init(rng);
  decoder_.init(rng);
}

template <typename T>
Tensor<T> EmbeddingNetwork<T>::forward(const Tensor<T>& source, Mode mode, bool record) {
  check_frame(source, cfg_, "source");
  return decoder_.forward(encoder_.forward(source, mode, record), mode, record);
}

template <typename T>
void EmbeddingNetwork<T>::backward(const Tensor<T>& grad_flow) {
  auto grads = decoder_.backward(grad_flow);
  encoder_.backward(grads);
}

template <typename T>
std::vector<Parameter<T>*> EmbeddingNetwork<T>::parameters() {
  auto p = encoder_.parameters();
  for (auto* q : decoder_.parameters()) p.push_back(q);
  return p;
}

template <typename T>
std::vector<Buffer<T>*> EmbeddingNetwork<T>::buffers() {
  auto b = encoder_.buffers();
  for (auto* q : decoder_.buffers()) b.push_back(q);
  return b;
}

template <typename T>
DrivingNetwork<T>::DrivingNetwork(const NetConfig& cfg)
    : cfg_(cfg),
      encoder_("driving", cfg, cfg.driving_vector_dim),
      decoder_("driving", cfg, cfg.driving_vector_dim, false) {
  cfg.validate();
}

template <typename T>
void DrivingNetwork<T>::init(std::mt19937_64& rng) {
  encoder_.init(rng);
  decoder_.init(rng);
}

template <typename T>
Tensor<T> DrivingNetwork<T>::encode(const Tensor<T>& driving, Mode mode, bool record) {
  check_frame(driving, cfg_, "driving frame");
  auto levels = encoder_.forward(driving, mode, record);
  return std::move(levels.back());
}

template <typename T>
Tensor<T> DrivingNetwork<T>::decode(const Tensor<T>& vectors, Mode mode, bool record) {
  require(vectors.size() == static_cast<std::size_t>(vectors.batch()) * cfg_.driving_vector_dim,
          ErrorCode::kShapeMismatch,
          "driving vector length " + std::to_string(vectors.size() / vectors.batch()) +
              " does not match configured " + std::to_string(cfg_.driving_vector_dim));
  std::vector<Tensor<T>> levels;
  levels.push_back(vectors.reshaped(Shape4{vectors.batch(), cfg_.driving_vector_dim, 1, 1}));
  return decoder_.forward(levels, mode, record);
}

template <typename T>
Tensor<T> DrivingNetwork<T>::backward_decode(const Tensor<T>& grad_flow) {
  auto grads = decoder_.backward(grad_flow);
  return std::move(grads.back());
}

template <typename T>
void DrivingNetwork<T>::backward_encode(const Tensor<T>& grad_vectors) {
  std::vector<Tensor<T>> grads(encoder_.levels());
  grads.back() = grad_vectors;
  encoder_.backward(grads);
}

template <typename T>
std::vector<Parameter<T>*> DrivingNetwork<T>::parameters() {
  auto p = encoder_.parameters();
  for (auto* q : decoder_.parameters()) p.push_back(q);
  return p;
}

template <typename T>
std::vector<Buffer<T>*> DrivingNetwork<T>::buffers() {
  auto b = encoder_.buffers();
  for (auto* q : decoder_.buffers()) b.push_back(q);
  return b;
}

template <typename T>
X2FaceModel<T>::X2FaceModel(const NetConfig& cfg, std::uint64_t seed)
    : config(cfg), embedding(cfg), driving(cfg) {
  std::mt19937_64 rng(seed);
  embedding.init(rng);
  driving.init(rng);
}

template <typename T>
std::vector<Parameter<T>*> X2FaceModel<T>::parameters() {
  auto p = embedding.parameters();
  for (auto* q : driving.parameters()) p.push_back(q);
  return p;
}

template <typename T>
std::vector<Buffer<T>*> X2FaceModel<T>::buffers() {
  auto b = embedding.buffers();
  for (auto* q : driving.buffers()) b.push_back(q);
  return b;
}

// ---------------------------------------------------------------- Pipeline

namespace {

template <typename T>
void check_override(const SamplerGrid<T>& g, int batch, int res) {
  require(g.batch() == batch && g.height() == res && g.width() == res, ErrorCode::kShapeMismatch,
          "flow override has shape " + g.coords.shape().str());
}

}  // namespace

template <typename T>
WarpResult<T> embed_source(EmbeddingNetwork<T>& net, const Tensor<T>& source,
                           const SamplerGrid<T>* flow_override) {
  check_frame(source, net.config(), "source");
  WarpResult<T> r;
  if (flow_override != nullptr) {
    check_override(*flow_override, source.batch(), net.config().resolution);
    r.flow = *flow_override;
  } else {
    r.flow = grid_from_channels(net.forward(source, Mode::kInfer, false));
  }
  r.image = ops::bilinear_sample(source, r.flow);
  return r;
}

template <typename T>
Tensor<T> embed_multi(EmbeddingNetwork<T>& net, const std::vector<Tensor<T>>& sources,
                      const SamplerGrid<T>* flow_override) {
  require(!sources.empty(), ErrorCode::kPrecondition, "embed_multi: no source frames");
  std::vector<Tensor<T>> faces;
  faces.reserve(sources.size());
  for (const auto& s : sources) {
    require(s.shape() == sources.front().shape(), ErrorCode::kShapeMismatch,
            "embed_multi: source batches differ in shape");
    faces.push_back(embed_source(net, s, flow_override).image);
  }
  if (faces.size() == 1) return std::move(faces.front());
  // Sorting per pixel fixes the summation order; offsets from the minimum keep
  // the mean of equal values exact.
  Tensor<T> out(faces.front().shape());
  std::vector<T> vals(faces.size());
  const T m = T(faces.size());
  for (std::size_t i = 0; i < out.size(); ++i) {
    for (std::size_t k = 0; k < faces.size(); ++k) vals[k] = faces[k][i];
    std::sort(vals.begin(), vals.end());
    T acc = T(0);
    for (std::size_t k = 1; k < vals.size(); ++k) acc += vals[k] - vals[0];
    out[i] = vals[0] + acc / m;
  }
  return out;
}

template <typename T>
Tensor<T> drive_encode(DrivingNetwork<T>& net, const Tensor<T>& driving) {
  return net.encode(driving, Mode::kInfer, false);
}

template <typename T>
WarpResult<T> drive_decode(DrivingNetwork<T>& net, const Tensor<T>& vectors,
                           const Tensor<T>& embedded, const SamplerGrid<T>* flow_override) {
  check_frame(embedded, net.config(), "embedded face");
  require(vectors.batch() == embedded.batch(), ErrorCode::kShapeMismatch,
          "drive_decode: vector batch differs from embedded batch");
  WarpResult<T> r;
  if (flow_override != nullptr) {
    require(vectors.size() == static_cast<std::size_t>(vectors.batch()) *
                                  net.config().driving_vector_dim,
            ErrorCode::kShapeMismatch, "driving vector length mismatch");
    check_override(*flow_override, embedded.batch(), net.config().resolution);
    r.flow = *flow_override;
  } else {
    r.flow = grid_from_channels(net.decode(vectors, Mode::kInfer, false));
  }
  r.image = ops::bilinear_sample(embedded, r.flow);
  return r;
}

template <typename T>
Tensor<T> x2face_forward(X2FaceModel<T>& model, const std::vector<Tensor<T>>& sources,
                         const Tensor<T>& driving, const SamplerGrid<T>* embed_flow,
                         const SamplerGrid<T>* drive_flow) {
  require(!sources.empty() && driving.batch() == sources.front().batch(), ErrorCode::kShapeMismatch,
          "x2face_forward: driving and source batch sizes differ");
  Tensor<T> embedded = embed_multi(model.embedding, sources, embed_flow);
  Tensor<T> v = drive_encode(model.driving, driving);
  return drive_decode(model.driving, v, embedded, drive_flow).image;
}

template <typename T>
TrainingTrace<T> train_forward(X2FaceModel<T>& model, const Tensor<T>& source,
                               const Tensor<T>& driving, Mode mode) {
  const int n = source.batch();
  require(driving.batch() % n == 0, ErrorCode::kShapeMismatch,
          "train_forward: driving batch must be a multiple of the source batch");
  const bool record = mode == Mode::kTrain;
  TrainingTrace<T> t;
  t.source = source;
  t.embed_flow = grid_from_channels(model.embedding.forward(source, mode, record));
  t.embedded = ops::bilinear_sample(source, t.embed_flow);
  const int k = driving.batch() / n;
  if (k == 1) {
    t.embedded_rep = t.embedded;
  } else {
    std::vector<const Tensor<T>*> parts(k, &t.embedded);
    t.embedded_rep = concat_batch(parts);
  }
  Tensor<T> v = model.driving.encode(driving, mode, record);
  t.drive_flow = grid_from_channels(model.driving.decode(v, mode, record));
  t.generated = ops::bilinear_sample(t.embedded_rep, t.drive_flow);
  return t;
}

template <typename T>
void train_backward(X2FaceModel<T>& model, const TrainingTrace<T>& trace,
                    const Tensor<T>& grad_generated) {
  Tensor<T> grad_rep;
  SamplerGrid<T> grad_drive_flow;
  ops::bilinear_sample_backward(trace.embedded_rep, trace.drive_flow, grad_generated, &grad_rep,
                                &grad_drive_flow);
  Tensor<T> grad_v = model.driving.backward_decode(channels_from_grid(grad_drive_flow));
  model.driving.backward_encode(grad_v);

  const int n = trace.embedded.batch();
  Tensor<T> grad_embedded = slice_batch(grad_rep, 0, n);
  for (int off = n; off < grad_rep.batch(); off += n)
    ops::add_inplace(grad_embedded, slice_batch(grad_rep, off, n));
  SamplerGrid<T> grad_embed_flow;
  ops::bilinear_sample_backward(trace.source, trace.embed_flow, grad_embedded, static_cast<Tensor<T>*>(nullptr),
                                &grad_embed_flow);
  model.embedding.backward(channels_from_grid(grad_embed_flow));
}

#define X2FACE_INSTANTIATE_NETWORKS(T)                                                           \
  template class Encoder<T>;                                                                     \
  template class Decoder<T>;                                                                     \
  template class EmbeddingNetwork<T>;                                                            \
  template class DrivingNetwork<T>;                                                              \
  template struct X2FaceModel<T>;                                                                \
  template WarpResult<T> embed_source(EmbeddingNetwork<T>&, const Tensor<T>&,                    \
                                      const SamplerGrid<T>*);                                    \
  template Tensor<T> embed_multi(EmbeddingNetwork<T>&, const std::vector<Tensor<T>>&,            \
                                 const SamplerGrid<T>*);                                         \
  template Tensor<T> drive_encode(DrivingNetwork<T>&, const Tensor<T>&);                         \
  template WarpResult<T> drive_decode(DrivingNetwork<T>&, const Tensor<T>&, const Tensor<T>&,    \
                                      const SamplerGrid<T>*);                                    \
  template Tensor<T> x2face_forward(X2FaceModel<T>&, const std::vector<Tensor<T>>&,              \
                                    const Tensor<T>&, const SamplerGrid<T>*,                     \
                                    const SamplerGrid<T>*);                                      \
  template TrainingTrace<T> train_forward(X2FaceModel<T>&, const Tensor<T>&, const Tensor<T>&,   \
                                          Mode);                                                 \
  template void train_backward(X2FaceModel<T>&, const TrainingTrace<T>&, const Tensor<T>&);

X2FACE_INSTANTIATE_NETWORKS(float)
X2FACE_INSTANTIATE_NETWORKS(double)

}  // namespace x2face
