#include "x2face/losses.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "x2face/checkpoint.hpp"

namespace x2face {

template <typename T>
double photometric_l1(const Tensor<T>& a, const Tensor<T>& b) {
  require(a.shape() == b.shape(), ErrorCode::kShapeMismatch,
          "photometric_l1: shape " + a.shape().str() + " vs " + b.shape().str());
  return mean_abs_diff(a, b);
}

template <typename T>
Tensor<T> photometric_l1_grad(const Tensor<T>& a, const Tensor<T>& b) {
  require(a.shape() == b.shape(), ErrorCode::kShapeMismatch,
          "photometric_l1: shape " + a.shape().str() + " vs " + b.shape().str());
  Tensor<T> g(a.shape());
  const T inv = T(1.0 / static_cast<double>(a.size()));
  for (std::size_t i = 0; i < a.size(); ++i) {
    const T d = a[i] - b[i];
    g[i] = d > 0 ? inv : (d < 0 ? -inv : T(0));
  }
  return g;
}

// ------------------------------------------------------------ comparator

ComparatorConfig ComparatorConfig::standard(int n_classes) {
  ComparatorConfig c;
  for (int i = 0; i < 7; ++i)
    c.stages.push_back({16 * std::min(1 << i, 8), 3, (i % 2) == 1});
  c.n_classes = n_classes;
  return c;
}

nlohmann::json to_json(const ComparatorConfig& cfg) {
  nlohmann::json stages = nlohmann::json::array();
  for (const auto& s : cfg.stages)
    stages.push_back({{"out_channels", s.out_channels}, {"kernel", s.kernel}, {"pool", s.pool}});
  return {{"in_channels", cfg.in_channels}, {"stages", stages}, {"n_classes", cfg.n_classes},
          {"input_offset", cfg.input_offset}};
}

ComparatorConfig comparator_config_from_json(const nlohmann::json& j) {
  ComparatorConfig c;
  c.in_channels = j.at("in_channels").get<int>();
  for (const auto& s : j.at("stages"))
    c.stages.push_back({s.at("out_channels").get<int>(), s.at("kernel").get<int>(),
                        s.at("pool").get<bool>()});
  c.n_classes = j.value("n_classes", 0);
  c.input_offset = j.value("input_offset", 0.5);
  require(!c.stages.empty(), ErrorCode::kPrecondition, "comparator needs at least one stage");
  return c;
}

template <typename T>
IdentityComparator<T>::IdentityComparator(const ComparatorConfig& cfg) : cfg_(cfg) {
  require(!cfg.stages.empty(), ErrorCode::kPrecondition, "comparator needs at least one stage");
  int in = cfg.in_channels;
  for (int i = 0; i < static_cast<int>(cfg.stages.size()); ++i) {
    const auto& s = cfg.stages[i];
    Stage st;
    st.conv = Conv2d<T>("comparator." + stage_name(i), in, s.out_channels, s.kernel, 1,
                        s.kernel / 2);
    st.pool = s.pool;
    stages_.push_back(std::move(st));
    in = s.out_channels;
  }
  if (cfg.n_classes > 0) head_ = Linear<T>("comparator.classifier", in, cfg.n_classes);
}

template <typename T>
void IdentityComparator<T>::init(std::mt19937_64& rng) {
  // He-style bound; the plain fan-in bound shrinks activations through seven ReLU stages.
  for (auto& s : stages_) s.conv.init(rng, std::sqrt(6.0));
  if (cfg_.n_classes > 0) head_.init(rng);
}

template <typename T>
int IdentityComparator<T>::stage_index(const std::string& name) const {
  for (int i = 0; i < stages(); ++i)
    if (stage_name(i) == name) return i;
  fail(ErrorCode::kUnknownLayer, "unknown comparator layer '" + name + "'");
}

template <typename T>
std::vector<Tensor<T>> IdentityComparator<T>::forward(const Tensor<T>& x, int count, bool record) {
  require(count >= 0 && count <= stages(), ErrorCode::kPrecondition,
          "comparator stage count out of range");
  require(x.channels() == cfg_.in_channels, ErrorCode::kShapeMismatch,
          "comparator input has " + std::to_string(x.channels()) + " channels");
  std::vector<Tensor<T>> acts;
  // Fixed centering of [0, 1] inputs; plain ReLU stacks train poorly on
  // all-positive inputs.
  Tensor<T> h = x;
  for (auto& v : h.data()) v -= static_cast<T>(cfg_.input_offset);
  for (int i = 0; i < count; ++i) {
    Stage& s = stages_[i];
    Tensor<T> z = s.conv.forward(h, record);
    Tensor<T> a = ops::relu(z);
    if (record) {
      s.pre_relu = std::move(z);
      s.act_shape = a.shape();
    }
    if (s.pool && i + 1 < count) {
      h = ops::max_pool2x(a, record ? &s.argmax : nullptr);
    } else if (i + 1 < count) {
      h = a;
    }
    acts.push_back(std::move(a));
  }
  if (record) recorded_ = count;
  return acts;
}

template <typename T>
Tensor<T> IdentityComparator<T>::backward(const std::vector<Tensor<T>>& stage_grads,
                                          bool weight_grads) {
  const int count = static_cast<int>(stage_grads.size());
  require(count >= 1 && count <= recorded_, ErrorCode::kPrecondition,
          "comparator backward beyond recorded stages");
  Tensor<T> carry;  // gradient arriving from stage i + 1 into stage i's activation
  for (int i = count - 1; i >= 0; --i) {
    Stage& s = stages_[i];
    Tensor<T> g_act;
    if (!carry.empty()) {
      g_act = s.pool ? ops::max_pool2x_backward(carry, s.argmax, s.act_shape) : carry;
    }
    if (!stage_grads[i].empty()) {
      if (g_act.empty())
        g_act = stage_grads[i];
      else
        ops::add_inplace(g_act, stage_grads[i]);
    }
    if (g_act.empty()) g_act = Tensor<T>(s.act_shape);
    Tensor<T> g_z = ops::relu_backward(s.pre_relu, g_act);
    carry = weight_grads ? s.conv.backward(g_z, true) : s.conv.backward_input(g_z);
  }
  return carry;
}

template <typename T>
Tensor<T> IdentityComparator<T>::logits(const Tensor<T>& x, bool record) {
  require(cfg_.n_classes > 0, ErrorCode::kPrecondition, "comparator has no classifier head");
  auto acts = forward(x, stages(), record);
  const Tensor<T>& last = acts.back();
  const int N = last.batch(), C = last.channels(), HW = last.height() * last.width();
  Tensor<T> pooled(N, C, 1, 1);
  for (int n = 0; n < N; ++n)
    for (int c = 0; c < C; ++c) {
      const T* p = last.plane(n, c);
      double s = 0.0;
      for (int i = 0; i < HW; ++i) s += p[i];
      pooled(n, c, 0, 0) = T(s / HW);
    }
  if (record) last_shape_ = last.shape();
  return head_.forward(pooled, record);
}

template <typename T>
Tensor<T> IdentityComparator<T>::logits_backward(const Tensor<T>& grad_logits) {
  Tensor<T> g_pooled = head_.backward(grad_logits, true);
  Tensor<T> g_last(last_shape_);
  const int HW = last_shape_.d2 * last_shape_.d3;
  for (int n = 0; n < last_shape_.d0; ++n)
    for (int c = 0; c < last_shape_.d1; ++c) {
      const T v = g_pooled(n, c, 0, 0) / T(HW);
      std::fill_n(g_last.plane(n, c), HW, v);
    }
  std::vector<Tensor<T>> grads(stages());
  grads.back() = std::move(g_last);
  return backward(grads, true);
}

template <typename T>
void IdentityComparator<T>::drop_classifier() {
  cfg_.n_classes = 0;
  head_ = Linear<T>();
}

template <typename T>
std::vector<Parameter<T>*> IdentityComparator<T>::parameters() {
  std::vector<Parameter<T>*> out;
  for (auto& s : stages_)
    for (auto* p : s.conv.parameters()) out.push_back(p);
  if (cfg_.n_classes > 0)
    for (auto* p : head_.parameters()) out.push_back(p);
  return out;
}

template <typename T>
std::map<std::string, double> content_loss(IdentityComparator<T>& cmp, const Tensor<T>& a,
                                           const Tensor<T>& b,
                                           const std::vector<std::string>& layers) {
  require(a.shape() == b.shape(), ErrorCode::kShapeMismatch,
          "content_loss: shape " + a.shape().str() + " vs " + b.shape().str());
  std::map<std::string, double> out;
  int deepest = 0;
  for (const auto& l : layers) deepest = std::max(deepest, cmp.stage_index(l) + 1);
  if (layers.empty()) return out;
  auto fa = cmp.forward(a, deepest, false);
  auto fb = cmp.forward(b, deepest, false);
  for (const auto& l : layers) {
    const int i = cmp.stage_index(l);
    out[l] = mean_abs_diff(fa[i], fb[i]);
  }
  return out;
}

// ------------------------------------------------------------ weighting

double LossWeightState::update(const std::string& key, double observation) {
  // Floor keeps the average strictly positive so weights stay finite.
  const double obs = std::max(observation, 1e-12);
  auto it = ema.find(key);
  if (it == ema.end()) return ema[key] = obs;
  it->second = decay * it->second + (1.0 - decay) * obs;
  return it->second;
}

double LossWeightState::at(const std::string& key) const {
  auto it = ema.find(key);
  require(it != ema.end(), ErrorCode::kPrecondition, "no moving average for '" + key + "'");
  return it->second;
}

nlohmann::json LossWeightState::to_json() const {
  return {{"decay", decay},
          {"target_ratio_same", target_ratio_same},
          {"target_ratio_diff", target_ratio_diff},
          {"ema", ema}};
}

LossWeightState LossWeightState::from_json(const nlohmann::json& j) {
  LossWeightState s;
  s.decay = j.value("decay", s.decay);
  s.target_ratio_same = j.value("target_ratio_same", s.target_ratio_same);
  s.target_ratio_diff = j.value("target_ratio_diff", s.target_ratio_diff);
  if (j.contains("ema")) s.ema = j.at("ema").get<std::map<std::string, double>>();
  return s;
}

namespace {

// sign(a - b) / count, written into g.
template <typename T>
void add_abs_grad(const T* a, const T* b, std::size_t n, double scale, T* g) {
  const T s = T(scale / static_cast<double>(n));
  for (std::size_t i = 0; i < n; ++i) {
    const T d = a[i] - b[i];
    g[i] += d > 0 ? s : (d < 0 ? -s : T(0));
  }
}

template <typename T>
double abs_mean(const T* a, const T* b, std::size_t n) {
  double s = 0.0;
  for (std::size_t i = 0; i < n; ++i) s += std::abs(double(a[i]) - double(b[i]));
  return s / static_cast<double>(n);
}

}  // namespace

template <typename T>
Stage2Loss<T> stage2_loss(IdentityComparator<T>& cmp, const Tensor<T>& s_A, const Tensor<T>& d_A,
                          const Tensor<T>& g_dA, const Tensor<T>& g_dR, LossWeightState& state,
                          bool compute_grad) {
  require(g_dA.shape() == d_A.shape() && g_dR.shape() == s_A.shape() &&
              g_dA.shape() == g_dR.shape(),
          ErrorCode::kShapeMismatch, "stage2_loss: inconsistent frame shapes");
  const auto& same = low_high_layers();
  const auto& diff = high_layers();
  int deepest = 0;
  for (const auto& l : same) deepest = std::max(deepest, cmp.stage_index(l) + 1);
  for (const auto& l : diff) deepest = std::max(deepest, cmp.stage_index(l) + 1);

  // Generated frames go through the comparator as one recorded batch
  // [g_dA; g_dR], targets as [d_A; s_A].
  const int B = g_dA.batch();
  Tensor<T> gen = concat_batch<T>({&g_dA, &g_dR});
  Tensor<T> tgt = concat_batch<T>({&d_A, &s_A});
  auto fg = cmp.forward(gen, deepest, compute_grad);
  auto ft = cmp.forward(tgt, deepest, false);

  Stage2Loss<T> out;
  const double photo = photometric_l1(g_dA, d_A);
  out.raw["photometric"] = photo;
  auto half = [&](const Tensor<T>& t, int which) {
    const std::size_t per = t.size() / 2;
    return std::pair<const T*, std::size_t>{t.ptr() + which * per, per};
  };
  for (const auto& l : same) {
    const int i = cmp.stage_index(l);
    auto [pg, n] = half(fg[i], 0);
    out.raw["same." + l] = abs_mean(pg, half(ft[i], 0).first, n);
  }
  for (const auto& l : diff) {
    const int i = cmp.stage_index(l);
    auto [pg, n] = half(fg[i], 1);
    out.raw["diff." + l] = abs_mean(pg, half(ft[i], 1).first, n);
  }
  for (const auto& [k, v] : out.raw) state.update(k, v);

  const double ema_photo = state.at("photometric");
  std::map<std::string, double> weight;
  weight["photometric"] = 1.0;
  for (const auto& l : same)
    weight["same." + l] = state.target_ratio_same * ema_photo / state.at("same." + l);
  for (const auto& l : diff)
    weight["diff." + l] = state.target_ratio_diff * ema_photo / state.at("diff." + l);
  for (const auto& [k, v] : out.raw) {
    out.components[k] = weight[k] * v;
    out.total += out.components[k];
  }
  if (!compute_grad) return out;

  std::vector<Tensor<T>> grads(deepest);
  auto accumulate = [&](const std::string& l, int which, double w) {
    const int i = cmp.stage_index(l);
    if (grads[i].empty()) grads[i] = Tensor<T>(fg[i].shape());
    const std::size_t per = fg[i].size() / 2;
    add_abs_grad(fg[i].ptr() + which * per, ft[i].ptr() + which * per, per, w,
                 grads[i].ptr() + which * per);
  };
  for (const auto& l : same) accumulate(l, 0, weight["same." + l]);
  for (const auto& l : diff) accumulate(l, 1, weight["diff." + l]);
  Tensor<T> g_gen = cmp.backward(grads, false);
  out.grad_same = slice_batch(g_gen, 0, B);
  out.grad_other = slice_batch(g_gen, B, B);
  ops::add_inplace(out.grad_same, photometric_l1_grad(g_dA, d_A));
  return out;
}

// ------------------------------------------------------------ comparator training

namespace {

struct LabeledRef {
  FrameRef ref;
  int label = 0;
};

double accuracy(IdentityComparator<float>& cmp, FrameCache& cache,
                const std::vector<LabeledRef>& set) {
  if (set.empty()) return 0.0;
  int correct = 0;
  const int chunk = 32;
  for (std::size_t b = 0; b < set.size(); b += chunk) {
    std::vector<FrameRef> refs;
    for (std::size_t i = b; i < std::min(set.size(), b + chunk); ++i) refs.push_back(set[i].ref);
    Tensor<float> logits = cmp.logits(stack_frames(cache, refs), false);
    for (int n = 0; n < logits.batch(); ++n) {
      int best = 0;
      for (int c = 1; c < logits.channels(); ++c)
        if (logits(n, c, 0, 0) > logits(n, best, 0, 0)) best = c;
      correct += best == set[b + n].label;
    }
  }
  return static_cast<double>(correct) / static_cast<double>(set.size());
}

}  // namespace

ComparatorTrainResult train_identity_comparator(const DatasetIndex& index,
                                                const ComparatorTrainConfig& cfg,
                                                std::uint64_t seed) {
  const int K = static_cast<int>(index.identities.size());
  require(K >= 2, ErrorCode::kInvalidDataset,
          "comparator training needs at least 2 identities, got " + std::to_string(K));
  require(cfg.holdout_every >= 2 && cfg.batch_size >= 1 && cfg.steps >= 0,
          ErrorCode::kPrecondition, "invalid comparator training config");

  std::vector<LabeledRef> train, held;
  for (int i = 0; i < K; ++i)
    for (int v = 0; v < static_cast<int>(index.identities[i].videos.size()); ++v)
      for (int f = 0; f < static_cast<int>(index.identities[i].videos[v].frames.size()); ++f) {
        LabeledRef r{{i, v, f}, i};
        (f % cfg.holdout_every == cfg.holdout_every - 1 ? held : train).push_back(r);
      }

  std::mt19937_64 rng(seed);
  IdentityComparator<float> cmp(ComparatorConfig::standard(K));
  cmp.init(rng);
  auto params = cmp.parameters();
  std::vector<Tensor<float>> velocity;
  for (auto* p : params) velocity.emplace_back(p->value.shape());

  FrameCache cache(index);
  std::uniform_int_distribution<std::size_t> pick(0, train.size() - 1);
  for (int step = 0; step < cfg.steps; ++step) {
    std::vector<FrameRef> refs;
    std::vector<int> labels;
    for (int b = 0; b < cfg.batch_size; ++b) {
      const auto& r = train[pick(rng)];
      refs.push_back(r.ref);
      labels.push_back(r.label);
    }
    zero_grads(params);
    Tensor<float> logits = cmp.logits(stack_frames(cache, refs), true);
    // Softmax cross-entropy, averaged over the batch.
    Tensor<float> grad(logits.shape());
    double loss = 0.0;
    for (int n = 0; n < logits.batch(); ++n) {
      float mx = logits(n, 0, 0, 0);
      for (int c = 1; c < K; ++c) mx = std::max(mx, logits(n, c, 0, 0));
      double z = 0.0;
      for (int c = 0; c < K; ++c) z += std::exp(double(logits(n, c, 0, 0) - mx));
      loss += (std::log(z) - double(logits(n, labels[n], 0, 0) - mx)) / cfg.batch_size;
      for (int c = 0; c < K; ++c) {
        const double p = std::exp(double(logits(n, c, 0, 0) - mx)) / z;
        grad(n, c, 0, 0) = float((p - (c == labels[n] ? 1.0 : 0.0)) / cfg.batch_size);
      }
    }
    cmp.logits_backward(grad);
    if (cfg.on_step) cfg.on_step(step, loss);
    double norm = 0.0;
    for (auto* p : params)
      for (float g : p->grad.data()) norm += double(g) * g;
    norm = std::sqrt(norm);
    const float clip = norm > cfg.clip_norm ? float(cfg.clip_norm / norm) : 1.0f;
    for (std::size_t k = 0; k < params.size(); ++k) {
      auto& v = velocity[k];
      auto& p = *params[k];
      for (std::size_t i = 0; i < v.size(); ++i) {
        v[i] = float(cfg.momentum) * v[i] + clip * p.grad[i];
        p.value[i] -= float(cfg.lr) * v[i];
      }
    }
    require(params.front()->value.all_finite(), ErrorCode::kNonFinite,
            "comparator training diverged at step " + std::to_string(step));
  }

  ComparatorTrainResult out;
  out.train_accuracy = accuracy(cmp, cache, train);
  out.heldout_accuracy = accuracy(cmp, cache, held);
  for (const auto& id : index.identities) out.classes.push_back(id.id);
  cmp.drop_classifier();
  out.comparator = std::move(cmp);
  return out;
}

void save_comparator(const std::filesystem::path& path, IdentityComparator<float>& cmp,
                     const nlohmann::json& training_meta) {
  nlohmann::json header;
  header["comparator"] = to_json(cmp.config());
  header["training_meta"] = training_meta;
  write_container(path, kComparatorMagic, header, collect_tensors(cmp.parameters(), {}));
}

IdentityComparator<float> load_comparator(const std::filesystem::path& path,
                                          nlohmann::json* training_meta) {
  Container c = read_container(path, kComparatorMagic);
  IdentityComparator<float> cmp(comparator_config_from_json(c.manifest.at("comparator")));
  assign_tensors(c, cmp.parameters(), {});
  if (training_meta != nullptr)
    *training_meta = c.manifest.value("training_meta", nlohmann::json::object());
  return cmp;
}

#define X2FACE_INSTANTIATE(T)                                                                     \
  template double photometric_l1(const Tensor<T>&, const Tensor<T>&);                             \
  template Tensor<T> photometric_l1_grad(const Tensor<T>&, const Tensor<T>&);                     \
  template class IdentityComparator<T>;                                                           \
  template std::map<std::string, double> content_loss(IdentityComparator<T>&, const Tensor<T>&,   \
                                                      const Tensor<T>&,                           \
                                                      const std::vector<std::string>&);           \
  template Stage2Loss<T> stage2_loss(IdentityComparator<T>&, const Tensor<T>&, const Tensor<T>&,  \
                                     const Tensor<T>&, const Tensor<T>&, LossWeightState&, bool);

X2FACE_INSTANTIATE(float)
X2FACE_INSTANTIATE(double)
#undef X2FACE_INSTANTIATE

}  // namespace x2face
