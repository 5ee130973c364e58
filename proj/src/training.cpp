#include "x2face/training.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <set>

#include "x2face/checkpoint.hpp"
#include "x2face/image_io.hpp"

namespace x2face {

TrainConfig TrainConfig::for_stage(int stage) {
  TrainConfig c;
  c.stage = stage;
  if (stage == 2) {
    c.lr = 0.0001;
    c.flow_prior_steps = 0;
    c.max_steps = 1000;
  }
  return c;
}

void TrainConfig::validate() const {
  require(stage == 1 || stage == 2, ErrorCode::kPrecondition, "stage must be 1 or 2");
  require(lr >= 0 && std::isfinite(lr), ErrorCode::kPrecondition, "lr must be >= 0");
  require(momentum >= 0 && momentum < 1, ErrorCode::kPrecondition, "momentum must be in [0, 1)");
  require(batch_size >= 1, ErrorCode::kPrecondition, "batch_size must be >= 1");
  require(max_steps >= 0, ErrorCode::kPrecondition, "max_steps must be >= 0");
  require(eval_every >= 1, ErrorCode::kPrecondition, "eval_every must be >= 1");
  require(checkpoint_every >= 1, ErrorCode::kPrecondition, "checkpoint_every must be >= 1");
  require(plateau.window >= 1 && plateau.decay_factor > 1 && plateau.lr_floor >= 0,
          ErrorCode::kPrecondition, "invalid plateau settings");
  require(val_pairs >= 1, ErrorCode::kPrecondition, "val_pairs must be >= 1");
  require(flow_prior_steps >= 0 && flow_prior_lr >= 0, ErrorCode::kPrecondition,
          "invalid flow prior settings");
  require(blur_sigma >= 0 && std::isfinite(blur_sigma) && blur_steps >= 0,
          ErrorCode::kPrecondition, "invalid blur settings");
  require(transition_patience >= 1, ErrorCode::kPrecondition, "transition_patience must be >= 1");
}

nlohmann::json to_json(const TrainConfig& c) {
  return {{"stage", c.stage},
          {"lr", c.lr},
          {"momentum", c.momentum},
          {"batch_size", c.batch_size},
          {"max_steps", c.max_steps},
          {"eval_every", c.eval_every},
          {"plateau",
           {{"window", c.plateau.window},
            {"min_rel_improve", c.plateau.min_rel_improve},
            {"decay_factor", c.plateau.decay_factor},
            {"lr_floor", c.plateau.lr_floor}}},
          {"seed", c.seed},
          {"checkpoint_every", c.checkpoint_every},
          {"clip_norm", c.clip_norm},
          {"val_pairs", c.val_pairs},
          {"flow_prior_steps", c.flow_prior_steps},
          {"flow_prior_lr", c.flow_prior_lr},
          {"blur_sigma", c.blur_sigma},
          {"blur_steps", c.blur_steps},
          {"auto_transition", c.auto_transition},
          {"transition_patience", c.transition_patience}};
}

namespace {

template <typename V>
void take(const nlohmann::json& j, const char* key, V& out) {
  if (j.contains(key)) out = j.at(key).get<V>();
}

void reject_unknown(const nlohmann::json& j, const std::set<std::string>& known,
                    const std::string& where) {
  for (auto it = j.begin(); it != j.end(); ++it)
    require(known.count(it.key()) != 0, ErrorCode::kPrecondition,
            "unknown " + where + " field '" + it.key() + "'");
}

}  // namespace

TrainConfig train_config_from_json(const nlohmann::json& j, TrainConfig c) {
  require(j.is_object(), ErrorCode::kPrecondition, "train config must be a JSON object");
  const nlohmann::json defaults = to_json(c);
  std::set<std::string> known;
  for (auto it = defaults.begin(); it != defaults.end(); ++it) known.insert(it.key());
  reject_unknown(j, known, "train config");
  try {
    take(j, "stage", c.stage);
    take(j, "lr", c.lr);
    take(j, "momentum", c.momentum);
    take(j, "batch_size", c.batch_size);
    take(j, "max_steps", c.max_steps);
    take(j, "eval_every", c.eval_every);
    if (j.contains("plateau")) {
      const auto& p = j.at("plateau");
      reject_unknown(p, {"window", "min_rel_improve", "decay_factor", "lr_floor"}, "plateau");
      take(p, "window", c.plateau.window);
      take(p, "min_rel_improve", c.plateau.min_rel_improve);
      take(p, "decay_factor", c.plateau.decay_factor);
      take(p, "lr_floor", c.plateau.lr_floor);
    }
    take(j, "seed", c.seed);
    take(j, "checkpoint_every", c.checkpoint_every);
    take(j, "clip_norm", c.clip_norm);
    take(j, "val_pairs", c.val_pairs);
    take(j, "flow_prior_steps", c.flow_prior_steps);
    take(j, "flow_prior_lr", c.flow_prior_lr);
    take(j, "blur_sigma", c.blur_sigma);
    take(j, "blur_steps", c.blur_steps);
    take(j, "auto_transition", c.auto_transition);
    take(j, "transition_patience", c.transition_patience);
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCode::kPrecondition, std::string("train config: ") + e.what());
  }
  return c;
}

template <typename T>
void sgd_momentum_step(std::span<T> theta, std::span<const T> grad, std::span<T> velocity,
                       double lr, double momentum) {
  require(theta.size() == grad.size() && theta.size() == velocity.size(),
          ErrorCode::kShapeMismatch, "sgd_momentum_step: length mismatch");
  for (std::size_t i = 0; i < grad.size(); ++i)
    require(std::isfinite(grad[i]), ErrorCode::kNonFinite,
            "non-finite gradient at element " + std::to_string(i));
  for (std::size_t i = 0; i < theta.size(); ++i) {
    velocity[i] = T(momentum) * velocity[i] + grad[i];
    theta[i] -= T(lr) * velocity[i];
  }
}

SgdMomentum::SgdMomentum(std::vector<Parameter<float>*> params) : params_(std::move(params)) {
  for (auto* p : params_) velocity_.emplace_back(p->value.shape());
}

void SgdMomentum::step(double lr, double momentum) {
  for (auto* p : params_)
    require(p->grad.all_finite(), ErrorCode::kNonFinite, "non-finite gradient in " + p->name);
  for (std::size_t k = 0; k < params_.size(); ++k)
    sgd_momentum_step<float>(params_[k]->value.data(), params_[k]->grad.data(),
                             velocity_[k].data(), lr, momentum);
}

void SgdMomentum::reset() {
  for (auto& v : velocity_) v.zero();
}

double SgdMomentum::grad_norm() const {
  double s = 0.0;
  for (auto* p : params_)
    for (float g : p->grad.data()) s += double(g) * g;
  return std::sqrt(s);
}

void SgdMomentum::scale_grads(double factor) {
  for (auto* p : params_)
    for (float& g : p->grad.data()) g = float(g * factor);
}

Tensor<float> gaussian_blur(const Tensor<float>& x, double sigma) {
  if (sigma <= 0) return x;
  const int r = static_cast<int>(std::ceil(3 * sigma));
  std::vector<float> k(2 * r + 1);
  double sum = 0;
  for (int i = -r; i <= r; ++i) sum += k[i + r] = float(std::exp(-0.5 * i * i / (sigma * sigma)));
  for (float& v : k) v = float(v / sum);
  const int H = x.height(), W = x.width();
  Tensor<float> tmp(x.shape()), out(x.shape());
  for (int n = 0; n < x.batch(); ++n)
    for (int c = 0; c < x.channels(); ++c) {
      const float* src = x.plane(n, c);
      float* t = tmp.plane(n, c);
      float* o = out.plane(n, c);
      for (int y = 0; y < H; ++y)
        for (int xx = 0; xx < W; ++xx) {
          float a = 0;
          for (int i = -r; i <= r; ++i) a += k[i + r] * src[y * W + std::clamp(xx + i, 0, W - 1)];
          t[y * W + xx] = a;
        }
      for (int y = 0; y < H; ++y)
        for (int xx = 0; xx < W; ++xx) {
          float a = 0;
          for (int i = -r; i <= r; ++i) a += k[i + r] * t[std::clamp(y + i, 0, H - 1) * W + xx];
          o[y * W + xx] = a;
        }
    }
  return out;
}

bool plateaued(std::span<const double> history, int window, double min_rel_improve) {
  const int n = static_cast<int>(history.size());
  if (n <= window) return false;
  const double prior = *std::min_element(history.begin(), history.end() - window);
  const double recent = *std::min_element(history.end() - window, history.end());
  return !(recent < prior * (1.0 - min_rel_improve));
}

PlateauDecision lr_plateau_step(std::span<const double> history, const PlateauConfig& cfg,
                                double lr) {
  if (lr <= cfg.lr_floor || !plateaued(history, cfg.window, cfg.min_rel_improve))
    return {lr, false};
  return {std::max(lr / cfg.decay_factor, cfg.lr_floor), true};
}

double validation_l1(X2FaceModel<float>& model, FrameCache& cache,
                     const std::vector<PairSample>& pairs, int batch_size) {
  double total = 0.0;
  for (std::size_t b = 0; b < pairs.size(); b += batch_size) {
    std::vector<FrameRef> s, d;
    for (std::size_t i = b; i < std::min(pairs.size(), b + batch_size); ++i) {
      s.push_back(pairs[i].source);
      d.push_back(pairs[i].driving);
    }
    Tensor<float> S = stack_frames(cache, s), D = stack_frames(cache, d);
    auto trace = train_forward(model, S, D, Mode::kInfer);
    total += mean_abs_diff(trace.generated, D) * static_cast<double>(s.size());
  }
  return total / static_cast<double>(pairs.size());
}

namespace {

struct Batch {
  Tensor<float> source;
  Tensor<float> driving;  // stage I: d (B); stage II: [d_A; d_R] (2B)
};

Batch sample_batch(const DatasetIndex& index, FrameCache& cache, int stage, int B,
                   std::mt19937_64& rng) {
  std::vector<FrameRef> s, d, r;
  for (int b = 0; b < B; ++b) {
    if (stage == 1) {
      auto p = sample_pair(index, Split::kTrain, rng);
      s.push_back(p.source);
      d.push_back(p.driving);
    } else {
      auto t = sample_triplet(index, Split::kTrain, rng);
      s.push_back(t.source);
      d.push_back(t.driving_same);
      r.push_back(t.driving_other);
    }
  }
  d.insert(d.end(), r.begin(), r.end());
  return {stack_frames(cache, s), stack_frames(cache, d)};
}

// Mean squared distance of both flow heads to the identity grid; fills grads.
double flow_prior(X2FaceModel<float>& model, const TrainingTrace<float>& trace) {
  const int n = trace.embed_flow.batch(), r = model.config.resolution;
  Tensor<float> id = channels_from_grid(identity_grid<float>(n, r, r));
  Tensor<float> fe = channels_from_grid(trace.embed_flow);
  Tensor<float> fd = channels_from_grid(trace.drive_flow);
  Tensor<float> ge(fe.shape()), gd(fd.shape());
  double le = 0.0, ld = 0.0;
  const float inv = 1.0f / static_cast<float>(fe.size());
  for (std::size_t i = 0; i < fe.size(); ++i) {
    const float de = fe[i] - id[i], dd = fd[i] - id[i];
    ge[i] = 2 * de * inv;
    gd[i] = 2 * dd * inv;
    le += double(de) * de;
    ld += double(dd) * dd;
  }
  model.embedding.backward(ge);
  model.driving.backward_encode(model.driving.backward_decode(gd));
  return (le + ld) / static_cast<double>(fe.size());
}

// Blur sigma for a stage-I step; photometric steps are counted after the prior.
double blur_at(const TrainConfig& cfg, int step) {
  if (cfg.blur_sigma <= 0 || cfg.blur_steps <= 0) return 0.0;
  const double t = double(step - cfg.flow_prior_steps) / cfg.blur_steps;
  return t >= 1.0 ? 0.0 : cfg.blur_sigma * (1.0 - t);
}

nlohmann::json meta(const TrainConfig& cfg, int stage, int step, double lr, double val) {
  return {{"stage", stage}, {"step", step}, {"lr", lr}, {"seed", cfg.seed}, {"val_l1", val}};
}

}  // namespace

TrainResult train(X2FaceModel<float>& model, const DatasetIndex& index, const TrainConfig& cfg,
                  const TrainOptions& options) {
  cfg.validate();
  int stage = cfg.stage;
  require(stage == 1 || options.comparator != nullptr, ErrorCode::kPrecondition,
          "stage 2 training needs an identity comparator");
  require(!cfg.auto_transition || options.comparator != nullptr, ErrorCode::kPrecondition,
          "auto transition needs an identity comparator");
  require(!index.members(Split::kTrain).empty(), ErrorCode::kInvalidDataset,
          "training split is empty");
  require(!index.members(Split::kVal).empty(), ErrorCode::kInvalidDataset,
          "validation split is empty");
  if (stage == 2 || cfg.auto_transition)
    require(index.members(Split::kTrain).size() >= 2, ErrorCode::kInvalidDataset,
            "stage 2 needs at least 2 training identities");
  {
    const auto& first = index.identities.at(index.members(Split::kTrain).front()).videos.at(0);
    check_frame(read_png(first.frames.at(0)), model.config, "dataset frame");
  }

  std::ofstream metrics;
  if (options.metrics_out) {
    metrics.open(*options.metrics_out, std::ios::trunc);
    require(static_cast<bool>(metrics), ErrorCode::kIo,
            "cannot write metrics log " + options.metrics_out->string());
  }
  auto emit = [&](const nlohmann::json& rec) {
    if (metrics.is_open()) {
      metrics << rec.dump() << '\n';
      metrics.flush();
    }
    if (options.on_record) options.on_record(rec);
  };

  FrameCache cache(index);
  std::mt19937_64 val_rng(cfg.seed ^ 0x9e3779b97f4a7c15ULL);
  std::vector<PairSample> val_pairs;
  for (int i = 0; i < cfg.val_pairs; ++i) val_pairs.push_back(sample_pair(index, Split::kVal, val_rng));
  std::mt19937_64 rng(cfg.seed);

  TrainResult result;
  result.loss_weights = options.loss_weights.value_or(LossWeightState{});
  SgdMomentum opt(model.parameters());
  double lr = cfg.lr;
  std::vector<double> since_decay;  // plateau window restarts after a decay
  std::vector<double> since_stage;
  std::map<std::string, double> train_sum;
  int train_count = 0;
  int last_ckpt_step = -1;

  auto save = [&](int step, double val) {
    if (!options.checkpoint_out) return;
    nlohmann::json m = meta(cfg, stage, step, lr, val);
    if (stage == 2) m["loss_weights"] = result.loss_weights.to_json();
    save_checkpoint(*options.checkpoint_out, model, m);
    last_ckpt_step = step;
  };

  auto evaluate = [&](int step) {
    const double val = validation_l1(model, cache, val_pairs);
    nlohmann::json train_json = nlohmann::json::object();
    for (const auto& [k, v] : train_sum) train_json[k] = v / std::max(train_count, 1);
    train_sum.clear();
    train_count = 0;
    emit({{"step", step}, {"stage", stage}, {"lr", lr}, {"train", train_json}, {"val_l1", val}});
    result.val_history.push_back(val);
    if (step == 0) result.initial_val_l1 = val;
    result.final_val_l1 = val;
    return val;
  };

  evaluate(0);
  for (int step = 1; step <= cfg.max_steps; ++step) {
    Batch batch = sample_batch(index, cache, stage, cfg.batch_size, rng);
    const bool prior_phase = stage == 1 && step <= cfg.flow_prior_steps;
    const double sigma = stage == 1 && !prior_phase ? blur_at(cfg, step) : 0.0;
    if (sigma > 0) {
      batch.source = gaussian_blur(batch.source, sigma);
      batch.driving = gaussian_blur(batch.driving, sigma);
    }
    zero_grads(model.parameters());
    auto trace = train_forward(model, batch.source, batch.driving, Mode::kTrain);
    double loss = 0.0;
    std::map<std::string, double> components;
    if (prior_phase) {
      loss = flow_prior(model, trace);
      components["flow_prior"] = loss;
    } else if (stage == 1) {
      loss = photometric_l1(trace.generated, batch.driving);
      components["photometric"] = loss;
      train_backward(model, trace, photometric_l1_grad(trace.generated, batch.driving));
    } else {
      const int B = cfg.batch_size;
      Tensor<float> g_dA = slice_batch(trace.generated, 0, B);
      Tensor<float> g_dR = slice_batch(trace.generated, B, B);
      Tensor<float> d_A = slice_batch(batch.driving, 0, B);
      auto s2 = stage2_loss(*options.comparator, batch.source, d_A, g_dA, g_dR,
                            result.loss_weights, true);
      loss = s2.total;
      components = s2.components;
      train_backward(model, trace, concat_batch<float>({&s2.grad_same, &s2.grad_other}));
    }
    if (!std::isfinite(loss)) {
      std::string where = last_ckpt_step >= 0
                              ? "; last good checkpoint is step " + std::to_string(last_ckpt_step)
                              : "; no checkpoint was written";
      fail(ErrorCode::kNonFinite,
           "non-finite loss at step " + std::to_string(step) + where);
    }
    const double norm = opt.grad_norm();
    components["grad_norm"] = norm;
    if (cfg.clip_norm > 0 && std::isfinite(norm) && norm > cfg.clip_norm)
      opt.scale_grads(cfg.clip_norm / norm);
    opt.step(prior_phase ? cfg.flow_prior_lr : lr, cfg.momentum);
    if (stage == 1 && step == cfg.flow_prior_steps) opt.reset();
    for (const auto& [k, v] : components) train_sum[k] += v;
    ++train_count;
    result.steps = step;

    const bool last = step == cfg.max_steps;
    if (step % cfg.eval_every == 0 || last) {
      const double val = evaluate(step);
      if (!prior_phase && sigma == 0.0) {
        since_decay.push_back(val);
        since_stage.push_back(val);
        const PlateauDecision d = lr_plateau_step(since_decay, cfg.plateau, lr);
        if (d.decayed) {
          emit({{"event", "lr_decay"},
                {"step", step},
                {"from", lr},
                {"to", d.lr},
                {"window", std::vector<double>(since_decay.end() - cfg.plateau.window - 1,
                                               since_decay.end())}});
          lr = d.lr;
          since_decay.clear();
        }
        if (cfg.auto_transition && stage == 1 &&
            plateaued(since_stage, cfg.transition_patience, cfg.plateau.min_rel_improve)) {
          save(step, val);
          stage = 2;
          lr = TrainConfig::for_stage(2).lr;
          opt.reset();
          since_decay.clear();
          since_stage.clear();
          emit({{"event", "stage_transition"}, {"step", step}, {"lr", lr}});
        }
      }
    }
    if (step % cfg.checkpoint_every == 0 || last) save(step, result.final_val_l1);
  }
  if (cfg.max_steps == 0) save(0, result.final_val_l1);
  result.final_stage = stage;
  result.final_lr = lr;
  return result;
}

TrainResult train_stage1(X2FaceModel<float>& model, const DatasetIndex& index,
                         const TrainConfig& cfg, const TrainOptions& options) {
  require(cfg.stage == 1, ErrorCode::kPrecondition, "train_stage1 needs stage = 1");
  return train(model, index, cfg, options);
}

TrainResult train_stage2(X2FaceModel<float>& model, const DatasetIndex& index,
                         const TrainConfig& cfg, IdentityComparator<float>& comparator,
                         TrainOptions options) {
  require(cfg.stage == 2, ErrorCode::kPrecondition, "train_stage2 needs stage = 2");
  options.comparator = &comparator;
  return train(model, index, cfg, options);
}

template void sgd_momentum_step(std::span<float>, std::span<const float>, std::span<float>, double,
                                double);
template void sgd_momentum_step(std::span<double>, std::span<const double>, std::span<double>,
                                double, double);

}  // namespace x2face
