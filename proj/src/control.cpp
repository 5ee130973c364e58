#include "x2face/control.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <random>

#include "x2face/image_io.hpp"

namespace x2face {
namespace {

constexpr double kPi = 3.14159265358979323846;

struct Standardizer {
  Eigen::RowVectorXd mean;
  Eigen::RowVectorXd scale;  // population std, 1 where the column is constant

  static Standardizer fit(const Mat& x) {
    Standardizer s;
    s.mean = x.colwise().mean();
    s.scale = ((x.rowwise() - s.mean).array().square().colwise().mean()).sqrt().matrix();
    for (int j = 0; j < s.scale.size(); ++j)
      if (!(s.scale[j] > 1e-12)) s.scale[j] = 1.0;
    return s;
  }
  Mat apply(const Mat& x) const {
    return ((x.rowwise() - mean).array().rowwise() / scale.array()).matrix();
  }
};

Mat with_ones(const Mat& x) {
  Mat z(x.rows(), x.cols() + 1);
  z << x, Mat::Ones(x.rows(), 1);
  return z;
}

double mean_abs(const Mat& r) { return r.size() == 0 ? 0.0 : r.cwiseAbs().mean(); }

Mat sign_of(const Mat& r) {
  return r.unaryExpr([](double v) { return v > 0 ? 1.0 : (v < 0 ? -1.0 : 0.0); });
}

void check_pairs(const Mat& x, const Mat& y, const char* what) {
  require(x.rows() >= 2, ErrorCode::kPrecondition,
          std::string(what) + " needs at least 2 pairs, got " + std::to_string(x.rows()));
  require(x.rows() == y.rows(), ErrorCode::kShapeMismatch,
          std::string(what) + ": input and target counts differ");
  require(x.allFinite() && y.allFinite(), ErrorCode::kNonFinite,
          std::string(what) + ": non-finite data");
}

void rank_warning(const Mat& xs, FitReport* report) {
  if (report == nullptr || xs.cols() == 0) return;
  Eigen::CompleteOrthogonalDecomposition<Mat> cod(xs.rowwise() - xs.colwise().mean());
  const Eigen::Index full = std::min<Eigen::Index>(xs.rows() - 1, xs.cols());
  if (cod.rank() < full)
    report->warnings.push_back("rank-deficient design: rank " + std::to_string(cod.rank()) +
                               " of " + std::to_string(full));
}

double cosine_lr(double lr, int t, int total) {
  return total <= 1 ? lr : 0.5 * lr * (1.0 + std::cos(kPi * t / static_cast<double>(total)));
}

std::vector<std::vector<int>> minibatches(int n, int batch, int min_size, std::mt19937_64& rng) {
  std::vector<int> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::shuffle(order.begin(), order.end(), rng);
  std::vector<std::vector<int>> out;
  for (int b = 0; b < n; b += batch) {
    std::vector<int> idx(order.begin() + b, order.begin() + std::min(n, b + batch));
    if (static_cast<int>(idx.size()) >= min_size) out.push_back(std::move(idx));
  }
  return out;
}

Mat rows(const Mat& m, const std::vector<int>& idx) {
  Mat out(idx.size(), m.cols());
  for (std::size_t i = 0; i < idx.size(); ++i) out.row(i) = m.row(idx[i]);
  return out;
}

}  // namespace

// ------------------------------------------------------------ f_{v->p}

VecToPoseMap fit_v_to_p(const Mat& vectors, const Mat& poses, const LinearFitConfig& cfg,
                        FitReport* report) {
  check_pairs(vectors, poses, "fit_v_to_p");
  const int n = static_cast<int>(vectors.rows()), d = static_cast<int>(vectors.cols());
  const int P = static_cast<int>(poses.cols());
  const Standardizer sx = Standardizer::fit(vectors), sy = Standardizer::fit(poses);
  const Mat X = sx.apply(vectors), Y = sy.apply(poses);
  rank_warning(X, report);
  const Mat Z = with_ones(X);

  // Least-squares start, then L1 refinement; the best iterate is kept.
  Mat theta = Z.completeOrthogonalDecomposition().solve(Y);
  Mat best = theta;
  double best_loss = mean_abs(Z * theta - Y);
  Mat vel = Mat::Zero(theta.rows(), theta.cols());
  std::mt19937_64 rng(cfg.seed);
  for (int e = 0; e < cfg.epochs; ++e) {
    const double lr = cosine_lr(cfg.lr, e, cfg.epochs);
    for (const auto& idx : minibatches(n, cfg.batch_size, 1, rng)) {
      const Mat Zb = rows(Z, idx);
      const Mat G = Zb.transpose() * sign_of(Zb * theta - rows(Y, idx)) /
                    static_cast<double>(idx.size() * P);
      vel = cfg.momentum * vel + G;
      theta -= lr * vel;
    }
    const double loss = mean_abs(Z * theta - Y);
    if (loss < best_loss) {
      best_loss = loss;
      best = theta;
    }
  }

  VecToPoseMap m;
  m.weight.resize(P, d);
  m.bias.resize(P);
  for (int k = 0; k < P; ++k) {
    double b = best(d, k);
    for (int j = 0; j < d; ++j) {
      m.weight(k, j) = sy.scale[k] * best(j, k) / sx.scale[j];
      b -= best(j, k) * sx.mean[j] / sx.scale[j];
    }
    m.bias[k] = sy.mean[k] + sy.scale[k] * b;
  }
  if (report != nullptr)
    report->train_l1 = mean_abs((vectors * m.weight.transpose()).rowwise() +
                                m.bias.transpose() - poses);
  return m;
}

Vec predict_pose(const VecToPoseMap& map, const Vec& v) {
  require(map.weight.size() > 0, ErrorCode::kNotFitted, "vector-to-pose map is not fitted");
  require(v.size() == map.vec_dim(), ErrorCode::kShapeMismatch,
          "driving vector has " + std::to_string(v.size()) + " entries, map expects " +
              std::to_string(map.vec_dim()));
  return map.weight * v + map.bias;
}

// ------------------------------------------------------------ f_{p->v}

Mat PoseToVecMap::linear_part() const {
  const Vec s = gamma.array() / (running_var.array() + eps).sqrt();
  return s.asDiagonal() * weight;
}

Vec PoseToVecMap::constant_term() const {
  const Vec s = gamma.array() / (running_var.array() + eps).sqrt();
  return (s.array() * (bias - running_mean).array()).matrix() + beta;
}

Vec PoseToVecMap::apply(const Vec& p) const {
  require(weight.size() > 0, ErrorCode::kNotFitted, "pose-to-vector map is not fitted");
  require(p.size() == pose_dim(), ErrorCode::kShapeMismatch,
          "pose has " + std::to_string(p.size()) + " entries, map expects " +
              std::to_string(pose_dim()));
  const Vec h = weight * p + bias;
  return (gamma.array() * (h - running_mean).array() / (running_var.array() + eps).sqrt())
             .matrix() +
         beta;
}

PoseToVecMap PoseToVecMap::affine(const Mat& m, const Vec& c) {
  PoseToVecMap f;
  f.weight = m;
  f.bias = c;
  f.gamma = Vec::Ones(m.rows());
  f.beta = Vec::Zero(m.rows());
  f.running_mean = Vec::Zero(m.rows());
  f.running_var = Vec::Ones(m.rows());
  f.eps = 0.0;
  return f;
}

namespace {

struct BnParams {
  Mat W;  // (V, P)
  Vec b, gamma, beta, rm, rv;
};

}  // namespace

PoseToVecMap fit_p_to_v(const Mat& poses, const Mat& vectors, const LinearFitConfig& cfg,
                        FitReport* report) {
  check_pairs(poses, vectors, "fit_p_to_v");
  const int n = static_cast<int>(poses.rows()), P = static_cast<int>(poses.cols());
  const int V = static_cast<int>(vectors.cols());
  constexpr double eps = 1e-5, bn_momentum = 0.1;
  const Standardizer sx = Standardizer::fit(poses), sy = Standardizer::fit(vectors);
  const Mat X = sx.apply(poses), Y = sy.apply(vectors);
  rank_warning(X, report);

  // Start from least squares with batch norm set to reproduce it.
  const Mat theta = with_ones(X).completeOrthogonalDecomposition().solve(Y);
  BnParams q;
  q.W = theta.topRows(P).transpose();
  q.b = Vec::Zero(V);
  const Mat H0 = X * q.W.transpose();
  q.rm = H0.colwise().mean().transpose();
  q.rv = Vec::Ones(V);
  q.gamma.resize(V);
  for (int j = 0; j < V; ++j) {
    const double var = (H0.col(j).array() - q.rm[j]).square().mean();
    q.rv[j] = n > 1 ? var * n / (n - 1) : var;
    q.gamma[j] = std::sqrt(var + eps);
  }
  q.beta = theta.row(P).transpose() + q.rm;

  BnParams vel{Mat::Zero(V, P), Vec::Zero(V), Vec::Zero(V), Vec::Zero(V), {}, {}};
  std::mt19937_64 rng(cfg.seed);
  const int batch = std::max(2, std::min(cfg.batch_size, n));
  for (int e = 0; e < cfg.epochs; ++e) {
    const double lr = cosine_lr(cfg.lr, e, cfg.epochs);
    for (const auto& idx : minibatches(n, batch, 2, rng)) {
      const Mat Xb = rows(X, idx), Yb = rows(Y, idx);
      const double m = static_cast<double>(idx.size());
      const Mat H = (Xb * q.W.transpose()).rowwise() + q.b.transpose();
      const Eigen::RowVectorXd mu = H.colwise().mean();
      const Mat C = H.rowwise() - mu;
      const Eigen::RowVectorXd var = C.array().square().colwise().mean();
      const Eigen::RowVectorXd inv = (var.array() + eps).rsqrt();
      const Mat xhat = (C.array().rowwise() * inv.array()).matrix();
      const Mat out = ((xhat.array().rowwise() * q.gamma.transpose().array()).matrix())
                          .rowwise() + q.beta.transpose();
      const Mat dY = sign_of(out - Yb) / (m * V);
      const Vec dgamma = (dY.array() * xhat.array()).colwise().sum().transpose();
      const Vec dbeta = dY.colwise().sum().transpose();
      const Mat dxhat = (dY.array().rowwise() * q.gamma.transpose().array()).matrix();
      const Eigen::RowVectorXd s1 = dxhat.colwise().sum();
      const Eigen::RowVectorXd s2 = (dxhat.array() * xhat.array()).colwise().sum();
      const Mat dH = (((m * dxhat.array()).rowwise() - s1.array()) -
                      xhat.array().rowwise() * s2.array())
                         .rowwise() * (inv.array() / m);
      const Mat dW = dH.transpose() * Xb;
      const Vec db = dH.colwise().sum().transpose();

      vel.W = cfg.momentum * vel.W + dW;
      vel.b = cfg.momentum * vel.b + db;
      vel.gamma = cfg.momentum * vel.gamma + dgamma;
      vel.beta = cfg.momentum * vel.beta + dbeta;
      q.W -= lr * vel.W;
      q.b -= lr * vel.b;
      q.gamma -= lr * vel.gamma;
      q.beta -= lr * vel.beta;
      const Eigen::RowVectorXd unbiased = var * (m / std::max(m - 1.0, 1.0));
      q.rm = (1 - bn_momentum) * q.rm + bn_momentum * mu.transpose();
      q.rv = (1 - bn_momentum) * q.rv + bn_momentum * unbiased.transpose();
    }
  }
  // Freeze the running statistics at the full-data statistics of the final
  // linear layer so minibatch noise does not leak into inference.
  {
    const Mat H = (X * q.W.transpose()).rowwise() + q.b.transpose();
    q.rm = H.colwise().mean().transpose();
    for (int j = 0; j < V; ++j)
      q.rv[j] = (H.col(j).array() - q.rm[j]).square().sum() / std::max(n - 1, 1);
  }

  PoseToVecMap f;
  f.eps = eps;
  f.weight = q.W * (1.0 / sx.scale.array()).matrix().asDiagonal();
  f.bias = q.b - f.weight * sx.mean.transpose();
  f.running_mean = q.rm;
  f.running_var = q.rv;
  f.gamma = (q.gamma.array() * sy.scale.transpose().array()).matrix();
  f.beta = (q.beta.array() * sy.scale.transpose().array()).matrix() + sy.mean.transpose();
  if (report != nullptr) {
    Mat pred(n, V);
    for (int i = 0; i < n; ++i) pred.row(i) = f.apply(poses.row(i).transpose()).transpose();
    report->train_l1 = mean_abs(pred - vectors);
  }
  return f;
}

// ------------------------------------------------------------ f_{a->v}

AudioToVecMap fit_a_to_v(const Mat& audio, const Mat& vectors, FitReport* report) {
  require(audio.rows() >= 1, ErrorCode::kPrecondition, "fit_a_to_v needs at least one pair");
  require(audio.rows() == vectors.rows(), ErrorCode::kShapeMismatch,
          "fit_a_to_v: feature and vector counts differ");
  require(audio.allFinite() && vectors.allFinite(), ErrorCode::kNonFinite,
          "fit_a_to_v: non-finite data");
  const int n = static_cast<int>(audio.rows()), A = static_cast<int>(audio.cols());
  AudioToVecMap m;
  m.mu = audio.colwise().mean().transpose();
  m.sigma.resize(A);
  m.kept.assign(A, true);
  std::vector<int> cols;
  for (int j = 0; j < A; ++j) {
    m.sigma[j] = std::sqrt((audio.col(j).array() - m.mu[j]).square().mean());
    if (!(m.sigma[j] > 1e-12 * std::max(1.0, std::abs(m.mu[j])))) {
      m.kept[j] = false;
      m.sigma[j] = 1.0;
      if (report != nullptr)
        report->warnings.push_back("audio feature " + std::to_string(j) +
                                   " has zero variance; dropped");
    } else {
      cols.push_back(j);
    }
  }
  const int k = static_cast<int>(cols.size());
  Mat Z(n, k + 1);
  for (int c = 0; c < k; ++c)
    Z.col(c) = (audio.col(cols[c]).array() - m.mu[cols[c]]) / m.sigma[cols[c]];
  Z.col(k).setOnes();
  // Normal equations; the orthogonal decomposition yields the minimum-norm
  // solution when Z^T Z is singular.
  const Mat G = Z.transpose() * Z;
  const Mat rhs = Z.transpose() * vectors;
  const Mat theta = G.completeOrthogonalDecomposition().solve(rhs);
  m.weight = Mat::Zero(vectors.cols(), A);
  for (int c = 0; c < k; ++c) m.weight.col(cols[c]) = theta.row(c).transpose();
  m.bias = theta.row(k).transpose();
  if (report != nullptr) report->train_l1 = mean_abs(Z * theta - vectors);
  return m;
}

Vec apply_a_to_v(const AudioToVecMap& map, const Vec& a, bool normalize) {
  require(map.weight.size() > 0, ErrorCode::kNotFitted, "audio-to-vector map is not fitted");
  require(a.size() == map.audio_dim(), ErrorCode::kShapeMismatch,
          "audio feature has " + std::to_string(a.size()) + " entries, map expects " +
              std::to_string(map.audio_dim()));
  const Vec x = normalize ? Vec((a - map.mu).array() / map.sigma.array()) : a;
  return map.weight * x + map.bias;
}

// ------------------------------------------------------------ drive equations

Vec pose_drive_vector(const Vec& v_source, const PoseToVecMap& f_pv, const VecToPoseMap& f_vp,
                      const Vec& p_driving) {
  const Vec p_source = predict_pose(f_vp, v_source);
  require(p_driving.size() == p_source.size(), ErrorCode::kShapeMismatch,
          "pose has " + std::to_string(p_driving.size()) + " entries, expected " +
              std::to_string(p_source.size()));
  return v_source + f_pv.apply(p_driving - p_source);
}

Vec audio_drive_vector(const Vec& v_source, const AudioToVecMap& f_av, const VecToPoseMap& f_vp,
                       const PoseToVecMap& f_pv, const Vec& a_driving, const Vec& a_source) {
  const Vec p_source = predict_pose(f_vp, v_source);
  const Vec va_d = apply_a_to_v(f_av, a_driving, false);
  const Vec va_s = apply_a_to_v(f_av, a_source, false);
  const Vec p_audio = predict_pose(f_vp, va_d);
  return v_source + va_d - va_s + f_pv.apply(p_audio - p_source);
}

// ------------------------------------------------------------ persistence

namespace {

nlohmann::json vec_json(const Vec& v) { return std::vector<double>(v.data(), v.data() + v.size()); }

Vec json_vec(const nlohmann::json& j) {
  const auto v = j.get<std::vector<double>>();
  return Eigen::Map<const Vec>(v.data(), static_cast<Eigen::Index>(v.size()));
}

nlohmann::json mat_json(const Mat& m) {
  std::vector<double> out;
  for (int i = 0; i < m.rows(); ++i)
    for (int j = 0; j < m.cols(); ++j) out.push_back(m(i, j));
  return out;
}

Mat json_mat(const nlohmann::json& j, int rows, int cols) {
  const auto v = j.get<std::vector<double>>();
  require(v.size() == static_cast<std::size_t>(rows) * cols, ErrorCode::kShapeMismatch,
          "map weight has " + std::to_string(v.size()) + " entries, expected " +
              std::to_string(rows * cols));
  Mat m(rows, cols);
  for (int i = 0; i < rows; ++i)
    for (int j = 0; j < cols; ++j) m(i, j) = v[static_cast<std::size_t>(i) * cols + j];
  return m;
}

}  // namespace

nlohmann::json to_json(const VecToPoseMap& m) {
  return {{"kind", "v_to_p"},
          {"pose_dim", m.pose_dim()},
          {"vec_dim", m.vec_dim()},
          {"weight", mat_json(m.weight)},
          {"bias", vec_json(m.bias)}};
}

nlohmann::json to_json(const PoseToVecMap& m) {
  return {{"kind", "p_to_v"},
          {"pose_dim", m.pose_dim()},
          {"vec_dim", m.vec_dim()},
          {"weight", mat_json(m.weight)},
          {"bias", vec_json(m.bias)},
          {"batchnorm",
           {{"gamma", vec_json(m.gamma)},
            {"beta", vec_json(m.beta)},
            {"running_mean", vec_json(m.running_mean)},
            {"running_var", vec_json(m.running_var)},
            {"eps", m.eps}}}};
}

nlohmann::json to_json(const AudioToVecMap& m) {
  std::vector<int> dropped;
  for (int j = 0; j < static_cast<int>(m.kept.size()); ++j)
    if (!m.kept[j]) dropped.push_back(j);
  return {{"kind", "a_to_v"},
          {"audio_dim", m.audio_dim()},
          {"vec_dim", m.vec_dim()},
          {"weight", mat_json(m.weight)},
          {"bias", vec_json(m.bias)},
          {"standardization", {{"mu", vec_json(m.mu)}, {"sigma", vec_json(m.sigma)}}},
          {"dropped_features", dropped}};
}

nlohmann::json to_json(const ControlMaps& maps) {
  nlohmann::json list = nlohmann::json::array();
  if (maps.v_to_p) list.push_back(to_json(*maps.v_to_p));
  if (maps.p_to_v) list.push_back(to_json(*maps.p_to_v));
  if (maps.a_to_v) list.push_back(to_json(*maps.a_to_v));
  return {{"maps", list}};
}

ControlMaps control_maps_from_json(const nlohmann::json& j) {
  ControlMaps out;
  try {
    for (const auto& m : j.at("maps")) {
      const std::string kind = m.at("kind").get<std::string>();
      if (kind == "v_to_p") {
        VecToPoseMap f;
        const int P = m.at("pose_dim").get<int>(), V = m.at("vec_dim").get<int>();
        f.weight = json_mat(m.at("weight"), P, V);
        f.bias = json_vec(m.at("bias"));
        out.v_to_p = std::move(f);
      } else if (kind == "p_to_v") {
        PoseToVecMap f;
        const int P = m.at("pose_dim").get<int>(), V = m.at("vec_dim").get<int>();
        f.weight = json_mat(m.at("weight"), V, P);
        f.bias = json_vec(m.at("bias"));
        const auto& bn = m.at("batchnorm");
        f.gamma = json_vec(bn.at("gamma"));
        f.beta = json_vec(bn.at("beta"));
        f.running_mean = json_vec(bn.at("running_mean"));
        f.running_var = json_vec(bn.at("running_var"));
        f.eps = bn.value("eps", 1e-5);
        out.p_to_v = std::move(f);
      } else if (kind == "a_to_v") {
        AudioToVecMap f;
        const int A = m.at("audio_dim").get<int>(), V = m.at("vec_dim").get<int>();
        f.weight = json_mat(m.at("weight"), V, A);
        f.bias = json_vec(m.at("bias"));
        f.mu = json_vec(m.at("standardization").at("mu"));
        f.sigma = json_vec(m.at("standardization").at("sigma"));
        f.kept.assign(A, true);
        for (int d : m.value("dropped_features", std::vector<int>{})) f.kept.at(d) = false;
        out.a_to_v = std::move(f);
      } else {
        fail(ErrorCode::kPrecondition, "unknown map kind '" + kind + "'");
      }
    }
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCode::kPrecondition, std::string("malformed control maps: ") + e.what());
  }
  return out;
}

void save_control_maps(const std::filesystem::path& path, const ControlMaps& maps) {
  std::ofstream f(path, std::ios::trunc);
  require(static_cast<bool>(f), ErrorCode::kIo, "cannot write " + path.string());
  f << to_json(maps).dump(1) << '\n';
  require(static_cast<bool>(f), ErrorCode::kIo, "short write to " + path.string());
}

ControlMaps load_control_maps(const std::filesystem::path& path) {
  std::ifstream f(path);
  require(static_cast<bool>(f), ErrorCode::kIo, "cannot read " + path.string());
  nlohmann::json j;
  try {
    f >> j;
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCode::kPrecondition, "malformed control maps " + path.string() + ": " + e.what());
  }
  return control_maps_from_json(j);
}

// ------------------------------------------------------------ model-facing

Vec to_vec(const Tensor<float>& t) {
  Vec v(static_cast<Eigen::Index>(t.size()));
  for (std::size_t i = 0; i < t.size(); ++i) v[static_cast<Eigen::Index>(i)] = t[i];
  return v;
}

Tensor<float> to_tensor(const Vec& v) {
  Tensor<float> t(1, static_cast<int>(v.size()), 1, 1);
  for (Eigen::Index i = 0; i < v.size(); ++i) t[static_cast<std::size_t>(i)] = float(v[i]);
  return t;
}

namespace {

Vec source_vector(X2FaceModel<float>& model, const std::vector<FaceFrame>& sources) {
  require(!sources.empty(), ErrorCode::kPrecondition, "at least one source frame is required");
  check_frame(sources.front(), model.config, "source");
  return to_vec(drive_encode(model.driving, sources.front()));
}

}  // namespace

DriveResult drive_with_pose(X2FaceModel<float>& model, const ControlMaps& maps,
                            const std::vector<FaceFrame>& sources, const Vec& p_driving) {
  require(maps.pose_ready(), ErrorCode::kNotFitted, "pose maps are not loaded");
  DriveResult r;
  r.v_source = source_vector(model, sources);
  r.p_source = predict_pose(*maps.v_to_p, r.v_source);
  r.v_driving = pose_drive_vector(r.v_source, *maps.p_to_v, *maps.v_to_p, p_driving);
  r.frame = drive_decode(model.driving, to_tensor(r.v_driving),
                         embed_multi(model.embedding, sources))
                .image;
  return r;
}

DriveResult drive_with_audio(X2FaceModel<float>& model, const ControlMaps& maps,
                             const std::vector<FaceFrame>& sources, const Vec& a_driving,
                             const Vec& a_source) {
  require(maps.audio_ready(), ErrorCode::kNotFitted, "audio and pose maps are not loaded");
  DriveResult r;
  r.v_source = source_vector(model, sources);
  r.p_source = predict_pose(*maps.v_to_p, r.v_source);
  r.v_driving = audio_drive_vector(r.v_source, *maps.a_to_v, *maps.v_to_p, *maps.p_to_v,
                                   a_driving, a_source);
  r.frame = drive_decode(model.driving, to_tensor(r.v_driving),
                         embed_multi(model.embedding, sources))
                .image;
  return r;
}

LabeledVectors collect_labeled_vectors(X2FaceModel<float>& model, const DatasetIndex& index,
                                       const std::vector<Split>& splits) {
  LabeledVectors out;
  std::vector<std::array<double, 3>> poses;
  std::vector<const std::vector<double>*> audio;
  bool have_audio = true;
  for (int i = 0; i < static_cast<int>(index.identities.size()); ++i) {
    const auto& id = index.identities[i];
    if (std::find(splits.begin(), splits.end(), id.split) == splits.end()) continue;
    for (int v = 0; v < static_cast<int>(id.videos.size()); ++v) {
      const auto& video = id.videos[v];
      require(video.labels.has_value(), ErrorCode::kInvalidDataset,
              "video " + id.id + "/" + video.id + " has no labels");
      have_audio = have_audio && !video.labels->audio.empty();
      for (int f = 0; f < static_cast<int>(video.frames.size()); ++f) {
        out.refs.push_back({i, v, f});
        poses.push_back(video.labels->pose[f]);
        audio.push_back(video.labels->audio.empty() ? nullptr : &video.labels->audio[f]);
      }
    }
  }
  const int n = static_cast<int>(out.refs.size());
  require(n > 0, ErrorCode::kInvalidDataset, "no frames in the requested splits");
  const int V = model.config.driving_vector_dim;
  out.vectors.resize(n, V);
  out.poses.resize(n, 3);
  FrameCache cache(index);
  const int chunk = 32;
  for (int b = 0; b < n; b += chunk) {
    const int m = std::min(chunk, n - b);
    std::vector<FrameRef> refs(out.refs.begin() + b, out.refs.begin() + b + m);
    Tensor<float> vs = drive_encode(model.driving, stack_frames(cache, refs));
    for (int k = 0; k < m; ++k)
      for (int c = 0; c < V; ++c) out.vectors(b + k, c) = vs(k, c, 0, 0);
  }
  for (int k = 0; k < n; ++k)
    for (int c = 0; c < 3; ++c) out.poses(k, c) = poses[k][c];
  if (have_audio) {
    out.audio.resize(n, kAudioDim);
    for (int k = 0; k < n; ++k)
      for (int c = 0; c < kAudioDim; ++c) out.audio(k, c) = (*audio[k])[c];
  }
  return out;
}

}  // namespace x2face
