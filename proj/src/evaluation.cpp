#include "x2face/evaluation.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <numeric>
#include <random>
#include <sstream>

#include "x2face/error.hpp"

namespace x2face {

std::vector<ReconTuple> sample_recon_tuples(const DatasetIndex& index, Split split, int n_tuples,
                                            int max_sources, std::uint64_t seed) {
  require(n_tuples > 0, ErrorCode::kPrecondition, "n_tuples must be positive");
  require(max_sources >= 1, ErrorCode::kPrecondition, "max_sources must be at least 1");
  const std::vector<int> ids = index.members(split);
  require(!ids.empty(), ErrorCode::kInvalidDataset,
          std::string("split '") + split_name(split) + "' has no identities");
  const int need = max_sources + 1;
  for (int i : ids)
    for (const auto& v : index.identities[i].videos)
      require(static_cast<int>(v.frames.size()) >= need, ErrorCode::kInvalidDataset,
              "video " + index.identities[i].id + "/" + v.id + " has " +
                  std::to_string(v.frames.size()) + " frames; " + std::to_string(need) +
                  " distinct frames are needed per tuple");
  // Other-identity frames come from the same split when possible.
  std::vector<int> others = ids.size() > 1 ? ids : std::vector<int>{};
  if (others.empty())
    for (int i = 0; i < static_cast<int>(index.identities.size()); ++i)
      if (i != ids[0]) others.push_back(i);
  require(!others.empty(), ErrorCode::kInvalidDataset, "need at least two identities");

  std::mt19937_64 rng(seed);
  auto pick = [&](int n) { return std::uniform_int_distribution<int>(0, n - 1)(rng); };
  std::vector<ReconTuple> out;
  out.reserve(n_tuples);
  for (int t = 0; t < n_tuples; ++t) {
    const int id = ids[pick(static_cast<int>(ids.size()))];
    const auto& videos = index.identities[id].videos;
    const int v = pick(static_cast<int>(videos.size()));
    std::vector<int> frames(videos[v].frames.size());
    std::iota(frames.begin(), frames.end(), 0);
    // Partial Fisher-Yates for `need` distinct frames.
    for (int k = 0; k < need; ++k) {
      const int j = k + pick(static_cast<int>(frames.size()) - k);
      std::swap(frames[k], frames[j]);
    }
    ReconTuple tup;
    tup.driving = {id, v, frames[0]};
    for (int k = 1; k < need; ++k) tup.sources.push_back({id, v, frames[k]});
    int o = id;
    while (o == id) o = others[pick(static_cast<int>(others.size()))];
    const auto& ov = index.identities[o].videos;
    const int ovi = pick(static_cast<int>(ov.size()));
    tup.other = {o, ovi, pick(static_cast<int>(ov[ovi].frames.size()))};
    out.push_back(std::move(tup));
  }
  return out;
}

namespace {
constexpr int kEvalChunk = 16;
}

double mean_reconstruction_l1(X2FaceModel<float>& model, FrameCache& cache,
                              const std::vector<ReconTuple>& tuples, int n_source) {
  return mean_reconstruction_l1(
      [&](const std::vector<Tensor<float>>& s, const Tensor<float>& d) {
        return x2face_forward(model, s, d);
      },
      cache, tuples, n_source);
}

double mean_reconstruction_l1(const Generator& gen, FrameCache& cache,
                              const std::vector<ReconTuple>& tuples, int n_source) {
  require(!tuples.empty(), ErrorCode::kPrecondition, "no tuples");
  double total = 0.0;
  const int n = static_cast<int>(tuples.size());
  for (int b = 0; b < n; b += kEvalChunk) {
    const int m = std::min(kEvalChunk, n - b);
    std::vector<FrameRef> drv;
    std::vector<std::vector<FrameRef>> src(n_source);
    for (int i = b; i < b + m; ++i) {
      require(static_cast<int>(tuples[i].sources.size()) >= n_source, ErrorCode::kPrecondition,
              "tuple has fewer than " + std::to_string(n_source) + " sources");
      drv.push_back(tuples[i].driving);
      for (int k = 0; k < n_source; ++k) src[k].push_back(tuples[i].sources[k]);
    }
    std::vector<Tensor<float>> sources;
    for (auto& refs : src) sources.push_back(stack_frames(cache, refs));
    const Tensor<float> D = stack_frames(cache, drv);
    const Tensor<float> G = gen(sources, D);
    total += mean_abs_diff(G, D) * m;
  }
  return total / n;
}

double mean_cross_identity_high(X2FaceModel<float>& model, IdentityComparator<float>& cmp,
                                FrameCache& cache, const std::vector<ReconTuple>& tuples) {
  require(!tuples.empty(), ErrorCode::kPrecondition, "no tuples");
  double total = 0.0;
  const int n = static_cast<int>(tuples.size());
  for (int b = 0; b < n; b += kEvalChunk) {
    const int m = std::min(kEvalChunk, n - b);
    std::vector<FrameRef> s, r;
    for (int i = b; i < b + m; ++i) {
      s.push_back(tuples[i].sources.front());
      r.push_back(tuples[i].other);
    }
    const Tensor<float> S = stack_frames(cache, s);
    const Tensor<float> G = x2face_forward(model, {S}, stack_frames(cache, r));
    double sum = 0.0;
    for (const auto& [name, v] : content_loss(cmp, G, S, high_layers())) sum += v;
    total += sum * m;
  }
  return total / n;
}

nlohmann::json ReconReport::to_json() const {
  nlohmann::json rows = nlohmann::json::array();
  for (const auto& s : settings)
    rows.push_back({{"stage", s.stage},
                    {"n_source", s.n_source},
                    {"l1", s.l1},
                    {"improvement_pct", s.improvement_pct}});
  nlohmann::json j{{"split", split}, {"n_pairs", n_pairs}, {"seed", seed}, {"settings", rows}};
  if (!cross_identity_high.empty()) {
    nlohmann::json h = nlohmann::json::object();
    for (const auto& [stage, v] : cross_identity_high) h[std::to_string(stage)] = v;
    j["cross_identity_high"] = h;
  }
  return j;
}

std::string ReconReport::table() const {
  std::ostringstream os;
  os << std::fixed;
  os << "split=" << split << " pairs=" << n_pairs << " seed=" << seed << "\n";
  os << std::left << std::setw(7) << "stage" << std::setw(10) << "sources" << std::right
     << std::setw(10) << "L1" << std::setw(12) << "improv %" << std::setw(12) << "ref L1"
     << std::setw(12) << "ref %" << "\n";
  for (const auto& s : settings) {
    os << std::left << std::setw(7) << (s.stage == 1 ? "I" : "II") << std::setw(10)
       << s.n_source << std::right << std::setprecision(4) << std::setw(10) << s.l1
       << std::setprecision(2) << std::setw(12) << s.improvement_pct;
    auto ref = std::find_if(kReconReference.begin(), kReconReference.end(), [&](const auto& r) {
      return r.stage == s.stage && r.n_source == s.n_source;
    });
    if (ref != kReconReference.end())
      os << std::setprecision(4) << std::setw(12) << ref->l1 << std::setprecision(2)
         << std::setw(12) << ref->improvement_pct;
    os << "\n";
  }
  for (const auto& [stage, v] : cross_identity_high)
    os << "cross-identity HIGH content, stage " << (stage == 1 ? "I" : "II") << ": "
       << std::setprecision(5) << v << "\n";
  return os.str();
}

ReconReport eval_reconstruction(X2FaceModel<float>& stage1, X2FaceModel<float>* stage2,
                                const DatasetIndex& index, const ReconEvalConfig& cfg,
                                IdentityComparator<float>* comparator) {
  require(!cfg.n_sources.empty(), ErrorCode::kPrecondition, "no source counts requested");
  for (int k : cfg.n_sources)
    require(k >= 1, ErrorCode::kPrecondition, "source counts must be positive");
  const int max_src = *std::max_element(cfg.n_sources.begin(), cfg.n_sources.end());
  const auto tuples = sample_recon_tuples(index, cfg.split, cfg.n_pairs, max_src, cfg.seed);
  FrameCache cache(index);

  ReconReport rep;
  rep.split = split_name(cfg.split);
  rep.n_pairs = cfg.n_pairs;
  rep.seed = cfg.seed;
  std::vector<std::pair<int, X2FaceModel<float>*>> models{{1, &stage1}};
  if (stage2) models.push_back({2, stage2});
  std::vector<int> counts = cfg.n_sources;
  std::sort(counts.begin(), counts.end());
  counts.erase(std::unique(counts.begin(), counts.end()), counts.end());
  for (int k : counts)
    for (auto& [stage, model] : models)
      rep.settings.push_back({stage, k, mean_reconstruction_l1(*model, cache, tuples, k), 0.0});
  // Baseline is stage I with the smallest source count.
  const double base = rep.settings.front().l1;
  for (auto& s : rep.settings) s.improvement_pct = base > 0 ? 100.0 * (base - s.l1) / base : 0.0;
  if (comparator)
    for (auto& [stage, model] : models)
      rep.cross_identity_high[stage] = mean_cross_identity_high(*model, *comparator, cache, tuples);
  return rep;
}

// ------------------------------------------------------------ pose probe

PoseReport pose_errors(const Mat& predicted, const Mat& truth) {
  require(predicted.rows() == truth.rows() && predicted.cols() == truth.cols(),
          ErrorCode::kShapeMismatch, "prediction and label shapes differ");
  require(predicted.rows() > 0, ErrorCode::kPrecondition, "no samples");
  PoseReport rep;
  rep.n = static_cast<int>(truth.rows());
  rep.mae.resize(truth.cols());
  for (int c = 0; c < truth.cols(); ++c)
    rep.mae[c] = (predicted.col(c) - truth.col(c)).cwiseAbs().mean();
  rep.mean_mae = std::accumulate(rep.mae.begin(), rep.mae.end(), 0.0) / rep.mae.size();
  if (rep.axes.size() != rep.mae.size()) {
    rep.axes.clear();
    for (std::size_t c = 0; c < rep.mae.size(); ++c) rep.axes.push_back("p" + std::to_string(c));
    rep.half_range.assign(rep.mae.size(), 1.0);
  }
  return rep;
}

PoseReport eval_pose_probe(const VecToPoseMap& f_vp, const LabeledVectors& data) {
  require(data.vectors.cols() == f_vp.vec_dim(), ErrorCode::kShapeMismatch,
          "vector dimension " + std::to_string(data.vectors.cols()) + " does not match map (" +
              std::to_string(f_vp.vec_dim()) + ")");
  Mat pred = (data.vectors * f_vp.weight.transpose()).rowwise() + f_vp.bias.transpose();
  return pose_errors(pred, data.poses);
}

nlohmann::json PoseReport::to_json() const {
  nlohmann::json axes_j = nlohmann::json::object();
  for (std::size_t c = 0; c < mae.size(); ++c)
    axes_j[axes[c]] = {{"mae", mae[c]},
                       {"half_range", half_range[c]},
                       {"fraction_of_half_range", mae[c] / half_range[c]}};
  return {{"n", n}, {"axes", axes_j}, {"mean_mae", mean_mae}};
}

std::string PoseReport::table() const {
  std::ostringstream os;
  os << std::fixed << std::setprecision(4);
  os << "frames=" << n << "\n";
  os << std::left << std::setw(6) << "axis" << std::right << std::setw(12) << "MAE"
     << std::setw(12) << "half-range" << std::setw(10) << "frac" << "\n";
  for (std::size_t c = 0; c < mae.size(); ++c)
    os << std::left << std::setw(6) << axes[c] << std::right << std::setw(12) << mae[c]
       << std::setw(12) << half_range[c] << std::setw(10) << mae[c] / half_range[c] << "\n";
  os << "reference (degrees; roll pitch yaw MAE):\n";
  for (const auto& r : kPoseReference)
    os << "  " << std::left << std::setw(11) << r.method << std::right << std::setprecision(2)
       << std::setw(7) << r.roll << std::setw(7) << r.pitch << std::setw(7) << r.yaw
       << std::setw(7) << r.mae << "\n";
  return os.str();
}

// ------------------------------------------------------------ image probes

namespace {
void check_rgb(const FaceFrame& f) {
  require(f.batch() == 1 && f.channels() == 3, ErrorCode::kShapeMismatch,
          "expected a (1, 3, h, w) frame, got " + f.shape().str());
}
}  // namespace

std::array<double, 2> foreground_centroid(const FaceFrame& frame,
                                          const std::array<double, 3>& background,
                                          double threshold) {
  check_rgb(frame);
  double sx = 0, sy = 0, n = 0;
  for (int y = 0; y < frame.height(); ++y)
    for (int x = 0; x < frame.width(); ++x) {
      double d2 = 0;
      for (int c = 0; c < 3; ++c) {
        const double d = frame(0, c, y, x) - background[c];
        d2 += d * d;
      }
      if (d2 > threshold * threshold) {
        sx += x;
        sy += y;
        n += 1;
      }
    }
  if (n == 0) return {frame.width() / 2.0, frame.height() / 2.0};
  return {sx / n, sy / n};
}

int dark_pixel_count(const FaceFrame& frame, int x0, int y0, int x1, int y1, double threshold) {
  check_rgb(frame);
  x0 = std::max(x0, 0);
  y0 = std::max(y0, 0);
  x1 = std::min(x1, frame.width());
  y1 = std::min(y1, frame.height());
  int count = 0;
  for (int y = y0; y < y1; ++y)
    for (int x = x0; x < x1; ++x) {
      const double luma =
          0.299 * frame(0, 0, y, x) + 0.587 * frame(0, 1, y, x) + 0.114 * frame(0, 2, y, x);
      if (luma < threshold) ++count;
    }
  return count;
}

TemplateMatch match_disk(const FaceFrame& frame, const std::array<double, 3>& rgb, int radius,
                         int cx, int cy, int search) {
  check_rgb(frame);
  require(radius >= 0 && search >= 0, ErrorCode::kPrecondition, "negative radius or search");
  TemplateMatch best;
  best.x = cx;
  best.y = cy;
  const double norm = std::sqrt(3.0);
  for (int py = cy - search; py <= cy + search; ++py)
    for (int px = cx - search; px <= cx + search; ++px) {
      double sim = 0;
      int n = 0;
      for (int dy = -radius; dy <= radius; ++dy)
        for (int dx = -radius; dx <= radius; ++dx) {
          if (dx * dx + dy * dy > radius * radius) continue;
          const int x = px + dx, y = py + dy;
          ++n;
          if (x < 0 || y < 0 || x >= frame.width() || y >= frame.height()) continue;
          double d2 = 0;
          for (int c = 0; c < 3; ++c) {
            const double d = frame(0, c, y, x) - rgb[c];
            d2 += d * d;
          }
          sim += 1.0 - std::sqrt(d2) / norm;
        }
      const double score = n ? sim / n : 0.0;
      if (score > best.score) best = {score, px, py};
    }
  return best;
}

namespace {
std::vector<double> ranks(const std::vector<double>& v) {
  std::vector<int> order(v.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](int a, int b) { return v[a] < v[b]; });
  std::vector<double> r(v.size());
  for (std::size_t i = 0; i < order.size();) {
    std::size_t j = i;
    while (j + 1 < order.size() && v[order[j + 1]] == v[order[i]]) ++j;
    const double avg = 0.5 * static_cast<double>(i + j) + 1.0;
    for (std::size_t k = i; k <= j; ++k) r[order[k]] = avg;
    i = j + 1;
  }
  return r;
}
}  // namespace

double spearman(const std::vector<double>& x, const std::vector<double>& y) {
  require(x.size() == y.size() && x.size() >= 2, ErrorCode::kPrecondition,
          "spearman needs two equal-length series of at least 2 values");
  const auto rx = ranks(x), ry = ranks(y);
  const double n = static_cast<double>(x.size());
  const double mx = std::accumulate(rx.begin(), rx.end(), 0.0) / n;
  const double my = std::accumulate(ry.begin(), ry.end(), 0.0) / n;
  double sxy = 0, sxx = 0, syy = 0;
  for (std::size_t i = 0; i < rx.size(); ++i) {
    sxy += (rx[i] - mx) * (ry[i] - my);
    sxx += (rx[i] - mx) * (rx[i] - mx);
    syy += (ry[i] - my) * (ry[i] - my);
  }
  if (sxx == 0 || syy == 0) return 0.0;
  return sxy / std::sqrt(sxx * syy);
}

}  // namespace x2face
