#include "gs4d/query.hpp"

#include "gs4d/evalkit.hpp"

#include <json.hpp>

#include <cmath>
#include <limits>
#include <stdexcept>

namespace gs4d {

Image relevance_map(const RenderTarget& t, const Mlp& semantic, const Autoencoder& ae, const Eigen::VectorXd& query) {
  if (query.size() != ae.raw_dim())
    throw std::invalid_argument("relevance_map: query has dimension " + std::to_string(query.size()) +
                                ", expected " + std::to_string(ae.raw_dim()));
  if (semantic.output_dim() != ae.code_dim())
    throw std::invalid_argument("relevance_map: semantic head does not match the autoencoder");
  const double qn = query.norm();
  if (!(qn > 0.0) || !std::isfinite(qn)) throw std::invalid_argument("relevance_map: query vector is zero");
  const Eigen::VectorXd q = query / qn;

  std::vector<int> px;
  for (std::size_t p = 0; p < t.alpha.pixels(); ++p)
    if (t.alpha.data[p] > kAlphaFloor) px.push_back(static_cast<int>(p));
  Image out(t.height, t.width, 1, -1.0);
  if (px.empty()) return out;
  const Eigen::MatrixXd raw = ae.decode(mlp_forward(semantic, normalized_features(t, px)));
  for (std::size_t k = 0; k < px.size(); ++k) {
    const double n = raw.row(k).norm();
    out.data[px[k]] = n > 0.0 ? raw.row(k).dot(q) / n : 0.0;
  }
  return out;
}

IdentityResult identity_query(const Checkpoint& st, const Eigen::VectorXd& query, const RasterConfig& rc) {
  if (!st.classifier || !st.semantic || !st.autoencoder)
    throw std::invalid_argument("identity_query: checkpoint has no heads");
  const int D = st.classifier->output_dim() - 1;
  IdentityResult res;
  std::vector<double> sum(D, 0.0);
  std::vector<int> views(D, 0);
  for (const auto& cam : st.cameras) {
    const RenderTarget r = rasterize(st.scene, cam, rc);
    const Image rel = relevance_map(r, *st.semantic, *st.autoencoder, query);
    const LabelMap lab = predict_labels(r, *st.classifier);
    std::vector<double> s(D + 1, 0.0);
    std::vector<long> n(D + 1, 0);
    for (std::size_t p = 0; p < lab.data.size(); ++p) {
      s[lab.data[p]] += rel.data[p];
      ++n[lab.data[p]];
    }
    for (int d = 1; d <= D; ++d)
      if (n[d] > 0) {
        sum[d - 1] += s[d] / n[d];
        ++views[d - 1];
      }
  }
  res.score.assign(D, std::numeric_limits<double>::quiet_NaN());
  double best = 0.0;
  for (int d = 1; d <= D; ++d) {
    if (views[d - 1] == 0) continue;
    res.score[d - 1] = sum[d - 1] / views[d - 1];
    if (res.score[d - 1] > best) {  // strict: ties keep the lower id
      best = res.score[d - 1];
      res.id = d;
    }
  }
  return res;
}

std::vector<GaussianPrimitive> instance_primitives(const Checkpoint& st, int id) {
  if (!st.classifier) throw std::invalid_argument("instance_primitives: checkpoint has no classifier");
  const std::vector<int> labels = primitive_labels(st.scene.fg, *st.classifier);
  std::vector<GaussianPrimitive> out;
  for (std::size_t i = 0; i < labels.size(); ++i)
    if (labels[i] == id) out.push_back(st.scene.fg[i]);
  return out;
}

long audit_instance_render(const RenderTarget& t, const Mlp& classifier, int id) {
  const std::vector<int> labels = primitive_labels(t.primitives, classifier);
  long bad = 0;
  for (std::size_t p = 0; p < t.spans.size(); ++p)
    for (const Contributor& c : t.contributors(p))
      if (labels[c.primitive] != id) ++bad;
  return bad;
}

std::vector<std::pair<int, int>> segment_intervals(const std::vector<std::optional<double>>& scores, double thr) {
  const double tol = 1e-12 * std::max(1.0, std::abs(thr));
  std::vector<std::pair<int, int>> out;
  int start = -1;
  for (int i = 0; i <= static_cast<int>(scores.size()); ++i) {
    const bool above = i < static_cast<int>(scores.size()) && scores[i] && *scores[i] >= thr - tol;
    if (above && start < 0) start = i;
    if (!above && start >= 0) {
      out.emplace_back(start, i - 1);
      start = -1;
    }
  }
  return out;
}

std::optional<double> frame_relevance(const Checkpoint& st, int id, const Eigen::VectorXd& query,
                                      const RasterConfig& rc, long* audit) {
  if (!st.classifier || !st.semantic || !st.autoencoder)
    throw std::invalid_argument("segment_query: checkpoint has no heads");
  const std::vector<GaussianPrimitive> prims = instance_primitives(st, id);
  if (prims.empty()) return std::nullopt;
  double sum = 0.0;
  int views = 0;
  for (const auto& cam : st.cameras) {
    const RenderTarget r = rasterize(prims, cam, rc);
    if (audit) *audit += audit_instance_render(r, *st.classifier, id);
    const Image rel = relevance_map(r, *st.semantic, *st.autoencoder, query);
    double s = 0.0;
    long n = 0;
    for (std::size_t p = 0; p < rel.data.size(); ++p)
      if (r.alpha.data[p] > kAlphaFloor) {
        s += rel.data[p];
        ++n;
      }
    if (n > 0) {
      sum += s / n;
      ++views;
    }
  }
  if (views == 0) return std::nullopt;
  return sum / views;
}

SegmentResult segment_query(const std::vector<int>& frames, const std::function<Checkpoint(int)>& load, int id,
                            const Eigen::VectorXd& query, const RasterConfig& rc) {
  SegmentResult res;
  res.frames = frames;
  res.scores.resize(frames.size());
  std::vector<long> audit(frames.size(), 0);
  // frames are independent; rendering inside already fans out over tiles
  for (std::size_t i = 0; i < frames.size(); ++i) res.scores[i] = frame_relevance(load(static_cast<int>(i)), id, query, rc, &audit[i]);
  double sum = 0.0;
  int n = 0;
  for (const auto& s : res.scores)
    if (s) {
      sum += *s;
      ++n;
    }
  for (long a : audit) res.audit_violations += a;
  if (n == 0) return res;
  res.threshold = sum / n;
  for (const auto& [a, b] : segment_intervals(res.scores, res.threshold)) res.intervals.emplace_back(frames[a], frames[b]);
  return res;
}

std::string query_json(const IdentityResult& id, const SegmentResult& seg) {
  nlohmann::json j;
  j["instance"] = id.id ? nlohmann::json(*id.id) : nlohmann::json(nullptr);
  j["identity_scores"] = nlohmann::json::array();
  for (double s : id.score) j["identity_scores"].push_back(std::isfinite(s) ? nlohmann::json(s) : nlohmann::json(nullptr));
  j["frames"] = seg.frames;
  j["per_frame_scores"] = nlohmann::json::array();
  for (const auto& s : seg.scores) j["per_frame_scores"].push_back(s ? nlohmann::json(*s) : nlohmann::json(nullptr));
  j["threshold"] = seg.threshold;
  j["intervals"] = nlohmann::json::array();
  for (const auto& [a, b] : seg.intervals) j["intervals"].push_back({a, b});
  j["audit_violations"] = seg.audit_violations;
  return j.dump(2);
}

std::string query_svg(const SegmentResult& seg) {
  ChartSeries s{"relevance", {}};
  for (const auto& v : seg.scores) s.values.push_back(v ? *v : std::numeric_limits<double>::quiet_NaN());
  return svg_line_chart("Segment query relevance", seg.frames, {s}, seg.threshold, seg.intervals);
}

}  // namespace gs4d
