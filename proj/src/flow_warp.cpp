#include "gs4d/flow_warp.hpp"

#include "gs4d/mask_geometry.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace gs4d {

FlowSample sample_flow(const Image& flow, const Vec2& uv) {
  if (flow.channels != 2) throw std::invalid_argument("sample_flow: flow needs 2 channels");
  FlowSample s;
  bool clamped = false;
  s.displacement.x() = sample_bilinear(flow, uv.x(), uv.y(), 0, nullptr, &clamped);
  s.displacement.y() = sample_bilinear(flow, uv.x(), uv.y(), 1);
  s.clamped = clamped;
  s.finite = s.displacement.allFinite();
  return s;
}

Observation observe(const Camera& camera, const Vec2& uv) { return {camera.projection(), uv}; }

Eigen::MatrixXd dlt_system(std::span<const Observation> obs) {
  Eigen::MatrixXd a(2 * obs.size(), 4);
  for (std::size_t i = 0; i < obs.size(); ++i) {
    const Mat34& p = obs[i].projection;
    a.row(2 * i) = obs[i].uv.x() * p.row(2) - p.row(0);
    a.row(2 * i + 1) = obs[i].uv.y() * p.row(2) - p.row(1);
  }
  return a;
}

Triangulation triangulate(std::span<const Observation> obs, double tolerance) {
  Triangulation out;
  if (obs.size() < 2) return out;
  const Eigen::MatrixXd a = dlt_system(obs);
  Eigen::JacobiSVD<Eigen::MatrixXd> svd(a, Eigen::ComputeFullV);
  const auto& sv = svd.singularValues();
  if (sv[0] <= 0.0 || (sv[2] - sv[3]) <= tolerance * sv[0]) return out;
  const Eigen::Vector4d x = svd.matrixV().col(3);
  if (std::abs(x[3]) <= tolerance * x.head<3>().norm()) return out;
  out.point = x.head<3>() / x[3];
  double sq = 0.0;
  for (const auto& o : obs) {
    const Eigen::Vector3d h = o.projection * out.point.homogeneous();
    if (h.z() <= 0.0) return out;  // behind a contributing camera
    sq += (h.hnormalized() - o.uv).squaredNorm();
  }
  out.rms_residual = std::sqrt(sq / static_cast<double>(obs.size()));
  out.degenerate = !out.point.allFinite();
  return out;
}

namespace {

bool visible_in(const RenderTarget& target, std::uint32_t primitive, const Vec2& uv, double min_weight) {
  const int x = static_cast<int>(std::lround(uv.x())), y = static_cast<int>(std::lround(uv.y()));
  if (x < 0 || y < 0 || x >= target.width || y >= target.height) return false;
  for (const Contributor& c : target.contributors(static_cast<std::size_t>(y) * target.width + x))
    if (c.primitive == primitive) return c.weight() > min_weight;
  return false;
}

}  // namespace

WarpResult warp_foreground(const SceneModel& scene, std::span<const Camera> cameras,
                           std::span<const Image> flows, std::span<const RenderTarget> prev,
                           const WarpConfig& cfg) {
  if (flows.size() != cameras.size() || prev.size() != cameras.size())
    throw std::invalid_argument("warp_foreground: need one flow and one render per view");
  const std::size_t n = scene.fg.size();
  const std::size_t offset = scene.bg.size();
  for (std::size_t v = 0; v < cameras.size(); ++v) {
    if (flows[v].height != cameras[v].height || flows[v].width != cameras[v].width)
      throw std::invalid_argument("warp_foreground: flow " + std::to_string(v) +
                                  " does not match the camera resolution");
    if (prev[v].primitives.size() != offset + n)
      throw std::invalid_argument("warp_foreground: render " + std::to_string(v) +
                                  " was not produced from this scene");
  }
  std::vector<Mat34> proj(cameras.size());
  for (std::size_t v = 0; v < cameras.size(); ++v) proj[v] = cameras[v].projection();

  WarpResult r;
  r.positions.resize(n);
  r.status.assign(n, WarpStatus::too_few_views);

#pragma omp parallel for schedule(dynamic, 16)
  for (std::size_t i = 0; i < n; ++i) {
    const Vec3 p = scene.fg[i].position;
    std::vector<Observation> obs;
    for (std::size_t v = 0; v < cameras.size(); ++v) {
      const auto uv = cameras[v].project(p);
      if (!uv) continue;
      if (!visible_in(prev[v], static_cast<std::uint32_t>(offset + i), *uv, cfg.visibility_weight))
        continue;
      const FlowSample f = sample_flow(flows[v], *uv);
      if (!f.finite || f.clamped) continue;
      obs.push_back({proj[v], *uv + f.displacement});
    }
    r.positions[i] = p;
    if (obs.size() < 2) continue;
    const Triangulation tri = triangulate(obs);
    if (tri.degenerate) {
      r.status[i] = WarpStatus::degenerate;
    } else if (tri.rms_residual > cfg.max_residual) {
      r.status[i] = WarpStatus::residual;
    } else {
      r.positions[i] = tri.point;
      r.status[i] = WarpStatus::warped;
    }
  }

  std::vector<std::size_t> good;
  for (std::size_t i = 0; i < n; ++i)
    if (r.status[i] == WarpStatus::warped) good.push_back(i);
  r.warped = static_cast<int>(good.size());
  const int k = std::min<int>(cfg.fallback_neighbors, static_cast<int>(good.size()));
  for (std::size_t i = 0; i < n; ++i) {
    if (r.status[i] == WarpStatus::warped) continue;
    if (!cfg.neighbor_fallback || k == 0) {
      ++r.carried;
      continue;
    }
    const Vec3 p = scene.fg[i].position;
    std::vector<std::pair<double, std::size_t>> d;
    d.reserve(good.size());
    for (std::size_t j : good) d.push_back({(scene.fg[j].position - p).squaredNorm(), j});
    std::partial_sort(d.begin(), d.begin() + k, d.end());
    Vec3 disp = Vec3::Zero();
    for (int m = 0; m < k; ++m) disp += r.positions[d[m].second] - scene.fg[d[m].second].position;
    r.positions[i] = p + disp / k;
    r.status[i] = WarpStatus::neighbor;
    ++r.borrowed;
  }
  return r;
}

}  // namespace gs4d
