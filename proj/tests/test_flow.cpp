#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "gs4d/flow_warp.hpp"
#include "test_util.hpp"

#include <cmath>
#include <limits>
#include <random>

using namespace gs4d;
using namespace gs4d::testing;

namespace {

// Four cameras on a ring around the origin, all looking at it.
std::vector<Camera> ring_cameras(int size = 64, double radius = 4.0, int count = 4) {
  std::vector<Camera> cams;
  for (int v = 0; v < count; ++v) {
    const double a = 2.0 * M_PI * v / count + 0.3;
    const Vec3 eye(radius * std::sin(a), -1.0 - 0.3 * v, -radius * std::cos(a));
    cams.push_back(look_at(eye, Vec3::Zero(), Vec3(0, -1, 0), 0.9 * size, size, size));
  }
  return cams;
}

// Smallest eigenvector of A^T A: the same homogeneous problem solved independently.
Vec3 normal_equation_oracle(const Eigen::MatrixXd& a) {
  Eigen::SelfAdjointEigenSolver<Eigen::Matrix4d> es(a.transpose() * a);
  const Eigen::Vector4d x = es.eigenvectors().col(0);
  return x.head<3>() / x[3];
}

SceneModel sparse_scene() {
  SceneModel s;
  const Vec3 centers[] = {Vec3(-0.6, 0.0, 0.0), Vec3(0.6, 0.1, 0.2), Vec3(0.0, -0.5, -0.3),
                          Vec3(0.1, 0.55, 0.1)};
  for (const Vec3& c : centers) {
    GaussianPrimitive g;
    g.position = c;
    g.log_scale = Vec3::Constant(std::log(0.05));
    g.opacity_logit = logit(0.9);
    g.sh(0, 0) = 1.0;
    s.fg.push_back(g);
  }
  return s;
}

// Flow that is exact for every primitive: the 2x2 pixel block around each projection
// holds that primitive's true displacement.
std::vector<Image> exact_flows(const SceneModel& s, const std::vector<Camera>& cams,
                               const std::vector<Vec3>& next) {
  std::vector<Image> flows;
  for (const Camera& c : cams) {
    Image f(c.height, c.width, 2);
    for (std::size_t i = 0; i < s.fg.size(); ++i) {
      const Vec2 a = *c.project(s.fg[i].position), b = *c.project(next[i]);
      const int x0 = static_cast<int>(std::floor(a.x())), y0 = static_cast<int>(std::floor(a.y()));
      for (int dy = 0; dy < 2; ++dy)
        for (int dx = 0; dx < 2; ++dx) {
          f.at(y0 + dy, x0 + dx, 0) = (b - a).x();
          f.at(y0 + dy, x0 + dx, 1) = (b - a).y();
        }
    }
    flows.push_back(f);
  }
  return flows;
}

std::vector<RenderTarget> render_all(const SceneModel& s, const std::vector<Camera>& cams) {
  std::vector<RenderTarget> out;
  for (const Camera& c : cams) out.push_back(rasterize(s, c));
  return out;
}

}  // namespace

TEST_CASE("sample_flow: constant field, grid node and ramp") {
  Image f(5, 6, 2);
  for (int y = 0; y < 5; ++y)
    for (int x = 0; x < 6; ++x) {
      f.at(y, x, 0) = 3.0;
      f.at(y, x, 1) = -2.0;
    }
  const FlowSample s = sample_flow(f, Vec2(2.3, 1.7));
  CHECK(s.displacement == Vec2(3.0, -2.0));
  CHECK_FALSE(s.clamped);
  CHECK(sample_flow(f, Vec2(7.0, 1.0)).clamped);

  Image ramp(5, 6, 2);
  for (int y = 0; y < 5; ++y)
    for (int x = 0; x < 6; ++x) {
      ramp.at(y, x, 0) = x + 10.0 * y;
      ramp.at(y, x, 1) = x * y;
    }
  CHECK(sample_flow(ramp, Vec2(4.0, 3.0)).displacement == Vec2(34.0, 12.0));
  const Vec2 d = sample_flow(ramp, Vec2(1.5, 2.5)).displacement;
  CHECK(d.x() == doctest::Approx(1.5 + 25.0).epsilon(1e-15));
  CHECK(d.y() == doctest::Approx((2 + 4 + 3 + 6) / 4.0).epsilon(1e-15));
}

TEST_CASE("triangulate: two orthogonal cameras recover the point exactly") {
  const Camera a = look_at(Vec3(0, 0, -3), Vec3(0, 0, 2), Vec3(0, -1, 0), 100, 64, 64);
  const Camera b = look_at(Vec3(5, 0, 2), Vec3(0, 0, 2), Vec3(0, -1, 0), 100, 64, 64);
  const Vec3 p(0.3, -0.1, 2.0);
  const std::vector<Observation> obs{observe(a, *a.project(p)), observe(b, *b.project(p))};
  const Triangulation t = triangulate(obs);
  REQUIRE_FALSE(t.degenerate);
  CHECK((t.point - p).norm() < 1e-9);
  CHECK(t.rms_residual < 1e-9);
  CHECK(triangulate(std::span(obs).first(1)).degenerate);
}

TEST_CASE("triangulate: coincident rays are degenerate") {
  const Camera a = look_at(Vec3(0, 0, -3), Vec3::Zero(), Vec3(0, -1, 0), 100, 64, 64);
  const Vec3 p(0.2, 0.1, 0.0);
  const std::vector<Observation> obs{observe(a, *a.project(p)), observe(a, *a.project(p))};
  CHECK(triangulate(obs).degenerate);
}

TEST_CASE("triangulate: noisy observations match the normal-equation oracle") {
  std::mt19937_64 rng(31);
  std::normal_distribution<double> noise(0.0, 0.5);
  std::uniform_real_distribution<double> u(-0.8, 0.8);
  const auto cams = ring_cameras(128);
  for (int trial = 0; trial < 50; ++trial) {
    const Vec3 p(u(rng), u(rng), u(rng));
    std::vector<Observation> obs;
    for (const Camera& c : cams) obs.push_back(observe(c, *c.project(p) + Vec2(noise(rng), noise(rng))));
    const Triangulation t = triangulate(obs);
    REQUIRE_FALSE(t.degenerate);
    CHECK((t.point - normal_equation_oracle(dlt_system(obs))).norm() < 1e-8);
    // reported residual is the RMS reprojection error
    double sq = 0.0;
    for (std::size_t v = 0; v < cams.size(); ++v) sq += (*cams[v].project(t.point) - obs[v].uv).squaredNorm();
    CHECK(t.rms_residual == doctest::Approx(std::sqrt(sq / 4.0)).epsilon(1e-9));
    CHECK((t.point - p).norm() < 0.1);
  }
}

TEST_CASE("warp: zero flow is a fixed point") {
  const auto cams = ring_cameras();
  const SceneModel s = sparse_scene();
  std::vector<Image> flows(cams.size(), Image(64, 64, 2));
  const auto renders = render_all(s, cams);
  const WarpResult r = warp_foreground(s, cams, flows, renders);
  CHECK(r.warped == static_cast<int>(s.fg.size()));
  for (std::size_t i = 0; i < s.fg.size(); ++i) CHECK((r.positions[i] - s.fg[i].position).norm() < 1e-9);
}

TEST_CASE("warp: rigid translation with exact flows") {
  const auto cams = ring_cameras();
  const SceneModel s = sparse_scene();
  const Vec3 delta(0.05, -0.03, 0.04);
  std::vector<Vec3> next;
  for (const auto& g : s.fg) next.push_back(g.position + delta);
  const auto flows = exact_flows(s, cams, next);
  const WarpResult r = warp_foreground(s, cams, flows, render_all(s, cams));
  CHECK(r.warped == static_cast<int>(s.fg.size()));
  for (std::size_t i = 0; i < s.fg.size(); ++i) CHECK((r.positions[i] - next[i]).norm() < 1e-6);
}

TEST_CASE("warp: a NaN flow view is excluded and the rest still triangulate") {
  const auto cams = ring_cameras();
  const SceneModel s = sparse_scene();
  const Vec3 delta(-0.02, 0.06, 0.01);
  std::vector<Vec3> next;
  for (const auto& g : s.fg) next.push_back(g.position + delta);
  auto flows = exact_flows(s, cams, next);
  for (double& v : flows[1].data) v = std::numeric_limits<double>::quiet_NaN();
  const WarpResult r = warp_foreground(s, cams, flows, render_all(s, cams));
  CHECK(r.warped == static_cast<int>(s.fg.size()));
  for (std::size_t i = 0; i < s.fg.size(); ++i) CHECK((r.positions[i] - next[i]).norm() < 1e-6);
}

TEST_CASE("warp: occluded primitive borrows neighbour displacement or stays put") {
  const auto cams = ring_cameras();
  SceneModel s = sparse_scene();
  const Vec3 delta(0.03, 0.0, -0.02);
  std::vector<Vec3> next;
  for (const auto& g : s.fg) next.push_back(g.position + delta);
  const auto flows = exact_flows(s, cams, next);
  GaussianPrimitive hidden = s.fg[0];
  hidden.opacity_logit = logit(0.01);  // never reaches the visibility threshold
  hidden.position += Vec3(0.02, 0.0, 0.0);
  s.fg.push_back(hidden);
  next.push_back(hidden.position + delta);
  const auto renders = render_all(s, cams);
  const WarpResult r = warp_foreground(s, cams, flows, renders);
  CHECK(r.status.back() == WarpStatus::neighbor);
  CHECK((r.positions.back() - next.back()).norm() < 1e-6);
  WarpConfig carry;
  carry.neighbor_fallback = false;
  const WarpResult c = warp_foreground(s, cams, flows, renders, carry);
  CHECK(c.carried == 1);
  CHECK(c.positions.back() == s.fg.back().position);
}

TEST_CASE("warp: resolution mismatch is rejected") {
  const auto cams = ring_cameras();
  const SceneModel s = sparse_scene();
  std::vector<Image> flows(cams.size(), Image(64, 63, 2));
  CHECK_THROWS_AS(warp_foreground(s, cams, flows, render_all(s, cams)), std::invalid_argument);
}
