#pragma once

#include "gs4d/image.hpp"
#include "gs4d/rasterizer.hpp"
#include "gs4d/scene.hpp"

#include <cstdint>
#include <span>
#include <vector>

namespace gs4d {

struct FlowSample {
  Vec2 displacement = Vec2::Zero();
  bool clamped = false;  // uv fell outside the image and was clamped
  bool finite = true;
};

// Bilinear lookup in a 2-channel (dx, dy) displacement field.
FlowSample sample_flow(const Image& flow, const Vec2& uv);

struct Observation {
  Mat34 projection;
  Vec2 uv;
};

Observation observe(const Camera& camera, const Vec2& uv);

struct Triangulation {
  Vec3 point = Vec3::Zero();
  double rms_residual = 0.0;  // pixels
  bool degenerate = true;
};

// Homogeneous DLT: smallest right singular vector of the stacked 2V x 4 system.
// Degenerate with fewer than two observations, when the two smallest singular values
// are within `tolerance` (relative to the largest), or when the solution lies at infinity.
Triangulation triangulate(std::span<const Observation> observations, double tolerance = 1e-9);

// The 2V x 4 matrix solved by triangulate().
Eigen::MatrixXd dlt_system(std::span<const Observation> observations);

struct WarpConfig {
  double visibility_weight = 0.05;  // min blend weight at the projected pixel
  double max_residual = 3.0;        // pixels
  // Primitives that cannot be triangulated take the mean displacement of their nearest
  // successfully warped neighbours instead of staying put.
  bool neighbor_fallback = true;
  int fallback_neighbors = 4;
};

enum class WarpStatus : std::uint8_t { warped, too_few_views, degenerate, residual, neighbor };

struct WarpResult {
  std::vector<Vec3> positions;
  std::vector<WarpStatus> status;
  int warped = 0;
  int carried = 0;    // kept the previous position
  int borrowed = 0;   // neighbour-displacement fallback
};

// prev_renders[v] must have been rendered from `scene` (bg then fg ordering) with camera v.
WarpResult warp_foreground(const SceneModel& scene, std::span<const Camera> cameras,
                           std::span<const Image> flows, std::span<const RenderTarget> prev_renders,
                           const WarpConfig& config = {});

}  // namespace gs4d
