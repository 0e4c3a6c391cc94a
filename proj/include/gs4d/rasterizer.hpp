#pragma once

#include "gs4d/image.hpp"
#include "gs4d/scene.hpp"

#include <cstdint>
#include <optional>
#include <span>
#include <vector>

namespace gs4d {

struct RasterConfig {
  int tile_size = 16;
  double transmittance_cutoff = 1e-4;
  double dilation = 0.3;  // pixels^2 added to the projected covariance diagonal
  double near_plane = 1e-2;
  double max_alpha = 0.99;
  double cull_sigma = 3.0;    // footprint radius used for culling
  double extent_sigma = 4.0;  // Mahalanobis radius beyond which a splat is not evaluated
  int sh_degree = 3;          // 0 or 3
};

struct ProjectedGaussian {
  Vec2 mean;
  Mat2 cov;  // includes dilation
  Vec3 conic;  // (a, b, c) of the inverse covariance
  double depth = 0.0;
  double extent_radius = 0.0;  // pixels
  double cull_radius = 0.0;    // pixels
};

// nullopt when culled (behind the near plane or the footprint misses the image).
std::optional<ProjectedGaussian> project_gaussian(const GaussianPrimitive& primitive,
                                                  const Camera& camera,
                                                  const RasterConfig& config = {});

// View-dependent RGB colour (before clamping) and the basis values used.
// Gaussian falloff exp(-m2/2) minus its tangent at m2 = extent_sigma^2, rescaled to 1 at
// the centre. Value and slope reach 0 at the evaluation radius, so alpha stays smooth
// where splats are cut off. The slope helper returns -2 dK/dm2.
double splat_falloff(double m2, double extent_sigma);
double splat_falloff_slope(double m2, double extent_sigma);

Vec3 sh_color(const ShCoeffs& sh, const Vec3& direction, int degree);
// Real SH basis values and their gradients w.r.t. the (unit) direction.
void sh_basis(const Vec3& dir, int degree, double* values, Vec3* gradients);

struct Contributor {
  std::uint32_t primitive;
  std::uint32_t slot;  // position in the owning chunk's primitive list
  double alpha;
  double transmittance;  // before this contributor
  double weight() const { return alpha * transmittance; }
};

struct PrimitiveCache {
  bool visible = false;
  ProjectedGaussian proj;
  ActivatedPrimitive act;
  Vec3 cam_point = Vec3::Zero();
  Vec3 view_dir = Vec3::Zero();
  double view_dist = 0.0;
  Vec3 color = Vec3::Zero();
  std::uint8_t clamped = 0;  // bit c set when colour channel c was clamped
};

struct RenderTarget {
  int height = 0;
  int width = 0;
  Image color;    // H x W x 3
  Image feature;  // H x W x 8
  Image alpha;    // H x W x 1
  Image depth;    // H x W x 1, alpha-weighted camera depth

  Camera camera;
  RasterConfig config;
  std::vector<GaussianPrimitive> primitives;
  std::vector<PrimitiveCache> cache;

  // Contributor records, front to back per pixel. A chunk is a tile (or the whole image
  // for the serial reference); chunk_lists maps slot -> primitive index.
  std::vector<std::vector<std::uint32_t>> chunk_lists;
  std::vector<std::vector<Contributor>> chunk_records;
  struct PixelSpan {
    std::uint32_t chunk = 0;
    std::uint32_t offset = 0;
    std::uint32_t count = 0;
  };
  std::vector<PixelSpan> spans;
  bool tiled = true;

  std::span<const Contributor> contributors(std::size_t pixel) const {
    const PixelSpan& s = spans[pixel];
    return {chunk_records[s.chunk].data() + s.offset, s.count};
  }
};

struct RenderUpstream {
  Image color;    // empty => zero
  Image feature;  // empty => zero
  Image alpha;    // empty => zero
};

struct Gradients {
  std::vector<Vec3> position;
  std::vector<Vec4> rotation;
  std::vector<Vec3> log_scale;
  std::vector<double> opacity_logit;
  std::vector<ShCoeffs> sh;
  std::vector<Feature> feature;
  // |dL/dmean2d| with the mean expressed in normalized device coordinates.
  std::vector<double> mean2d_norm;
  std::vector<std::uint8_t> visible;

  explicit Gradients(std::size_t n = 0) { resize(n); }
  void resize(std::size_t n);
  std::size_t size() const { return position.size(); }
  void set_zero();
  void add(const Gradients& other);
  bool all_finite() const;
};

// Tiled renderer; tiles run in parallel and write disjoint pixels.
RenderTarget rasterize(std::span<const GaussianPrimitive> primitives, const Camera& camera,
                       const RasterConfig& config = {});
RenderTarget rasterize(const SceneModel& scene, const Camera& camera,
                       const RasterConfig& config = {});
// Serial per-pixel reference over the globally sorted list. Output is bit-identical to
// rasterize(); kept for testing and benchmarking.
RenderTarget rasterize_reference(std::span<const GaussianPrimitive> primitives,
                                 const Camera& camera, const RasterConfig& config = {});

// Throws std::invalid_argument on upstream shape mismatch.
Gradients rasterize_backward(const RenderTarget& target, const RenderUpstream& upstream);
Gradients rasterize_backward_reference(const RenderTarget& target, const RenderUpstream& upstream);

}  // namespace gs4d
