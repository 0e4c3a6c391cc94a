#include "gs4d/rasterizer.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

namespace gs4d {
namespace {

constexpr double kC0 = 0.28209479177387814;
constexpr double kC1 = 0.4886025119029199;
constexpr double kC2[] = {1.0925484305920792, -1.0925484305920792, 0.31539156525252005,
                          -1.0925484305920792, 0.5462742152960396};
constexpr double kC3[] = {-0.5900435899266435, 2.890611442640554, -0.4570457994644658,
                          0.3731763325901154,  -0.4570457994644658, 1.445305721320277,
                          -0.5900435899266435};

int basis_count(int degree) { return degree >= 3 ? 16 : 1; }

struct Grad2D {
  Vec2 mean = Vec2::Zero();
  Vec3 conic = Vec3::Zero();
  Vec3 color = Vec3::Zero();
  Feature feature = Feature::Zero();
  double opacity = 0.0;

  void add(const Grad2D& o) {
    mean += o.mean;
    conic += o.conic;
    color += o.color;
    feature += o.feature;
    opacity += o.opacity;
  }
};

PrimitiveCache prepare(const GaussianPrimitive& g, std::size_t index, const Camera& cam,
                       const RasterConfig& cfg) {
  PrimitiveCache c;
  c.act = activate(g, index);
  auto proj = project_gaussian(g, cam, cfg);
  if (!proj) return c;
  c.visible = true;
  c.proj = *proj;
  c.cam_point = cam.to_camera(g.position);
  const Vec3 rel = g.position - cam.center();
  c.view_dist = rel.norm();
  c.view_dir = rel / c.view_dist;
  const Vec3 raw = sh_color(g.sh, c.view_dir, cfg.sh_degree);
  for (int ch = 0; ch < 3; ++ch) {
    double v = raw[ch];
    if (v < 0.0 || v > 1.0) {
      c.clamped |= static_cast<std::uint8_t>(1u << ch);
      v = std::clamp(v, 0.0, 1.0);
    }
    c.color[ch] = v;
  }
  return c;
}

void prepare_target(RenderTarget& t, std::span<const GaussianPrimitive> prims, const Camera& cam,
                    const RasterConfig& cfg) {
  if (cam.width <= 0 || cam.height <= 0) throw std::invalid_argument("rasterize: zero-area image");
  if (cfg.sh_degree != 0 && cfg.sh_degree != 3)
    throw std::invalid_argument("rasterize: sh_degree must be 0 or 3");
  t.height = cam.height;
  t.width = cam.width;
  t.camera = cam;
  t.config = cfg;
  t.primitives.assign(prims.begin(), prims.end());
  t.color = Image(t.height, t.width, 3);
  t.feature = Image(t.height, t.width, kFeatureDim);
  t.alpha = Image(t.height, t.width, 1);
  t.depth = Image(t.height, t.width, 1);
  t.spans.assign(static_cast<std::size_t>(t.height) * t.width, {});
  t.cache.resize(prims.size());
  const auto n = static_cast<std::ptrdiff_t>(prims.size());
#pragma omp parallel for schedule(static)
  for (std::ptrdiff_t i = 0; i < n; ++i) t.cache[i] = prepare(prims[i], i, cam, cfg);
}

std::vector<std::uint32_t> depth_order(const RenderTarget& t) {
  std::vector<std::uint32_t> order;
  order.reserve(t.cache.size());
  for (std::uint32_t i = 0; i < t.cache.size(); ++i)
    if (t.cache[i].visible) order.push_back(i);
  std::sort(order.begin(), order.end(), [&](std::uint32_t a, std::uint32_t b) {
    const double da = t.cache[a].proj.depth, db = t.cache[b].proj.depth;
    if (da != db) return da < db;
    return a < b;
  });
  return order;
}

// Hot fields of one listed primitive, packed so the per-pixel loop stays in cache.
struct Packed {
  double mx, my, ca, cb, cc, opacity, depth;
  Vec3 color;
  Feature feature;
};

std::vector<Packed> pack(const RenderTarget& t, const std::vector<std::uint32_t>& list) {
  std::vector<Packed> out(list.size());
  for (std::size_t s = 0; s < list.size(); ++s) {
    const PrimitiveCache& c = t.cache[list[s]];
    out[s] = {c.proj.mean.x(), c.proj.mean.y(), c.proj.conic[0], c.proj.conic[1], c.proj.conic[2],
              c.act.opacity,   c.proj.depth,    c.color,         t.primitives[list[s]].feature};
  }
  return out;
}

// Front-to-back compositing of one pixel over `list`.
void blend_pixel(RenderTarget& t, int px, int py, std::uint32_t chunk,
                 const std::vector<std::uint32_t>& list, const std::vector<Packed>& packed,
                 std::vector<Contributor>& records) {
  const RasterConfig& cfg = t.config;
  const double ext2 = cfg.extent_sigma * cfg.extent_sigma;
  const std::size_t p = static_cast<std::size_t>(py) * t.width + px;
  double T = 1.0;
  Vec3 color = Vec3::Zero();
  Feature feat = Feature::Zero();
  double depth = 0.0;
  const auto offset = static_cast<std::uint32_t>(records.size());
  const auto n = static_cast<std::uint32_t>(list.size());
  for (std::uint32_t slot = 0; slot < n; ++slot) {
    const Packed& c = packed[slot];
    const double dx = px - c.mx;
    const double dy = py - c.my;
    const double m2 = c.ca * dx * dx + 2.0 * c.cb * dx * dy + c.cc * dy * dy;
    if (m2 > ext2) continue;
    const double a = std::min(cfg.max_alpha, c.opacity * splat_falloff(m2, cfg.extent_sigma));
    const double w = a * T;
    color += w * c.color;
    feat += w * c.feature;
    depth += w * c.depth;
    records.push_back({list[slot], slot, a, T});
    T *= (1.0 - a);
    if (T < cfg.transmittance_cutoff) break;
  }
  for (int ch = 0; ch < 3; ++ch) t.color.data[p * 3 + ch] = color[ch];
  for (int ch = 0; ch < kFeatureDim; ++ch) t.feature.data[p * kFeatureDim + ch] = feat[ch];
  t.alpha.data[p] = 1.0 - T;
  t.depth.data[p] = depth;
  t.spans[p] = {chunk, offset, static_cast<std::uint32_t>(records.size()) - offset};
}

void check_upstream(const RenderTarget& t, const RenderUpstream& up) {
  auto check = [&](const Image& img, int ch, const char* name) {
    if (img.empty()) return;
    if (img.height != t.height || img.width != t.width || img.channels != ch)
      throw std::invalid_argument(std::string("rasterize_backward: upstream ") + name +
                                  " shape mismatch");
  };
  check(up.color, 3, "color");
  check(up.feature, kFeatureDim, "feature");
  check(up.alpha, 1, "alpha");
}

// Back-to-front gradient of one pixel; `sink(slot, Grad2D)` accumulates.
template <typename Sink>
void backprop_pixel(const RenderTarget& t, const RenderUpstream& up, std::size_t p, Sink&& sink) {
  const auto recs = t.contributors(p);
  if (recs.empty()) return;
  Vec3 gc = Vec3::Zero();
  Feature gf = Feature::Zero();
  double ga = 0.0;
  if (!up.color.empty()) gc = Vec3(up.color.pixel(p));
  if (!up.feature.empty()) gf = Eigen::Map<const Feature>(up.feature.pixel(p));
  if (!up.alpha.empty()) ga = up.alpha.data[p];
  if (gc.isZero(0.0) && gf.isZero(0.0) && ga == 0.0) return;

  const int px = static_cast<int>(p % t.width);
  const int py = static_cast<int>(p / t.width);
  const double e2 = t.config.extent_sigma * t.config.extent_sigma;
  const double ge = std::exp(-0.5 * e2);
  const double shift = 0.5 * ge / (1.0 - ge * (1.0 + 0.5 * e2));
  const Contributor& last = recs.back();
  const double t_final = last.transmittance * (1.0 - last.alpha);
  Vec3 acc_c = Vec3::Zero();
  Feature acc_f = Feature::Zero();
  for (std::size_t r = recs.size(); r-- > 0;) {
    const Contributor& rec = recs[r];
    const PrimitiveCache& c = t.cache[rec.primitive];
    const Feature& f = t.primitives[rec.primitive].feature;
    const double w = rec.alpha * rec.transmittance;
    Grad2D g;
    g.color = w * gc;
    g.feature = w * gf;
    const double d_alpha = rec.transmittance * (c.color - acc_c).dot(gc) +
                           rec.transmittance * (f - acc_f).dot(gf) +
                           ga * t_final / (1.0 - rec.alpha);
    acc_c = rec.alpha * c.color + (1.0 - rec.alpha) * acc_c;
    acc_f = rec.alpha * f + (1.0 - rec.alpha) * acc_f;

    const double dx = px - c.proj.mean.x();
    const double dy = py - c.proj.mean.y();
    const Vec3& con = c.proj.conic;
    const double m2 = con[0] * dx * dx + 2.0 * con[1] * dx * dy + con[2] * dy * dy;
    if (rec.alpha < t.config.max_alpha) {
      // unclamped alpha = opacity * K, so K and its slope follow without another exp
      const double k = c.act.opacity > 0.0 ? rec.alpha / c.act.opacity : splat_falloff(m2, t.config.extent_sigma);
      g.opacity = d_alpha * k;
      const double slope = k + shift * (e2 - m2);
      const double d_power = d_alpha * c.act.opacity * slope;
      g.mean = d_power * Vec2(con[0] * dx + con[1] * dy, con[1] * dx + con[2] * dy);
      g.conic = d_power * Vec3(-0.5 * dx * dx, -dx * dy, -0.5 * dy * dy);
    }
    sink(rec.slot, g);
  }
}

// Chain 2D gradients of primitive i back to its parameters.
void chain_to_params(const RenderTarget& t, std::size_t i, const Grad2D& g2, Gradients& out) {
  const PrimitiveCache& c = t.cache[i];
  const GaussianPrimitive& prim = t.primitives[i];
  const Camera& cam = t.camera;
  out.visible[i] = 1;
  out.feature[i] = g2.feature;
  out.opacity_logit[i] = g2.opacity * c.act.opacity * (1.0 - c.act.opacity);
  out.mean2d_norm[i] =
      Vec2(g2.mean.x() * 0.5 * t.width, g2.mean.y() * 0.5 * t.height).norm();

  // colour -> SH coefficients and view direction
  const int nb = basis_count(t.config.sh_degree);
  double basis[16];
  Vec3 dbasis[16];
  sh_basis(c.view_dir, t.config.sh_degree, basis, dbasis);
  Vec3 d_dir = Vec3::Zero();
  ShCoeffs dsh = ShCoeffs::Zero();
  for (int ch = 0; ch < 3; ++ch) {
    if (c.clamped & (1u << ch)) continue;
    const double gc = g2.color[ch];
    for (int k = 0; k < nb; ++k) {
      dsh(k, ch) = gc * basis[k];
      d_dir += gc * prim.sh(k, ch) * dbasis[k];
    }
  }
  out.sh[i] = dsh;
  Vec3 d_pos = (d_dir - c.view_dir * c.view_dir.dot(d_dir)) / c.view_dist;

  // conic -> 2D covariance
  const Vec3& con = c.proj.conic;
  Mat2 inv;
  inv << con[0], con[1], con[1], con[2];
  Mat2 g_inv;
  g_inv << g2.conic[0], 0.5 * g2.conic[1], 0.5 * g2.conic[1], g2.conic[2];
  const Mat2 g_cov = -inv * g_inv * inv;

  const double x = c.cam_point.x(), y = c.cam_point.y(), z = c.cam_point.z();
  const double fx = cam.fx(), fy = cam.fy();
  Eigen::Matrix<double, 2, 3> J;
  J << fx / z, 0.0, -fx * x / (z * z), 0.0, fy / z, -fy * y / (z * z);
  const Eigen::Matrix<double, 2, 3> T = J * cam.R;
  const Mat3& sigma = c.act.covariance;
  const Mat3 g_sigma = T.transpose() * g_cov * T;
  const Eigen::Matrix<double, 2, 3> g_T = 2.0 * g_cov * T * sigma;
  const Eigen::Matrix<double, 2, 3> g_J = g_T * cam.R.transpose();

  Vec3 d_cam = Vec3::Zero();
  const double z2 = z * z, z3 = z2 * z;
  d_cam.x() += g_J(0, 2) * (-fx / z2);
  d_cam.y() += g_J(1, 2) * (-fy / z2);
  d_cam.z() += g_J(0, 0) * (-fx / z2) + g_J(0, 2) * (2.0 * fx * x / z3) +
               g_J(1, 1) * (-fy / z2) + g_J(1, 2) * (2.0 * fy * y / z3);
  d_cam.x() += g2.mean.x() * fx / z;
  d_cam.y() += g2.mean.y() * fy / z;
  d_cam.z() += -g2.mean.x() * fx * x / z2 - g2.mean.y() * fy * y / z2;
  d_pos += cam.R.transpose() * d_cam;
  out.position[i] = d_pos;

  // covariance -> scale and rotation
  const Vec3& s = c.act.scale;
  const Mat3 M = c.act.rotation * s.asDiagonal();
  const Mat3 g_M = 2.0 * g_sigma * M;
  Vec3 d_log_scale;
  Mat3 g_R;
  for (int k = 0; k < 3; ++k) {
    d_log_scale[k] = g_M.col(k).dot(c.act.rotation.col(k)) * s[k];
    g_R.col(k) = g_M.col(k) * s[k];
  }
  out.log_scale[i] = d_log_scale;
  const Vec4 qn = quat_normalize(prim.rotation);
  const auto dR = rotation_jacobian(qn);
  Vec4 g_qn;
  for (int j = 0; j < 4; ++j) g_qn[j] = (g_R.array() * dR[j].array()).sum();
  out.rotation[i] = normalize_backward(prim.rotation, g_qn);
}

Gradients finish_backward(const RenderTarget& t, const std::vector<Grad2D>& g2) {
  Gradients out(t.primitives.size());
  const auto n = static_cast<std::ptrdiff_t>(t.primitives.size());
#pragma omp parallel for schedule(static)
  for (std::ptrdiff_t i = 0; i < n; ++i) {
    if (t.cache[i].visible) chain_to_params(t, i, g2[i], out);
  }
  return out;
}

}  // namespace

void sh_basis(const Vec3& d, int degree, double* v, Vec3* g) {
  v[0] = kC0;
  if (g) g[0].setZero();
  if (degree < 3) return;
  const double x = d.x(), y = d.y(), z = d.z();
  const double xx = x * x, yy = y * y, zz = z * z;
  v[1] = -kC1 * y;
  v[2] = kC1 * z;
  v[3] = -kC1 * x;
  v[4] = kC2[0] * x * y;
  v[5] = kC2[1] * y * z;
  v[6] = kC2[2] * (2.0 * zz - xx - yy);
  v[7] = kC2[3] * x * z;
  v[8] = kC2[4] * (xx - yy);
  v[9] = kC3[0] * y * (3.0 * xx - yy);
  v[10] = kC3[1] * x * y * z;
  v[11] = kC3[2] * y * (4.0 * zz - xx - yy);
  v[12] = kC3[3] * z * (2.0 * zz - 3.0 * xx - 3.0 * yy);
  v[13] = kC3[4] * x * (4.0 * zz - xx - yy);
  v[14] = kC3[5] * z * (xx - yy);
  v[15] = kC3[6] * x * (xx - 3.0 * yy);
  if (!g) return;
  g[1] = Vec3(0.0, -kC1, 0.0);
  g[2] = Vec3(0.0, 0.0, kC1);
  g[3] = Vec3(-kC1, 0.0, 0.0);
  g[4] = kC2[0] * Vec3(y, x, 0.0);
  g[5] = kC2[1] * Vec3(0.0, z, y);
  g[6] = kC2[2] * Vec3(-2.0 * x, -2.0 * y, 4.0 * z);
  g[7] = kC2[3] * Vec3(z, 0.0, x);
  g[8] = kC2[4] * Vec3(2.0 * x, -2.0 * y, 0.0);
  g[9] = kC3[0] * Vec3(6.0 * x * y, 3.0 * xx - 3.0 * yy, 0.0);
  g[10] = kC3[1] * Vec3(y * z, x * z, x * y);
  g[11] = kC3[2] * Vec3(-2.0 * x * y, 4.0 * zz - xx - 3.0 * yy, 8.0 * y * z);
  g[12] = kC3[3] * Vec3(-6.0 * x * z, -6.0 * y * z, 6.0 * zz - 3.0 * xx - 3.0 * yy);
  g[13] = kC3[4] * Vec3(4.0 * zz - 3.0 * xx - yy, -2.0 * x * y, 8.0 * x * z);
  g[14] = kC3[5] * Vec3(2.0 * x * z, -2.0 * y * z, xx - yy);
  g[15] = kC3[6] * Vec3(3.0 * xx - 3.0 * yy, -6.0 * x * y, 0.0);
}

Vec3 sh_color(const ShCoeffs& sh, const Vec3& direction, int degree) {
  double basis[16];
  sh_basis(direction, degree, basis, nullptr);
  Vec3 c = Vec3::Constant(0.5);
  for (int k = 0; k < basis_count(degree); ++k) c += basis[k] * sh.row(k).transpose();
  return c;
}

double splat_falloff(double m2, double extent_sigma) {
  const double e2 = extent_sigma * extent_sigma;
  if (m2 > e2) return 0.0;
  // minus the tangent at the cut, so value and slope both vanish there
  const double ge = std::exp(-0.5 * e2);
  return (std::exp(-0.5 * m2) - ge + 0.5 * ge * (m2 - e2)) / (1.0 - ge * (1.0 + 0.5 * e2));
}

double splat_falloff_slope(double m2, double extent_sigma) {
  const double e2 = extent_sigma * extent_sigma;
  if (m2 > e2) return 0.0;
  const double ge = std::exp(-0.5 * e2);
  return (std::exp(-0.5 * m2) - ge) / (1.0 - ge * (1.0 + 0.5 * e2));
}

std::optional<ProjectedGaussian> project_gaussian(const GaussianPrimitive& g, const Camera& cam,
                                                  const RasterConfig& cfg) {
  const Vec3 pc = cam.to_camera(g.position);
  if (pc.z() <= cfg.near_plane) return std::nullopt;
  const ActivatedPrimitive a = activate(g);
  const double x = pc.x(), y = pc.y(), z = pc.z();
  Eigen::Matrix<double, 2, 3> J;
  J << cam.fx() / z, 0.0, -cam.fx() * x / (z * z), 0.0, cam.fy() / z, -cam.fy() * y / (z * z);
  const Eigen::Matrix<double, 2, 3> T = J * cam.R;
  ProjectedGaussian pg;
  pg.cov = T * a.covariance * T.transpose();
  pg.cov(0, 0) += cfg.dilation;
  pg.cov(1, 1) += cfg.dilation;
  pg.cov(0, 1) = pg.cov(1, 0) = 0.5 * (pg.cov(0, 1) + pg.cov(1, 0));
  const double det = pg.cov.determinant();
  if (!(det > 0.0)) return std::nullopt;
  pg.conic = Vec3(pg.cov(1, 1) / det, -pg.cov(0, 1) / det, pg.cov(0, 0) / det);
  pg.mean = Vec2(cam.fx() * x / z + cam.cx(), cam.fy() * y / z + cam.cy());
  pg.depth = z;
  const double mid = 0.5 * (pg.cov(0, 0) + pg.cov(1, 1));
  const double lambda_max = mid + std::sqrt(std::max(0.0, mid * mid - det));
  pg.cull_radius = cfg.cull_sigma * std::sqrt(lambda_max);
  pg.extent_radius = cfg.extent_sigma * std::sqrt(lambda_max);
  const double r = pg.cull_radius;
  if (pg.mean.x() + r < 0.0 || pg.mean.x() - r > cam.width - 1 || pg.mean.y() + r < 0.0 ||
      pg.mean.y() - r > cam.height - 1)
    return std::nullopt;
  return pg;
}

void Gradients::resize(std::size_t n) {
  position.assign(n, Vec3::Zero());
  rotation.assign(n, Vec4::Zero());
  log_scale.assign(n, Vec3::Zero());
  opacity_logit.assign(n, 0.0);
  sh.assign(n, ShCoeffs::Zero());
  feature.assign(n, Feature::Zero());
  mean2d_norm.assign(n, 0.0);
  visible.assign(n, 0);
}

void Gradients::set_zero() { resize(size()); }

void Gradients::add(const Gradients& o) {
  if (o.size() != size()) throw std::invalid_argument("Gradients::add: size mismatch");
  for (std::size_t i = 0; i < size(); ++i) {
    position[i] += o.position[i];
    rotation[i] += o.rotation[i];
    log_scale[i] += o.log_scale[i];
    opacity_logit[i] += o.opacity_logit[i];
    sh[i] += o.sh[i];
    feature[i] += o.feature[i];
    mean2d_norm[i] += o.mean2d_norm[i];
    visible[i] = visible[i] | o.visible[i];
  }
}

bool Gradients::all_finite() const {
  for (std::size_t i = 0; i < size(); ++i) {
    if (!position[i].allFinite() || !rotation[i].allFinite() || !log_scale[i].allFinite() ||
        !std::isfinite(opacity_logit[i]) || !sh[i].allFinite() || !feature[i].allFinite())
      return false;
  }
  return true;
}

RenderTarget rasterize(std::span<const GaussianPrimitive> prims, const Camera& cam,
                       const RasterConfig& cfg) {
  RenderTarget t;
  prepare_target(t, prims, cam, cfg);
  const std::vector<std::uint32_t> order = depth_order(t);

  const int ts = cfg.tile_size;
  const int tiles_x = (t.width + ts - 1) / ts;
  const int tiles_y = (t.height + ts - 1) / ts;
  const int n_tiles = tiles_x * tiles_y;
  t.chunk_lists.assign(n_tiles, {});
  t.chunk_records.assign(n_tiles, {});
  for (std::uint32_t idx : order) {
    const ProjectedGaussian& pg = t.cache[idx].proj;
    const double r = pg.extent_radius;
    const int x0 = std::max(0, static_cast<int>(std::floor((pg.mean.x() - r) / ts)));
    const int x1 = std::min(tiles_x - 1, static_cast<int>(std::floor((pg.mean.x() + r) / ts)));
    const int y0 = std::max(0, static_cast<int>(std::floor((pg.mean.y() - r) / ts)));
    const int y1 = std::min(tiles_y - 1, static_cast<int>(std::floor((pg.mean.y() + r) / ts)));
    for (int ty = y0; ty <= y1; ++ty)
      for (int tx = x0; tx <= x1; ++tx) t.chunk_lists[ty * tiles_x + tx].push_back(idx);
  }

#pragma omp parallel for schedule(dynamic)
  for (int tile = 0; tile < n_tiles; ++tile) {
    const int tx = tile % tiles_x, ty = tile / tiles_x;
    const auto& list = t.chunk_lists[tile];
    auto& records = t.chunk_records[tile];
    const std::vector<Packed> packed = pack(t, list);
    records.reserve(static_cast<std::size_t>(ts) * ts * std::min<std::size_t>(list.size(), 64));
    for (int py = ty * ts; py < std::min(t.height, (ty + 1) * ts); ++py)
      for (int px = tx * ts; px < std::min(t.width, (tx + 1) * ts); ++px)
        blend_pixel(t, px, py, static_cast<std::uint32_t>(tile), list, packed, records);
  }
  return t;
}

RenderTarget rasterize(const SceneModel& scene, const Camera& camera, const RasterConfig& cfg) {
  const auto all = scene.combined();
  return rasterize(std::span<const GaussianPrimitive>(all), camera, cfg);
}

RenderTarget rasterize_reference(std::span<const GaussianPrimitive> prims, const Camera& cam,
                                 const RasterConfig& cfg) {
  RenderTarget t;
  prepare_target(t, prims, cam, cfg);
  t.tiled = false;
  t.chunk_lists.assign(1, depth_order(t));
  t.chunk_records.assign(1, {});
  const std::vector<Packed> packed = pack(t, t.chunk_lists[0]);
  for (int py = 0; py < t.height; ++py)
    for (int px = 0; px < t.width; ++px)
      blend_pixel(t, px, py, 0, t.chunk_lists[0], packed, t.chunk_records[0]);
  return t;
}

Gradients rasterize_backward(const RenderTarget& t, const RenderUpstream& up) {
  check_upstream(t, up);
  const int ts = t.config.tile_size;
  const int tiles_x = (t.width + ts - 1) / ts;
  const int n_tiles = static_cast<int>(t.chunk_lists.size());
  if (!t.tiled) return rasterize_backward_reference(t, up);
  std::vector<std::vector<Grad2D>> local(n_tiles);
#pragma omp parallel for schedule(dynamic)
  for (int tile = 0; tile < n_tiles; ++tile) {
    auto& buf = local[tile];
    buf.assign(t.chunk_lists[tile].size(), Grad2D{});
    const int tx = tile % tiles_x, ty = tile / tiles_x;
    for (int py = ty * ts; py < std::min(t.height, (ty + 1) * ts); ++py)
      for (int px = tx * ts; px < std::min(t.width, (tx + 1) * ts); ++px)
        backprop_pixel(t, up, static_cast<std::size_t>(py) * t.width + px,
                       [&](std::uint32_t slot, const Grad2D& g) { buf[slot].add(g); });
  }
  std::vector<Grad2D> g2(t.primitives.size());
  for (int tile = 0; tile < n_tiles; ++tile) {
    const auto& list = t.chunk_lists[tile];
    for (std::size_t s = 0; s < list.size(); ++s) g2[list[s]].add(local[tile][s]);
  }
  return finish_backward(t, g2);
}

Gradients rasterize_backward_reference(const RenderTarget& t, const RenderUpstream& up) {
  check_upstream(t, up);
  std::vector<Grad2D> g2(t.primitives.size());
  const std::size_t n_pix = static_cast<std::size_t>(t.height) * t.width;
  for (std::size_t p = 0; p < n_pix; ++p) {
    const std::uint32_t chunk = t.spans[p].chunk;
    backprop_pixel(t, up, p, [&](std::uint32_t slot, const Grad2D& g) {
      g2[t.chunk_lists[chunk][slot]].add(g);
    });
  }
  return finish_backward(t, g2);
}

}  // namespace gs4d
