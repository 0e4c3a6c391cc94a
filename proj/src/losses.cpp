#include "gs4d/losses.hpp"

#include "gs4d/mask_geometry.hpp"

#include <json.hpp>

#include <algorithm>
#include <array>
#include <cmath>
#include <iostream>
#include <stdexcept>

namespace gs4d {

void LossWeights::validate() const {
  const std::pair<const char*, double> all[] = {
      {"iso", iso},   {"size", size},       {"id", id},     {"emb", emb},
      {"kl3d", kl3d}, {"smooth", smooth},   {"sdf", sdf},   {"temp_bg", temp_bg},
      {"temp", temp}, {"dssim_mix", dssim_mix}};
  for (const auto& [name, v] : all)
    if (!std::isfinite(v) || v < 0.0)
      throw std::invalid_argument(std::string("loss weight ") + name + " must be finite and >= 0");
  if (dssim_mix > 1.0) throw std::invalid_argument("dssim_mix must lie in [0,1]");
}

// ---------------------------------------------------------------- SSIM

namespace {

constexpr int kWin = 11;
constexpr double kC1 = 0.01 * 0.01;
constexpr double kC2 = 0.03 * 0.03;

const std::array<double, kWin>& gauss_window() {
  static const std::array<double, kWin> w = [] {
    std::array<double, kWin> g{};
    double s = 0.0;
    for (int i = 0; i < kWin; ++i) {
      const double x = i - kWin / 2;
      g[i] = std::exp(-x * x / (2.0 * 1.5 * 1.5));
      s += g[i];
    }
    for (double& v : g) v /= s;
    return g;
  }();
  return w;
}

// Zero-padded separable Gaussian filter of a single-channel H x W plane. The kernel is
// symmetric so this is also its own adjoint.
void blur(const std::vector<double>& in, std::vector<double>& out, int h, int w) {
  const auto& g = gauss_window();
  const int r = kWin / 2;
  std::vector<double> tmp(in.size(), 0.0);
#pragma omp parallel for
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      double s = 0.0;
      for (int k = -r; k <= r; ++k) {
        const int xx = x + k;
        if (xx >= 0 && xx < w) s += g[k + r] * in[static_cast<std::size_t>(y) * w + xx];
      }
      tmp[static_cast<std::size_t>(y) * w + x] = s;
    }
  out.assign(in.size(), 0.0);
#pragma omp parallel for
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      double s = 0.0;
      for (int k = -r; k <= r; ++k) {
        const int yy = y + k;
        if (yy >= 0 && yy < h) s += g[k + r] * tmp[static_cast<std::size_t>(yy) * w + x];
      }
      out[static_cast<std::size_t>(y) * w + x] = s;
    }
}

struct SsimWork {
  Image map;
  // per-pixel partials of the map w.r.t. mu_a, sigma_a^2, sigma_ab (after folding the mean
  // dependencies in): coefficients of (G*a), (G*a^2), (G*ab)
  Image da, daa, dab;
};

SsimWork ssim_work(const Image& a, const Image& b, bool partials) {
  if (!a.same_shape(b)) throw std::invalid_argument("ssim: shape mismatch");
  const int h = a.height, w = a.width, ch = a.channels;
  const std::size_t n = a.pixels();
  SsimWork out;
  out.map = Image(h, w, ch);
  if (partials) out.da = out.daa = out.dab = Image(h, w, ch);
  std::vector<double> pa(n), pb(n), paa(n), pbb(n), pab(n);
  std::vector<double> ma, mb, maa, mbb, mab;
  for (int c = 0; c < ch; ++c) {
    for (std::size_t p = 0; p < n; ++p) {
      const double x = a.data[p * ch + c], y = b.data[p * ch + c];
      pa[p] = x;
      pb[p] = y;
      paa[p] = x * x;
      pbb[p] = y * y;
      pab[p] = x * y;
    }
    blur(pa, ma, h, w);
    blur(pb, mb, h, w);
    blur(paa, maa, h, w);
    blur(pbb, mbb, h, w);
    blur(pab, mab, h, w);
    for (std::size_t p = 0; p < n; ++p) {
      const double mx = ma[p], my = mb[p];
      const double sxx = maa[p] - mx * mx, syy = mbb[p] - my * my, sxy = mab[p] - mx * my;
      const double n1 = 2.0 * mx * my + kC1, n2 = 2.0 * sxy + kC2;
      const double d1 = mx * mx + my * my + kC1, d2 = sxx + syy + kC2;
      const double s = (n1 * n2) / (d1 * d2);
      out.map.data[p * ch + c] = s;
      if (!partials) continue;
      const double ds_dmx = 2.0 * my * n2 / (d1 * d2) - s * 2.0 * mx / d1;
      const double ds_dsxx = -s / d2;
      const double ds_dsxy = 2.0 * n1 / (d1 * d2);
      // sxx = G*a^2 - mx^2 and sxy = G*ab - mx my also depend on mx
      out.da.data[p * ch + c] = ds_dmx - 2.0 * mx * ds_dsxx - my * ds_dsxy;
      out.daa.data[p * ch + c] = ds_dsxx;
      out.dab.data[p * ch + c] = ds_dsxy;
    }
  }
  return out;
}

// Gradient w.r.t. a of sum_p weight(p) * ssim_map(p).
Image ssim_backward(const Image& a, const Image& b, const SsimWork& wk, const Image& weight) {
  const int h = a.height, w = a.width, ch = a.channels;
  const std::size_t n = a.pixels();
  Image grad(h, w, ch);
  std::vector<double> qa(n), qaa(n), qab(n), ba, baa, bab;
  for (int c = 0; c < ch; ++c) {
    for (std::size_t p = 0; p < n; ++p) {
      const double wt = weight.data[p * ch + c];
      qa[p] = wt * wk.da.data[p * ch + c];
      qaa[p] = wt * wk.daa.data[p * ch + c];
      qab[p] = wt * wk.dab.data[p * ch + c];
    }
    blur(qa, ba, h, w);
    blur(qaa, baa, h, w);
    blur(qab, bab, h, w);
    for (std::size_t p = 0; p < n; ++p)
      grad.data[p * ch + c] =
          ba[p] + 2.0 * a.data[p * ch + c] * baa[p] + b.data[p * ch + c] * bab[p];
  }
  return grad;
}

}  // namespace

SsimMaps ssim_map(const Image& a, const Image& b) {
  SsimWork wk = ssim_work(a, b, false);
  SsimMaps out;
  double s = 0.0;
  for (double v : wk.map.data) s += v;
  out.value = wk.map.data.empty() ? 1.0 : s / static_cast<double>(wk.map.data.size());
  out.map = std::move(wk.map);
  return out;
}

double ssim(const Image& a, const Image& b) { return ssim_map(a, b).value; }

ImageLoss color_loss(const Image& pred_in, const Image& target_in, double mix, const LabelMap* mask) {
  if (!pred_in.same_shape(target_in)) throw std::invalid_argument("color_loss: shape mismatch");
  const int ch = pred_in.channels;
  const std::size_t n = pred_in.pixels();
  ImageLoss out;
  out.grad = Image(pred_in.height, pred_in.width, ch);

  const Image* pred = &pred_in;
  const Image* target = &target_in;
  Image pm, tm;
  std::size_t kept = n;
  if (mask) {
    if (mask->height != pred_in.height || mask->width != pred_in.width)
      throw std::invalid_argument("color_loss: mask resolution mismatch");
    pm = pred_in;
    tm = target_in;
    kept = 0;
    for (std::size_t p = 0; p < n; ++p) {
      if (mask->data[p]) {
        ++kept;
        continue;
      }
      for (int c = 0; c < ch; ++c) pm.data[p * ch + c] = tm.data[p * ch + c] = 0.0;
    }
    pred = &pm;
    target = &tm;
    if (kept == 0) {
      std::cerr << "warning: color_loss mask selects no pixels\n";
      return out;
    }
  }
  const double inv = 1.0 / (static_cast<double>(kept) * ch);
  auto keep = [&](std::size_t p) { return !mask || mask->data[p] != 0; };

  double l1 = 0.0;
  for (std::size_t p = 0; p < n; ++p) {
    if (!keep(p)) continue;
    for (int c = 0; c < ch; ++c) {
      const double d = pred->data[p * ch + c] - target->data[p * ch + c];
      l1 += std::abs(d);
      out.grad.data[p * ch + c] = (1.0 - mix) * inv * ((d > 0.0) - (d < 0.0));
    }
  }
  l1 *= inv;
  double dssim = 0.0;
  if (mix > 0.0) {
    const SsimWork wk = ssim_work(*pred, *target, true);
    Image weight(pred->height, pred->width, ch);
    double s = 0.0;
    for (std::size_t p = 0; p < n; ++p) {
      if (!keep(p)) continue;
      for (int c = 0; c < ch; ++c) {
        s += wk.map.data[p * ch + c];
        weight.data[p * ch + c] = -0.5 * mix * inv;
      }
    }
    dssim = (1.0 - s * inv) / 2.0;
    const Image g = ssim_backward(*pred, *target, wk, weight);
    for (std::size_t p = 0; p < n; ++p) {
      if (!keep(p)) continue;  // masked-out inputs were replaced by constants
      for (int c = 0; c < ch; ++c) out.grad.data[p * ch + c] += g.data[p * ch + c];
    }
  }
  out.value = (1.0 - mix) * l1 + mix * dssim;
  return out;
}

// ---------------------------------------------------------------- scale terms

ScaleLossValues iso_size_losses(std::span<const GaussianPrimitive> prims, double tau,
                                double w_iso, double w_size, Gradients* grads, std::size_t offset) {
  ScaleLossValues out;
  if (prims.empty()) return out;
  const double inv_n = 1.0 / static_cast<double>(prims.size());
  for (std::size_t i = 0; i < prims.size(); ++i) {
    const Vec3 s = prims[i].log_scale.array().exp();
    const double m = s.mean();
    Vec3 g_iso = Vec3::Zero();
    double e = 0.0;
    for (int k = 0; k < 3; ++k) {
      const double r = s[k] / m;
      e += std::abs(r - 1.0);
      const double sg = (r > 1.0) - (r < 1.0);
      // d r_k / d l_j = r_k (delta_kj - s_j / (3m))
      for (int j = 0; j < 3; ++j) g_iso[j] += sg * r * ((k == j) - s[j] / (3.0 * m));
    }
    out.iso += e / 3.0 * inv_n;
    int kmax = 0;
    s.maxCoeff(&kmax);
    const double over = s[kmax] - tau;
    Vec3 g_size = Vec3::Zero();
    if (over > 0.0) {
      out.size += over * over * inv_n;
      g_size[kmax] = 2.0 * over * s[kmax];
    }
    if (grads)
      grads->log_scale[offset + i] += (w_iso / 3.0 * g_iso + w_size * g_size) * inv_n;
  }
  return out;
}

// ---------------------------------------------------------------- semantic terms

Eigen::MatrixXd softmax_rows(const Eigen::MatrixXd& z) {
  Eigen::MatrixXd p(z.rows(), z.cols());
  for (Eigen::Index r = 0; r < z.rows(); ++r) {
    const double m = z.row(r).maxCoeff();
    p.row(r) = (z.row(r).array() - m).exp();
    p.row(r) /= p.row(r).sum();
  }
  return p;
}

RowLoss id_loss(const Eigen::MatrixXd& logits, std::span<const int> labels) {
  if (static_cast<Eigen::Index>(labels.size()) != logits.rows())
    throw std::invalid_argument("id_loss: one label per row required");
  RowLoss out;
  out.grad = softmax_rows(logits);
  if (logits.rows() == 0) return out;
  const double inv = 1.0 / static_cast<double>(logits.rows());
  for (Eigen::Index r = 0; r < logits.rows(); ++r) {
    const int y = labels[r];
    if (y < 0 || y >= logits.cols())
      throw std::invalid_argument("id_loss: label " + std::to_string(y) + " exceeds D = " +
                                  std::to_string(logits.cols() - 1));
    // log-sum-exp form keeps confident rows finite
    const double m = logits.row(r).maxCoeff();
    const double lse = m + std::log((logits.row(r).array() - m).exp().sum());
    out.value += (lse - logits(r, y)) * inv;
    out.grad(r, y) -= 1.0;
  }
  out.grad *= inv;
  return out;
}

RowLoss emb_loss(const Eigen::MatrixXd& pred, const Eigen::MatrixXd& target,
                 std::span<const std::uint8_t> valid) {
  if (pred.rows() != target.rows() || pred.cols() != target.cols() ||
      static_cast<Eigen::Index>(valid.size()) != pred.rows())
    throw std::invalid_argument("emb_loss: shape mismatch");
  RowLoss out;
  out.grad = Eigen::MatrixXd::Zero(pred.rows(), pred.cols());
  long count = 0;
  for (auto v : valid) count += v ? 1 : 0;
  if (count == 0 || pred.cols() == 0) return out;
  const double inv = 1.0 / (static_cast<double>(count) * pred.cols());
  for (Eigen::Index r = 0; r < pred.rows(); ++r) {
    if (!valid[r]) continue;
    for (Eigen::Index c = 0; c < pred.cols(); ++c) {
      const double d = pred(r, c) - target(r, c);
      out.value += std::abs(d) * inv;
      out.grad(r, c) = ((d > 0.0) - (d < 0.0)) * inv;
    }
  }
  return out;
}

RowLoss kl3d_loss(const Eigen::MatrixXd& logits, std::span<const int> sample,
                  const std::vector<std::vector<int>>& neighbors) {
  constexpr double kFloor = 1e-8;
  RowLoss out;
  out.grad = Eigen::MatrixXd::Zero(logits.rows(), logits.cols());
  if (sample.empty()) return out;
  const Eigen::MatrixXd p = softmax_rows(logits);
  const Eigen::MatrixXd pc = p.cwiseMax(kFloor).cwiseMin(1.0);
  Eigen::MatrixXd dp = Eigen::MatrixXd::Zero(p.rows(), p.cols());
  const double inv_s = 1.0 / static_cast<double>(sample.size());
  for (int i : sample) {
    const auto& nb = neighbors.at(i);
    if (nb.empty()) throw std::invalid_argument("kl3d_loss: primitive without neighbours");
    const double w = inv_s / static_cast<double>(nb.size());
    for (int j : nb) {
      for (Eigen::Index c = 0; c < p.cols(); ++c) {
        const double a = pc(i, c), b = pc(j, c);
        const double lr = std::log(a / b);
        out.value += w * a * lr;
        const bool ai = p(i, c) > kFloor && p(i, c) < 1.0;
        const bool bj = p(j, c) > kFloor && p(j, c) < 1.0;
        if (ai) dp(i, c) += w * (lr + 1.0);
        if (bj) dp(j, c) -= w * a / b;
      }
    }
  }
  // softmax backward: dz = p * (dp - <dp, p>)
  for (Eigen::Index r = 0; r < p.rows(); ++r) {
    const double s = dp.row(r).dot(p.row(r));
    out.grad.row(r) = p.row(r).array() * (dp.row(r).array() - s);
  }
  return out;
}

// ---------------------------------------------------------------- ARAP

ArapResult arap_loss(const ArapInputs& in) {
  const std::size_t n = in.positions.size();
  if (in.rotations.size() != n || in.prev_positions.size() != n || in.prev_rotations.size() != n ||
      !in.neighbors || in.neighbors->size() != n)
    throw std::invalid_argument("arap_loss: inconsistent input sizes");
  ArapResult out;
  out.grad_position.assign(n, Vec3::Zero());
  out.grad_rotation.assign(n, Vec4::Zero());
  const double inv_l2 = 1.0 / (in.radius * in.radius);

  std::vector<double> partial(n, 0.0);
#pragma omp parallel for schedule(static)
  for (std::size_t i = 0; i < n; ++i) {
    const Vec4 qt = quat_normalize(in.rotations[i]);
    const Vec4 c = quat_conjugate(quat_normalize(in.prev_rotations[i]));
    const Eigen::Matrix4d mc = right_multiply_matrix(c);
    const Vec4 r = mc * qt;
    const Mat3 rot = quat_to_rotation(r);
    Mat3 g_rot = Mat3::Zero();
    double e_i = 0.0;
    for (int k : (*in.neighbors)[i]) {
      const Vec3 d = in.prev_positions[k] - in.prev_positions[i];
      const double w = std::exp(-d.squaredNorm() * inv_l2);
      const Vec3 res = rot * d - (in.positions[k] - in.positions[i]);
      e_i += w * res.squaredNorm();
      g_rot += 2.0 * w * res * d.transpose();
      out.grad_position[i] += 2.0 * w * res;
    }
    partial[i] = e_i;
    const auto dr = rotation_jacobian(r);
    Vec4 g_r;
    for (int m = 0; m < 4; ++m) g_r[m] = (g_rot.array() * dr[m].array()).sum();
    out.grad_rotation[i] = normalize_backward(in.rotations[i], mc.transpose() * g_r);
  }
  // neighbour terms -2 w res land on other primitives; second pass keeps the loop race-free
  for (std::size_t i = 0; i < n; ++i) {
    const Mat3 rot = quat_to_rotation(quat_multiply(quat_normalize(in.rotations[i]),
                                                    quat_conjugate(quat_normalize(in.prev_rotations[i]))));
    for (int k : (*in.neighbors)[i]) {
      const Vec3 d = in.prev_positions[k] - in.prev_positions[i];
      const double w = std::exp(-d.squaredNorm() * inv_l2);
      const Vec3 res = rot * d - (in.positions[k] - in.positions[i]);
      out.grad_position[k] -= 2.0 * w * res;
    }
    out.value += partial[i];
  }
  return out;
}

// ---------------------------------------------------------------- SDF

double sdf_loss(std::span<const GaussianPrimitive> fg, std::span<const int> labels,
                const std::vector<std::vector<Image>>& sdf, std::span<const Camera> cameras,
                double weight, Gradients* grads, std::size_t offset) {
  if (labels.size() != fg.size()) throw std::invalid_argument("sdf_loss: one label per primitive");
  if (sdf.size() != cameras.size()) throw std::invalid_argument("sdf_loss: one SDF set per view");
  std::vector<double> partial(fg.size(), 0.0);
  for (std::size_t v = 0; v < cameras.size(); ++v)
    for (std::size_t i = 0; i < fg.size(); ++i)
      if (labels[i] > 0 && static_cast<std::size_t>(labels[i]) > sdf[v].size())
        throw std::invalid_argument("sdf_loss: missing SDF for instance " +
                                    std::to_string(labels[i]) + " in view " + std::to_string(v));
#pragma omp parallel for schedule(static)
  for (std::size_t i = 0; i < fg.size(); ++i) {
    if (labels[i] <= 0) continue;
    Vec3 g = Vec3::Zero();
    for (std::size_t v = 0; v < cameras.size(); ++v) {
      const Camera& cam = cameras[v];
      if (sdf[v][labels[i] - 1].empty()) continue;  // instance not seen in this view
      const Vec3 x = cam.to_camera(fg[i].position);
      if (x.z() <= 1e-2) continue;
      const Vec2 uv(cam.fx() * x.x() / x.z() + cam.cx(), cam.fy() * x.y() / x.z() + cam.cy());
      Vec2 dphi;
      const double phi = sample_bilinear(sdf[v][labels[i] - 1], uv.x(), uv.y(), 0, &dphi);
      if (phi <= 0.0) continue;
      partial[i] += phi * phi;
      Eigen::Matrix<double, 2, 3> j;
      j << cam.fx() / x.z(), 0.0, -cam.fx() * x.x() / (x.z() * x.z()), 0.0, cam.fy() / x.z(),
          -cam.fy() * x.y() / (x.z() * x.z());
      g += 2.0 * phi * (dphi.transpose() * j * cam.R).transpose();
    }
    if (grads) grads->position[offset + i] += weight * g;
  }
  double total = 0.0;
  for (double p : partial) total += p;
  return total;
}

// ---------------------------------------------------------------- temporal

double temporal_bg_loss(std::span<const GaussianPrimitive> bg,
                        std::span<const AppearanceSnapshot> ref, double weight, Gradients* grads,
                        std::size_t offset) {
  if (bg.size() != ref.size())
    throw std::invalid_argument("temporal_bg_loss: " + std::to_string(bg.size()) +
                                " primitives vs " + std::to_string(ref.size()) + " references");
  if (bg.empty()) return 0.0;
  const double inv = 1.0 / static_cast<double>(bg.size());
  double total = 0.0;
  for (std::size_t i = 0; i < bg.size(); ++i) {
    const ShCoeffs dsh = bg[i].sh - ref[i].sh;
    const double dop = bg[i].opacity_logit - ref[i].opacity_logit;
    total += (dsh.squaredNorm() + dop * dop) * inv;
    if (grads) {
      grads->sh[offset + i] += 2.0 * weight * inv * dsh;
      grads->opacity_logit[offset + i] += 2.0 * weight * inv * dop;
    }
  }
  return total;
}

double temporal_fg_loss(std::span<const GaussianPrimitive> fg,
                        std::span<const GaussianPrimitive> prev, double weight, Gradients* grads,
                        std::size_t offset) {
  if (fg.size() != prev.size())
    throw std::invalid_argument("temporal_fg_loss: " + std::to_string(fg.size()) +
                                " primitives vs " + std::to_string(prev.size()) + " at t-1");
  if (fg.empty()) return 0.0;
  const double inv = 1.0 / static_cast<double>(fg.size());
  const double k = 2.0 * weight * inv;
  double total = 0.0;
  for (std::size_t i = 0; i < fg.size(); ++i) {
    const Vec3 dp = fg[i].position - prev[i].position;
    const Vec4 dq = fg[i].rotation - prev[i].rotation;
    const Vec3 ds = fg[i].log_scale - prev[i].log_scale;
    const double dop = fg[i].opacity_logit - prev[i].opacity_logit;
    const ShCoeffs dsh = fg[i].sh - prev[i].sh;
    const Feature df = fg[i].feature - prev[i].feature;
    total += (dp.squaredNorm() + dq.squaredNorm() + ds.squaredNorm() + dop * dop +
              dsh.squaredNorm() + df.squaredNorm()) * inv;
    if (grads) {
      const std::size_t j = offset + i;
      grads->position[j] += k * dp;
      grads->rotation[j] += k * dq;
      grads->log_scale[j] += k * ds;
      grads->opacity_logit[j] += k * dop;
      grads->sh[j] += k * dsh;
      grads->feature[j] += k * df;
    }
  }
  return total;
}

// ---------------------------------------------------------------- bookkeeping

void LossBreakdown::add(const std::string& name, double weight, double value) {
  values.emplace_back(name, value);
  weights.push_back(weight);
}

double LossBreakdown::total() const {
  double t = 0.0;
  for (std::size_t i = 0; i < values.size(); ++i) t += weights[i] * values[i].second;
  return t;
}

double LossBreakdown::get(const std::string& name) const {
  for (const auto& [n, v] : values)
    if (n == name) return v;
  throw std::out_of_range("no loss term " + name);
}

std::string LossBreakdown::json_line(const std::string& stage, int iteration) const {
  nlohmann::json j;
  j["stage"] = stage;
  j["iter"] = iteration;
  for (std::size_t i = 0; i < values.size(); ++i) j[values[i].first] = values[i].second;
  j["total"] = total();
  return j.dump();
}

}  // namespace gs4d
