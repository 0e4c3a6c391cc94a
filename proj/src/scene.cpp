#include "gs4d/scene.hpp"

#include <algorithm>
#include <cmath>
#include <queue>
#include <stdexcept>
#include <string>
#include <utility>

namespace gs4d {

double sigmoid(double x) {
  if (x >= 0.0) {
    const double e = std::exp(-x);
    return 1.0 / (1.0 + e);
  }
  const double e = std::exp(x);
  return e / (1.0 + e);
}

double logit(double p) { return std::log(p / (1.0 - p)); }

Vec4 quat_normalize(const Vec4& q) {
  const double n = q.norm();
  if (!(n > 0.0)) return Vec4(1.0, 0.0, 0.0, 0.0);
  return q / n;
}

Vec4 quat_multiply(const Vec4& a, const Vec4& b) {
  return Vec4(a[0] * b[0] - a[1] * b[1] - a[2] * b[2] - a[3] * b[3],
              a[0] * b[1] + a[1] * b[0] + a[2] * b[3] - a[3] * b[2],
              a[0] * b[2] - a[1] * b[3] + a[2] * b[0] + a[3] * b[1],
              a[0] * b[3] + a[1] * b[2] - a[2] * b[1] + a[3] * b[0]);
}

Vec4 quat_conjugate(const Vec4& q) { return Vec4(q[0], -q[1], -q[2], -q[3]); }

Mat3 quat_to_rotation(const Vec4& q) {
  const double w = q[0], x = q[1], y = q[2], z = q[3];
  Mat3 r;
  r << 1.0 - 2.0 * (y * y + z * z), 2.0 * (x * y - w * z), 2.0 * (x * z + w * y),
      2.0 * (x * y + w * z), 1.0 - 2.0 * (x * x + z * z), 2.0 * (y * z - w * x),
      2.0 * (x * z - w * y), 2.0 * (y * z + w * x), 1.0 - 2.0 * (x * x + y * y);
  return r;
}

Vec4 rotation_to_quat(const Mat3& r) {
  const Eigen::Quaterniond q(r);
  return quat_normalize(Vec4(q.w(), q.x(), q.y(), q.z()));
}

std::array<Mat3, 4> rotation_jacobian(const Vec4& q) {
  const double w = q[0], x = q[1], y = q[2], z = q[3];
  std::array<Mat3, 4> d;
  d[0] << 0.0, -z, y, z, 0.0, -x, -y, x, 0.0;
  d[1] << 0.0, y, z, y, -2.0 * x, -w, z, w, -2.0 * x;
  d[2] << -2.0 * y, x, w, x, 0.0, z, -w, z, -2.0 * y;
  d[3] << -2.0 * z, -w, x, w, -2.0 * z, y, x, y, 0.0;
  for (auto& m : d) m *= 2.0;
  return d;
}

Vec4 normalize_backward(const Vec4& raw, const Vec4& grad_normalized) {
  const double n = raw.norm();
  const Vec4 u = raw / n;
  return (grad_normalized - u * u.dot(grad_normalized)) / n;
}

Eigen::Matrix4d right_multiply_matrix(const Vec4& c) {
  const double a = c[0], b = c[1], cc = c[2], d = c[3];
  Eigen::Matrix4d m;
  m << a, -b, -cc, -d,
      b, a, d, -cc,
      cc, -d, a, b,
      d, cc, -b, a;
  return m;
}

ActivatedPrimitive activate(const GaussianPrimitive& g, std::size_t index) {
  const bool finite = g.position.allFinite() && g.rotation.allFinite() &&
                      g.log_scale.allFinite() && std::isfinite(g.opacity_logit) &&
                      g.sh.allFinite() && g.feature.allFinite();
  if (!finite) {
    throw std::invalid_argument("primitive " + std::to_string(index) +
                                " has a non-finite parameter");
  }
  if (!(g.rotation.norm() > 0.0)) {
    throw std::invalid_argument("primitive " + std::to_string(index) +
                                " has a zero rotation quaternion");
  }
  ActivatedPrimitive a;
  a.scale = g.log_scale.array().exp();
  a.opacity = sigmoid(g.opacity_logit);
  a.rotation = quat_to_rotation(quat_normalize(g.rotation));
  const Mat3 m = a.rotation * a.scale.asDiagonal();
  a.covariance = m * m.transpose();
  return a;
}

Mat34 Camera::projection() const {
  Mat34 rt;
  rt.leftCols<3>() = R;
  rt.col(3) = t;
  return K * rt;
}

std::optional<Vec2> Camera::project(const Vec3& p, double near_plane) const {
  const Vec3 c = to_camera(p);
  if (c.z() <= near_plane) return std::nullopt;
  return Vec2(fx() * c.x() / c.z() + cx(), fy() * c.y() / c.z() + cy());
}

Vec3 Camera::back_project(const Vec2& uv, double z) const {
  const Vec3 c((uv.x() - cx()) / fx() * z, (uv.y() - cy()) / fy() * z, z);
  return R.transpose() * (c - t);
}

void Camera::validate() const {
  if (width <= 0 || height <= 0) throw std::invalid_argument("camera resolution must be positive");
  if (!K.allFinite() || !R.allFinite() || !t.allFinite())
    throw std::invalid_argument("camera parameters must be finite");
  if (K(1, 0) != 0.0 || K(2, 0) != 0.0 || K(2, 1) != 0.0)
    throw std::invalid_argument("intrinsics must be upper-triangular");
  if (!(K(0, 0) > 0.0) || !(K(1, 1) > 0.0))
    throw std::invalid_argument("intrinsics must have positive focal lengths");
  if (((R * R.transpose()) - Mat3::Identity()).cwiseAbs().maxCoeff() > 1e-6)
    throw std::invalid_argument("rotation is not orthonormal");
}

Camera look_at(const Vec3& eye, const Vec3& target, const Vec3& up, double focal, int width,
               int height) {
  const Vec3 f = (target - eye).normalized();
  const Vec3 r = f.cross(up).normalized();
  const Vec3 d = f.cross(r);
  Camera cam;
  cam.R.row(0) = r.transpose();
  cam.R.row(1) = d.transpose();
  cam.R.row(2) = f.transpose();
  cam.t = -cam.R * eye;
  cam.K << focal, 0.0, 0.5 * (width - 1), 0.0, focal, 0.5 * (height - 1), 0.0, 0.0, 1.0;
  cam.width = width;
  cam.height = height;
  return cam;
}

AppearanceSnapshot appearance_of(const GaussianPrimitive& g) { return {g.sh, g.opacity_logit}; }

std::vector<GaussianPrimitive> SceneModel::combined() const {
  std::vector<GaussianPrimitive> all;
  all.reserve(bg.size() + fg.size());
  all.insert(all.end(), bg.begin(), bg.end());
  all.insert(all.end(), fg.begin(), fg.end());
  return all;
}

void SceneModel::snapshot_bg_reference() {
  bg_reference.clear();
  bg_reference.reserve(bg.size());
  for (const auto& g : bg) bg_reference.push_back(appearance_of(g));
}

std::vector<std::vector<int>> knn_neighbors(std::span<const Vec3> points, int k) {
  const auto n = static_cast<std::ptrdiff_t>(points.size());
  if (k < 1 || k >= n) {
    throw std::invalid_argument("knn_neighbors: need 1 <= k < point count (k=" +
                                std::to_string(k) + ", n=" + std::to_string(n) + ")");
  }
  std::vector<std::vector<int>> out(points.size());
  using Entry = std::pair<double, int>;
#pragma omp parallel for schedule(static)
  for (std::ptrdiff_t i = 0; i < n; ++i) {
    // max-heap on (distance, index) keeps the k best under lexicographic order
    std::priority_queue<Entry> heap;
    for (std::ptrdiff_t j = 0; j < n; ++j) {
      if (j == i) continue;
      const Entry e{(points[j] - points[i]).squaredNorm(), static_cast<int>(j)};
      if (static_cast<int>(heap.size()) < k) {
        heap.push(e);
      } else if (e < heap.top()) {
        heap.pop();
        heap.push(e);
      }
    }
    std::vector<int> nb(heap.size());
    for (auto it = nb.rbegin(); it != nb.rend(); ++it) {
      *it = heap.top().second;
      heap.pop();
    }
    out[i] = std::move(nb);
  }
  return out;
}

std::vector<double> knn_mean_distance(std::span<const Vec3> points, int k) {
  const auto nb = knn_neighbors(points, k);
  std::vector<double> d(points.size(), 0.0);
  for (std::size_t i = 0; i < points.size(); ++i) {
    for (int j : nb[i]) d[i] += (points[j] - points[i]).norm();
    d[i] /= static_cast<double>(nb[i].size());
  }
  return d;
}

}  // namespace gs4d
