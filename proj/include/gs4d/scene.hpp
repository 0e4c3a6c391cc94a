#pragma once

#include <Eigen/Dense>

#include <array>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <vector>

namespace gs4d {

using Vec2 = Eigen::Vector2d;
using Vec3 = Eigen::Vector3d;
using Vec4 = Eigen::Vector4d;
using Mat2 = Eigen::Matrix2d;
using Mat3 = Eigen::Matrix3d;
using Mat34 = Eigen::Matrix<double, 3, 4>;

inline constexpr int kShCoeffs = 16;
inline constexpr int kFeatureDim = 8;

// Row k holds the RGB triple of SH coefficient k.
using ShCoeffs = Eigen::Matrix<double, kShCoeffs, 3>;
using Feature = Eigen::Matrix<double, kFeatureDim, 1>;

// Quaternions are stored as (w, x, y, z), Hamilton convention.
struct GaussianPrimitive {
  Vec3 position = Vec3::Zero();
  Vec4 rotation = Vec4(1.0, 0.0, 0.0, 0.0);
  Vec3 log_scale = Vec3::Zero();
  double opacity_logit = 0.0;
  ShCoeffs sh = ShCoeffs::Zero();
  Feature feature = Feature::Zero();

  bool operator==(const GaussianPrimitive&) const = default;
};

struct ActivatedPrimitive {
  Vec3 scale;
  double opacity;
  Mat3 rotation;
  Mat3 covariance;
};

// Throws std::invalid_argument naming `index` when any parameter is non-finite.
ActivatedPrimitive activate(const GaussianPrimitive& primitive, std::size_t index = 0);

double sigmoid(double x);
double logit(double p);

Vec4 quat_normalize(const Vec4& q);
Vec4 quat_multiply(const Vec4& a, const Vec4& b);
Vec4 quat_conjugate(const Vec4& q);
// Rotation matrix of a unit quaternion.
Mat3 quat_to_rotation(const Vec4& q);
Vec4 rotation_to_quat(const Mat3& r);
// Partial derivatives dR/dw, dR/dx, dR/dy, dR/dz of quat_to_rotation at q (q treated as unit).
std::array<Mat3, 4> rotation_jacobian(const Vec4& q);
// Chains a gradient w.r.t. a normalized quaternion back to the raw quaternion.
Vec4 normalize_backward(const Vec4& raw, const Vec4& grad_normalized);
// Matrix M such that quat_multiply(q, c) == M * q.
Eigen::Matrix4d right_multiply_matrix(const Vec4& c);

struct Camera {
  Mat3 K = Mat3::Identity();
  Mat3 R = Mat3::Identity();
  Vec3 t = Vec3::Zero();
  int width = 0;
  int height = 0;

  double fx() const { return K(0, 0); }
  double fy() const { return K(1, 1); }
  double cx() const { return K(0, 2); }
  double cy() const { return K(1, 2); }

  Vec3 center() const { return -R.transpose() * t; }
  Vec3 to_camera(const Vec3& p) const { return R * p + t; }
  Mat34 projection() const;
  // Pixel coordinates of a world point; nullopt when behind the near plane.
  std::optional<Vec2> project(const Vec3& p, double near_plane = 1e-2) const;
  // World point at camera-space depth `z` along the ray through pixel `uv`.
  Vec3 back_project(const Vec2& uv, double z) const;
  // Throws std::invalid_argument describing the first violated rule.
  void validate() const;
};

// Camera at `eye` looking at `target`; y axis of the image points along -up.
Camera look_at(const Vec3& eye, const Vec3& target, const Vec3& up, double focal, int width,
               int height);

struct CameraRig {
  std::vector<Camera> cameras;
};

struct AppearanceSnapshot {
  ShCoeffs sh = ShCoeffs::Zero();
  double opacity_logit = 0.0;
};

AppearanceSnapshot appearance_of(const GaussianPrimitive& g);

struct SceneModel {
  std::vector<GaussianPrimitive> bg;
  std::vector<GaussianPrimitive> fg;
  std::vector<AppearanceSnapshot> bg_reference;
  int frame_index = 0;

  // bg followed by fg; rasterizer indices refer to this ordering.
  std::vector<GaussianPrimitive> combined() const;
  void snapshot_bg_reference();
};

// Per-point k nearest neighbours (self excluded), ascending distance, ties by index.
// Throws std::invalid_argument when k >= points.size().
std::vector<std::vector<int>> knn_neighbors(std::span<const Vec3> points, int k);

// Mean distance from each point to its k nearest neighbours.
std::vector<double> knn_mean_distance(std::span<const Vec3> points, int k);

}  // namespace gs4d
