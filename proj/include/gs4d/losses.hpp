#pragma once

#include "gs4d/image.hpp"
#include "gs4d/rasterizer.hpp"
#include "gs4d/scene.hpp"

#include <span>
#include <string>
#include <utility>
#include <vector>

namespace gs4d {

struct LossWeights {
  double iso = 0.0005;
  double size = 0.02;
  double id = 2.0;
  double emb = 10.0;
  double kl3d = 2.0;
  double smooth = 0.01;
  double sdf = 0.01;
  double temp_bg = 0.001;
  double temp = 0.01;
  double dssim_mix = 0.2;

  // Throws std::invalid_argument for negative or non-finite entries.
  void validate() const;
};

// ---- photometric ----

struct SsimMaps {
  double value = 0.0;  // mean of the SSIM map over all pixels and channels
  Image map;
};

// Windowed SSIM (11x11 Gaussian, sigma 1.5, zero padding, C1 = 0.01^2, C2 = 0.03^2).
SsimMaps ssim_map(const Image& a, const Image& b);
double ssim(const Image& a, const Image& b);

struct ImageLoss {
  double value = 0.0;
  Image grad;  // d value / d prediction
};

// (1 - mix) * L1 + mix * (1 - SSIM) / 2. With a mask (nonzero = keep), both images are
// multiplied by the mask first and the means run over kept pixels only, so loss and
// gradient vanish outside it. An empty selection gives zero loss and a warning.
ImageLoss color_loss(const Image& prediction, const Image& target, double dssim_mix,
                     const LabelMap* mask = nullptr);

// ---- per-primitive regularisers; each returns the unweighted value and adds
// weight * gradient into `grads` at index offset + i ----

// E_iso = mean_i (1/3) sum_k |s_k / mean(s) - 1|;  E_size = mean_i max(0, max_k s_k - tau)^2
struct ScaleLossValues {
  double iso = 0.0;
  double size = 0.0;
};
ScaleLossValues iso_size_losses(std::span<const GaussianPrimitive> primitives, double tau_size,
                                double iso_weight, double size_weight, Gradients* grads,
                                std::size_t offset = 0);

// Softmax of each row.
Eigen::MatrixXd softmax_rows(const Eigen::MatrixXd& logits);

struct RowLoss {
  double value = 0.0;
  Eigen::MatrixXd grad;  // same shape as the input rows
};

// Mean cross-entropy of softmax(logits) against labels; gradient (P - y) / rows.
RowLoss id_loss(const Eigen::MatrixXd& logits, std::span<const int> labels);

// Mean absolute difference over valid rows and all components.
RowLoss emb_loss(const Eigen::MatrixXd& predicted, const Eigen::MatrixXd& target,
                 std::span<const std::uint8_t> valid);

// (1/|S|) sum_{i in S} (1/k) sum_{j in N_k(i)} KL(P_i || P_j), probabilities clamped to
// [1e-8, 1]. `neighbors[i]` lists the k neighbours of primitive i; gradient is w.r.t. the
// logits of all primitives.
RowLoss kl3d_loss(const Eigen::MatrixXd& logits, std::span<const int> sample,
                  const std::vector<std::vector<int>>& neighbors);

struct ArapInputs {
  std::span<const Vec3> positions;
  std::span<const Vec4> rotations;  // raw, normalised internally
  std::span<const Vec3> prev_positions;
  std::span<const Vec4> prev_rotations;
  const std::vector<std::vector<int>>* neighbors = nullptr;  // computed at t-1
  double radius = 1.0;                                       // influence radius l
};

struct ArapResult {
  double value = 0.0;
  std::vector<Vec3> grad_position;
  std::vector<Vec4> grad_rotation;
};

// sum_i sum_k w_ik |R(q_i,t q_i,t-1^-1)(p_k,t-1 - p_i,t-1) - (p_k,t - p_i,t)|^2,
// w_ik = exp(-|p_i,t-1 - p_k,t-1|^2 / l^2).
ArapResult arap_loss(const ArapInputs& in);

// sum_i sum_v max(0, Phi^v_{c_i}(pi_v(p_i)))^2 with bilinear Phi. `sdf[v][d-1]` is the
// field of instance d in view v; labels c_i = 0 contribute nothing, and an empty field
// (instance absent from that view) is skipped.
double sdf_loss(std::span<const GaussianPrimitive> fg, std::span<const int> labels,
                const std::vector<std::vector<Image>>& sdf, std::span<const Camera> cameras,
                double weight, Gradients* grads, std::size_t offset);

// Mean over bg primitives of |sh - sh_ref|^2 + (opacity - opacity_ref)^2.
double temporal_bg_loss(std::span<const GaussianPrimitive> bg,
                        std::span<const AppearanceSnapshot> reference, double weight,
                        Gradients* grads, std::size_t offset = 0);

// Mean over fg primitives of the squared difference of every attribute to frame t-1.
double temporal_fg_loss(std::span<const GaussianPrimitive> fg,
                        std::span<const GaussianPrimitive> previous, double weight,
                        Gradients* grads, std::size_t offset);

// Named term values with their weights; total = sum weight * value.
struct LossBreakdown {
  std::vector<std::pair<std::string, double>> values;
  std::vector<double> weights;

  void add(const std::string& name, double weight, double value);
  double total() const;
  double get(const std::string& name) const;
  std::string json_line(const std::string& stage, int iteration) const;
};

}  // namespace gs4d
