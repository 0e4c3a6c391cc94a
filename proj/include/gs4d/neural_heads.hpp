#pragma once

#include "gs4d/rasterizer.hpp"

#include <Eigen/Dense>

#include <cstdint>
#include <random>
#include <span>
#include <string>
#include <vector>

namespace gs4d {

enum class Activation : std::uint8_t { leaky_relu, linear };

inline constexpr double kLeakySlope = 0.01;

struct MlpLayer {
  Eigen::MatrixXd weight;  // out x in
  Eigen::VectorXd bias;    // out
  Activation activation = Activation::linear;
};

struct Mlp {
  std::vector<MlpLayer> layers;
  // Bumped whenever parameters change; caches from older versions are rejected.
  std::uint64_t version = 0;

  int input_dim() const { return layers.empty() ? 0 : static_cast<int>(layers.front().weight.cols()); }
  int output_dim() const { return layers.empty() ? 0 : static_cast<int>(layers.back().weight.rows()); }
  std::size_t parameter_count() const;
  bool all_finite() const;
  // Throws std::invalid_argument when consecutive layer sizes do not chain.
  void validate() const;
};

// dims = {in, hidden..., out}; hidden layers leaky ReLU, output linear; He-scaled normal
// weights, zero biases.
Mlp make_mlp(const std::vector<int>& dims, std::mt19937_64& rng);

// The default decoder: 8 -> 64 -> 64 -> out.
Mlp make_head(int out_dim, std::mt19937_64& rng);

struct MlpCache {
  const Mlp* owner = nullptr;
  std::uint64_t version = 0;
  std::vector<Eigen::MatrixXd> inputs;  // per layer, rows = batch
  std::vector<Eigen::MatrixXd> pre;     // pre-activation per layer
};

// Rows of `x` are samples. Throws std::invalid_argument on a dimension mismatch.
Eigen::MatrixXd mlp_forward(const Mlp& mlp, const Eigen::MatrixXd& x, MlpCache* cache = nullptr);

struct MlpGrads {
  std::vector<Eigen::MatrixXd> weight;
  std::vector<Eigen::VectorXd> bias;

  MlpGrads() = default;
  explicit MlpGrads(const Mlp& mlp);
  void set_zero();
};

// Accumulates parameter gradients into `grads` (if given) and returns d/d input.
// Throws std::logic_error when the cache is stale or belongs to another network.
Eigen::MatrixXd mlp_backward(const Mlp& mlp, const MlpCache& cache, const Eigen::MatrixXd& upstream,
                             MlpGrads* grads);

// ---- feature maps ----

inline constexpr double kAlphaFloor = 1e-3;

// F / alpha at the listed pixels (zero where alpha <= 1e-3); rows follow `pixels`.
Eigen::MatrixXd normalized_features(const RenderTarget& target, std::span<const int> pixels);

// Chains d/d(normalised rows) into upstream images on F and alpha (accumulated).
void normalized_features_backward(const RenderTarget& target, std::span<const int> pixels,
                                  const Eigen::MatrixXd& grad_rows, Image& grad_feature,
                                  Image& grad_alpha);

// Per-primitive features as rows.
Eigen::MatrixXd feature_rows(std::span<const GaussianPrimitive> primitives);

// ---- embedding autoencoder ----

struct Autoencoder {
  Eigen::MatrixXd enc_w;  // code x raw
  Eigen::VectorXd enc_b;
  Eigen::MatrixXd dec_w;  // raw x code
  Eigen::VectorXd dec_b;

  int raw_dim() const { return static_cast<int>(enc_w.cols()); }
  int code_dim() const { return static_cast<int>(enc_w.rows()); }
  // Rows are vectors.
  Eigen::MatrixXd encode(const Eigen::MatrixXd& raw) const;
  Eigen::MatrixXd decode(const Eigen::MatrixXd& code) const;
};

struct AutoencoderOptions {
  int code_dim = 6;
  int iterations = 6000;
  double learning_rate = 1e-2;
  std::uint64_t seed = 7;
};

struct AutoencoderFit {
  Autoencoder model;
  double mse = 0.0;             // mean squared reconstruction error per component
  std::vector<double> cosine;  // per input row
};

double autoencoder_loss(const Autoencoder& ae, const Eigen::MatrixXd& raw, Autoencoder* grad);

// Linear encoder/decoder trained by full-batch Adam on the mean squared reconstruction
// error from a seeded random start. Throws when raw dim < code dim or fewer than 2 rows.
AutoencoderFit autoencoder_fit(const Eigen::MatrixXd& raw, const AutoencoderOptions& options = {});

}  // namespace gs4d
