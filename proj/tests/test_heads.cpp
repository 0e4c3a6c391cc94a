#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "gradient_suite.hpp"
#include "gs4d/neural_heads.hpp"

#include <random>

using namespace gs4d;
using namespace gs4d::testing;

namespace {

void check_report(const GradReport& r) {
  INFO(r.name << ": " << r.failed << "/" << r.checked << " failed; " << r.first_failure);
  CHECK(r.ok());
}

// Optimal rank-k reconstruction error (per component) from the centred SVD.
double pca_mse(const Eigen::MatrixXd& x, int k) {
  const Eigen::MatrixXd c = x.rowwise() - x.colwise().mean();
  Eigen::JacobiSVD<Eigen::MatrixXd> svd(c);
  double rest = 0.0;
  for (Eigen::Index i = k; i < svd.singularValues().size(); ++i)
    rest += svd.singularValues()[i] * svd.singularValues()[i];
  return rest / static_cast<double>(x.size());
}

}  // namespace

TEST_CASE("mlp: zero parameters give zero output; identity layer passes input through") {
  std::mt19937_64 rng(1);
  Mlp m = make_head(3, rng);
  for (auto& l : m.layers) {
    l.weight.setZero();
    l.bias.setZero();
  }
  const Eigen::MatrixXd x = random_matrix(rng, 4, kFeatureDim);
  CHECK(mlp_forward(m, x).norm() == 0.0);
  Mlp id;
  id.layers.push_back({Eigen::MatrixXd::Identity(kFeatureDim, kFeatureDim), Eigen::VectorXd::Zero(kFeatureDim),
                       Activation::linear});
  CHECK(mlp_forward(id, x) == x);
}

TEST_CASE("mlp: default architecture and dimension errors") {
  std::mt19937_64 rng(2);
  const Mlp m = make_head(5, rng);
  REQUIRE(m.layers.size() == 3);
  CHECK(m.layers[0].weight.rows() == 64);
  CHECK(m.layers[1].weight.rows() == 64);
  CHECK(m.layers[0].activation == Activation::leaky_relu);
  CHECK(m.layers[2].activation == Activation::linear);
  CHECK(m.output_dim() == 5);
  CHECK_THROWS_AS(mlp_forward(m, Eigen::MatrixXd::Zero(2, 7)), std::invalid_argument);
}

TEST_CASE("mlp: backward rejects a stale cache") {
  std::mt19937_64 rng(3);
  Mlp m = make_head(2, rng);
  MlpCache cache;
  mlp_forward(m, random_matrix(rng, 3, kFeatureDim), &cache);
  ++m.version;
  CHECK_THROWS_AS(mlp_backward(m, cache, Eigen::MatrixXd::Zero(3, 2), nullptr), std::logic_error);
  Mlp other = m;
  mlp_forward(m, random_matrix(rng, 3, kFeatureDim), &cache);
  CHECK_THROWS_AS(mlp_backward(other, cache, Eigen::MatrixXd::Zero(3, 2), nullptr), std::logic_error);
}

TEST_CASE("mlp: forward is deterministic and the per-primitive and per-pixel paths agree") {
  std::mt19937_64 rng(4);
  const Mlp m = make_head(3, rng);
  const Eigen::MatrixXd x = random_matrix(rng, 6, kFeatureDim);
  CHECK(mlp_forward(m, x) == mlp_forward(m, x));
  // a pixel covered by one opaque primitive decodes like that primitive's own feature
  GaussianPrimitive g;
  g.position = Vec3::Zero();
  g.log_scale = Vec3::Constant(std::log(0.8));
  g.opacity_logit = logit(0.6);
  g.feature = random_matrix(rng, kFeatureDim, 1);
  std::vector<GaussianPrimitive> one{g};
  const RenderTarget t = rasterize(one, test_camera(16, 20.0));
  const std::vector<int> centre{8 * 16 + 8};
  const Eigen::MatrixXd a = mlp_forward(m, normalized_features(t, centre));
  const Eigen::MatrixXd b = mlp_forward(m, feature_rows(one));
  CHECK((a - b).norm() < 1e-10);
}

TEST_CASE("feature normalisation: low alpha gives zeros") {
  std::vector<GaussianPrimitive> none;
  GaussianPrimitive g;
  g.position = Vec3(100, 0, 0);
  none.push_back(g);
  const RenderTarget t = rasterize(none, test_camera(8, 10.0));
  const std::vector<int> px{0, 9, 63};
  CHECK(normalized_features(t, px).norm() == 0.0);
}

TEST_CASE("gradients: heads, autoencoder and the pixel decoding chain") {
  std::mt19937_64 rng(5);
  check_report(check_head(rng, 20, 3, "classification head"));
  check_report(check_head(rng, 20, 6, "semantic head"));
  check_report(check_autoencoder(rng, 20));
  check_report(check_pixel_head_chain(rng, 20));
}

TEST_CASE("autoencoder: orthonormal 6-dim input is reconstructed") {
  const Eigen::MatrixXd x = Eigen::MatrixXd::Identity(6, 6);
  const AutoencoderFit fit = autoencoder_fit(x);
  CHECK(fit.mse < 1e-6);
  for (double c : fit.cosine) CHECK(c > 0.999);
}

TEST_CASE("autoencoder: rank-3 data in 32 dims reaches the PCA optimum") {
  std::mt19937_64 rng(6);
  const Eigen::MatrixXd basis = random_matrix(rng, 3, 32);
  const Eigen::MatrixXd x = random_matrix(rng, 40, 3) * basis;
  const AutoencoderFit fit = autoencoder_fit(x);
  CHECK(pca_mse(x, 6) < 1e-20);
  CHECK(fit.mse < 1e-5 * (x.squaredNorm() / x.size()));
  for (double c : fit.cosine) CHECK(c >= 0.99);
}

TEST_CASE("autoencoder: noisy rank-8 data is close to the PCA optimum; errors and determinism") {
  std::mt19937_64 rng(7);
  const Eigen::MatrixXd x = random_matrix(rng, 60, 8) * random_matrix(rng, 8, 20) + random_matrix(rng, 60, 20, 0.01);
  const AutoencoderFit a = autoencoder_fit(x), b = autoencoder_fit(x);
  CHECK(a.mse >= pca_mse(x, 6) * (1 - 1e-9));
  CHECK(a.mse <= pca_mse(x, 6) * 1.05);
  CHECK(a.model.enc_w == b.model.enc_w);
  CHECK_THROWS_AS(autoencoder_fit(Eigen::MatrixXd::Zero(4, 5)), std::invalid_argument);
  CHECK_THROWS_AS(autoencoder_fit(Eigen::MatrixXd::Zero(1, 8)), std::invalid_argument);
}
