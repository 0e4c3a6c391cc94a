#include "gs4d/neural_heads.hpp"

#include <cmath>
#include <stdexcept>

namespace gs4d {

std::size_t Mlp::parameter_count() const {
  std::size_t n = 0;
  for (const auto& l : layers) n += l.weight.size() + l.bias.size();
  return n;
}

bool Mlp::all_finite() const {
  for (const auto& l : layers)
    if (!l.weight.allFinite() || !l.bias.allFinite()) return false;
  return true;
}

void Mlp::validate() const {
  for (std::size_t i = 0; i < layers.size(); ++i) {
    if (layers[i].bias.size() != layers[i].weight.rows())
      throw std::invalid_argument("mlp layer " + std::to_string(i) + ": bias size mismatch");
    if (i > 0 && layers[i].weight.cols() != layers[i - 1].weight.rows())
      throw std::invalid_argument("mlp layer " + std::to_string(i) + ": input size " +
                                  std::to_string(layers[i].weight.cols()) + " does not chain to " +
                                  std::to_string(layers[i - 1].weight.rows()));
  }
}

Mlp make_mlp(const std::vector<int>& dims, std::mt19937_64& rng) {
  if (dims.size() < 2) throw std::invalid_argument("make_mlp: need at least input and output dims");
  Mlp m;
  for (std::size_t i = 0; i + 1 < dims.size(); ++i) {
    MlpLayer l;
    std::normal_distribution<double> n(0.0, std::sqrt(2.0 / dims[i]));
    l.weight.resize(dims[i + 1], dims[i]);
    for (Eigen::Index k = 0; k < l.weight.size(); ++k) l.weight.data()[k] = n(rng);
    l.bias = Eigen::VectorXd::Zero(dims[i + 1]);
    l.activation = (i + 2 < dims.size()) ? Activation::leaky_relu : Activation::linear;
    m.layers.push_back(std::move(l));
  }
  return m;
}

Mlp make_head(int out_dim, std::mt19937_64& rng) { return make_mlp({kFeatureDim, 64, 64, out_dim}, rng); }

Eigen::MatrixXd mlp_forward(const Mlp& mlp, const Eigen::MatrixXd& x, MlpCache* cache) {
  if (mlp.layers.empty()) throw std::invalid_argument("mlp_forward: empty network");
  if (x.cols() != mlp.input_dim())
    throw std::invalid_argument("mlp_forward: input dim " + std::to_string(x.cols()) +
                                " but network expects " + std::to_string(mlp.input_dim()));
  if (cache) {
    cache->owner = &mlp;
    cache->version = mlp.version;
    cache->inputs.clear();
    cache->pre.clear();
  }
  Eigen::MatrixXd h = x;
  for (const auto& l : mlp.layers) {
    Eigen::MatrixXd z = h * l.weight.transpose();
    z.rowwise() += l.bias.transpose();
    if (cache) {
      cache->inputs.push_back(h);
      cache->pre.push_back(z);
    }
    if (l.activation == Activation::leaky_relu)
      h = z.unaryExpr([](double v) { return v > 0.0 ? v : kLeakySlope * v; });
    else
      h = std::move(z);
  }
  return h;
}

MlpGrads::MlpGrads(const Mlp& mlp) {
  for (const auto& l : mlp.layers) {
    weight.push_back(Eigen::MatrixXd::Zero(l.weight.rows(), l.weight.cols()));
    bias.push_back(Eigen::VectorXd::Zero(l.bias.size()));
  }
}

void MlpGrads::set_zero() {
  for (auto& w : weight) w.setZero();
  for (auto& b : bias) b.setZero();
}

Eigen::MatrixXd mlp_backward(const Mlp& mlp, const MlpCache& cache, const Eigen::MatrixXd& upstream,
                             MlpGrads* grads) {
  if (cache.owner != &mlp || cache.version != mlp.version || cache.pre.size() != mlp.layers.size())
    throw std::logic_error("mlp_backward: stale activation cache");
  if (upstream.rows() != cache.pre.back().rows() || upstream.cols() != mlp.output_dim())
    throw std::invalid_argument("mlp_backward: upstream shape mismatch");
  if (grads && grads->weight.size() != mlp.layers.size())
    throw std::invalid_argument("mlp_backward: gradient buffers do not match the network");
  Eigen::MatrixXd g = upstream;
  for (int i = static_cast<int>(mlp.layers.size()) - 1; i >= 0; --i) {
    const auto& l = mlp.layers[i];
    if (l.activation == Activation::leaky_relu)
      g = g.cwiseProduct(cache.pre[i].unaryExpr([](double v) { return v > 0.0 ? 1.0 : kLeakySlope; }));
    if (grads) {
      grads->weight[i].noalias() += g.transpose() * cache.inputs[i];
      grads->bias[i] += g.colwise().sum().transpose();
    }
    g = g * l.weight;
  }
  return g;
}

Eigen::MatrixXd normalized_features(const RenderTarget& t, std::span<const int> pixels) {
  Eigen::MatrixXd out(pixels.size(), kFeatureDim);
  for (std::size_t r = 0; r < pixels.size(); ++r) {
    const double a = t.alpha.data[pixels[r]];
    const double* f = t.feature.pixel(pixels[r]);
    for (int c = 0; c < kFeatureDim; ++c) out(r, c) = a > kAlphaFloor ? f[c] / a : 0.0;
  }
  return out;
}

void normalized_features_backward(const RenderTarget& t, std::span<const int> pixels,
                                  const Eigen::MatrixXd& g, Image& gf, Image& ga) {
  if (gf.empty()) gf = Image(t.height, t.width, kFeatureDim);
  if (ga.empty()) ga = Image(t.height, t.width, 1);
  for (std::size_t r = 0; r < pixels.size(); ++r) {
    const int p = pixels[r];
    const double a = t.alpha.data[p];
    if (a <= kAlphaFloor) continue;
    const double* f = t.feature.pixel(p);
    double* out = gf.pixel(p);
    double da = 0.0;
    for (int c = 0; c < kFeatureDim; ++c) {
      out[c] += g(r, c) / a;
      da -= g(r, c) * f[c] / (a * a);
    }
    ga.data[p] += da;
  }
}

Eigen::MatrixXd feature_rows(std::span<const GaussianPrimitive> prims) {
  Eigen::MatrixXd out(prims.size(), kFeatureDim);
  for (std::size_t i = 0; i < prims.size(); ++i) out.row(i) = prims[i].feature.transpose();
  return out;
}

// ---------------------------------------------------------------- autoencoder

Eigen::MatrixXd Autoencoder::encode(const Eigen::MatrixXd& raw) const {
  if (raw.cols() != raw_dim())
    throw std::invalid_argument("encode: vector dim " + std::to_string(raw.cols()) +
                                " but autoencoder expects " + std::to_string(raw_dim()));
  Eigen::MatrixXd z = raw * enc_w.transpose();
  z.rowwise() += enc_b.transpose();
  return z;
}

Eigen::MatrixXd Autoencoder::decode(const Eigen::MatrixXd& code) const {
  if (code.cols() != code_dim())
    throw std::invalid_argument("decode: code dim " + std::to_string(code.cols()) +
                                " but autoencoder expects " + std::to_string(code_dim()));
  Eigen::MatrixXd y = code * dec_w.transpose();
  y.rowwise() += dec_b.transpose();
  return y;
}

double autoencoder_loss(const Autoencoder& ae, const Eigen::MatrixXd& x, Autoencoder* grad) {
  const Eigen::MatrixXd z = ae.encode(x);
  const Eigen::MatrixXd r = ae.decode(z) - x;
  const double inv = 1.0 / static_cast<double>(x.size());
  if (grad) {
    const Eigen::MatrixXd dy = 2.0 * inv * r;
    grad->dec_w = dy.transpose() * z;
    grad->dec_b = dy.colwise().sum().transpose();
    const Eigen::MatrixXd dz = dy * ae.dec_w;
    grad->enc_w = dz.transpose() * x;
    grad->enc_b = dz.colwise().sum().transpose();
  }
  return r.squaredNorm() * inv;
}

namespace {

struct Moments {
  Eigen::ArrayXd m, v;
};

void adam(double* p, const double* g, Eigen::Index n, Moments& s, double lr, int t) {
  constexpr double b1 = 0.9, b2 = 0.999, eps = 1e-15;
  if (s.m.size() != n) {
    s.m = Eigen::ArrayXd::Zero(n);
    s.v = Eigen::ArrayXd::Zero(n);
  }
  const double c1 = 1.0 - std::pow(b1, t), c2 = 1.0 - std::pow(b2, t);
  for (Eigen::Index i = 0; i < n; ++i) {
    s.m[i] = b1 * s.m[i] + (1.0 - b1) * g[i];
    s.v[i] = b2 * s.v[i] + (1.0 - b2) * g[i] * g[i];
    p[i] -= lr * (s.m[i] / c1) / (std::sqrt(s.v[i] / c2) + eps);
  }
}

}  // namespace

AutoencoderFit autoencoder_fit(const Eigen::MatrixXd& x, const AutoencoderOptions& opt) {
  const int raw = static_cast<int>(x.cols()), code = opt.code_dim;
  if (raw < code)
    throw std::invalid_argument("autoencoder_fit: raw dim " + std::to_string(raw) +
                                " is below the code dim " + std::to_string(code));
  if (x.rows() < 2) throw std::invalid_argument("autoencoder_fit: need at least 2 vectors");
  std::mt19937_64 rng(opt.seed);
  std::normal_distribution<double> n(0.0, 1.0);
  Autoencoder ae;
  ae.enc_w.resize(code, raw);
  ae.dec_w.resize(raw, code);
  for (Eigen::Index k = 0; k < ae.enc_w.size(); ++k) ae.enc_w.data()[k] = n(rng) / std::sqrt(raw);
  for (Eigen::Index k = 0; k < ae.dec_w.size(); ++k) ae.dec_w.data()[k] = n(rng) / std::sqrt(code);
  ae.enc_b = Eigen::VectorXd::Zero(code);
  ae.dec_b = Eigen::VectorXd::Zero(raw);

  Moments s[4];
  Autoencoder g;
  for (int it = 1; it <= opt.iterations; ++it) {
    // exponential decay to 1/1000 of the initial rate
    const double lr = opt.learning_rate * std::pow(1e-3, static_cast<double>(it - 1) / opt.iterations);
    autoencoder_loss(ae, x, &g);
    adam(ae.enc_w.data(), g.enc_w.data(), ae.enc_w.size(), s[0], lr, it);
    adam(ae.enc_b.data(), g.enc_b.data(), ae.enc_b.size(), s[1], lr, it);
    adam(ae.dec_w.data(), g.dec_w.data(), ae.dec_w.size(), s[2], lr, it);
    adam(ae.dec_b.data(), g.dec_b.data(), ae.dec_b.size(), s[3], lr, it);
  }
  AutoencoderFit fit;
  fit.mse = autoencoder_loss(ae, x, nullptr);
  const Eigen::MatrixXd y = ae.decode(ae.encode(x));
  for (Eigen::Index r = 0; r < x.rows(); ++r) {
    const double d = x.row(r).norm() * y.row(r).norm();
    fit.cosine.push_back(d > 0.0 ? x.row(r).dot(y.row(r)) / d : 0.0);
  }
  fit.model = std::move(ae);
  return fit;
}

}  // namespace gs4d
