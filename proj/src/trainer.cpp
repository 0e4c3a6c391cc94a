#include "gs4d/trainer.hpp"

#include "gs4d/evalkit.hpp"
#include "gs4d/mask_geometry.hpp"

#include <json.hpp>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <numbers>
#include <numeric>
#include <ostream>
#include <sstream>
#include <stdexcept>

namespace gs4d {

using json = nlohmann::json;

// ---------------------------------------------------------------- config

namespace {

#define GS4D_CONFIG_FIELDS(X)                                                                    \
  X(iterations_bg) X(iterations_first) X(iterations_refine) X(iterations_frame) X(iso) X(size)  \
  X(init_id) X(init_emb) X(init_kl3d) X(refine_smooth) X(sdf) X(temp_bg) X(temp) X(train_smooth) \
  X(train_id) X(train_emb) X(train_kl3d) X(dssim_mix) X(kl_samples) X(kl_neighbors)             \
  X(knn_refresh) X(smooth_neighbors) X(smooth_radius) X(semantic_pixel_samples)                 \
  X(densify_interval) X(densify_cap) X(init_densify_cap) X(densify_until) X(densify_grad)       \
  X(prune_opacity) X(prune_footprint) X(clone_jitter) X(split_scale) X(size_tau)                \
  X(seeds_per_instance) X(seed_views) X(sh_degree) X(log_interval) X(seed)

#define GS4D_LR_FIELDS(X) X(position) X(position_final) X(rotation) X(scale) X(opacity) X(sh) X(feature) X(heads)

#define GS4D_WARP_FIELDS(X) X(visibility_weight) X(max_residual) X(neighbor_fallback) X(fallback_neighbors)

void require(bool ok, const std::string& key, const std::string& rule) {
  if (!ok) throw std::invalid_argument("config '" + key + "': " + rule);
}

}  // namespace

void TrainConfig::validate() const {
  for (auto [k, v] : {std::pair{"iterations_bg", iterations_bg}, {"iterations_first", iterations_first},
                      {"iterations_refine", iterations_refine}, {"iterations_frame", iterations_frame}})
    require(v >= 0, k, "must be >= 0");
  for (auto [k, v] : {std::pair{"kl_samples", kl_samples}, {"kl_neighbors", kl_neighbors}, {"knn_refresh", knn_refresh},
                      {"smooth_neighbors", smooth_neighbors}, {"semantic_pixel_samples", semantic_pixel_samples},
                      {"densify_interval", densify_interval}, {"seeds_per_instance", seeds_per_instance},
                      {"seed_views", seed_views}, {"log_interval", log_interval}})
    require(v >= 1, k, "must be >= 1");
  for (auto [k, v] : {std::pair{"densify_cap", densify_cap}, {"init_densify_cap", init_densify_cap},
                      {"densify_until", densify_until}, {"prune_footprint", prune_footprint},
                      {"prune_opacity", prune_opacity}, {"dssim_mix", dssim_mix}, {"lr.position_final", lr.position_final}})
    require(v >= 0.0 && v <= 1.0, k, "must lie in [0,1]");
  for (auto [k, v] : {std::pair{"iso", iso}, {"size", size}, {"init_id", init_id}, {"init_emb", init_emb},
                      {"init_kl3d", init_kl3d}, {"refine_smooth", refine_smooth}, {"sdf", sdf}, {"temp_bg", temp_bg},
                      {"temp", temp}, {"train_smooth", train_smooth}, {"train_id", train_id}, {"train_emb", train_emb},
                      {"train_kl3d", train_kl3d}, {"densify_grad", densify_grad}, {"clone_jitter", clone_jitter},
                      {"split_scale", split_scale}, {"size_tau", size_tau}, {"smooth_radius", smooth_radius}})
    require(std::isfinite(v) && v >= 0.0, k, "must be finite and >= 0");
  for (auto [k, v] : {std::pair{"lr.position", lr.position}, {"lr.rotation", lr.rotation}, {"lr.scale", lr.scale},
                      {"lr.opacity", lr.opacity}, {"lr.sh", lr.sh}, {"lr.feature", lr.feature}, {"lr.heads", lr.heads}})
    require(std::isfinite(v) && v >= 0.0, k, "must be finite and >= 0");
  require(sh_degree == 0 || sh_degree == 3, "sh_degree", "must be 0 or 3");
  require(lr.position_final > 0.0, "lr.position_final", "must be > 0");
}

std::string TrainConfig::to_json() const {
  json j;
#define X(f) j[#f] = f;
  GS4D_CONFIG_FIELDS(X)
#undef X
#define X(f) j["lr"][#f] = lr.f;
  GS4D_LR_FIELDS(X)
#undef X
#define X(f) j["warp"][#f] = warp.f;
  GS4D_WARP_FIELDS(X)
#undef X
  return j.dump(2);
}

TrainConfig TrainConfig::from_json(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    throw std::invalid_argument(std::string("config: invalid JSON: ") + e.what());
  }
  if (!j.is_object()) throw std::invalid_argument("config: top level must be an object");
  TrainConfig c;
  for (auto it = j.begin(); it != j.end(); ++it) {
    const std::string& key = it.key();
    try {
      bool known = false;
#define X(f)                             \
  if (key == #f) {                       \
    c.f = it.value().get<decltype(c.f)>(); \
    known = true;                        \
  }
      GS4D_CONFIG_FIELDS(X)
#undef X
      if (key == "lr") {
        known = true;
        for (auto l = it.value().begin(); l != it.value().end(); ++l) {
          bool k2 = false;
#define X(f)                                     \
  if (l.key() == #f) {                           \
    c.lr.f = l.value().get<decltype(c.lr.f)>();  \
    k2 = true;                                   \
  }
          GS4D_LR_FIELDS(X)
#undef X
          if (!k2) throw std::invalid_argument("config: unknown key 'lr." + l.key() + "'");
        }
      }
      if (key == "warp") {
        known = true;
        for (auto l = it.value().begin(); l != it.value().end(); ++l) {
          bool k2 = false;
#define X(f)                                         \
  if (l.key() == #f) {                               \
    c.warp.f = l.value().get<decltype(c.warp.f)>();  \
    k2 = true;                                       \
  }
          GS4D_WARP_FIELDS(X)
#undef X
          if (!k2) throw std::invalid_argument("config: unknown key 'warp." + l.key() + "'");
        }
      }
      if (!known) throw std::invalid_argument("config: unknown key '" + key + "'");
    } catch (const json::exception& e) {
      throw std::invalid_argument("config '" + key + "': " + e.what());
    }
  }
  c.validate();
  return c;
}

// ---------------------------------------------------------------- Adam

void adam_update(double& p, double g, double& m, double& v, double lr, int t) {
  constexpr double b1 = 0.9, b2 = 0.999, eps = 1e-15;
  m = b1 * m + (1.0 - b1) * g;
  v = b2 * v + (1.0 - b2) * g * g;
  const double mh = m / (1.0 - std::pow(b1, t)), vh = v / (1.0 - std::pow(b2, t));
  p -= lr * mh / (std::sqrt(vh) + eps);
}

namespace {

GaussianPrimitive zero_primitive() {
  GaussianPrimitive z;
  z.rotation.setZero();
  return z;
}

template <typename A, typename B>
void adam_block(A& p, const B& g, A& m, A& v, double lr, int t) {
  for (Eigen::Index k = 0; k < p.size(); ++k) adam_update(p.data()[k], g.data()[k], m.data()[k], v.data()[k], lr, t);
}

}  // namespace

void PrimitiveAdam::resize(std::size_t n) {
  m.resize(n, zero_primitive());
  v.resize(n, zero_primitive());
}

void PrimitiveAdam::reorder(const std::vector<int>& origin, const std::vector<std::uint8_t>& fresh) {
  std::vector<GaussianPrimitive> nm(origin.size(), zero_primitive()), nv(origin.size(), zero_primitive());
  for (std::size_t i = 0; i < origin.size(); ++i)
    if (!fresh[i] && origin[i] >= 0 && static_cast<std::size_t>(origin[i]) < m.size()) {
      nm[i] = m[origin[i]];
      nv[i] = v[origin[i]];
    }
  m = std::move(nm);
  v = std::move(nv);
}

void adam_step(std::vector<GaussianPrimitive>& prims, const Gradients& g, std::size_t offset, PrimitiveAdam& s,
               const PrimitiveRates& r, const AttributeMask& mask) {
  if (g.size() < offset + prims.size()) throw std::invalid_argument("adam_step: gradient buffer too small");
  if (s.m.size() != prims.size()) s.resize(prims.size());
  const int t = ++s.step;
#pragma omp parallel for schedule(static)
  for (std::size_t i = 0; i < prims.size(); ++i) {
    GaussianPrimitive& p = prims[i];
    GaussianPrimitive& m = s.m[i];
    GaussianPrimitive& v = s.v[i];
    const std::size_t j = offset + i;
    if (mask.position) adam_block(p.position, g.position[j], m.position, v.position, r.position, t);
    if (mask.rotation) {
      adam_block(p.rotation, g.rotation[j], m.rotation, v.rotation, r.rotation, t);
      p.rotation = quat_normalize(p.rotation);
    }
    if (mask.scale) adam_block(p.log_scale, g.log_scale[j], m.log_scale, v.log_scale, r.scale, t);
    if (mask.opacity) adam_update(p.opacity_logit, g.opacity_logit[j], m.opacity_logit, v.opacity_logit, r.opacity, t);
    if (mask.sh) adam_block(p.sh, g.sh[j], m.sh, v.sh, r.sh, t);
    if (mask.feature) adam_block(p.feature, g.feature[j], m.feature, v.feature, r.feature, t);
  }
}

void adam_step(Mlp& mlp, const MlpGrads& g, MlpAdam& s, double lr) {
  if (s.mw.size() != mlp.layers.size()) {
    s.mw.clear(), s.vw.clear(), s.mb.clear(), s.vb.clear();
    for (const auto& l : mlp.layers) {
      s.mw.push_back(Eigen::MatrixXd::Zero(l.weight.rows(), l.weight.cols()));
      s.vw.push_back(s.mw.back());
      s.mb.push_back(Eigen::VectorXd::Zero(l.bias.size()));
      s.vb.push_back(s.mb.back());
    }
  }
  const int t = ++s.step;
  for (std::size_t i = 0; i < mlp.layers.size(); ++i) {
    adam_block(mlp.layers[i].weight, g.weight[i], s.mw[i], s.vw[i], lr, t);
    adam_block(mlp.layers[i].bias, g.bias[i], s.mb[i], s.vb[i], lr, t);
  }
  ++mlp.version;
}

// ---------------------------------------------------------------- densification

void DensifyStats::resize(std::size_t n) {
  grad_sum.assign(n, 0.0);
  grad_count.assign(n, 0);
  max_footprint.assign(n, 0.0);
}

void DensifyStats::reset() { resize(grad_sum.size()); }

void DensifyStats::accumulate(const Gradients& g, const RenderTarget& r, std::size_t offset) {
  const double area = static_cast<double>(r.width) * r.height;
  for (std::size_t i = 0; i < grad_sum.size(); ++i) {
    const std::size_t j = offset + i;
    if (!g.visible[j]) continue;
    grad_sum[i] += g.mean2d_norm[j];
    ++grad_count[i];
    const double rad = r.cache[j].proj.cull_radius;
    max_footprint[i] = std::max(max_footprint[i], std::numbers::pi * rad * rad / area);
  }
}

int densify_budget(std::size_t n, double cap) {
  const double x = cap * static_cast<double>(n);
  // largest integer strictly below x; values within rounding noise of an integer count as it
  const double r = std::round(x);
  const double c = std::abs(x - r) < 1e-9 ? r : std::ceil(x);
  return std::max(0, static_cast<int>(c) - 1);
}

DensifyResult densify_prune(std::vector<GaussianPrimitive>& fg, const DensifyStats& stats, const DensifyOptions& o,
                            int budget, std::mt19937_64& rng) {
  const std::size_t n = fg.size();
  if (stats.grad_sum.size() != n) throw std::invalid_argument("densify_prune: stats do not match the primitives");
  enum Kind : int { prune_opacity = 0, prune_footprint = 1, grow = 2 };
  struct Candidate {
    Kind kind;
    double key;  // ascending within kind
    std::size_t index;
  };
  std::vector<Candidate> cands;
  for (std::size_t i = 0; i < n; ++i) {
    const double op = sigmoid(fg[i].opacity_logit);
    if (op < o.prune_opacity)
      cands.push_back({prune_opacity, op, i});
    else if (stats.max_footprint[i] > o.prune_footprint)
      cands.push_back({prune_footprint, -stats.max_footprint[i], i});
    else if (stats.mean_grad(i) > o.grad_threshold)
      cands.push_back({grow, -stats.mean_grad(i), i});
  }
  std::sort(cands.begin(), cands.end(), [](const Candidate& a, const Candidate& b) {
    if (a.kind != b.kind) return a.kind < b.kind;
    if (a.key != b.key) return a.key < b.key;
    return a.index < b.index;
  });
  if (static_cast<int>(cands.size()) > budget) cands.resize(std::max(0, budget));

  DensifyResult res;
  std::vector<std::uint8_t> pruned(n, 0), split(n, 0);
  std::vector<std::size_t> clones;
  for (const auto& c : cands) {
    if (c.kind != grow) {
      pruned[c.index] = 1;
      ++res.prunes;
    } else if (o.allow_split && std::exp(fg[c.index].log_scale.maxCoeff()) > o.split_scale) {
      split[c.index] = 1;
      ++res.splits;
    } else {
      clones.push_back(c.index);
      ++res.clones;
    }
  }
  std::sort(clones.begin(), clones.end());

  std::normal_distribution<double> normal(0.0, 1.0);
  auto sample_offset = [&](const GaussianPrimitive& g, double factor) {
    const Vec3 z(normal(rng), normal(rng), normal(rng));
    return Vec3(quat_to_rotation(quat_normalize(g.rotation)) * (factor * g.log_scale.array().exp().matrix()).cwiseProduct(z));
  };

  std::vector<GaussianPrimitive> out;
  out.reserve(n + clones.size() + res.splits);
  std::vector<int> new_index(n, -1);
  for (std::size_t i = 0; i < n; ++i) {
    if (pruned[i]) continue;
    new_index[i] = static_cast<int>(out.size());
    out.push_back(fg[i]);
    res.origin.push_back(static_cast<int>(i));
    res.fresh.push_back(0);
    if (split[i]) {
      GaussianPrimitive a = fg[i];
      a.log_scale.array() -= std::log(1.6);
      out.back() = a;
      out.back().position = fg[i].position + sample_offset(fg[i], 1.0);
      res.fresh.back() = 1;
    }
  }
  for (std::size_t i = 0; i < n; ++i)
    if (split[i]) {
      GaussianPrimitive b = fg[i];
      b.log_scale.array() -= std::log(1.6);
      b.position = fg[i].position + sample_offset(fg[i], 1.0);
      out.push_back(b);
      res.origin.push_back(static_cast<int>(i));
      res.fresh.push_back(1);
    }
  for (std::size_t i : clones) {
    CloneRecord rec;
    rec.parent = new_index[i];
    rec.child = static_cast<int>(out.size());
    rec.parent_state = fg[i];
    GaussianPrimitive child = fg[i];  // inherits every attribute
    rec.child_at_creation = child;
    child.position += sample_offset(fg[i], o.jitter);
    out.push_back(child);
    res.origin.push_back(static_cast<int>(i));
    res.fresh.push_back(1);
    res.clone_records.push_back(std::move(rec));
  }
  fg = std::move(out);
  return res;
}

// ---------------------------------------------------------------- logging

void TrainLog::iteration(const LossBreakdown& terms, const std::string& stage, int frame, int it, int total) {
  if (!out_) return;
  if (it % interval_ != 0 && it != 1 && it != total) return;
  json j = json::parse(terms.json_line(stage, it));
  j["frame"] = frame;
  *out_ << j.dump() << "\n";
}

void TrainLog::line(const std::string& s) {
  if (out_) *out_ << s << "\n";
}

// ---------------------------------------------------------------- shared helpers

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

std::mt19937_64 stage_rng(std::uint64_t seed, std::uint64_t stage, std::uint64_t frame) {
  std::seed_seq s{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                  static_cast<std::uint32_t>(stage), static_cast<std::uint32_t>(frame)};
  return std::mt19937_64(s);
}

int uniform_int(std::mt19937_64& rng, int n) { return std::uniform_int_distribution<int>(0, n - 1)(rng); }

// Sample of min(k, n) distinct indices, ascending.
std::vector<int> sample_indices(std::mt19937_64& rng, int n, int k) {
  std::vector<int> idx(n);
  std::iota(idx.begin(), idx.end(), 0);
  if (k >= n) return idx;
  for (int i = 0; i < k; ++i) std::swap(idx[i], idx[i + uniform_int(rng, n - i)]);
  idx.resize(k);
  std::sort(idx.begin(), idx.end());
  return idx;
}

RasterConfig raster_config(const TrainConfig& c) {
  RasterConfig r;
  r.sh_degree = c.sh_degree;
  return r;
}

PrimitiveRates rates(const TrainConfig& c, double extent, int it, int total) {
  PrimitiveRates r;
  const double frac = total > 0 ? static_cast<double>(it - 1) / total : 0.0;
  r.position = c.lr.position * extent * std::pow(c.lr.position_final, frac);
  r.rotation = c.lr.rotation;
  r.scale = c.lr.scale;
  r.opacity = c.lr.opacity;
  r.sh = c.lr.sh;
  r.feature = c.lr.feature;
  return r;
}

void throw_if_nonfinite(const Gradients& g, const std::vector<GaussianPrimitive>& bg,
                        const std::vector<GaussianPrimitive>& fg, const std::string& stage) {
  if (g.all_finite()) return;
  for (std::size_t j = 0; j < g.size(); ++j) {
    const bool ok = g.position[j].allFinite() && g.rotation[j].allFinite() && g.log_scale[j].allFinite() &&
                    std::isfinite(g.opacity_logit[j]) && g.sh[j].allFinite() && g.feature[j].allFinite();
    if (ok) continue;
    const bool is_bg = j < bg.size();
    const GaussianPrimitive& p = is_bg ? bg[j] : fg[j - bg.size()];
    std::ostringstream o;
    o << stage << ": non-finite gradient at " << (is_bg ? "bg" : "fg") << " primitive "
      << (is_bg ? j : j - bg.size()) << " {p=" << p.position.transpose() << ", q=" << p.rotation.transpose()
      << ", log_scale=" << p.log_scale.transpose() << ", opacity_logit=" << p.opacity_logit
      << ", f=" << p.feature.transpose() << "}";
    throw std::runtime_error(o.str());
  }
  throw std::runtime_error(stage + ": non-finite gradient");
}

struct PixelTerms {
  double id = 0.0;
  double emb = 0.0;
};

// E_id and E_emb on a pixel sample of one render. Gradients flow into `up` (feature and
// alpha) and into the head gradient buffers when given.
PixelTerms pixel_terms(const RenderTarget& r, const LabelMap& mask, const Eigen::MatrixXd& codes, const Mlp& classifier,
                       const Mlp& semantic, double w_id, double w_emb, int samples, std::mt19937_64& rng,
                       RenderUpstream& up, MlpGrads* gc, MlpGrads* gs) {
  PixelTerms out;
  const int npx = r.width * r.height;
  std::vector<int> px;
  if (samples >= npx) {
    px.resize(npx);
    std::iota(px.begin(), px.end(), 0);
  } else {
    px.resize(samples);
    for (int& p : px) p = uniform_int(rng, npx);
  }
  const Eigen::MatrixXd x = normalized_features(r, px);
  std::vector<int> labels(px.size());
  for (std::size_t k = 0; k < px.size(); ++k) labels[k] = mask.data[px[k]];

  MlpCache cc;
  const Eigen::MatrixXd logits = mlp_forward(classifier, x, &cc);
  const RowLoss idl = id_loss(logits, labels);
  out.id = idl.value;
  Eigen::MatrixXd dx = mlp_backward(classifier, cc, w_id * idl.grad, gc);

  if (codes.rows() > 0) {
    MlpCache cs;
    const Eigen::MatrixXd pred = mlp_forward(semantic, x, &cs);
    Eigen::MatrixXd target = Eigen::MatrixXd::Zero(px.size(), codes.cols());
    std::vector<std::uint8_t> valid(px.size(), 0);
    for (std::size_t k = 0; k < px.size(); ++k)
      if (labels[k] >= 1) {
        target.row(k) = codes.row(labels[k] - 1);
        valid[k] = 1;
      }
    const RowLoss el = emb_loss(pred, target, valid);
    out.emb = el.value;
    dx += mlp_backward(semantic, cs, w_emb * el.grad, gs);
  }
  normalized_features_backward(r, px, dx, up.feature, up.alpha);
  return out;
}

// E_3D over a sample of fg primitives; adds into grads.feature at offset.
double kl_term(const std::vector<GaussianPrimitive>& fg, const Mlp& classifier, const std::vector<std::vector<int>>& nb,
               int samples, double w, std::mt19937_64& rng, Gradients& grads, std::size_t offset, MlpGrads* gc) {
  if (nb.size() != fg.size() || fg.empty()) return 0.0;
  MlpCache cache;
  const Eigen::MatrixXd logits = mlp_forward(classifier, feature_rows(fg), &cache);
  const std::vector<int> s = sample_indices(rng, static_cast<int>(fg.size()), samples);
  const RowLoss kl = kl3d_loss(logits, s, nb);
  const Eigen::MatrixXd dx = mlp_backward(classifier, cache, w * kl.grad, gc);
  for (std::size_t i = 0; i < fg.size(); ++i) grads.feature[offset + i] += dx.row(i).transpose();
  return kl.value;
}

std::vector<std::vector<int>> fg_knn(const std::vector<GaussianPrimitive>& fg, int k) {
  if (static_cast<int>(fg.size()) <= 1) return std::vector<std::vector<int>>(fg.size());
  std::vector<Vec3> p(fg.size());
  for (std::size_t i = 0; i < fg.size(); ++i) p[i] = fg[i].position;
  return knn_neighbors(p, std::min<int>(k, static_cast<int>(fg.size()) - 1));
}

double arap_term(const std::vector<GaussianPrimitive>& fg, const TrackContext& ctx, double w, Gradients& grads,
                 std::size_t offset) {
  const std::size_t n = fg.size();
  std::vector<Vec3> p(n), pp(n);
  std::vector<Vec4> q(n), pq(n);
  for (std::size_t i = 0; i < n; ++i) {
    p[i] = fg[i].position;
    q[i] = fg[i].rotation;
    pp[i] = ctx.previous[i].position;
    pq[i] = ctx.previous[i].rotation;
  }
  const ArapResult a = arap_loss({p, q, pp, pq, &ctx.neighbors, ctx.radius});
  for (std::size_t i = 0; i < n; ++i) {
    grads.position[offset + i] += w * a.grad_position[i];
    grads.rotation[offset + i] += w * a.grad_rotation[i];
  }
  return a.value;
}

LabelMap keep_background(const LabelMap& m) {
  LabelMap k(m.height, m.width, 1);
  for (std::size_t p = 0; p < m.data.size(); ++p) k.data[p] = m.data[p] == 0 ? 1 : 0;
  return k;
}

void finish_report(StageReport* report, const std::string& stage, int iters, Clock::time_point t0) {
  if (!report) return;
  report->stage = stage;
  report->iterations = iters;
  report->seconds = seconds_since(t0);
}

}  // namespace

double camera_extent(const std::vector<Camera>& cams) {
  if (cams.empty()) return 1.0;
  Vec3 mean = Vec3::Zero();
  for (const auto& c : cams) mean += c.center();
  mean /= static_cast<double>(cams.size());
  double r = 0.0;
  for (const auto& c : cams) r = std::max(r, (c.center() - mean).norm());
  return r > 0.0 ? 1.1 * r : 1.0;
}

// ---------------------------------------------------------------- background

SceneModel init_background(const Dataset& data, const TrainConfig& cfg, TrainLog* log, StageReport* report) {
  cfg.validate();
  const auto t0 = Clock::now();
  std::mt19937_64 rng = stage_rng(cfg.seed, 1, 0);
  const auto& cams = data.cameras();
  const double extent = camera_extent(cams);

  SceneModel scene;
  const Eigen::MatrixXd pts = data.bg_points();
  std::vector<Vec3> pos;
  std::vector<Vec3> rgb;
  if (pts.rows() > 3) {
    for (Eigen::Index i = 0; i < pts.rows(); ++i) {
      pos.emplace_back(pts(i, 0), pts(i, 1), pts(i, 2));
      rgb.emplace_back(pts(i, 3), pts(i, 4), pts(i, 5));
    }
  } else {
    Vec3 lo = cams[0].center(), hi = lo;
    for (const auto& c : cams) lo = lo.cwiseMin(c.center()), hi = hi.cwiseMax(c.center());
    std::uniform_real_distribution<double> u(0.0, 1.0);
    for (int i = 0; i < 2000; ++i) {
      pos.push_back(lo + Vec3(u(rng), u(rng), u(rng)).cwiseProduct(hi - lo));
      rgb.push_back(Vec3::Constant(0.5));
    }
  }
  const std::vector<double> d = knn_mean_distance(pos, 3);
  constexpr double c0 = 0.28209479177387814;
  for (std::size_t i = 0; i < pos.size(); ++i) {
    GaussianPrimitive g;
    g.position = pos[i];
    // half the neighbour spacing: still gap-free at 4 sigma, far fewer overlapping splats
    g.log_scale = Vec3::Constant(std::log(std::max(0.5 * d[i], 1e-4)));
    g.opacity_logit = logit(0.5);
    g.sh.row(0) = ((rgb[i] - Vec3::Constant(0.5)) / c0).transpose();
    scene.bg.push_back(g);
  }

  const int V = data.views(), T = data.frames();
  const int iters = cfg.iterations_bg;
  if (iters > 0) {
    std::vector<Image> images;
    std::vector<LabelMap> keep;
    long bg_pixels = 0;
    for (int v = 0; v < V; ++v)
      for (int t = 0; t < T; ++t) {
        images.push_back(data.image(v, t));
        keep.push_back(keep_background(data.mask(v, t)));
        bg_pixels += std::count(keep.back().data.begin(), keep.back().data.end(), 1);
      }
    if (bg_pixels == 0) throw std::runtime_error("init_background: no background pixels in any view or frame");

    const double tau = cfg.size_tau > 0.0 ? cfg.size_tau : 0.1 * extent;
    const RasterConfig rc = raster_config(cfg);
    PrimitiveAdam adam;
    AttributeMask mask;
    mask.feature = false;
    for (int it = 1; it <= iters; ++it) {
      const int k = uniform_int(rng, V * T);
      const int v = k / T;
      const RenderTarget r = rasterize(scene.bg, cams[v], rc);
      const ImageLoss cl = color_loss(r.color, images[k], cfg.dssim_mix, &keep[k]);
      RenderUpstream up;
      up.color = cl.grad;
      Gradients g = rasterize_backward(r, up);
      const ScaleLossValues sv = iso_size_losses(scene.bg, tau, cfg.iso, cfg.size, &g, 0);
      throw_if_nonfinite(g, scene.bg, {}, "init_background");
      LossBreakdown lb;
      lb.add("color", 1.0, cl.value);
      lb.add("iso", cfg.iso, sv.iso);
      lb.add("size", cfg.size, sv.size);
      adam_step(scene.bg, g, 0, adam, rates(cfg, extent, it, iters), mask);
      if (report) {
        report->trace.push_back(lb.total());
        report->last = lb;
      }
      if (log) log->iteration(lb, "bg", 0, it, iters);
    }
    quantize(scene);
  }
  scene.snapshot_bg_reference();
  finish_report(report, "bg", iters, t0);
  return scene;
}

// ---------------------------------------------------------------- first frame

std::vector<GaussianPrimitive> seed_foreground(const std::vector<Camera>& cams, const std::vector<Image>& images,
                                               const std::vector<LabelMap>& masks, int D, const TrainConfig& cfg,
                                               std::mt19937_64& rng) {
  constexpr double c0 = 0.28209479177387814;
  const int V = static_cast<int>(cams.size());
  std::vector<GaussianPrimitive> out;
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::normal_distribution<double> normal(0.0, 1.0);
  for (int d = 1; d <= D; ++d) {
    std::vector<std::vector<int>> pix(V);
    std::vector<Observation> obs;
    for (int v = 0; v < V; ++v) {
      Vec2 sum = Vec2::Zero();
      for (int p = 0; p < static_cast<int>(masks[v].data.size()); ++p)
        if (masks[v].data[p] == d) {
          pix[v].push_back(p);
          sum += Vec2(p % masks[v].width, p / masks[v].width);
        }
      if (!pix[v].empty()) obs.push_back(observe(cams[v], sum / static_cast<double>(pix[v].size())));
    }
    if (obs.empty())
      throw std::runtime_error("init_first_frame: instance " + std::to_string(d) + " has no mask pixels in any view");
    const Triangulation tri = triangulate(obs);

    std::vector<int> order(V);
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](int a, int b) { return pix[a].size() > pix[b].size(); });
    const int nviews = std::min<int>(cfg.seed_views, static_cast<int>(std::count_if(
                                                         pix.begin(), pix.end(), [](const auto& p) { return !p.empty(); })));
    std::vector<GaussianPrimitive> cand, kept;
    for (int s = 0; s < nviews; ++s) {
      const int v = order[s];
      const Camera& cam = cams[v];
      double z = 0.0;
      if (!tri.degenerate && cam.to_camera(tri.point).z() > 1e-2)
        z = cam.to_camera(tri.point).z();
      else
        z = (cam.center() - Vec3::Zero()).norm();
      // half-depth of the instance from its silhouette area in this view
      const double r = std::sqrt(pix[v].size() / std::numbers::pi) * z / cam.fx();
      const int n = cfg.seeds_per_instance / nviews + (s < cfg.seeds_per_instance % nviews ? 1 : 0);
      for (int k = 0; k < n; ++k) {
        const int p = pix[v][uniform_int(rng, static_cast<int>(pix[v].size()))];
        const Vec2 uv(p % cam.width + u(rng) - 0.5, p / cam.width + u(rng) - 0.5);
        const double depth = z + (2.0 * u(rng) - 1.0) * r;
        GaussianPrimitive g;
        g.position = cam.back_project(uv, std::max(depth, 1e-2 + 1e-6));
        const double* c = images[v].pixel(p);
        g.sh.row(0) = ((Vec3(c[0], c[1], c[2]) - Vec3::Constant(0.5)) / c0).transpose();
        g.opacity_logit = logit(0.5);
        for (int a = 0; a < kFeatureDim; ++a) g.feature[a] = 0.1 * normal(rng);
        cand.push_back(g);
      }
    }
    // carve: drop points that land on background in any view that sees them
    for (const auto& g : cand) {
      bool inside = true;
      for (int v = 0; v < V && inside; ++v) {
        const auto uv = cams[v].project(g.position);
        if (!uv) continue;
        const int x = static_cast<int>(std::lround(uv->x())), y = static_cast<int>(std::lround(uv->y()));
        if (x < 0 || y < 0 || x >= masks[v].width || y >= masks[v].height) continue;
        if (masks[v].at(y, x) == 0) inside = false;
      }
      if (inside) kept.push_back(g);
    }
    if (kept.size() < 8) kept = cand;
    out.insert(out.end(), kept.begin(), kept.end());
  }
  if (out.size() > 3) {
    std::vector<Vec3> p(out.size());
    for (std::size_t i = 0; i < out.size(); ++i) p[i] = out[i].position;
    const std::vector<double> dist = knn_mean_distance(p, 3);
    for (std::size_t i = 0; i < out.size(); ++i) out[i].log_scale = Vec3::Constant(std::log(std::max(dist[i], 1e-4)));
  } else {
    for (auto& g : out) g.log_scale = Vec3::Constant(std::log(0.05));
  }
  return out;
}

namespace {

// Densify bookkeeping shared by the first-frame and per-frame loops.
struct FgBook {
  PrimitiveAdam adam;
  DensifyStats stats;
  std::vector<std::vector<int>> kl_nb;
  int kl_age = 0;
};

void apply_ids(Checkpoint& state, const DensifyResult& res) {
  std::vector<std::uint64_t> ids;
  ids.reserve(res.origin.size());
  // splits keep neither half's identity; clones leave the parent's id in place
  for (std::size_t i = 0; i < res.origin.size(); ++i)
    ids.push_back(res.fresh[i] ? state.next_id++ : state.fg_ids[res.origin[i]]);
  state.fg_ids = std::move(ids);
}

}  // namespace

Checkpoint init_first_frame(const Dataset& data, const SceneModel& background, const Autoencoder& ae,
                            const TrainConfig& cfg, TrainLog* log, StageReport* report) {
  cfg.validate();
  const auto t0 = Clock::now();
  const int D = data.instances(), V = data.views();
  if (D > 0 && data.manifest().aligned_masks.empty())
    throw std::runtime_error("init_first_frame: masks are not aligned; run align first");
  std::mt19937_64 rng = stage_rng(cfg.seed, 2, 0);
  const auto& cams = data.cameras();
  const double extent = camera_extent(cams);

  FrameBundle b;
  for (int v = 0; v < V; ++v) {
    b.images.push_back(data.image(v, 0));
    b.masks.push_back(data.mask(v, 0));
  }
  if (D > 0) {
    b.codes = data.codes(0);
    if (b.codes.cols() != ae.code_dim())
      throw std::runtime_error("init_first_frame: compressed embeddings do not match the autoencoder");
  }

  Checkpoint st;
  st.scene = background;
  st.scene.frame_index = 0;
  st.scene.fg = seed_foreground(cams, b.images, b.masks, D, cfg, rng);
  st.cameras = cams;
  st.autoencoder = ae;
  st.classifier = make_head(D + 1, rng);
  st.semantic = make_head(ae.code_dim() > 0 ? ae.code_dim() : 6, rng);
  for (std::size_t i = 0; i < st.scene.fg.size(); ++i) st.fg_ids.push_back(st.next_id++);

  const int iters = cfg.iterations_first;
  const RasterConfig rc = raster_config(cfg);
  PrimitiveAdam bg_adam;
  FgBook book;
  book.stats.resize(st.scene.fg.size());
  MlpAdam ca, sa;
  DensifyOptions dopt{cfg.densify_grad, cfg.prune_opacity, cfg.prune_footprint, cfg.clone_jitter, true,
                      cfg.split_scale * extent};
  const int densify_stop = static_cast<int>(cfg.densify_until * iters);

  for (int it = 1; it <= iters; ++it) {
    auto& fg = st.scene.fg;
    const std::size_t nb = st.scene.bg.size();
    const int v = uniform_int(rng, V);
    const RenderTarget r = rasterize(st.scene, cams[v], rc);
    const ImageLoss cl = color_loss(r.color, b.images[v], cfg.dssim_mix);
    RenderUpstream up;
    up.color = cl.grad;
    LossBreakdown lb;
    lb.add("color", 1.0, cl.value);
    MlpGrads gc(*st.classifier), gs(*st.semantic);
    if (D > 0) {
      const PixelTerms pt = pixel_terms(r, b.masks[v], b.codes, *st.classifier, *st.semantic, cfg.init_id, cfg.init_emb,
                                        cfg.semantic_pixel_samples, rng, up, &gc, &gs);
      lb.add("id", cfg.init_id, pt.id);
      lb.add("emb", cfg.init_emb, pt.emb);
    }
    Gradients g = rasterize_backward(r, up);
    if (D > 0 && fg.size() > 1) {
      if (book.kl_nb.size() != fg.size() || book.kl_age >= cfg.knn_refresh) {
        book.kl_nb = fg_knn(fg, cfg.kl_neighbors);
        book.kl_age = 0;
      }
      ++book.kl_age;
      lb.add("kl3d", cfg.init_kl3d, kl_term(fg, *st.classifier, book.kl_nb, cfg.kl_samples, cfg.init_kl3d, rng, g, nb, &gc));
    }
    throw_if_nonfinite(g, st.scene.bg, fg, "init_first_frame");
    book.stats.accumulate(g, r, nb);
    const PrimitiveRates pr = rates(cfg, extent, it, iters);
    adam_step(st.scene.bg, g, 0, bg_adam, pr, AttributeMask::all());
    // fg sits after bg in the gradient buffers
    adam_step(fg, g, nb, book.adam, pr, AttributeMask::all());
    if (D > 0) {
      adam_step(*st.classifier, gc, ca, cfg.lr.heads);
      adam_step(*st.semantic, gs, sa, cfg.lr.heads);
    }
    if (report) {
      report->trace.push_back(lb.total());
      report->last = lb;
    }
    if (log) log->iteration(lb, "init", 0, it, iters);

    if (it % cfg.densify_interval == 0 && it <= densify_stop && !fg.empty()) {
      const int budget = densify_budget(fg.size(), cfg.init_densify_cap);
      const DensifyResult res = densify_prune(fg, book.stats, dopt, budget, rng);
      apply_ids(st, res);
      book.adam.reorder(res.origin, res.fresh);
      book.stats.resize(fg.size());
      book.kl_nb.clear();
      if (log && res.modified() > 0)
        log->line(json{{"stage", "init"}, {"iter", it}, {"event", "densify"}, {"clones", res.clones},
                       {"splits", res.splits}, {"prunes", res.prunes}, {"fg", fg.size()}}
                      .dump());
    }
  }
  quantize(st.scene);
  quantize(*st.classifier);
  quantize(*st.semantic);
  quantize(*st.autoencoder);
  finish_report(report, "init", iters, t0);
  return st;
}

// ---------------------------------------------------------------- per frame

FrameBundle load_frame(const Dataset& data, int t) {
  FrameBundle b;
  b.frame = t;
  const int V = data.views(), D = data.instances();
  for (int v = 0; v < V; ++v) {
    b.images.push_back(data.image(v, t));
    b.masks.push_back(data.mask(v, t));
    if (t >= 1) b.flows.push_back(data.flow(v, t));
  }
  if (D > 0 && data.has_codes()) b.codes = data.codes(t);
  b.sdf.resize(V);
  for (int v = 0; v < V; ++v)
    for (int d = 1; d <= D; ++d) {
      const LabelMap m = instance_mask(b.masks[v], d);
      const bool present = std::any_of(m.data.begin(), m.data.end(), [](std::uint8_t x) { return x != 0; });
      b.sdf[v].push_back(present ? signed_distance_field(b.masks[v], d) : Image());
    }
  return b;
}

TrackContext make_track_context(const std::vector<GaussianPrimitive>& prev, const TrainConfig& cfg) {
  TrackContext c;
  c.previous = prev;
  c.neighbors = fg_knn(prev, cfg.smooth_neighbors);
  if (cfg.smooth_radius > 0.0) {
    c.radius = cfg.smooth_radius;
  } else {
    double sum = 0.0;
    long n = 0;
    for (std::size_t i = 0; i < prev.size(); ++i)
      for (int k : c.neighbors[i]) {
        sum += (prev[k].position - prev[i].position).norm();
        ++n;
      }
    c.radius = n > 0 && sum > 0.0 ? sum / n : 1.0;
  }
  c.fg_at_start = static_cast<int>(prev.size());
  c.budget = densify_budget(prev.size(), cfg.densify_cap);
  return c;
}

WarpResult warp_frame(Checkpoint& st, const FrameBundle& b, const TrainConfig& cfg) {
  const RasterConfig rc = raster_config(cfg);
  std::vector<RenderTarget> renders;
  for (const auto& cam : st.cameras) renders.push_back(rasterize(st.scene, cam, rc));
  WarpResult w = warp_foreground(st.scene, st.cameras, b.flows, renders, cfg.warp);
  for (std::size_t i = 0; i < st.scene.fg.size(); ++i) st.scene.fg[i].position = w.positions[i];
  return w;
}

void refine_motion(Checkpoint& st, const FrameBundle& b, const TrackContext& ctx, const TrainConfig& cfg, TrainLog* log,
                   StageReport* report) {
  const auto t0 = Clock::now();
  std::mt19937_64 rng = stage_rng(cfg.seed, 3, b.frame);
  const double extent = camera_extent(st.cameras);
  const RasterConfig rc = raster_config(cfg);
  const int iters = cfg.iterations_refine;
  PrimitiveAdam adam;
  if (ctx.previous.size() != st.scene.fg.size())
    throw std::logic_error("refine_motion: t-1 reference does not match the fg count");
  for (int it = 1; it <= iters; ++it) {
    const int v = uniform_int(rng, static_cast<int>(st.cameras.size()));
    const RenderTarget r = rasterize(st.scene, st.cameras[v], rc);
    const ImageLoss cl = color_loss(r.color, b.images[v], cfg.dssim_mix);
    RenderUpstream up;
    up.color = cl.grad;
    Gradients g = rasterize_backward(r, up);
    const std::size_t nb = st.scene.bg.size();
    const double smooth = arap_term(st.scene.fg, ctx, cfg.refine_smooth, g, nb);
    throw_if_nonfinite(g, st.scene.bg, st.scene.fg, "refine_motion");
    LossBreakdown lb;
    lb.add("color", 1.0, cl.value);
    lb.add("smooth", cfg.refine_smooth, smooth);
    adam_step(st.scene.fg, g, nb, adam, rates(cfg, extent, it, iters), AttributeMask::motion());
    if (report) {
      report->trace.push_back(lb.total());
      report->last = lb;
    }
    if (log) log->iteration(lb, "refine", b.frame, it, iters);
  }
  finish_report(report, "refine", iters, t0);
}

void train_frame(Checkpoint& st, const FrameBundle& b, TrackContext& ctx, const TrainConfig& cfg, FrameMetrics& m,
                 TrainLog* log, StageReport* report) {
  const auto t0 = Clock::now();
  std::mt19937_64 rng = stage_rng(cfg.seed, 4, b.frame);
  const double extent = camera_extent(st.cameras);
  const RasterConfig rc = raster_config(cfg);
  const int D = static_cast<int>(st.classifier ? st.classifier->output_dim() - 1 : 0);
  if (D > 0 && b.codes.rows() != D) throw std::runtime_error("train_frame: compressed embeddings missing for frame " + std::to_string(b.frame));
  const int iters = cfg.iterations_frame;
  const int V = static_cast<int>(st.cameras.size());
  PrimitiveAdam bg_adam;
  FgBook book;
  book.stats.resize(st.scene.fg.size());
  MlpAdam sa;
  const DensifyOptions dopt{cfg.densify_grad, cfg.prune_opacity, cfg.prune_footprint, cfg.clone_jitter, false, 0.0};

  for (int it = 1; it <= iters; ++it) {
    auto& fg = st.scene.fg;
    const std::size_t nb = st.scene.bg.size();
    const int v = uniform_int(rng, V);
    const RenderTarget r = rasterize(st.scene, st.cameras[v], rc);
    const ImageLoss cl = color_loss(r.color, b.images[v], cfg.dssim_mix);
    RenderUpstream up;
    up.color = cl.grad;
    LossBreakdown lb;
    lb.add("color", 1.0, cl.value);
    MlpGrads gs(*st.semantic);
    if (D > 0) {
      // classification head frozen: gradients reach the features only
      const PixelTerms pt = pixel_terms(r, b.masks[v], b.codes, *st.classifier, *st.semantic, cfg.train_id,
                                        cfg.train_emb, cfg.semantic_pixel_samples, rng, up, nullptr, &gs);
      lb.add("id", cfg.train_id, pt.id);
      lb.add("emb", cfg.train_emb, pt.emb);
    }
    Gradients g = rasterize_backward(r, up);
    if (D > 0 && fg.size() > 1) {
      if (book.kl_nb.size() != fg.size() || book.kl_age >= cfg.knn_refresh) {
        book.kl_nb = fg_knn(fg, cfg.kl_neighbors);
        book.kl_age = 0;
      }
      ++book.kl_age;
      lb.add("kl3d", cfg.train_kl3d, kl_term(fg, *st.classifier, book.kl_nb, cfg.kl_samples, cfg.train_kl3d, rng, g, nb, nullptr));
      const std::vector<int> labels = primitive_labels(fg, *st.classifier);
      lb.add("sdf", cfg.sdf, sdf_loss(fg, labels, b.sdf, st.cameras, cfg.sdf, &g, nb));
    }
    lb.add("temp_bg", cfg.temp_bg, temporal_bg_loss(st.scene.bg, st.scene.bg_reference, cfg.temp_bg, &g, 0));
    lb.add("temp", cfg.temp, temporal_fg_loss(fg, ctx.previous, cfg.temp, &g, nb));
    lb.add("smooth", cfg.train_smooth, arap_term(fg, ctx, cfg.train_smooth, g, nb));
    throw_if_nonfinite(g, st.scene.bg, fg, "train_frame (frame " + std::to_string(b.frame) + ")");
    book.stats.accumulate(g, r, nb);
    const PrimitiveRates pr = rates(cfg, extent, it, iters);
    adam_step(st.scene.bg, g, 0, bg_adam, pr, AttributeMask::appearance());
    adam_step(fg, g, nb, book.adam, pr, AttributeMask::all());
    if (D > 0) adam_step(*st.semantic, gs, sa, cfg.lr.heads);
    if (report) {
      report->trace.push_back(lb.total());
      report->last = lb;
    }
    if (log) log->iteration(lb, "train", b.frame, it, iters);

    if (it % cfg.densify_interval == 0 && it < iters && !fg.empty()) {
      const int budget = ctx.budget - ctx.modified;
      const DensifyResult res = densify_prune(fg, book.stats, dopt, budget, rng);
      for (const auto& rec : res.clone_records) {
        if (!(rec.child_at_creation == rec.parent_state) || !(fg[rec.parent] == rec.parent_state))
          throw std::logic_error("train_frame: clone differs from its parent at creation");
        ++m.clone_checks;
      }
      ctx.modified += res.modified();
      m.clones += res.clones;
      m.prunes += res.prunes;
      if (res.modified() > 0) {
        apply_ids(st, res);
        book.adam.reorder(res.origin, res.fresh);
        std::vector<GaussianPrimitive> prev;
        prev.reserve(res.origin.size());
        for (int o : res.origin) prev.push_back(ctx.previous[o]);
        ctx.previous = std::move(prev);
        ctx.neighbors = fg_knn(ctx.previous, cfg.smooth_neighbors);
        book.kl_nb.clear();
        if (log)
          log->line(json{{"stage", "train"}, {"frame", b.frame}, {"iter", it}, {"event", "densify"},
                         {"clones", res.clones}, {"prunes", res.prunes}, {"fg", fg.size()}}
                        .dump());
      }
      book.stats.resize(fg.size());
    }
  }
  m.modified = ctx.modified;
  m.fg_start = ctx.fg_at_start;
  m.fg_end = static_cast<int>(st.scene.fg.size());
  m.modified_fraction = ctx.fg_at_start > 0 ? static_cast<double>(ctx.modified) / ctx.fg_at_start : 0.0;
  if (ctx.modified > 0 && !(m.modified_fraction < cfg.densify_cap))
    throw std::logic_error("train_frame: modified fraction " + std::to_string(m.modified_fraction) +
                           " is not below the cap");
  finish_report(report, "train", iters, t0);
}

void evaluate_frame(const Checkpoint& st, const Dataset& data, int t, const TrainConfig& cfg, FrameMetrics& m) {
  const RasterConfig rc = raster_config(cfg);
  const bool holdout = data.holdout_camera().has_value();
  const Camera& cam = holdout ? *data.holdout_camera() : st.cameras.at(0);
  const RenderTarget r = rasterize(st.scene, cam, rc);
  const Image truth = holdout ? data.holdout_image(t) : data.image(0, t);
  m.psnr = psnr(r.color, truth).db;
  if (st.classifier && data.instances() > 0 && (!holdout || !data.manifest().holdout_masks.empty())) {
    const LabelMap pred = predict_labels(r, *st.classifier);
    const LabelMap gt = holdout ? data.holdout_mask(t) : data.mask(0, t);
    m.miou = seg_metrics(std::span<const LabelMap>(&pred, 1), std::span<const LabelMap>(&gt, 1), data.instances()).miou;
  }
}

FrameMetrics track_frame(Checkpoint& st, const Dataset& data, int t, const TrainConfig& cfg, TrainLog* log) {
  cfg.validate();
  if (t < 1 || t >= data.frames()) throw std::invalid_argument("track_frame: frame " + std::to_string(t) + " out of range");
  if (st.scene.frame_index != t - 1)
    throw std::invalid_argument("track_frame: state holds frame " + std::to_string(st.scene.frame_index) +
                                ", expected " + std::to_string(t - 1));
  if (!st.semantic || !st.classifier) throw std::invalid_argument("track_frame: state has no heads");
  const auto t0 = Clock::now();
  FrameMetrics m;
  m.frame = t;
  const FrameBundle b = load_frame(data, t);
  const std::vector<GaussianPrimitive> prev = st.scene.fg;
  m.warp = warp_frame(st, b, cfg);
  TrackContext ctx = make_track_context(prev, cfg);
  refine_motion(st, b, ctx, cfg, log);
  train_frame(st, b, ctx, cfg, m, log);
  st.scene.frame_index = t;
  quantize(st.scene);
  quantize(*st.semantic);
  evaluate_frame(st, data, t, cfg, m);
  m.seconds = seconds_since(t0);
  if (log)
    log->line(json{{"stage", "frame"}, {"frame", t}, {"psnr", m.psnr}, {"miou", m.miou}, {"fg_start", m.fg_start},
                   {"fg_end", m.fg_end}, {"clones", m.clones}, {"prunes", m.prunes},
                   {"modified_fraction", m.modified_fraction}, {"warped", m.warp.warped},
                   {"borrowed", m.warp.borrowed}, {"carried", m.warp.carried}, {"seconds", m.seconds}}
                  .dump());
  return m;
}

}  // namespace gs4d
