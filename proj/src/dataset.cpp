#include "gs4d/dataset.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <numbers>
#include <random>

namespace gs4d {

using json = nlohmann::json;

namespace {

constexpr double kShC0 = 0.28209479177387814;

json mat_json(const Mat3& m) {
  json rows = json::array();
  for (int r = 0; r < 3; ++r) rows.push_back({m(r, 0), m(r, 1), m(r, 2)});
  return rows;
}

Mat3 mat_from(const json& j) {
  if (!j.is_array() || j.size() != 3) throw std::invalid_argument("expected a 3x3 array");
  Mat3 m;
  for (int r = 0; r < 3; ++r) {
    if (!j[r].is_array() || j[r].size() != 3) throw std::invalid_argument("expected a 3x3 array");
    for (int c = 0; c < 3; ++c) m(r, c) = j[r][c].get<double>();
  }
  return m;
}

json parse_json_file(const fs::path& path) {
  if (!fs::exists(path)) throw DatasetError(path, "file does not exist");
  try {
    return json::parse(read_file(path));
  } catch (const json::exception& e) {
    throw DatasetError(path, std::string("invalid JSON: ") + e.what());
  }
}

std::string opt_string(const json& j, const char* key) {
  return j.contains(key) ? j.at(key).get<std::string>() : std::string();
}

}  // namespace

std::string camera_to_json(const Camera& c) {
  json j;
  j["K"] = mat_json(c.K);
  j["R"] = mat_json(c.R);
  j["t"] = {c.t.x(), c.t.y(), c.t.z()};
  j["width"] = c.width;
  j["height"] = c.height;
  return j.dump(2);
}

Camera camera_from_json(const std::string& text) {
  const json j = json::parse(text);
  Camera c;
  c.K = mat_from(j.at("K"));
  c.R = mat_from(j.at("R"));
  const auto& t = j.at("t");
  if (!t.is_array() || t.size() != 3) throw std::invalid_argument("t must have 3 entries");
  c.t = Vec3(t[0].get<double>(), t[1].get<double>(), t[2].get<double>());
  c.width = j.at("width").get<int>();
  c.height = j.at("height").get<int>();
  return c;
}

Camera read_camera_json(const fs::path& path) {
  if (!fs::exists(path)) throw DatasetError(path, "camera file does not exist");
  Camera c;
  try {
    c = camera_from_json(read_file(path));
    c.validate();
  } catch (const DatasetError&) {
    throw;
  } catch (const std::exception& e) {
    throw DatasetError(path, std::string("invalid camera: ") + e.what());
  }
  return c;
}

void write_camera_json(const fs::path& path, const Camera& camera) {
  write_file_atomic(path, camera_to_json(camera) + "\n");
}

std::string expand_template(const std::string& pattern, int view, int frame) {
  std::string out;
  for (std::size_t i = 0; i < pattern.size();) {
    if (pattern.compare(i, 3, "{v}") == 0) {
      out += std::to_string(view);
      i += 3;
    } else if (pattern.compare(i, 3, "{t}") == 0) {
      out += std::to_string(frame);
      i += 3;
    } else {
      out += pattern[i++];
    }
  }
  return out;
}

DatasetManifest DatasetManifest::load(const fs::path& manifest_path) {
  const json j = parse_json_file(manifest_path);
  DatasetManifest m;
  m.root = manifest_path.parent_path();
  if (m.root.empty()) m.root = ".";
  try {
    m.views = j.at("views").get<int>();
    m.frames = j.at("frames").get<int>();
    m.instances = j.at("instances").get<int>();
    m.embedding_dim = j.value("embedding_dim", 0);
    m.width = j.at("width").get<int>();
    m.height = j.at("height").get<int>();
    m.camera = j.at("cameras").get<std::string>();
    m.images = j.at("images").get<std::string>();
    m.masks = j.at("masks").get<std::string>();
    m.flows = opt_string(j, "flows");
    m.embeddings = opt_string(j, "embeddings");
    m.aligned_masks = opt_string(j, "aligned_masks");
    m.codes = opt_string(j, "codes");
    m.autoencoder = opt_string(j, "autoencoder");
    m.bg_points = opt_string(j, "bg_points");
    m.canonical_mask = opt_string(j, "canonical_mask");
    if (j.contains("holdout")) {
      const auto& h = j.at("holdout");
      m.holdout_camera = h.at("camera").get<std::string>();
      m.holdout_images = h.at("images").get<std::string>();
      m.holdout_masks = opt_string(h, "masks");
    }
  } catch (const json::exception& e) {
    throw DatasetError(manifest_path, std::string("manifest field: ") + e.what());
  }
  return m;
}

void DatasetManifest::save(const fs::path& manifest_path) const {
  json j;
  j["views"] = views;
  j["frames"] = frames;
  j["instances"] = instances;
  j["embedding_dim"] = embedding_dim;
  j["width"] = width;
  j["height"] = height;
  j["cameras"] = camera;
  j["images"] = images;
  j["masks"] = masks;
  auto put = [&](const char* key, const std::string& v) {
    if (!v.empty()) j[key] = v;
  };
  put("flows", flows);
  put("embeddings", embeddings);
  put("aligned_masks", aligned_masks);
  put("codes", codes);
  put("autoencoder", autoencoder);
  put("bg_points", bg_points);
  put("canonical_mask", canonical_mask);
  if (!holdout_camera.empty()) {
    j["holdout"]["camera"] = holdout_camera;
    j["holdout"]["images"] = holdout_images;
    if (!holdout_masks.empty()) j["holdout"]["masks"] = holdout_masks;
  }
  write_file_atomic(manifest_path, j.dump(2) + "\n");
}

// ---------------------------------------------------------------- dataset

Dataset::Dataset(const fs::path& manifest_path) : Dataset(DatasetManifest::load(manifest_path)) {}

Dataset::Dataset(DatasetManifest manifest) : m_(std::move(manifest)) { validate(); }

void Dataset::validate() {
  const fs::path mpath = m_.root / "manifest.json";
  if (m_.views < 1) throw DatasetError(mpath, "views must be >= 1");
  if (m_.frames < 1) throw DatasetError(mpath, "frames must be >= 1");
  if (m_.instances < 0 || m_.instances > 255) throw DatasetError(mpath, "instances must be in [0,255]");
  if (m_.width < 1 || m_.height < 1) throw DatasetError(mpath, "resolution must be positive");
  if (m_.instances > 0 && m_.embeddings.empty())
    throw DatasetError(mpath, "embeddings template required when instances > 0");

  auto check_camera = [&](const fs::path& p) {
    Camera c = read_camera_json(p);
    if (c.width != m_.width || c.height != m_.height)
      throw DatasetError(p, "camera resolution " + std::to_string(c.width) + "x" +
                                std::to_string(c.height) + " does not match the manifest");
    return c;
  };
  auto check_png = [&](const fs::path& p) {
    if (!fs::exists(p)) throw DatasetError(p, "file does not exist");
    std::pair<int, int> wh;
    try {
      wh = png_size(p);
    } catch (const std::exception& e) {
      throw DatasetError(p, std::string("unreadable PNG: ") + e.what());
    }
    if (wh.first != m_.width || wh.second != m_.height)
      throw DatasetError(p, "resolution does not match the manifest");
  };
  auto check_mask = [&](const fs::path& p, int width) {
    if (!fs::exists(p)) throw DatasetError(p, "file does not exist");
    LabelMap l;
    try {
      l = read_png_labels(p);
    } catch (const std::exception& e) {
      throw DatasetError(p, std::string("unreadable mask: ") + e.what());
    }
    if (l.width != width || l.height != m_.height)
      throw DatasetError(p, "resolution does not match the manifest");
    const int top = l.data.empty() ? 0 : *std::max_element(l.data.begin(), l.data.end());
    if (top > m_.instances)
      throw DatasetError(p, "mask label " + std::to_string(top) + " exceeds instance count " +
                                std::to_string(m_.instances));
  };
  auto check_vectors = [&](const fs::path& p, int count, int dim) {
    if (!fs::exists(p)) throw DatasetError(p, "file does not exist");
    VectorFile f;
    try {
      f = read_vectors(p);
    } catch (const std::exception& e) {
      throw DatasetError(p, e.what());
    }
    if (f.count != count) throw DatasetError(p, "expected " + std::to_string(count) + " vectors");
    if (dim > 0 && f.dim != dim) throw DatasetError(p, "expected dimension " + std::to_string(dim));
    for (float x : f.data)
      if (!std::isfinite(x)) throw DatasetError(p, "non-finite entry");
  };

  cameras_.clear();
  for (int v = 0; v < m_.views; ++v) cameras_.push_back(check_camera(path_of(m_.camera, v, 0)));
  for (int v = 0; v < m_.views; ++v)
    for (int t = 0; t < m_.frames; ++t) {
      check_png(path_of(m_.images, v, t));
      check_mask(path_of(m_.masks, v, t), m_.width);
      if (!m_.aligned_masks.empty()) check_mask(path_of(m_.aligned_masks, v, t), m_.width);
      if (t >= 1) {
        if (m_.flows.empty()) throw DatasetError(mpath, "flows template required when frames > 1");
        const fs::path p = path_of(m_.flows, v, t);
        if (!fs::exists(p)) throw DatasetError(p, "file does not exist");
        F32mHeader h;
        try {
          h = read_f32m_header(p);
        } catch (const std::exception& e) {
          throw DatasetError(p, e.what());
        }
        if (h.channels != 2) throw DatasetError(p, "flow must have 2 channels");
        if (h.width != m_.width || h.height != m_.height)
          throw DatasetError(p, "flow resolution does not match the camera");
      }
    }
  if (m_.instances > 0)
    for (int t = 0; t < m_.frames; ++t) {
      check_vectors(path_of(m_.embeddings, 0, t), m_.instances, m_.embedding_dim);
      if (!m_.codes.empty()) check_vectors(path_of(m_.codes, 0, t), m_.instances, 0);
    }
  if (!m_.canonical_mask.empty()) check_mask(m_.resolve(m_.canonical_mask), m_.width * m_.views);
  if (!m_.bg_points.empty()) {
    const fs::path p = m_.resolve(m_.bg_points);
    if (!fs::exists(p)) throw DatasetError(p, "file does not exist");
    const F32mHeader h = read_f32m_header(p);
    if (h.height != 1 || h.channels != 6) throw DatasetError(p, "points must be 1 x N x 6 (xyz rgb)");
  }
  if (!m_.autoencoder.empty() && !fs::exists(m_.resolve(m_.autoencoder)))
    throw DatasetError(m_.resolve(m_.autoencoder), "file does not exist");
  holdout_.reset();
  if (!m_.holdout_camera.empty()) {
    holdout_ = check_camera(m_.resolve(m_.holdout_camera));
    for (int t = 0; t < m_.frames; ++t) {
      check_png(path_of(m_.holdout_images, 0, t));
      if (!m_.holdout_masks.empty()) check_mask(path_of(m_.holdout_masks, 0, t), m_.width);
    }
  }
}

Image Dataset::image(int v, int t) const { return read_png_rgb(path_of(m_.images, v, t)); }

LabelMap Dataset::raw_mask(int v, int t) const { return read_png_labels(path_of(m_.masks, v, t)); }

LabelMap Dataset::mask(int v, int t) const {
  return read_png_labels(path_of(m_.aligned_masks.empty() ? m_.masks : m_.aligned_masks, v, t));
}

LabelMap Dataset::canonical_for_view(int view) const {
  if (m_.canonical_mask.empty()) return raw_mask(0, 0);
  const LabelMap mosaic = read_png_labels(m_.resolve(m_.canonical_mask));
  LabelMap panel(m_.height, m_.width, 1);
  for (int y = 0; y < m_.height; ++y)
    for (int x = 0; x < m_.width; ++x) panel.at(y, x) = mosaic.at(y, view * m_.width + x);
  return panel;
}

Image Dataset::flow(int v, int t) const {
  if (t < 1) throw std::invalid_argument("flow: frame 0 has no incoming flow");
  return to_double(read_f32m(path_of(m_.flows, v, t)));
}

Eigen::MatrixXd to_matrix(const VectorFile& f) {
  Eigen::MatrixXd m(f.count, f.dim);
  for (int r = 0; r < f.count; ++r)
    for (int c = 0; c < f.dim; ++c) m(r, c) = f.data[static_cast<std::size_t>(r) * f.dim + c];
  return m;
}

VectorFile from_matrix(const Eigen::MatrixXd& m) {
  VectorFile f;
  f.count = static_cast<int>(m.rows());
  f.dim = static_cast<int>(m.cols());
  f.data.resize(m.size());
  for (int r = 0; r < f.count; ++r)
    for (int c = 0; c < f.dim; ++c) f.data[static_cast<std::size_t>(r) * f.dim + c] = static_cast<float>(m(r, c));
  return f;
}

Eigen::MatrixXd Dataset::embeddings(int t) const {
  if (m_.instances == 0) return Eigen::MatrixXd(0, m_.embedding_dim);
  return to_matrix(read_vectors(path_of(m_.embeddings, 0, t)));
}

Eigen::MatrixXd Dataset::codes(int t) const {
  if (m_.codes.empty()) throw std::runtime_error("dataset has no compressed embeddings; run compress-emb");
  return to_matrix(read_vectors(path_of(m_.codes, 0, t)));
}

Image Dataset::holdout_image(int t) const { return read_png_rgb(path_of(m_.holdout_images, 0, t)); }

LabelMap Dataset::holdout_mask(int t) const { return read_png_labels(path_of(m_.holdout_masks, 0, t)); }

Eigen::MatrixXd Dataset::bg_points() const {
  if (m_.bg_points.empty()) return {};
  const Raster<float> r = read_f32m(m_.resolve(m_.bg_points));
  Eigen::MatrixXd m(r.width, 6);
  for (int i = 0; i < r.width; ++i)
    for (int c = 0; c < 6; ++c) m(i, c) = r.at(0, i, c);
  return m;
}

// ---------------------------------------------------------------- generator

SyntheticSpec SyntheticSpec::from_json(const std::string& text) {
  const json j = json::parse(text);
  SyntheticSpec s;
  s.views = j.value("views", s.views);
  s.frames = j.value("frames", s.frames);
  s.instances = j.value("instances", s.instances);
  if (j.contains("resolution")) {
    s.width = s.height = j.at("resolution").get<int>();
  }
  s.width = j.value("width", s.width);
  s.height = j.value("height", s.height);
  s.motion = j.value("motion", s.motion);
  s.seed = j.value("seed", s.seed);
  s.embedding_dim = j.value("embedding_dim", s.embedding_dim);
  s.holdout = j.value("holdout", s.holdout);
  s.blob_primitives = j.value("blob_primitives", s.blob_primitives);
  s.bg_grid = j.value("bg_grid", s.bg_grid);
  s.permute_view_labels = j.value("permute_view_labels", s.permute_view_labels);
  if (j.contains("event")) {
    const auto& e = j.at("event");
    s.event = SyntheticEvent{e.at("instance").get<int>(), e.at("first").get<int>(), e.at("last").get<int>()};
  }
  static const char* motions[] = {"static", "translation", "rotation", "rigid", "wobble"};
  if (std::find(std::begin(motions), std::end(motions), s.motion) == std::end(motions))
    throw std::invalid_argument("unknown motion model '" + s.motion + "'");
  if (s.views < 1 || s.frames < 1 || s.instances < 0 || s.instances > 8 || s.width < 8 || s.height < 8)
    throw std::invalid_argument("synthetic spec: counts out of range");
  if (s.embedding_dim < s.instances + 1)
    throw std::invalid_argument("synthetic spec: embedding_dim must exceed the instance count");
  if (s.event && (s.event->instance < 1 || s.event->instance > s.instances || s.event->first > s.event->last))
    throw std::invalid_argument("synthetic spec: invalid event");
  return s;
}

std::string SyntheticSpec::to_json() const {
  json j;
  j["views"] = views;
  j["frames"] = frames;
  j["instances"] = instances;
  j["width"] = width;
  j["height"] = height;
  j["motion"] = motion;
  j["seed"] = seed;
  j["embedding_dim"] = embedding_dim;
  j["holdout"] = holdout;
  j["blob_primitives"] = blob_primitives;
  j["bg_grid"] = bg_grid;
  j["permute_view_labels"] = permute_view_labels;
  if (event) j["event"] = {{"instance", event->instance}, {"first", event->first}, {"last", event->last}};
  return j.dump(2);
}

namespace {

constexpr double kFloorY = 0.8;
constexpr double kFloorHalf = 3.0;
constexpr double kBlobRadius = 0.42;

Mat3 rot_y(double a) {
  Mat3 r;
  r << std::cos(a), 0.0, std::sin(a), 0.0, 1.0, 0.0, -std::sin(a), 0.0, std::cos(a);
  return r;
}

Vec3 floor_color(double x, double z) {
  const double checker = ((static_cast<int>(std::floor(x / 0.75)) + static_cast<int>(std::floor(z / 0.75))) & 1) ? 0.12 : -0.12;
  return Vec3(0.55 + 0.2 * std::sin(1.3 * x) + checker, 0.5 + 0.2 * std::cos(1.1 * z) + 0.5 * checker,
              0.45 + 0.15 * std::sin(0.9 * (x + z)) - 0.5 * checker)
      .cwiseMax(0.02)
      .cwiseMin(0.98);
}

const Vec3 kPalette[] = {{0.85, 0.25, 0.2}, {0.2, 0.45, 0.85}, {0.25, 0.75, 0.3}, {0.9, 0.75, 0.2},
                         {0.7, 0.3, 0.8},   {0.2, 0.8, 0.8},   {0.95, 0.5, 0.7}, {0.5, 0.35, 0.2}};

Camera ring_camera(double angle, int w, int h) {
  const Vec3 eye(4.0 * std::cos(angle), -2.8, 4.0 * std::sin(angle));
  return look_at(eye, Vec3(0.0, 0.2, 0.0), Vec3(0.0, -1.0, 0.0), 1.15 * w, w, h);
}

}  // namespace

SceneModel SyntheticScene::frame_scene(int t) const {
  SceneModel s;
  s.bg = bg;
  s.fg = fg.at(t);
  s.frame_index = t;
  s.snapshot_bg_reference();
  return s;
}

std::vector<int> SyntheticScene::primitive_labels() const {
  std::vector<int> l(bg.size(), 0);
  l.insert(l.end(), fg_label.begin(), fg_label.end());
  return l;
}

SyntheticScene build_synthetic_scene(const SyntheticSpec& spec) {
  SyntheticScene s;
  s.spec = spec;
  std::mt19937_64 rng(spec.seed);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::normal_distribution<double> n(0.0, 1.0);
  const int D = spec.instances, T = spec.frames;
  const double pi = std::numbers::pi;

  for (int v = 0; v < spec.views; ++v)
    s.cameras.push_back(ring_camera(2.0 * pi * v / spec.views + 0.4, spec.width, spec.height));
  if (spec.holdout) s.holdout = ring_camera(2.0 * pi * 0.5 / spec.views + 0.4, spec.width, spec.height);

  const int g = spec.bg_grid;
  const double spacing = 2.0 * kFloorHalf / g;
  for (int i = 0; i < g; ++i)
    for (int k = 0; k < g; ++k) {
      GaussianPrimitive p;
      const double x = -kFloorHalf + (i + 0.5) * spacing, z = -kFloorHalf + (k + 0.5) * spacing;
      p.position = Vec3(x, kFloorY, z);
      p.log_scale = Vec3(std::log(0.75 * spacing), std::log(0.02), std::log(0.75 * spacing));
      p.opacity_logit = logit(0.95);
      p.sh.row(0) = ((floor_color(x, z) - Vec3::Constant(0.5)) / kShC0).transpose();
      s.bg.push_back(p);
    }

  // blobs at frame 0
  struct Blob {
    Vec3 c0;
    double phase, rate, spin;
  };
  std::vector<Blob> blobs;
  std::vector<GaussianPrimitive> base;
  std::vector<Vec3> wobble_dir;
  std::vector<double> wobble_phase;
  for (int d = 1; d <= D; ++d) {
    Blob b;
    b.c0 = Vec3((d - 0.5 * (D + 1)) * 1.3, 0.0, 0.0);
    b.phase = 2.0 * pi * u(rng);
    b.rate = 0.12 + 0.03 * d;
    b.spin = (d % 2 ? 0.06 : -0.06);
    blobs.push_back(b);
    const Vec3 color = kPalette[(d - 1) % 8];
    for (int i = 0; i < spec.blob_primitives; ++i) {
      Vec3 off;
      do {
        off = Vec3(2.0 * u(rng) - 1.0, 2.0 * u(rng) - 1.0, 2.0 * u(rng) - 1.0);
      } while (off.squaredNorm() > 1.0);
      off *= kBlobRadius;
      GaussianPrimitive p;
      p.position = b.c0 + off;
      p.rotation = quat_normalize(Vec4(n(rng), n(rng), n(rng), n(rng)));
      for (int a = 0; a < 3; ++a) p.log_scale[a] = std::log(0.1 + 0.06 * u(rng));
      p.opacity_logit = logit(0.9);
      const Vec3 rgb = (color + Vec3::Constant(0.03 * n(rng)) - Vec3::Constant(0.15 * off.y() / kBlobRadius))
                           .cwiseMax(0.02)
                           .cwiseMin(0.98);
      p.sh.row(0) = ((rgb - Vec3::Constant(0.5)) / kShC0).transpose();
      base.push_back(p);
      s.fg_label.push_back(d);
      wobble_dir.push_back(Vec3(n(rng), n(rng), n(rng)).normalized());
      wobble_phase.push_back(2.0 * pi * u(rng));
    }
  }

  const bool translate = spec.motion == "translation" || spec.motion == "rigid" || spec.motion == "wobble";
  const bool spin = spec.motion == "rotation" || spec.motion == "rigid";
  const bool wobble = spec.motion == "wobble";
  for (int t = 0; t < T; ++t) {
    std::vector<Vec3> centre(D);
    std::vector<Mat3> rot(D);
    for (int d = 0; d < D; ++d) {
      const Blob& b = blobs[d];
      centre[d] = b.c0;
      if (translate) {
        const double a = b.phase + b.rate * t;
        centre[d] += 0.35 * Vec3(std::cos(a) - std::cos(b.phase), 0.0, std::sin(a) - std::sin(b.phase));
      }
      rot[d] = spin ? rot_y(b.spin * t) : Mat3::Identity();
    }
    std::vector<GaussianPrimitive> fg = base;
    std::vector<Vec3> sum(D, Vec3::Zero());
    std::vector<int> cnt(D, 0);
    for (std::size_t i = 0; i < fg.size(); ++i) {
      const int d = s.fg_label[i] - 1;
      Vec3 p = centre[d] + rot[d] * (base[i].position - blobs[d].c0);
      if (wobble) p += 0.04 * (std::sin(0.5 * t + wobble_phase[i]) - std::sin(wobble_phase[i])) * wobble_dir[i];
      fg[i].position = p;
      fg[i].rotation = quat_multiply(rotation_to_quat(rot[d]), base[i].rotation);
      sum[d] += p;
      ++cnt[d];
    }
    std::vector<Vec3> cen(D);
    for (int d = 0; d < D; ++d) cen[d] = sum[d] / std::max(1, cnt[d]);
    s.fg.push_back(std::move(fg));
    s.centroids.push_back(cen);
    s.rotation.push_back(rot);
  }

  // embeddings: rows of a random orthogonal matrix
  const int R = spec.embedding_dim;
  Eigen::MatrixXd gauss(R, R);
  for (Eigen::Index k = 0; k < gauss.size(); ++k) gauss.data()[k] = n(rng);
  Eigen::HouseholderQR<Eigen::MatrixXd> qr(gauss);
  const Eigen::MatrixXd q = qr.householderQ() * Eigen::MatrixXd::Identity(R, R);
  s.basis = q.leftCols(D + 1).transpose();
  for (int t = 0; t < T; ++t) {
    Eigen::MatrixXd e = s.basis.topRows(D);
    if (spec.event && t >= spec.event->first && t <= spec.event->last) {
      const int k = spec.event->instance - 1;
      e.row(k) = (s.basis.row(k) + s.basis.row(D)).normalized();
    }
    s.embeddings.push_back(e);
  }
  if (spec.event) s.event_query = (s.basis.row(spec.event->instance - 1) + s.basis.row(D)).normalized().transpose();

  // per-view relabeling
  for (int v = 0; v < spec.views; ++v) {
    std::vector<int> m(D + 1);
    for (int d = 0; d <= D; ++d) m[d] = d;
    if (spec.permute_view_labels && v > 0) std::shuffle(m.begin() + 1, m.end(), rng);
    s.view_label.push_back(m);
  }

  Vec3 lo(-kFloorHalf, kFloorY, -kFloorHalf), hi(kFloorHalf, kFloorY, kFloorHalf);
  for (const auto& frame : s.fg)
    for (const auto& p : frame) {
      lo = lo.cwiseMin(p.position);
      hi = hi.cwiseMax(p.position);
    }
  s.extent = (hi - lo).norm();
  return s;
}

LabelMap instance_labels(const RenderTarget& target, const std::vector<int>& labels, int instances) {
  LabelMap out(target.height, target.width, 1);
  std::vector<double> w(instances + 1);
  for (std::size_t p = 0; p < target.alpha.pixels(); ++p) {
    std::fill(w.begin(), w.end(), 0.0);
    for (const Contributor& c : target.contributors(p)) w[labels.at(c.primitive)] += c.weight();
    w[0] += 1.0 - target.alpha.data[p];  // light passing through counts as background
    int best = 0;
    for (int l = 1; l <= instances; ++l)
      if (w[l] > w[best]) best = l;
    out.data[p] = static_cast<std::uint8_t>(best);
  }
  return out;
}

Image synthetic_flow(const SyntheticScene& s, const Camera& cam, int t, const RenderTarget& prev) {
  Image flow(prev.height, prev.width, 2);
  const std::size_t nb = s.bg.size();
  for (std::size_t p = 0; p < prev.alpha.pixels(); ++p) {
    double best = 0.0;
    long dom = -1;
    for (const Contributor& c : prev.contributors(p))
      if (c.weight() > best) {
        best = c.weight();
        dom = c.primitive;
      }
    if (dom < static_cast<long>(nb)) continue;
    const std::size_t i = dom - nb;
    const int d = s.fg_label[i] - 1;
    const Vec3& a = s.fg[t - 1][i].position;
    const Vec3& b = s.fg[t][i].position;
    const Mat3 rel = s.rotation[t][d] * s.rotation[t - 1][d].transpose();
    if (a == b && rel == Mat3::Identity()) continue;  // exact zero, no reprojection round-off
    const Vec2 uv(static_cast<double>(p % prev.width), static_cast<double>(p / prev.width));
    const Vec3 x = cam.back_project(uv, cam.to_camera(a).z());
    const auto moved = cam.project(b + rel * (x - a));
    if (!moved) continue;
    flow.pixel(p)[0] = moved->x() - uv.x();
    flow.pixel(p)[1] = moved->y() - uv.y();
  }
  return flow;
}

void gen_synthetic(const SyntheticSpec& spec, const fs::path& out) {
  const SyntheticScene s = build_synthetic_scene(spec);
  const int V = spec.views, T = spec.frames, D = spec.instances;
  for (const char* sub : {"cameras", "images", "masks", "flows", "embeddings", "holdout", "queries"})
    fs::create_directories(out / sub);

  DatasetManifest m;
  m.root = out;
  m.views = V;
  m.frames = T;
  m.instances = D;
  m.embedding_dim = spec.embedding_dim;
  m.width = spec.width;
  m.height = spec.height;
  m.camera = "cameras/cam_{v}.json";
  m.images = "images/v{v}_t{t}.png";
  m.masks = "masks/v{v}_t{t}.png";
  m.flows = "flows/v{v}_t{t}.f32m";
  m.embeddings = "embeddings/t{t}.vec";
  m.bg_points = "points_bg.f32m";
  m.canonical_mask = "masks/canonical.png";
  if (s.holdout) {
    m.holdout_camera = "cameras/holdout.json";
    m.holdout_images = "holdout/t{t}.png";
    m.holdout_masks = "holdout/mask_t{t}.png";
    write_camera_json(out / m.holdout_camera, *s.holdout);
  }
  for (int v = 0; v < V; ++v) write_camera_json(out / expand_template(m.camera, v, 0), s.cameras[v]);

  const std::vector<int> labels = s.primitive_labels();
  LabelMap canonical(spec.height, spec.width * V, 1);
  std::vector<RenderTarget> prev(V);
  for (int t = 0; t < T; ++t) {
    const std::vector<GaussianPrimitive> prims = s.frame_scene(t).combined();
    for (int v = 0; v < V; ++v) {
      RenderTarget r = rasterize(prims, s.cameras[v]);
      write_png_rgb(out / expand_template(m.images, v, t), r.color);
      const LabelMap truth = instance_labels(r, labels, D);
      LabelMap emitted = truth;
      for (auto& l : emitted.data) l = static_cast<std::uint8_t>(s.view_label[v][l]);
      write_png_labels(out / expand_template(m.masks, v, t), emitted);
      if (t == 0)
        for (int y = 0; y < spec.height; ++y)
          for (int x = 0; x < spec.width; ++x) canonical.at(y, v * spec.width + x) = truth.at(y, x);
      if (t >= 1) write_f32m(out / expand_template(m.flows, v, t), to_float(synthetic_flow(s, s.cameras[v], t, prev[v])));
      prev[v] = std::move(r);
    }
    if (s.holdout) {
      const RenderTarget r = rasterize(prims, *s.holdout);
      write_png_rgb(out / expand_template(m.holdout_images, 0, t), r.color);
      write_png_labels(out / expand_template(m.holdout_masks, 0, t), instance_labels(r, labels, D));
    }
    if (D > 0) write_vectors(out / expand_template(m.embeddings, 0, t), from_matrix(s.embeddings[t]));
  }
  write_png_labels(out / m.canonical_mask, canonical);

  Raster<float> pts(1, static_cast<int>(s.bg.size()), 6);
  for (std::size_t i = 0; i < s.bg.size(); ++i) {
    const Vec3 rgb = Vec3::Constant(0.5) + kShC0 * s.bg[i].sh.row(0).transpose();
    for (int c = 0; c < 3; ++c) {
      pts.at(0, static_cast<int>(i), c) = static_cast<float>(s.bg[i].position[c]);
      pts.at(0, static_cast<int>(i), 3 + c) = static_cast<float>(rgb[c]);
    }
  }
  write_f32m(out / m.bg_points, pts);

  for (int d = 1; d <= D; ++d)
    write_vectors(out / ("queries/instance_" + std::to_string(d) + ".vec"),
                  from_matrix(s.basis.row(d - 1)));
  if (s.event_query) write_vectors(out / "queries/event.vec", from_matrix(s.event_query->transpose()));

  json truth;
  truth["spec"] = json::parse(spec.to_json());
  truth["extent"] = s.extent;
  truth["fg_labels"] = s.fg_label;
  truth["view_labels"] = s.view_label;
  json cen = json::array(), pos = json::array(), rot = json::array();
  for (int t = 0; t < T; ++t) {
    json ct = json::array(), pt = json::array(), rt = json::array();
    for (const auto& c : s.centroids[t]) ct.push_back({c.x(), c.y(), c.z()});
    for (const auto& p : s.fg[t]) pt.push_back({p.position.x(), p.position.y(), p.position.z()});
    for (const auto& r : s.rotation[t]) rt.push_back(mat_json(r));
    cen.push_back(ct);
    pos.push_back(pt);
    rot.push_back(rt);
  }
  truth["centroids"] = cen;
  truth["fg_positions"] = pos;
  truth["rotations"] = rot;
  write_file_atomic(out / "truth.json", truth.dump(1) + "\n");
  write_file_atomic(out / "spec.json", spec.to_json() + "\n");
  m.save(out / "manifest.json");
}

}  // namespace gs4d
