#include "gs4d/checkpoint.hpp"

#include "gs4d/dataset.hpp"
#include "gs4d/image.hpp"

#include <json.hpp>

#include <bit>
#include <cstring>
#include <stdexcept>

namespace gs4d {

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

namespace {

constexpr char kMagic[4] = {'G', '4', 'D', '1'};
constexpr int kRecordFloats = 3 + 4 + 3 + 1 + 48 + 8;

struct Writer {
  std::string out;
  template <typename T>
  void put(T v) {
    out.append(reinterpret_cast<const char*>(&v), sizeof(T));
  }
  void f32(double v) { put(static_cast<float>(v)); }
  void bytes(const std::string& s) { out += s; }
};

struct Reader {
  const std::string& in;
  std::size_t pos = 0;
  std::string origin;
  template <typename T>
  T get() {
    if (pos + sizeof(T) > in.size()) throw IoError(origin + ": truncated");
    T v;
    std::memcpy(&v, in.data() + pos, sizeof(T));
    pos += sizeof(T);
    return v;
  }
  double f32() { return static_cast<double>(get<float>()); }
  std::string bytes(std::size_t n) {
    if (pos + n > in.size()) throw IoError(origin + ": truncated");
    std::string s = in.substr(pos, n);
    pos += n;
    return s;
  }
  bool done() const { return pos == in.size(); }
};

void write_record(Writer& w, const GaussianPrimitive& g) {
  for (int k = 0; k < 3; ++k) w.f32(g.position[k]);
  for (int k = 0; k < 4; ++k) w.f32(g.rotation[k]);
  for (int k = 0; k < 3; ++k) w.f32(g.log_scale[k]);
  w.f32(g.opacity_logit);
  for (int k = 0; k < kShCoeffs; ++k)
    for (int c = 0; c < 3; ++c) w.f32(g.sh(k, c));
  for (int k = 0; k < kFeatureDim; ++k) w.f32(g.feature[k]);
}

GaussianPrimitive read_record(Reader& r, bool has_feature) {
  GaussianPrimitive g;
  for (int k = 0; k < 3; ++k) g.position[k] = r.f32();
  for (int k = 0; k < 4; ++k) g.rotation[k] = r.f32();
  for (int k = 0; k < 3; ++k) g.log_scale[k] = r.f32();
  g.opacity_logit = r.f32();
  for (int k = 0; k < kShCoeffs; ++k)
    for (int c = 0; c < 3; ++c) g.sh(k, c) = r.f32();
  for (int k = 0; k < kFeatureDim; ++k) {
    const double f = r.f32();
    g.feature[k] = has_feature ? f : 0.0;
  }
  return g;
}

void put_matrix(Writer& w, const Eigen::MatrixXd& m) {
  w.put<std::uint32_t>(static_cast<std::uint32_t>(m.rows()));
  w.put<std::uint32_t>(static_cast<std::uint32_t>(m.cols()));
  for (Eigen::Index r = 0; r < m.rows(); ++r)
    for (Eigen::Index c = 0; c < m.cols(); ++c) w.f32(m(r, c));
}

Eigen::MatrixXd get_matrix(Reader& r) {
  const auto rows = r.get<std::uint32_t>(), cols = r.get<std::uint32_t>();
  if (static_cast<std::uint64_t>(rows) * cols * 4 > r.in.size()) throw IoError(r.origin + ": bad matrix shape");
  Eigen::MatrixXd m(rows, cols);
  for (Eigen::Index i = 0; i < m.rows(); ++i)
    for (Eigen::Index j = 0; j < m.cols(); ++j) m(i, j) = r.f32();
  return m;
}

std::string encode_mlp(const Mlp& mlp) {
  Writer w;
  w.put<std::uint32_t>(static_cast<std::uint32_t>(mlp.layers.size()));
  for (const auto& l : mlp.layers) {
    w.put<std::uint32_t>(l.activation == Activation::leaky_relu ? 1u : 0u);
    put_matrix(w, l.weight);
    put_matrix(w, l.bias);
  }
  return w.out;
}

Mlp decode_mlp(const std::string& payload, const std::string& origin) {
  Reader r{payload, 0, origin};
  Mlp m;
  const auto n = r.get<std::uint32_t>();
  for (std::uint32_t i = 0; i < n; ++i) {
    MlpLayer l;
    l.activation = r.get<std::uint32_t>() ? Activation::leaky_relu : Activation::linear;
    l.weight = get_matrix(r);
    l.bias = get_matrix(r);
    m.layers.push_back(std::move(l));
  }
  m.validate();
  return m;
}

std::string encode_autoencoder(const Autoencoder& ae) {
  Writer w;
  put_matrix(w, ae.enc_w);
  put_matrix(w, ae.enc_b);
  put_matrix(w, ae.dec_w);
  put_matrix(w, ae.dec_b);
  return w.out;
}

Autoencoder decode_autoencoder(const std::string& payload, const std::string& origin) {
  Reader r{payload, 0, origin};
  Autoencoder ae;
  ae.enc_w = get_matrix(r);
  ae.enc_b = get_matrix(r);
  ae.dec_w = get_matrix(r);
  ae.dec_b = get_matrix(r);
  return ae;
}

void section(Writer& w, const std::string& name, const std::string& payload) {
  w.put<std::uint32_t>(static_cast<std::uint32_t>(name.size()));
  w.bytes(name);
  w.put<std::uint64_t>(payload.size());
  w.bytes(payload);
}

double f32_round(double v) { return static_cast<double>(static_cast<float>(v)); }

template <typename M>
void round_all(M& m) {
  for (Eigen::Index k = 0; k < m.size(); ++k) m.data()[k] = f32_round(m.data()[k]);
}

}  // namespace

void quantize(GaussianPrimitive& g) {
  round_all(g.position);
  round_all(g.rotation);
  round_all(g.log_scale);
  g.opacity_logit = f32_round(g.opacity_logit);
  round_all(g.sh);
  round_all(g.feature);
}

void quantize(SceneModel& s) {
  for (auto& g : s.bg) quantize(g);
  for (auto& g : s.fg) quantize(g);
  for (auto& a : s.bg_reference) {
    round_all(a.sh);
    a.opacity_logit = f32_round(a.opacity_logit);
  }
}

void quantize(Mlp& m) {
  for (auto& l : m.layers) {
    round_all(l.weight);
    round_all(l.bias);
  }
  ++m.version;
}

void quantize(Autoencoder& ae) {
  round_all(ae.enc_w);
  round_all(ae.enc_b);
  round_all(ae.dec_w);
  round_all(ae.dec_b);
}

std::string encode_checkpoint(const Checkpoint& c) {
  const SceneModel& s = c.scene;
  if (s.bg_reference.size() != s.bg.size())
    throw std::invalid_argument("checkpoint: bg reference size does not match bg");
  if (!c.fg_ids.empty() && c.fg_ids.size() != s.fg.size())
    throw std::invalid_argument("checkpoint: one id per fg primitive");
  Writer w;
  w.out.append(kMagic, 4);
  w.put<std::uint32_t>(static_cast<std::uint32_t>(s.bg.size() + s.fg.size()));
  w.put<std::uint32_t>(1u);
  w.put<std::uint32_t>(static_cast<std::uint32_t>(s.frame_index));
  for (const auto& g : s.bg) write_record(w, g);
  for (const auto& g : s.fg) write_record(w, g);

  Writer layers;
  layers.put<std::uint32_t>(static_cast<std::uint32_t>(s.bg.size()));
  layers.put<std::uint32_t>(static_cast<std::uint32_t>(s.fg.size()));
  section(w, "layers", layers.out);

  Writer ref;
  for (const auto& a : s.bg_reference) {
    for (int k = 0; k < kShCoeffs; ++k)
      for (int ch = 0; ch < 3; ++ch) ref.f32(a.sh(k, ch));
    ref.f32(a.opacity_logit);
  }
  section(w, "bg_reference", ref.out);
  if (c.classifier) section(w, "classifier", encode_mlp(*c.classifier));
  if (c.semantic) section(w, "semantic", encode_mlp(*c.semantic));
  if (c.autoencoder) section(w, "autoencoder", encode_autoencoder(*c.autoencoder));
  if (!c.cameras.empty()) {
    nlohmann::json cams = nlohmann::json::array();
    for (const auto& cam : c.cameras) cams.push_back(nlohmann::json::parse(camera_to_json(cam)));
    section(w, "cameras", cams.dump());
  }
  Writer ids;
  ids.put<std::uint64_t>(c.next_id);
  for (auto id : c.fg_ids) ids.put<std::uint64_t>(id);
  section(w, "ids", ids.out);
  if (!c.meta.empty()) section(w, "meta", c.meta);
  return w.out;
}

Checkpoint decode_checkpoint(const std::string& bytes, const std::string& origin) {
  Reader r{bytes, 0, origin};
  if (r.bytes(4) != std::string(kMagic, 4)) throw IoError(origin + ": not a G4D1 checkpoint");
  const auto count = r.get<std::uint32_t>();
  const bool has_feature = r.get<std::uint32_t>() != 0;
  Checkpoint c;
  c.scene.frame_index = static_cast<int>(r.get<std::uint32_t>());
  if (static_cast<std::uint64_t>(count) * kRecordFloats * 4 > bytes.size())
    throw IoError(origin + ": record count exceeds file size");
  std::vector<GaussianPrimitive> all;
  all.reserve(count);
  for (std::uint32_t i = 0; i < count; ++i) all.push_back(read_record(r, has_feature));

  std::uint32_t nbg = count;
  bool have_ref = false, have_ids = false;
  while (!r.done()) {
    const auto nlen = r.get<std::uint32_t>();
    const std::string name = r.bytes(nlen);
    const auto len = r.get<std::uint64_t>();
    const std::string payload = r.bytes(static_cast<std::size_t>(len));
    const std::string where = origin + " [" + name + "]";
    if (name == "layers") {
      Reader p{payload, 0, where};
      nbg = p.get<std::uint32_t>();
      if (nbg + p.get<std::uint32_t>() != count) throw IoError(where + ": layer sizes do not add up");
    } else if (name == "bg_reference") {
      Reader p{payload, 0, where};
      while (!p.done()) {
        AppearanceSnapshot a;
        for (int k = 0; k < kShCoeffs; ++k)
          for (int ch = 0; ch < 3; ++ch) a.sh(k, ch) = p.f32();
        a.opacity_logit = p.f32();
        c.scene.bg_reference.push_back(a);
      }
      have_ref = true;
    } else if (name == "classifier") {
      c.classifier = decode_mlp(payload, where);
    } else if (name == "semantic") {
      c.semantic = decode_mlp(payload, where);
    } else if (name == "autoencoder") {
      c.autoencoder = decode_autoencoder(payload, where);
    } else if (name == "cameras") {
      for (const auto& j : nlohmann::json::parse(payload)) c.cameras.push_back(camera_from_json(j.dump()));
    } else if (name == "ids") {
      Reader p{payload, 0, where};
      c.next_id = p.get<std::uint64_t>();
      while (!p.done()) c.fg_ids.push_back(p.get<std::uint64_t>());
      have_ids = true;
    } else if (name == "meta") {
      c.meta = payload;
    }
    // unknown sections are skipped
  }
  c.scene.bg.assign(all.begin(), all.begin() + nbg);
  c.scene.fg.assign(all.begin() + nbg, all.end());
  if (!have_ref) c.scene.snapshot_bg_reference();
  if (c.scene.bg_reference.size() != c.scene.bg.size())
    throw IoError(origin + ": bg reference size does not match bg");
  if (have_ids && !c.fg_ids.empty() && c.fg_ids.size() != c.scene.fg.size())
    throw IoError(origin + ": id count does not match fg");
  return c;
}

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& c) {
  write_file_atomic(path, encode_checkpoint(c));
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  return decode_checkpoint(read_file(path), path.string());
}

void save_autoencoder(const std::filesystem::path& path, const Autoencoder& ae) {
  Checkpoint c;
  c.autoencoder = ae;
  save_checkpoint(path, c);
}

Autoencoder load_autoencoder(const std::filesystem::path& path) {
  Checkpoint c = load_checkpoint(path);
  if (!c.autoencoder) throw IoError(path.string() + ": no autoencoder section");
  return *c.autoencoder;
}

}  // namespace gs4d
