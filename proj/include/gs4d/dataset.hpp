#pragma once

#include "gs4d/image.hpp"
#include "gs4d/rasterizer.hpp"
#include "gs4d/scene.hpp"

#include <filesystem>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

namespace gs4d {

namespace fs = std::filesystem;

// Validation failure: carries the offending file and the violated rule.
class DatasetError : public std::runtime_error {
 public:
  DatasetError(const fs::path& file, const std::string& rule)
      : std::runtime_error(file.string() + ": " + rule), file_(file), rule_(rule) {}
  const fs::path& file() const { return file_; }
  const std::string& rule() const { return rule_; }

 private:
  fs::path file_;
  std::string rule_;
};

// Camera JSON: {"K": 3x3 rows, "R": 3x3 rows, "t": [3], "width", "height"}.
Camera read_camera_json(const fs::path& path);
void write_camera_json(const fs::path& path, const Camera& camera);
std::string camera_to_json(const Camera& camera);
Camera camera_from_json(const std::string& text);

// "{v}" and "{t}" in a template are replaced by the view and frame numbers.
std::string expand_template(const std::string& pattern, int view, int frame);

struct DatasetManifest {
  fs::path root;  // directory holding the manifest; all paths are relative to it
  int views = 0;
  int frames = 0;
  int instances = 0;
  int embedding_dim = 0;
  int width = 0;
  int height = 0;
  std::string camera;       // per view, {v}
  std::string images;       // {v} {t}
  std::string masks;        // {v} {t}
  std::string flows;        // {v} {t}, frames >= 1
  std::string embeddings;   // {t}: D x R vectors
  std::string aligned_masks;  // written by identity alignment (optional)
  std::string codes;          // {t}: D x 6 compressed embeddings (optional)
  std::string autoencoder;    // fitted autoencoder (optional)
  std::string bg_points;      // 1 x N x 6 F32M, xyz rgb (optional)
  std::string holdout_camera;  // optional
  std::string holdout_images;  // {t}
  std::string holdout_masks;   // {t}
  // Optional mosaic of the first frames of all views side by side (V*W wide) with
  // consistent ids. Without it, view 0's first-frame mask is the canonical default.
  std::string canonical_mask;

  static DatasetManifest load(const fs::path& manifest_path);
  void save(const fs::path& manifest_path) const;
  fs::path resolve(const std::string& relative) const { return root / relative; }
};

// Validated dataset; frame data is read from disk on request.
class Dataset {
 public:
  // Eager validation of every referenced file: existence, resolution, label range,
  // camera validity, embedding shape. Throws DatasetError.
  explicit Dataset(const fs::path& manifest_path);
  explicit Dataset(DatasetManifest manifest);

  const DatasetManifest& manifest() const { return m_; }
  const std::vector<Camera>& cameras() const { return cameras_; }
  const std::optional<Camera>& holdout_camera() const { return holdout_; }
  int views() const { return m_.views; }
  int frames() const { return m_.frames; }
  int instances() const { return m_.instances; }

  Image image(int view, int frame) const;
  // Aligned masks when present, raw otherwise.
  LabelMap mask(int view, int frame) const;
  LabelMap raw_mask(int view, int frame) const;
  // Canonical labeling to match view `view`'s first frame against.
  LabelMap canonical_for_view(int view) const;
  Image flow(int view, int frame) const;  // frame >= 1: displacement from frame-1
  Eigen::MatrixXd embeddings(int frame) const;  // D x R
  bool has_codes() const { return !m_.codes.empty(); }
  Eigen::MatrixXd codes(int frame) const;  // D x 6
  Image holdout_image(int frame) const;
  LabelMap holdout_mask(int frame) const;
  // xyz rgb rows; empty when the manifest has none.
  Eigen::MatrixXd bg_points() const;

  fs::path path_of(const std::string& pattern, int view, int frame) const {
    return m_.resolve(expand_template(pattern, view, frame));
  }

 private:
  void validate();
  DatasetManifest m_;
  std::vector<Camera> cameras_;
  std::optional<Camera> holdout_;
};

Eigen::MatrixXd to_matrix(const VectorFile& f);
VectorFile from_matrix(const Eigen::MatrixXd& m);

// ---- synthetic generator ----

struct SyntheticEvent {
  int instance = 1;
  int first = 0;
  int last = 0;
};

struct SyntheticSpec {
  int views = 4;
  int frames = 10;
  int instances = 2;
  int width = 128;
  int height = 128;
  std::string motion = "rigid";  // static | translation | rotation | rigid | wobble
  std::uint64_t seed = 1;
  int embedding_dim = 32;
  std::optional<SyntheticEvent> event;
  bool holdout = true;
  int blob_primitives = 48;
  int bg_grid = 30;
  // Per-view random relabeling of the emitted masks; alignment undoes it.
  bool permute_view_labels = true;

  static SyntheticSpec from_json(const std::string& text);
  std::string to_json() const;
};

struct SyntheticScene {
  SyntheticSpec spec;
  std::vector<Camera> cameras;
  std::optional<Camera> holdout;
  std::vector<GaussianPrimitive> bg;
  std::vector<std::vector<GaussianPrimitive>> fg;  // [t]
  std::vector<int> fg_label;                       // instance of each fg primitive
  std::vector<std::vector<Vec3>> centroids;        // [t][d-1]
  std::vector<std::vector<Mat3>> rotation;         // [t][d-1], relative to frame 0
  Eigen::MatrixXd basis;                           // orthonormal rows, (D+1) x R
  std::vector<Eigen::MatrixXd> embeddings;         // [t]: D x R
  std::optional<Eigen::VectorXd> event_query;
  std::vector<std::vector<int>> view_label;  // [v][true id] -> emitted label
  double extent = 0.0;  // scene bounding-box diagonal

  SceneModel frame_scene(int t) const;
  // Label per primitive of frame_scene(t).combined(): 0 for background.
  std::vector<int> primitive_labels() const;
};

SyntheticScene build_synthetic_scene(const SyntheticSpec& spec);

// Per-pixel argmax over {background, instances} of the summed blend weights; ties go to
// the lower label. Residual transmittance is added to the background weight so faint
// splat tails over empty space stay background.
LabelMap instance_labels(const RenderTarget& target, const std::vector<int>& primitive_labels,
                         int instances);

// Ground-truth displacement t-1 -> t: each pixel follows the motion of its dominant
// contributor at t-1 (zero for background and empty pixels).
Image synthetic_flow(const SyntheticScene& scene, const Camera& camera, int t,
                     const RenderTarget& previous);

// Writes the dataset, manifest.json and the truth.json sidecar into `out_dir`.
void gen_synthetic(const SyntheticSpec& spec, const fs::path& out_dir);

}  // namespace gs4d
