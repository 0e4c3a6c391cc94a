#pragma once

#include "gs4d/checkpoint.hpp"
#include "gs4d/dataset.hpp"
#include "gs4d/flow_warp.hpp"
#include "gs4d/losses.hpp"
#include "gs4d/neural_heads.hpp"
#include "gs4d/rasterizer.hpp"

#include <cstdint>
#include <iosfwd>
#include <random>
#include <string>
#include <vector>

namespace gs4d {

// ---------------------------------------------------------------- configuration

struct LearningRates {
  double position = 1.6e-4;        // multiplied by the scene extent
  double position_final = 0.01;    // fraction of the initial rate reached at stage end
  double rotation = 1e-3;
  double scale = 5e-3;
  double opacity = 5e-2;
  double sh = 2.5e-3;
  double feature = 2.5e-3;
  double heads = 1e-3;
};

struct TrainConfig {
  // iteration counts per stage; 0 skips the optimisation loop
  int iterations_bg = 20000;
  int iterations_first = 30000;
  int iterations_refine = 3000;
  int iterations_frame = 8000;

  double iso = 0.0005;
  double size = 0.02;
  double init_id = 2.0;
  double init_emb = 10.0;
  double init_kl3d = 2.0;
  double refine_smooth = 0.01;
  double sdf = 0.01;
  double temp_bg = 0.001;
  double temp = 0.01;
  double train_smooth = 0.0001;
  double train_id = 1.0;
  double train_emb = 10.0;
  double train_kl3d = 2.0;
  double dssim_mix = 0.2;

  int kl_samples = 6000;
  int kl_neighbors = 4;
  int knn_refresh = 100;      // iterations between kNN rebuilds for the KL term
  int smooth_neighbors = 8;
  double smooth_radius = 0.0;  // influence radius l; 0 = mean neighbour distance at t-1
  int semantic_pixel_samples = 1024;

  int densify_interval = 300;
  double densify_cap = 0.05;       // per tracked frame, strict upper bound on modified / fg
  double init_densify_cap = 0.05;  // per densify pass during first-frame init
  double densify_until = 0.5;      // init: fraction of the schedule with densification
  double densify_grad = 2e-4;      // mean |d loss / d mean2d| in NDC
  double prune_opacity = 0.005;
  double prune_footprint = 0.2;    // fraction of the image area
  double clone_jitter = 0.1;       // times the scale
  double split_scale = 0.01;       // init: split instead of clone above this x extent

  double size_tau = 0.0;  // E_size threshold; 0 = 0.1 x extent
  int seeds_per_instance = 400;
  int seed_views = 3;
  int sh_degree = 3;
  int log_interval = 100;
  std::uint64_t seed = 1;
  LearningRates lr;
  WarpConfig warp;

  // Throws std::invalid_argument naming the offending key.
  void validate() const;
  // Keys mirror the field names; unknown keys are rejected.
  static TrainConfig from_json(const std::string& text);
  std::string to_json() const;
};

// ---------------------------------------------------------------- Adam

struct AttributeMask {
  bool position = true, rotation = true, scale = true, opacity = true, sh = true, feature = true;
  static AttributeMask all() { return {}; }
  static AttributeMask motion() { return {true, true, false, false, false, false}; }
  static AttributeMask appearance() { return {false, false, false, true, true, false}; }
  static AttributeMask none() { return {false, false, false, false, false, false}; }
};

struct PrimitiveRates {
  double position = 0, rotation = 0, scale = 0, opacity = 0, sh = 0, feature = 0;
};

// First and second moments stored in primitive-shaped containers.
struct PrimitiveAdam {
  std::vector<GaussianPrimitive> m, v;
  int step = 0;
  void resize(std::size_t n);
  // Reindex after densification: entry i takes the moments of origin[i], or zeros
  // when fresh[i] is set.
  void reorder(const std::vector<int>& origin, const std::vector<std::uint8_t>& fresh);
};

struct MlpAdam {
  std::vector<Eigen::MatrixXd> mw, vw;
  std::vector<Eigen::VectorXd> mb, vb;
  int step = 0;
};

// One scalar Adam update with beta (0.9, 0.999), eps 1e-15, bias correction at step t.
void adam_update(double& param, double grad, double& m, double& v, double lr, int t);

// Updates the enabled attributes of prims[i] from grads[offset + i]; disabled attributes
// and their moments are left untouched. Quaternions are renormalised after the step.
void adam_step(std::vector<GaussianPrimitive>& prims, const Gradients& grads, std::size_t offset,
               PrimitiveAdam& state, const PrimitiveRates& rates, const AttributeMask& mask);
void adam_step(Mlp& mlp, const MlpGrads& grads, MlpAdam& state, double lr);

// ---------------------------------------------------------------- densification

struct DensifyStats {
  std::vector<double> grad_sum;
  std::vector<int> grad_count;
  std::vector<double> max_footprint;  // fraction of the image area

  void resize(std::size_t n);
  void reset();
  // Foreground primitives sit at `offset` in the render.
  void accumulate(const Gradients& grads, const RenderTarget& render, std::size_t offset);
  double mean_grad(std::size_t i) const {
    return grad_count[i] > 0 ? grad_sum[i] / grad_count[i] : 0.0;
  }
};

struct DensifyOptions {
  double grad_threshold = 2e-4;
  double prune_opacity = 0.005;
  double prune_footprint = 0.2;
  double jitter = 0.1;
  bool allow_split = false;
  double split_scale = 0.0;  // world units; split when max scale exceeds it
};

struct CloneRecord {
  int parent = 0;  // index after the pass
  int child = 0;
  GaussianPrimitive parent_state;
  GaussianPrimitive child_at_creation;  // before the jitter
};

struct DensifyResult {
  std::vector<int> origin;           // new index -> old index
  std::vector<std::uint8_t> fresh;   // new entry created in this pass
  std::vector<CloneRecord> clone_records;
  int clones = 0;
  int splits = 0;
  int prunes = 0;
  int modified() const { return clones + splits + prunes; }
};

// Largest number of modifications that keeps modified / n strictly below `cap`.
int densify_budget(std::size_t n, double cap);

// Prune candidates come first (lowest opacity first, then oversized footprints), then
// clone/split candidates by descending gradient; at most `budget` are applied.
DensifyResult densify_prune(std::vector<GaussianPrimitive>& fg, const DensifyStats& stats,
                            const DensifyOptions& options, int budget, std::mt19937_64& rng);

// ---------------------------------------------------------------- logging

class TrainLog {
 public:
  explicit TrainLog(std::ostream* out = nullptr, int interval = 100) : out_(out), interval_(interval) {}
  void iteration(const LossBreakdown& terms, const std::string& stage, int frame, int iteration,
                 int total_iterations);
  void line(const std::string& json);

 private:
  std::ostream* out_;
  int interval_;
};

struct StageReport {
  std::string stage;
  int iterations = 0;
  std::vector<double> trace;  // total loss per iteration
  LossBreakdown last;
  double seconds = 0.0;
};

// ---------------------------------------------------------------- stages

double camera_extent(const std::vector<Camera>& cameras);

// Background init: seeded from the sparse points (or uniformly inside the camera hull),
// one uniformly drawn (view, frame) pair per iteration, masked colour loss on
// background pixels plus the scale regularisers. Snapshots the reference appearance.
SceneModel init_background(const Dataset& data, const TrainConfig& config, TrainLog* log = nullptr,
                           StageReport* report = nullptr);

// Seeds fg inside the instance silhouettes of frame 0.
std::vector<GaussianPrimitive> seed_foreground(const std::vector<Camera>& cameras,
                                               const std::vector<Image>& images,
                                               const std::vector<LabelMap>& masks, int instances,
                                               const TrainConfig& config, std::mt19937_64& rng);

// Joint optimisation of fg, bg and both heads on frame 0.
Checkpoint init_first_frame(const Dataset& data, const SceneModel& background,
                            const Autoencoder& autoencoder, const TrainConfig& config,
                            TrainLog* log = nullptr, StageReport* report = nullptr);

struct FrameBundle {
  int frame = 0;
  std::vector<Image> images;
  std::vector<LabelMap> masks;
  std::vector<Image> flows;          // empty for frame 0
  Eigen::MatrixXd codes;             // D x code_dim
  std::vector<std::vector<Image>> sdf;  // [v][d-1], empty when the instance is absent
};

FrameBundle load_frame(const Dataset& data, int frame);

// t-1 state aligned index-by-index with the current fg.
struct TrackContext {
  std::vector<GaussianPrimitive> previous;
  std::vector<std::vector<int>> neighbors;
  double radius = 1.0;
  int fg_at_start = 0;
  int budget = 0;  // remaining densification modifications for this frame
  int modified = 0;
};

TrackContext make_track_context(const std::vector<GaussianPrimitive>& previous, const TrainConfig& config);

WarpResult warp_frame(Checkpoint& state, const FrameBundle& bundle, const TrainConfig& config);

// Optimises fg positions and rotations only (E_ft).
void refine_motion(Checkpoint& state, const FrameBundle& bundle, const TrackContext& context,
                   const TrainConfig& config, TrainLog* log = nullptr, StageReport* report = nullptr);

struct FrameMetrics {
  int frame = 0;
  double psnr = 0.0;  // held-out view (training view 0 without one)
  double miou = 0.0;
  int fg_start = 0;
  int fg_end = 0;
  int clones = 0;
  int prunes = 0;
  int modified = 0;
  double modified_fraction = 0.0;
  int clone_checks = 0;  // clone records verified equal to their parents
  WarpResult warp;
  double seconds = 0.0;
};

// Joint optimisation of E_train; the classifier stays frozen.
void train_frame(Checkpoint& state, const FrameBundle& bundle, TrackContext& context,
                 const TrainConfig& config, FrameMetrics& metrics, TrainLog* log = nullptr,
                 StageReport* report = nullptr);

// warp -> refine -> train for frame t (state must hold frame t-1); quantises at the end.
FrameMetrics track_frame(Checkpoint& state, const Dataset& data, int frame, const TrainConfig& config,
                         TrainLog* log = nullptr);

// Held-out (or view-0) PSNR and mIoU of the current state against frame t's data.
void evaluate_frame(const Checkpoint& state, const Dataset& data, int frame, const TrainConfig& config,
                    FrameMetrics& metrics);

}  // namespace gs4d
