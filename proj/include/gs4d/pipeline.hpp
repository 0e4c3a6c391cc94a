#pragma once

#include "gs4d/checkpoint.hpp"
#include "gs4d/dataset.hpp"
#include "gs4d/evalkit.hpp"
#include "gs4d/identity_align.hpp"
#include "gs4d/query.hpp"
#include "gs4d/trainer.hpp"

#include <filesystem>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

namespace gs4d {

namespace fs = std::filesystem;

// Stage drivers shared by the command line tool and the end-to-end tests. Outputs land
// in `out_dir`, which callers usually place under the manifest root.

fs::path bg_checkpoint_path(const fs::path& out_dir);
fs::path frame_checkpoint_path(const fs::path& out_dir, int frame);

// Config file (or defaults when `path` is empty).
TrainConfig load_config(const fs::path& path);

struct AlignReport {
  std::vector<IdMapping> mappings;  // per view
  long zeroed_pixels = 0;
};
// Matches each view's first-frame mask against the canonical labelling, rewrites every
// frame of that view and records the aligned masks in the manifest.
AlignReport align_dataset(const fs::path& manifest_path);

struct CompressReport {
  double mse = 0.0;
  double min_cosine = 0.0;
  int rows = 0;
};
// Fits the embedding autoencoder on every (frame, instance) embedding and writes the
// per-frame codes plus the model; both are recorded in the manifest.
CompressReport compress_embeddings(const fs::path& manifest_path, const AutoencoderOptions& options = {});

StageReport run_init_bg(const fs::path& manifest_path, const TrainConfig& config, const fs::path& out_dir,
                        std::ostream* log = nullptr);
StageReport run_init_frame(const fs::path& manifest_path, const TrainConfig& config, const fs::path& out_dir,
                           std::ostream* log = nullptr);

struct TrackReport {
  int resumed_from = -1;  // last checkpoint found on entry
  std::vector<FrameMetrics> frames;
};
// Tracks frames first..last, resuming after the newest consecutive checkpoint already in
// out_dir. Frame first-1 must have a checkpoint.
TrackReport run_track(const fs::path& manifest_path, const TrainConfig& config, const fs::path& out_dir, int first,
                      int last, std::ostream* log = nullptr);

struct RenderOptions {
  std::optional<fs::path> feature_out;
  std::optional<int> instance;
  int sh_degree = 3;
};
struct RenderReport {
  long foreign_contributors = 0;  // instance renders: contributors of other ids
  int primitives = 0;
};
RenderReport run_render(const fs::path& checkpoint, const Camera& camera, const fs::path& png_out,
                        const RenderOptions& options = {});

// Frames with a checkpoint in `dir`, ascending and starting at 0.
std::vector<int> checkpoint_frames(const fs::path& dir);

struct QueryReport {
  IdentityResult identity;
  SegmentResult segment;
};
QueryReport run_query(const fs::path& checkpoints_dir, const fs::path& query_path, const fs::path& out_dir);

// Held-out view metrics per frame checkpoint; writes metrics.json and report.html.
std::vector<FrameRow> run_eval(const fs::path& checkpoints_dir, const fs::path& manifest_path,
                               const fs::path& out_dir, int sh_degree = 3);

}  // namespace gs4d
