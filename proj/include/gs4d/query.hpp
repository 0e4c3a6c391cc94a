#pragma once

#include "gs4d/checkpoint.hpp"
#include "gs4d/rasterizer.hpp"

#include <Eigen/Dense>

#include <functional>
#include <optional>
#include <string>
#include <utility>
#include <vector>

namespace gs4d {

// Per-pixel cosine between the decoded rendered feature and `query` (raw embedding
// dimension). Pixels with alpha <= kAlphaFloor score -1. Throws on a zero query or a
// dimension mismatch.
Image relevance_map(const RenderTarget& target, const Mlp& semantic, const Autoencoder& autoencoder,
                    const Eigen::VectorXd& query);

struct IdentityResult {
  std::optional<int> id;      // nullopt: no instance with positive relevance
  std::vector<double> score;  // [d-1], mean relevance over views (NaN where never predicted)
};

// For every view, the mean relevance over pixels whose classification argmax is d; the
// id with the largest view-averaged score wins, ties to the lower id.
IdentityResult identity_query(const Checkpoint& frame0, const Eigen::VectorXd& query,
                              const RasterConfig& config = {});

// Foreground primitives whose classification argmax equals `id`.
std::vector<GaussianPrimitive> instance_primitives(const Checkpoint& state, int id);

// Number of contributor records in `target` whose primitive is not classified as `id`.
long audit_instance_render(const RenderTarget& target, const Mlp& classifier, int id);

// Maximal runs of consecutive entries with score >= threshold (within 1e-12 relative);
// nullopt entries never qualify. Indices are positions in `scores`.
std::vector<std::pair<int, int>> segment_intervals(const std::vector<std::optional<double>>& scores,
                                                   double threshold);

struct SegmentResult {
  std::vector<int> frames;
  std::vector<std::optional<double>> scores;  // nullopt when the instance renders nowhere
  double threshold = 0.0;                     // mean of the present scores
  std::vector<std::pair<int, int>> intervals;  // frame numbers, inclusive
  long audit_violations = 0;
};

// Scores one frame: renders the instance alone from every camera and averages the
// relevance over covered pixels.
std::optional<double> frame_relevance(const Checkpoint& state, int id, const Eigen::VectorXd& query,
                                      const RasterConfig& config, long* audit_violations = nullptr);

// `load(i)` returns the checkpoint of frames[i]. Frames are scored one at a time so only
// one checkpoint is resident.
SegmentResult segment_query(const std::vector<int>& frames, const std::function<Checkpoint(int)>& load, int id,
                            const Eigen::VectorXd& query, const RasterConfig& config = {});

std::string query_json(const IdentityResult& identity, const SegmentResult& segment);
std::string query_svg(const SegmentResult& segment);

}  // namespace gs4d
